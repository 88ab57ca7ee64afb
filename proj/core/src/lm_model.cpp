#include "sdlstm/lm_model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace sdlstm {

namespace {

constexpr char kCheckpointMagic[8] = {'S', 'D', 'L', 'M', '0', '0', '0', '1'};
constexpr std::uint32_t kCheckpointVersion = 1;

void write_u32le(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32le(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw IoError("checkpoint truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

template <typename T>
void write_values_le(std::ostream& out, const T* p, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(T)));
  } else {
    unsigned char buf[sizeof(T)];
    for (std::size_t i = 0; i < n; ++i) {
      std::memcpy(buf, p + i, sizeof(T));
      for (std::size_t j = 0; j < sizeof(T) / 2; ++j) std::swap(buf[j], buf[sizeof(T) - 1 - j]);
      out.write(reinterpret_cast<const char*>(buf), sizeof(T));
    }
  }
}

template <typename T>
void read_values_le(std::istream& in, T* p, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    in.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * sizeof(T)));
  } else {
    unsigned char buf[sizeof(T)];
    for (std::size_t i = 0; i < n; ++i) {
      in.read(reinterpret_cast<char*>(buf), sizeof(T));
      for (std::size_t j = 0; j < sizeof(T) / 2; ++j) std::swap(buf[j], buf[sizeof(T) - 1 - j]);
      std::memcpy(p + i, buf, sizeof(T));
    }
  }
  if (!in) throw IoError("checkpoint truncated");
}

template <typename T>
void fill_uniform(Rng& rng, T r, T* p, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) p[i] = static_cast<T>(rng.next_uniform(-r, r));
}

// out = mask-applied (g * wt), through the output-column-sparse kernel when
// the mask is structured and the mode is sparse.
template <typename T>
void masked_projection(Matrix<T>& out, const Matrix<T>& g, const Matrix<T>& wt, MaskRef mask,
                       ComputeMode mode, KernelScratch<T>& scratch, Matrix<T>& tmp) {
  if (mask.is_structured() && mode == ComputeMode::sparse) {
    gemm_output_colsparse_into(out, g, wt, mask.structured(), scratch);
    return;
  }
  if (!mask.active()) {
    matmul_into(out, g, wt);
    return;
  }
  matmul_into(tmp, g, wt);
  mask.apply_into(out, tmp);
}

}  // namespace

DropoutMode parse_dropout_mode(const std::string& label) {
  if (label == "baseline-nr-random") return DropoutMode::baseline_nr_random;
  if (label == "nr-st") return DropoutMode::nr_st;
  if (label == "nr-rh-st") return DropoutMode::nr_rh_st;
  throw ConfigError("unknown dropout mode: " + label);
}

std::string dropout_mode_label(DropoutMode mode) {
  switch (mode) {
    case DropoutMode::baseline_nr_random: return "baseline-nr-random";
    case DropoutMode::nr_st: return "nr-st";
    case DropoutMode::nr_rh_st: return "nr-rh-st";
  }
  throw ValueError("unknown dropout mode value");
}

MaskCase mask_case_for(DropoutMode mode) {
  return mode == DropoutMode::baseline_nr_random ? kRandomPerStep : kStructuredPerStep;
}

void ModelConfig::validate() const {
  check_value(vocab >= 2, "ModelConfig: vocab must be at least 2");
  check_value(embed_dim >= 1 && hidden >= 1 && layers >= 1, "ModelConfig: dims must be positive");
  check_value(dropout_nr >= 0.0 && dropout_nr < 1.0, "ModelConfig: dropout_nr must be in [0, 1)");
  if (dropout_rh) {
    check_value(*dropout_rh >= 0.0 && *dropout_rh < 1.0,
                "ModelConfig: dropout_rh must be in [0, 1)");
  }
  const bool structured = mask_case.structured();
  switch (mode_label) {
    case DropoutMode::baseline_nr_random:
      check_value(!structured && !dropout_rh,
                  "ModelConfig: baseline-nr-random requires random masks and no recurrent rate");
      break;
    case DropoutMode::nr_st:
      check_value(structured && !dropout_rh,
                  "ModelConfig: nr-st requires structured masks and no recurrent rate");
      break;
    case DropoutMode::nr_rh_st:
      check_value(structured && dropout_rh.has_value(),
                  "ModelConfig: nr-rh-st requires structured masks and a recurrent rate");
      break;
  }
}

ModelConfig make_model_config(DropoutMode mode, index vocab, index embed_dim, index hidden,
                              index layers, double p_nr, std::optional<double> p_rh) {
  ModelConfig config;
  config.vocab = vocab;
  config.embed_dim = embed_dim;
  config.hidden = hidden;
  config.layers = layers;
  config.dropout_nr = p_nr;
  config.dropout_rh = mode == DropoutMode::nr_rh_st ? p_rh : std::nullopt;
  config.mask_case = mask_case_for(mode);
  config.mode_label = mode;
  if (mode == DropoutMode::nr_rh_st) {
    check_value(p_rh.has_value(), "make_model_config: nr-rh-st needs a recurrent rate");
  }
  config.validate();
  return config;
}

template <typename T>
void ModelParams<T>::validate(const ModelConfig& config) const {
  check_shape(embedding.rows() == config.vocab && embedding.cols() == config.embed_dim,
              "ModelParams: embedding shape");
  check_shape(static_cast<index>(lstm.size()) == config.layers, "ModelParams: layer count");
  for (index l = 0; l < config.layers; ++l) {
    const auto& p = lstm[static_cast<std::size_t>(l)];
    const index want_in = l == 0 ? config.embed_dim : config.hidden;
    check_shape(p.input_dim() == want_in && p.hidden() == config.hidden,
                "ModelParams: lstm layer shape");
    p.validate();
  }
  check_shape(head.rows() == config.hidden && head.cols() == config.vocab,
              "ModelParams: head shape");
  check_shape(static_cast<index>(head_bias.size()) == config.vocab, "ModelParams: head bias size");
}

template <typename T>
ModelParams<T> init_params(const ModelConfig& config, T init_range, std::uint64_t seed) {
  config.validate();
  check_value(init_range > T{0}, "init_params: init_range must be positive");
  Rng rng(seed);
  ModelParams<T> params;
  params.embedding.resize(config.vocab, config.embed_dim);
  fill_uniform(rng, init_range, params.embedding.data().data(), params.embedding.data().size());
  params.lstm.resize(static_cast<std::size_t>(config.layers));
  for (index l = 0; l < config.layers; ++l) {
    auto& p = params.lstm[static_cast<std::size_t>(l)];
    const index in = l == 0 ? config.embed_dim : config.hidden;
    p.w.resize(in, 4 * config.hidden);
    p.u.resize(config.hidden, 4 * config.hidden);
    p.b.assign(static_cast<std::size_t>(4 * config.hidden), T{0});
    fill_uniform(rng, init_range, p.w.data().data(), p.w.data().size());
    fill_uniform(rng, init_range, p.u.data().data(), p.u.data().size());
    fill_uniform(rng, init_range, p.b.data(), p.b.size());
  }
  params.head.resize(config.hidden, config.vocab);
  fill_uniform(rng, init_range, params.head.data().data(), params.head.data().size());
  params.head_bias.assign(static_cast<std::size_t>(config.vocab), T{0});
  fill_uniform(rng, init_range, params.head_bias.data(), params.head_bias.size());
  return params;
}

template <typename T>
void CarriedState<T>::reset(const ModelConfig& config, index batch) {
  h.resize(static_cast<std::size_t>(config.layers));
  c.resize(static_cast<std::size_t>(config.layers));
  for (auto& m : h) m.resize(batch, config.hidden);
  for (auto& m : c) m.resize(batch, config.hidden);
}

MaskSchedule make_window_schedule(const ModelConfig& config, index steps, index batch,
                                  std::uint64_t seed) {
  config.validate();
  MaskSchedule::Params p;
  p.mode = config.mask_case;
  p.steps = steps;
  p.batch = batch;
  p.nr_widths.assign(static_cast<std::size_t>(config.layers + 1), config.hidden);
  p.nr_widths.front() = config.embed_dim;
  p.p_nr = config.dropout_nr;
  p.p_rh = config.dropout_rh;
  p.rh_slots = config.dropout_rh ? config.layers : 0;
  p.rh_width = config.hidden;
  p.seed = seed;
  return MaskSchedule::build(p);
}

template <typename T>
void forward_window(const ModelParams<T>& params, const ModelConfig& config,
                    const TokenMatrix& tokens, CarriedState<T>& carried,
                    const MaskSchedule* schedule, ComputeMode mode,
                    std::vector<Matrix<T>>& logits, WindowTape<T>& tape) {
  params.validate(config);
  const index bsz = tokens.rows();
  const index steps = tokens.cols();
  const index layers = config.layers;
  check_value(bsz >= 1 && steps >= 1, "forward_window: empty token window");
  check_shape(static_cast<index>(carried.h.size()) == layers &&
                  static_cast<index>(carried.c.size()) == layers,
              "forward_window: carried state layer count");
  for (index l = 0; l < layers; ++l) {
    check_shape(carried.h[static_cast<std::size_t>(l)].rows() == bsz &&
                    carried.h[static_cast<std::size_t>(l)].cols() == config.hidden,
                "forward_window: carried h shape");
    check_shape(carried.c[static_cast<std::size_t>(l)].rows() == bsz &&
                    carried.c[static_cast<std::size_t>(l)].cols() == config.hidden,
                "forward_window: carried c shape");
  }
  if (schedule != nullptr) {
    check_shape(schedule->steps() == steps, "forward_window: schedule step count");
    check_shape(schedule->nr_slot_count() == layers + 1, "forward_window: schedule slot count");
  }

  tape.lstm.layer_steps.assign(static_cast<std::size_t>(layers),
                               std::vector<StepCache<T>>(static_cast<std::size_t>(steps)));
  tape.head_in.resize(static_cast<std::size_t>(steps));
  tape.head_mask.assign(static_cast<std::size_t>(steps), MaskRef{});
  tape.tokens = tokens;
  logits.resize(static_cast<std::size_t>(steps));

  std::vector<LstmScratch<T>> scratch(static_cast<std::size_t>(layers));
  KernelScratch<T> head_scratch;
  Matrix<T> embedded;

  for (index t = 0; t < steps; ++t) {
    embedded.resize(bsz, config.embed_dim);
    for (index b = 0; b < bsz; ++b) {
      const index id = tokens(b, t);
      check_value(id >= 0 && id < config.vocab, "forward_window: token id out of range");
      std::memcpy(embedded.row(b), params.embedding.row(id),
                  static_cast<std::size_t>(config.embed_dim) * sizeof(T));
    }
    const Matrix<T>* layer_in = &embedded;
    for (index l = 0; l < layers; ++l) {
      const auto lu = static_cast<std::size_t>(l);
      const MaskRef nr = schedule ? schedule->nr_mask(l, t) : MaskRef{};
      const MaskRef rh = schedule ? schedule->rh_mask(l, t) : MaskRef{};
      step_forward(params.lstm[lu], *layer_in, carried.h[lu], carried.c[lu], nr, rh, mode,
                   scratch[lu], tape.lstm.layer_steps[lu][static_cast<std::size_t>(t)],
                   carried.h[lu], carried.c[lu]);
      layer_in = &carried.h[lu];
    }

    const auto tu = static_cast<std::size_t>(t);
    const MaskRef head_mask = schedule ? schedule->nr_mask(layers, t) : MaskRef{};
    tape.head_mask[tu] = head_mask;
    head_mask.apply_into(tape.head_in[tu], carried.h[static_cast<std::size_t>(layers - 1)]);

    Matrix<T>& lg = logits[tu];
    if (head_mask.is_structured() && mode == ComputeMode::sparse) {
      gemm_lhs_colsparse_into(lg, tape.head_in[tu], head_mask.structured(), params.head,
                              head_scratch);
    } else {
      matmul_into(lg, tape.head_in[tu], params.head);
    }
    const T* bias = params.head_bias.data();
    for (index r = 0; r < bsz; ++r) {
      T* row = lg.row(r);
      for (index j = 0; j < config.vocab; ++j) row[j] += bias[j];
    }
  }
}

template <typename T>
T loss_and_grad(const std::vector<Matrix<T>>& logits, const TokenMatrix& targets,
                std::vector<Matrix<T>>* d_logits) {
  const index bsz = targets.rows();
  const index steps = targets.cols();
  check_shape(static_cast<index>(logits.size()) == steps, "loss_and_grad: step count mismatch");
  check_value(bsz >= 1 && steps >= 1, "loss_and_grad: empty batch");
  const index vocab = logits.front().cols();
  const T inv = T{1} / static_cast<T>(bsz * steps);
  if (d_logits != nullptr) d_logits->resize(static_cast<std::size_t>(steps));

  T total{0};
  for (index t = 0; t < steps; ++t) {
    const Matrix<T>& lg = logits[static_cast<std::size_t>(t)];
    check_shape(lg.rows() == bsz && lg.cols() == vocab, "loss_and_grad: logits shape");
    Matrix<T>* dl = nullptr;
    if (d_logits != nullptr) {
      dl = &(*d_logits)[static_cast<std::size_t>(t)];
      dl->resize(bsz, vocab);
    }
    for (index r = 0; r < bsz; ++r) {
      const index target = targets(r, t);
      check_value(target >= 0 && target < vocab, "loss_and_grad: target id out of range");
      const T* row = lg.row(r);
      T maxv = row[0];
      for (index j = 1; j < vocab; ++j) maxv = std::max(maxv, row[j]);
      T sum{0};
      for (index j = 0; j < vocab; ++j) sum += std::exp(row[j] - maxv);
      const T logz = std::log(sum);
      total += logz + maxv - row[target];
      if (dl != nullptr) {
        T* grow = dl->row(r);
        const T gscale = inv / sum;
        for (index j = 0; j < vocab; ++j) grow[j] = std::exp(row[j] - maxv) * gscale;
        grow[target] -= inv;
      }
    }
  }
  return total * inv;
}

template <typename T>
void ModelGradients<T>::resize_like(const ModelParams<T>& params) {
  lstm.resize(params.lstm.size());
  for (std::size_t l = 0; l < params.lstm.size(); ++l) lstm[l].resize_like(params.lstm[l]);
  d_embedding.resize(params.embedding.rows(), params.embedding.cols());
  d_head.resize(params.head.rows(), params.head.cols());
  d_head_bias.assign(params.head_bias.size(), T{0});
}

template <typename T>
void backward_window(const ModelParams<T>& params, const ModelConfig& config,
                     const WindowTape<T>& tape, const std::vector<Matrix<T>>& d_logits,
                     ComputeMode mode, ModelGradients<T>& grads) {
  params.validate(config);
  const index layers = tape.lstm.layers();
  const index steps = tape.lstm.steps();
  check_shape(layers == config.layers, "backward_window: tape layer count");
  check_shape(static_cast<index>(d_logits.size()) == steps, "backward_window: d_logits length");
  check_shape(static_cast<index>(tape.head_in.size()) == steps &&
                  static_cast<index>(tape.head_mask.size()) == steps,
              "backward_window: tape head records");
  check_shape(tape.tokens.cols() == steps, "backward_window: tape token window");

  grads.resize_like(params);
  const Matrix<T> head_t = transpose(params.head);
  KernelScratch<T> scratch;
  Matrix<T> head_in_t;
  Matrix<T> tmp;
  std::vector<Matrix<T>> d_out(static_cast<std::size_t>(steps));

  for (index t = 0; t < steps; ++t) {
    const auto tu = static_cast<std::size_t>(t);
    const Matrix<T>& dl = d_logits[tu];
    const MaskRef head_mask = tape.head_mask[tu];

    transpose_into(head_in_t, tape.head_in[tu]);
    if (head_mask.is_structured() && mode == ComputeMode::sparse) {
      gemm_lhs_rowsparse_into(grads.d_head, head_in_t, head_mask.structured(), dl, scratch,
                              /*accumulate=*/true);
    } else {
      matmul_into(grads.d_head, head_in_t, dl, /*accumulate=*/true);
    }
    T* dbias = grads.d_head_bias.data();
    for (index r = 0; r < dl.rows(); ++r) {
      const T* row = dl.row(r);
      for (index j = 0; j < dl.cols(); ++j) dbias[j] += row[j];
    }

    masked_projection(d_out[tu], dl, head_t, head_mask, mode, scratch, tmp);
  }

  std::vector<Matrix<T>> d_input;
  bptt(std::span<const LstmParams<T>>(params.lstm.data(), params.lstm.size()), tape.lstm, d_out,
       mode, grads.lstm, d_input);

  for (index t = 0; t < steps; ++t) {
    const Matrix<T>& di = d_input[static_cast<std::size_t>(t)];
    for (index b = 0; b < di.rows(); ++b) {
      const index id = tape.tokens(b, t);
      T* dst = grads.d_embedding.row(id);
      const T* src = di.row(b);
      for (index j = 0; j < di.cols(); ++j) dst[j] += src[j];
    }
  }
}

double perplexity(double mean_nats) {
  check_value(mean_nats >= 0.0, "perplexity: loss must be nonnegative");
  return std::exp(mean_nats);
}

template <typename T>
void save_checkpoint(const std::string& path, const ModelConfig& config,
                     const ModelParams<T>& params) {
  params.validate(config);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  write_u32le(out, kCheckpointVersion);
  write_u32le(out, static_cast<std::uint32_t>(sizeof(T)));
  write_u32le(out, static_cast<std::uint32_t>(config.vocab));
  write_u32le(out, static_cast<std::uint32_t>(config.embed_dim));
  write_u32le(out, static_cast<std::uint32_t>(config.hidden));
  write_u32le(out, static_cast<std::uint32_t>(config.layers));
  write_values_le(out, params.embedding.data().data(), params.embedding.data().size());
  for (const auto& layer : params.lstm) {
    write_values_le(out, layer.w.data().data(), layer.w.data().size());
    write_values_le(out, layer.u.data().data(), layer.u.data().size());
    write_values_le(out, layer.b.data(), layer.b.size());
  }
  write_values_le(out, params.head.data().data(), params.head.data().size());
  write_values_le(out, params.head_bias.data(), params.head_bias.size());
  if (!out) throw IoError("checkpoint write failed: " + path);
}

namespace {

CheckpointHeader read_header(std::istream& in, const std::string& path) {
  char magic[sizeof(kCheckpointMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw IoError("not a checkpoint file: " + path);
  }
  CheckpointHeader header;
  header.version = read_u32le(in);
  if (header.version != kCheckpointVersion) throw IoError("unsupported checkpoint version");
  const std::uint32_t code = read_u32le(in);
  if (code == 4) {
    header.precision = Precision::f32;
  } else if (code == 8) {
    header.precision = Precision::f64;
  } else {
    throw IoError("unknown checkpoint precision code");
  }
  header.vocab = static_cast<index>(read_u32le(in));
  header.embed_dim = static_cast<index>(read_u32le(in));
  header.hidden = static_cast<index>(read_u32le(in));
  header.layers = static_cast<index>(read_u32le(in));
  return header;
}

}  // namespace

CheckpointHeader peek_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  return read_header(in, path);
}

template <typename T>
void load_checkpoint(const std::string& path, CheckpointHeader& header, ModelParams<T>& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  header = read_header(in, path);
  if ((header.precision == Precision::f32) != (sizeof(T) == 4)) {
    throw IoError("checkpoint precision does not match requested type");
  }
  const index v = header.vocab;
  const index e = header.embed_dim;
  const index h = header.hidden;
  params.embedding.resize(v, e);
  read_values_le(in, params.embedding.data().data(), params.embedding.data().size());
  params.lstm.resize(static_cast<std::size_t>(header.layers));
  for (index l = 0; l < header.layers; ++l) {
    auto& layer = params.lstm[static_cast<std::size_t>(l)];
    layer.w.resize(l == 0 ? e : h, 4 * h);
    layer.u.resize(h, 4 * h);
    layer.b.assign(static_cast<std::size_t>(4 * h), T{0});
    read_values_le(in, layer.w.data().data(), layer.w.data().size());
    read_values_le(in, layer.u.data().data(), layer.u.data().size());
    read_values_le(in, layer.b.data(), layer.b.size());
  }
  params.head.resize(h, v);
  read_values_le(in, params.head.data().data(), params.head.data().size());
  params.head_bias.assign(static_cast<std::size_t>(v), T{0});
  read_values_le(in, params.head_bias.data(), params.head_bias.size());
}

#define SDLSTM_INSTANTIATE_LM(T)                                                                \
  template struct ModelParams<T>;                                                               \
  template ModelParams<T> init_params<T>(const ModelConfig&, T, std::uint64_t);                 \
  template struct CarriedState<T>;                                                              \
  template void forward_window<T>(const ModelParams<T>&, const ModelConfig&, const TokenMatrix&, \
                                  CarriedState<T>&, const MaskSchedule*, ComputeMode,           \
                                  std::vector<Matrix<T>>&, WindowTape<T>&);                     \
  template T loss_and_grad<T>(const std::vector<Matrix<T>>&, const TokenMatrix&,                \
                              std::vector<Matrix<T>>*);                                         \
  template struct ModelGradients<T>;                                                            \
  template void backward_window<T>(const ModelParams<T>&, const ModelConfig&,                   \
                                   const WindowTape<T>&, const std::vector<Matrix<T>>&,         \
                                   ComputeMode, ModelGradients<T>&);                            \
  template void save_checkpoint<T>(const std::string&, const ModelConfig&,                      \
                                   const ModelParams<T>&);                                      \
  template void load_checkpoint<T>(const std::string&, CheckpointHeader&, ModelParams<T>&);

SDLSTM_INSTANTIATE_LM(float)
SDLSTM_INSTANTIATE_LM(double)

#undef SDLSTM_INSTANTIATE_LM

}  // namespace sdlstm
