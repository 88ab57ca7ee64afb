#include "sdlstm/trainer.hpp"

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "sdlstm/threading.hpp"

namespace sdlstm {

namespace {

using nlohmann::json;

constexpr std::uint64_t kInitStream = 0x696e6974;  // parameter initialization
constexpr std::uint64_t kMaskStream = 0x6d61736b;  // per-window mask schedules

Precision parse_precision(const std::string& name) {
  if (name == "f32") return Precision::f32;
  if (name == "f64") return Precision::f64;
  throw ConfigError("unknown precision: " + name);
}

ComputeMode parse_compute(const std::string& name) {
  if (name == "dense") return ComputeMode::dense;
  if (name == "sparse") return ComputeMode::sparse;
  throw ConfigError("unknown compute mode: " + name);
}

template <typename T>
void for_each_array(ModelParams<T>& params, const ModelGradients<T>& grads, auto&& fn) {
  fn(params.embedding.data().data(), grads.d_embedding.data().data(),
     params.embedding.data().size());
  for (std::size_t l = 0; l < params.lstm.size(); ++l) {
    fn(params.lstm[l].w.data().data(), grads.lstm[l].dw.data().data(),
       params.lstm[l].w.data().size());
    fn(params.lstm[l].u.data().data(), grads.lstm[l].du.data().data(),
       params.lstm[l].u.data().size());
    fn(params.lstm[l].b.data(), grads.lstm[l].db.data(), params.lstm[l].b.size());
  }
  fn(params.head.data().data(), grads.d_head.data().data(), params.head.data().size());
  fn(params.head_bias.data(), grads.d_head_bias.data(), params.head_bias.size());
}

template <typename T>
TrainReport train_impl(const TrainConfig& config) {
  using clock = std::chrono::steady_clock;
  set_kernel_threads(config.threads);

  const Corpus corpus = load_corpus(config.corpus_path);
  const CorpusSplits splits =
      split_corpus(corpus, config.split_train, config.split_valid, config.split_test);
  const ModelConfig mc =
      make_model_config(config.mode, corpus.vocab(), config.embed_dim, config.hidden,
                        config.layers, config.dropout_nr, config.dropout_rh);
  ModelParams<T> params =
      init_params<T>(mc, static_cast<T>(config.init_range), derive_seed(config.seed, kInitStream));

  const std::vector<WindowBatch> batches =
      make_batches(splits.train, config.batch_size, config.unroll_steps);
  const std::uint64_t mask_base = derive_seed(config.seed, kMaskStream);

  TrainReport report;
  report.mode_label = dropout_mode_label(config.mode);
  report.precision = config.precision;
  report.threads = config.threads;

  double lr = config.lr;
  CarriedState<T> carried;
  std::vector<Matrix<T>> logits;
  std::vector<Matrix<T>> d_logits;
  WindowTape<T> tape;
  ModelGradients<T> grads;

  for (index epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto started = clock::now();
    if (epoch >= config.lr_decay_start_epoch) lr *= config.lr_decay;
    carried.reset(mc, config.batch_size);
    double loss_sum = 0.0;
    for (std::size_t w = 0; w < batches.size(); ++w) {
      const MaskSchedule schedule = make_window_schedule(
          mc, config.unroll_steps, config.batch_size,
          derive_seed(mask_base, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(w)));
      forward_window(params, mc, batches[w].inputs, carried, &schedule, config.compute, logits,
                     tape);
      loss_sum += static_cast<double>(loss_and_grad(logits, batches[w].targets, &d_logits));
      backward_window(params, mc, tape, d_logits, config.compute, grads);
      sgd_step(params, grads, lr, config.clip_norm);
    }
    const EvalResult valid =
        evaluate(params, mc, splits.valid, config.batch_size, config.unroll_steps);
    const double wall = std::chrono::duration<double>(clock::now() - started).count();
    report.epochs.push_back({epoch, loss_sum / static_cast<double>(batches.size()), valid.loss,
                             valid.ppl, lr, wall});
    const EpochRecord& rec = report.epochs.back();
    std::printf("epoch %lld  train_loss %.4f  valid_loss %.4f  valid_ppl %.2f  lr %.4f  %.1fs\n",
                static_cast<long long>(rec.epoch), rec.train_loss, rec.valid_loss, rec.valid_ppl,
                rec.lr, rec.wall_seconds);
    std::fflush(stdout);
  }

  const EvalResult test = evaluate(params, mc, splits.test, config.batch_size, config.unroll_steps);
  report.test_loss = test.loss;
  report.test_ppl = test.ppl;

  std::filesystem::create_directories(config.out_dir);
  report.checkpoint_path = (std::filesystem::path(config.out_dir) / "checkpoint.bin").string();
  save_checkpoint(report.checkpoint_path, mc, params);
  write_epochs_csv((std::filesystem::path(config.out_dir) / "epochs.csv").string(), report);
  write_report_json((std::filesystem::path(config.out_dir) / "report.json").string(), config,
                    report);
  return report;
}

}  // namespace

Corpus tokenize(const std::string& text) {
  check_value(!text.empty(), "tokenize: empty corpus");
  std::array<bool, 256> present{};
  for (const char ch : text) present[static_cast<unsigned char>(ch)] = true;
  Corpus corpus;
  std::array<std::int32_t, 256> id_of{};
  id_of.fill(-1);
  for (int b = 0; b < 256; ++b) {
    if (present[static_cast<std::size_t>(b)]) {
      id_of[static_cast<std::size_t>(b)] = static_cast<std::int32_t>(corpus.id_to_byte.size());
      corpus.id_to_byte.push_back(static_cast<unsigned char>(b));
    }
  }
  corpus.tokens.reserve(text.size());
  for (const char ch : text) corpus.tokens.push_back(id_of[static_cast<unsigned char>(ch)]);
  return corpus;
}

Corpus load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open corpus: " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  if (in.bad()) throw IoError("corpus read failed: " + path);
  return tokenize(buffer.str());
}

std::string detokenize(const std::vector<std::int32_t>& ids,
                       const std::vector<unsigned char>& id_to_byte) {
  std::string text;
  text.reserve(ids.size());
  for (const std::int32_t id : ids) {
    check_value(id >= 0 && id < static_cast<std::int32_t>(id_to_byte.size()),
                "detokenize: id out of range");
    text.push_back(static_cast<char>(id_to_byte[static_cast<std::size_t>(id)]));
  }
  return text;
}

CorpusSplits split_corpus(const Corpus& corpus, double train_frac, double valid_frac,
                          double test_frac) {
  check_value(train_frac > 0.0 && valid_frac >= 0.0 && test_frac >= 0.0,
              "split_corpus: fractions must be nonnegative with a positive train share");
  check_value(std::abs(train_frac + valid_frac + test_frac - 1.0) <= 1e-9,
              "split_corpus: fractions must sum to 1");
  const auto n = static_cast<std::int64_t>(corpus.tokens.size());
  auto n_train = static_cast<std::int64_t>(std::llround(train_frac * static_cast<double>(n)));
  auto n_valid = static_cast<std::int64_t>(std::llround(valid_frac * static_cast<double>(n)));
  n_train = std::min(n_train, n);
  n_valid = std::min(n_valid, n - n_train);
  CorpusSplits splits;
  splits.train.assign(corpus.tokens.begin(), corpus.tokens.begin() + n_train);
  splits.valid.assign(corpus.tokens.begin() + n_train, corpus.tokens.begin() + n_train + n_valid);
  splits.test.assign(corpus.tokens.begin() + n_train + n_valid, corpus.tokens.end());
  return splits;
}

std::vector<WindowBatch> make_batches(const std::vector<std::int32_t>& stream, index batch,
                                      index steps) {
  check_value(batch >= 1 && steps >= 1, "make_batches: batch and steps must be positive");
  const auto len = static_cast<index>(stream.size());
  check_value(len >= batch * (steps + 1), "make_batches: stream too short for one window");
  const index lane_len = len / batch;
  const index windows = (lane_len - 1) / steps;
  std::vector<WindowBatch> result(static_cast<std::size_t>(windows));
  for (index w = 0; w < windows; ++w) {
    WindowBatch& wb = result[static_cast<std::size_t>(w)];
    wb.inputs.resize(batch, steps);
    wb.targets.resize(batch, steps);
    for (index b = 0; b < batch; ++b) {
      const index base = b * lane_len + w * steps;
      for (index t = 0; t < steps; ++t) {
        wb.inputs(b, t) = stream[static_cast<std::size_t>(base + t)];
        wb.targets(b, t) = stream[static_cast<std::size_t>(base + t + 1)];
      }
    }
  }
  return result;
}

template <typename T>
StepStats sgd_step(ModelParams<T>& params, const ModelGradients<T>& grads, double lr,
                   double clip_norm) {
  check_value(lr >= 0.0, "sgd_step: negative learning rate");
  check_value(clip_norm > 0.0, "sgd_step: clip norm must be positive");
  double sq_norm = 0.0;
  for_each_array(params, grads, [&](T*, const T* g, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      sq_norm += static_cast<double>(g[i]) * static_cast<double>(g[i]);
    }
  });
  if (!std::isfinite(sq_norm)) {
    throw ValueError("sgd_step: non-finite gradient norm, aborting training");
  }
  StepStats stats;
  stats.grad_norm = std::sqrt(sq_norm);
  stats.clip_scale = stats.grad_norm > clip_norm ? clip_norm / stats.grad_norm : 1.0;
  const T step = static_cast<T>(lr * stats.clip_scale);
  for_each_array(params, grads, [&](T* p, const T* g, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) p[i] -= step * g[i];
  });
  return stats;
}

void TrainConfig::validate() const {
  check_value(!corpus_path.empty(), "TrainConfig: corpus_path missing");
  check_value(!out_dir.empty(), "TrainConfig: out_dir missing");
  check_value(batch_size >= 1 && unroll_steps >= 1, "TrainConfig: batch and unroll must be >= 1");
  check_value(epochs >= 0, "TrainConfig: negative epochs");
  check_value(lr > 0.0, "TrainConfig: lr must be positive");
  check_value(lr_decay > 0.0 && lr_decay <= 1.0, "TrainConfig: lr_decay must be in (0, 1]");
  check_value(lr_decay_start_epoch >= 1, "TrainConfig: lr_decay_start_epoch must be >= 1");
  check_value(clip_norm > 0.0, "TrainConfig: clip_norm must be positive");
  check_value(init_range > 0.0, "TrainConfig: init_range must be positive");
  check_value(threads >= 1, "TrainConfig: threads must be >= 1");
  check_value(embed_dim >= 1 && hidden >= 1 && layers >= 1, "TrainConfig: model dims");
  check_value(dropout_nr >= 0.0 && dropout_nr < 1.0, "TrainConfig: dropout_nr in [0, 1)");
  if (dropout_rh) {
    check_value(*dropout_rh >= 0.0 && *dropout_rh < 1.0, "TrainConfig: dropout_rh in [0, 1)");
  }
  check_value(mode != DropoutMode::nr_rh_st || dropout_rh.has_value(),
              "TrainConfig: nr-rh-st requires dropout_rh");
  check_value(split_train > 0.0 && split_valid >= 0.0 && split_test >= 0.0 &&
                  std::abs(split_train + split_valid + split_test - 1.0) <= 1e-9,
              "TrainConfig: split fractions must sum to 1");
}

TrainConfig parse_train_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config parse: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  TrainConfig c;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "corpus_path") {
        c.corpus_path = value.get<std::string>();
      } else if (key == "split_train") {
        c.split_train = value.get<double>();
      } else if (key == "split_valid") {
        c.split_valid = value.get<double>();
      } else if (key == "split_test") {
        c.split_test = value.get<double>();
      } else if (key == "batch_size") {
        c.batch_size = value.get<index>();
      } else if (key == "unroll_steps") {
        c.unroll_steps = value.get<index>();
      } else if (key == "epochs") {
        c.epochs = value.get<index>();
      } else if (key == "lr") {
        c.lr = value.get<double>();
      } else if (key == "lr_decay") {
        c.lr_decay = value.get<double>();
      } else if (key == "lr_decay_start_epoch") {
        c.lr_decay_start_epoch = value.get<index>();
      } else if (key == "clip_norm") {
        c.clip_norm = value.get<double>();
      } else if (key == "seed") {
        c.seed = value.get<std::uint64_t>();
      } else if (key == "precision") {
        c.precision = parse_precision(value.get<std::string>());
      } else if (key == "out_dir") {
        c.out_dir = value.get<std::string>();
      } else if (key == "embed_dim") {
        c.embed_dim = value.get<index>();
      } else if (key == "hidden") {
        c.hidden = value.get<index>();
      } else if (key == "layers") {
        c.layers = value.get<index>();
      } else if (key == "dropout_nr") {
        c.dropout_nr = value.get<double>();
      } else if (key == "dropout_rh") {
        if (value.is_null()) {
          c.dropout_rh.reset();
        } else {
          c.dropout_rh = value.get<double>();
        }
      } else if (key == "mode") {
        c.mode = parse_dropout_mode(value.get<std::string>());
      } else if (key == "init_range") {
        c.init_range = value.get<double>();
      } else if (key == "compute") {
        c.compute = parse_compute(value.get<std::string>());
      } else if (key == "threads") {
        c.threads = value.get<int>();
      } else {
        throw ConfigError("unknown config key: " + key);
      }
    } catch (const json::exception& e) {
      throw ConfigError("config key '" + key + "': " + e.what());
    }
  }
  return c;
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  if (in.bad()) throw IoError("config read failed: " + path);
  return parse_train_config(buffer.str());
}

template <typename T>
EvalResult evaluate(const ModelParams<T>& params, const ModelConfig& config,
                    const std::vector<std::int32_t>& stream, index batch, index steps) {
  const std::vector<WindowBatch> batches = make_batches(stream, batch, steps);
  CarriedState<T> carried;
  carried.reset(config, batch);
  std::vector<Matrix<T>> logits;
  WindowTape<T> tape;
  double loss_sum = 0.0;
  for (const WindowBatch& wb : batches) {
    forward_window(params, config, wb.inputs, carried, nullptr, ComputeMode::dense, logits, tape);
    loss_sum += static_cast<double>(loss_and_grad<T>(logits, wb.targets, nullptr));
  }
  EvalResult result;
  result.loss = loss_sum / static_cast<double>(batches.size());
  result.ppl = perplexity(result.loss);
  return result;
}

TrainReport train(const TrainConfig& config) {
  config.validate();
  return config.precision == Precision::f64 ? train_impl<double>(config)
                                            : train_impl<float>(config);
}

void write_epochs_csv(const std::string& path, const TrainReport& report) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write csv: " + path);
  out << "epoch,train_loss,valid_loss,valid_ppl,lr,wall_seconds\n";
  for (const EpochRecord& r : report.epochs) {
    out << r.epoch << ',' << format_double(r.train_loss) << ',' << format_double(r.valid_loss)
        << ',' << format_double(r.valid_ppl) << ',' << format_double(r.lr) << ','
        << format_double(r.wall_seconds) << '\n';
  }
  if (!out) throw IoError("csv write failed: " + path);
}

void write_report_json(const std::string& path, const TrainConfig& config,
                       const TrainReport& report) {
  json j;
  j["mode"] = report.mode_label;
  j["precision"] = precision_name(report.precision);
  j["compute"] = config.compute == ComputeMode::sparse ? "sparse" : "dense";
  j["threads"] = report.threads;
  j["seed"] = config.seed;
  j["corpus_path"] = config.corpus_path;
  j["batch_size"] = config.batch_size;
  j["unroll_steps"] = config.unroll_steps;
  j["embed_dim"] = config.embed_dim;
  j["hidden"] = config.hidden;
  j["layers"] = config.layers;
  j["dropout_nr"] = config.dropout_nr;
  if (config.dropout_rh) {
    j["dropout_rh"] = *config.dropout_rh;
  } else {
    j["dropout_rh"] = nullptr;
  }
  j["lr"] = config.lr;
  j["lr_decay"] = config.lr_decay;
  j["lr_decay_start_epoch"] = config.lr_decay_start_epoch;
  j["clip_norm"] = config.clip_norm;
  j["init_range"] = config.init_range;
  json epochs = json::array();
  for (const EpochRecord& r : report.epochs) {
    epochs.push_back({{"epoch", r.epoch},
                      {"train_loss", r.train_loss},
                      {"valid_loss", r.valid_loss},
                      {"valid_ppl", r.valid_ppl},
                      {"lr", r.lr},
                      {"wall_seconds", r.wall_seconds}});
  }
  j["epochs"] = epochs;
  j["test_loss"] = report.test_loss;
  j["test_ppl"] = report.test_ppl;
  j["checkpoint"] = report.checkpoint_path;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report: " + path);
  out << j.dump(2) << '\n';
  if (!out) throw IoError("report write failed: " + path);
}

#define SDLSTM_INSTANTIATE_TRAINER(T)                                                      \
  template StepStats sgd_step<T>(ModelParams<T>&, const ModelGradients<T>&, double, double); \
  template EvalResult evaluate<T>(const ModelParams<T>&, const ModelConfig&,               \
                                  const std::vector<std::int32_t>&, index, index);

SDLSTM_INSTANTIATE_TRAINER(float)
SDLSTM_INSTANTIATE_TRAINER(double)

#undef SDLSTM_INSTANTIATE_TRAINER

}  // namespace sdlstm
