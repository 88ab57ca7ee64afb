#include "sdlstm/verify.hpp"

#include <algorithm>
#include <cmath>

#include "sdlstm/lstm.hpp"

namespace sdlstm {

namespace {

constexpr std::uint64_t kDataStream = 0x64617461;  // operand and parameter draws
constexpr std::uint64_t kMaskStream = 0x6d61736b;  // mask schedules
constexpr double kFdEps = 1e-5;

template <typename T>
void fill_uniform(Matrix<T>& m, Rng& rng, double lo, double hi) {
  for (T& v : m.data()) v = static_cast<T>(rng.next_uniform(lo, hi));
}

double max_rel_entry(const Matrix<double>& got, const Matrix<double>& want) {
  check_shape(got.same_shape(want), "max_rel_entry: shape mismatch");
  double worst = 0.0;
  for (index i = 0; i < got.size(); ++i) {
    worst = std::max(worst, rel_error(got.data()[static_cast<std::size_t>(i)],
                                      want.data()[static_cast<std::size_t>(i)]));
  }
  return worst;
}

void record_check(KernelVerifyReport& report, bool exact_zero_ok, double rel, double tol) {
  report.checks += 1;
  report.max_rel = std::max(report.max_rel, rel);
  if (!exact_zero_ok || rel > tol) report.failures += 1;
}

// Everything one finite-difference evaluation of the stacked window needs.
struct StackProblem {
  std::vector<LstmParams<double>> params;
  std::vector<Matrix<double>> xs;      // per step, B x H
  std::vector<Matrix<double>> h0, c0;  // per layer, B x H
  std::vector<Matrix<double>> r;       // per step loss weights, B x H
  MaskSchedule schedule;
};

double run_stack(const StackProblem& prob, ComputeMode mode, Tape<double>* tape_out) {
  const index layers = static_cast<index>(prob.params.size());
  const index steps = static_cast<index>(prob.xs.size());
  std::vector<Matrix<double>> h = prob.h0;
  std::vector<Matrix<double>> c = prob.c0;
  Tape<double> tape;
  tape.layer_steps.assign(static_cast<std::size_t>(layers),
                          std::vector<StepCache<double>>(static_cast<std::size_t>(steps)));
  LstmScratch<double> scratch;
  double loss = 0.0;
  for (index t = 0; t < steps; ++t) {
    const Matrix<double>* layer_in = &prob.xs[static_cast<std::size_t>(t)];
    for (index l = 0; l < layers; ++l) {
      auto& lane = h[static_cast<std::size_t>(l)];
      step_forward(prob.params[static_cast<std::size_t>(l)], *layer_in, lane,
                   c[static_cast<std::size_t>(l)], prob.schedule.nr_mask(l, t),
                   prob.schedule.rh_mask(l, t), mode, scratch,
                   tape.layer_steps[static_cast<std::size_t>(l)][static_cast<std::size_t>(t)], lane,
                   c[static_cast<std::size_t>(l)]);
      layer_in = &lane;
    }
    const Matrix<double>& top = h[static_cast<std::size_t>(layers - 1)];
    const Matrix<double>& rt = prob.r[static_cast<std::size_t>(t)];
    for (index i = 0; i < top.size(); ++i) {
      loss += rt.data()[static_cast<std::size_t>(i)] * top.data()[static_cast<std::size_t>(i)];
    }
  }
  if (tape_out != nullptr) *tape_out = std::move(tape);
  return loss;
}

// Central difference on one scalar location against its analytic value.
template <typename LossFn>
void fd_compare(GradcheckReport& report, double& slot, double analytic, LossFn&& loss_fn) {
  const double saved = slot;
  slot = saved + kFdEps;
  const double plus = loss_fn();
  slot = saved - kFdEps;
  const double minus = loss_fn();
  slot = saved;
  const double fd = (plus - minus) / (2.0 * kFdEps);
  report.max_rel = std::max(report.max_rel, rel_error(analytic, fd));
  report.checked += 1;
}

MaskSchedule stack_schedule(index hidden, index batch, index steps, index layers, DropoutMode mode,
                            std::uint64_t seed) {
  MaskSchedule::Params mp;
  mp.mode = mask_case_for(mode);
  mp.steps = steps;
  mp.batch = batch;
  mp.nr_widths.assign(static_cast<std::size_t>(layers), hidden);
  mp.p_nr = 0.5;
  if (mode == DropoutMode::nr_rh_st) {
    mp.p_rh = 0.5;
    mp.rh_slots = layers;
    mp.rh_width = hidden;
  }
  mp.seed = derive_seed(seed, kMaskStream);
  return MaskSchedule::build(mp);
}

}  // namespace

double rel_error(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

template <typename T>
Matrix<T> naive_matmul(const Matrix<T>& a, const Matrix<T>& b) {
  check_shape(a.cols() == b.rows(), "naive_matmul: inner dimensions differ");
  Matrix<T> out(a.rows(), b.cols());
  for (index i = 0; i < a.rows(); ++i) {
    for (index j = 0; j < b.cols(); ++j) {
      T acc{0};
      for (index k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
      out(i, j) = acc;
    }
  }
  return out;
}

template Matrix<float> naive_matmul<float>(const Matrix<float>&, const Matrix<float>&);
template Matrix<double> naive_matmul<double>(const Matrix<double>&, const Matrix<double>&);

KernelVerifyReport verify_kernels(index trials, std::uint64_t seed) {
  check_value(trials > 0, "verify_kernels: trials must be positive");
  KernelVerifyReport report;
  report.trials = trials;
  Rng rng(derive_seed(seed, kDataStream));
  KernelScratch<double> scratch;
  constexpr double kTol = 1e-10;
  constexpr double kP[3] = {0.25, 0.5, 0.65};

  for (index trial = 0; trial < trials; ++trial) {
    const index h = 8 + static_cast<index>(rng.next_below(249));
    const index b = 1 + static_cast<index>(rng.next_below(64));
    const index m = 4 * h;
    const double p = kP[rng.next_below(3)];
    const StructuredMask mask = sample_structured_mask(h, p, rng);

    // Forward shape: masked activation (zero columns) times weights.
    Matrix<double> x(b, h);
    fill_uniform(x, rng, -1.0, 1.0);
    const Matrix<double> xm = apply_structured(x, mask);
    Matrix<double> w(h, m);
    fill_uniform(w, rng, -1.0, 1.0);
    const Matrix<double> fp = gemm_lhs_colsparse(xm, mask, w, scratch);
    record_check(report, true, max_rel_entry(fp, naive_matmul(xm, w)), kTol);

    // Backward shape: the output itself is masked; dropped columns must be
    // exact zeros, kept columns carry the dropout scale.
    Matrix<double> g(b, m);
    fill_uniform(g, rng, -1.0, 1.0);
    Matrix<double> wt(m, h);
    fill_uniform(wt, rng, -1.0, 1.0);
    const Matrix<double> bp = gemm_output_colsparse(g, wt, mask, scratch);
    bool zeros_ok = true;
    for (const index col : mask.dropped) {
      for (index row = 0; row < b; ++row) zeros_ok = zeros_ok && bp(row, col) == 0.0;
    }
    record_check(report, zeros_ok,
                 max_rel_entry(bp, apply_structured(naive_matmul(g, wt), mask)), kTol);

    // Weight-gradient shape: transposed masked activation has zero rows, and
    // those rows of the product must come out exactly zero.
    const Matrix<double> xmt = transpose(xm);
    Matrix<double> g2(b, m);
    fill_uniform(g2, rng, -1.0, 1.0);
    const Matrix<double> wg = gemm_lhs_rowsparse(xmt, mask, g2, scratch);
    zeros_ok = true;
    for (const index row : mask.dropped) {
      for (index col = 0; col < m; ++col) zeros_ok = zeros_ok && wg(row, col) == 0.0;
    }
    record_check(report, zeros_ok, max_rel_entry(wg, naive_matmul(xmt, g2)), kTol);
  }
  return report;
}

GradcheckReport gradcheck_stack(index hidden, index batch, index steps, index layers,
                                DropoutMode mode, std::uint64_t seed) {
  check_value(hidden > 0 && batch > 0 && steps > 0 && layers > 0,
              "gradcheck_stack: dimensions must be positive");
  Rng rng(derive_seed(seed, kDataStream));
  StackProblem prob;
  prob.schedule = stack_schedule(hidden, batch, steps, layers, mode, seed);
  for (index l = 0; l < layers; ++l) {
    LstmParams<double> lp;
    lp.w.resize(hidden, 4 * hidden);
    lp.u.resize(hidden, 4 * hidden);
    lp.b.assign(static_cast<std::size_t>(4 * hidden), 0.0);
    fill_uniform(lp.w, rng, -0.3, 0.3);
    fill_uniform(lp.u, rng, -0.3, 0.3);
    for (double& v : lp.b) v = rng.next_uniform(-0.3, 0.3);
    prob.params.push_back(std::move(lp));
    Matrix<double> h0(batch, hidden);
    Matrix<double> c0(batch, hidden);
    fill_uniform(h0, rng, -0.5, 0.5);
    fill_uniform(c0, rng, -0.5, 0.5);
    prob.h0.push_back(std::move(h0));
    prob.c0.push_back(std::move(c0));
  }
  for (index t = 0; t < steps; ++t) {
    Matrix<double> x(batch, hidden);
    Matrix<double> r(batch, hidden);
    fill_uniform(x, rng, -1.0, 1.0);
    fill_uniform(r, rng, -1.0, 1.0);
    prob.xs.push_back(std::move(x));
    prob.r.push_back(std::move(r));
  }

  Tape<double> tape;
  run_stack(prob, ComputeMode::sparse, &tape);
  std::vector<GradientSet<double>> grads;
  std::vector<Matrix<double>> d_input;
  bptt(std::span<const LstmParams<double>>(prob.params), tape, prob.r, ComputeMode::sparse, grads,
       d_input);

  GradcheckReport report;
  const auto loss_fn = [&] { return run_stack(prob, ComputeMode::sparse, nullptr); };
  for (index l = 0; l < layers; ++l) {
    auto& lp = prob.params[static_cast<std::size_t>(l)];
    const auto& gs = grads[static_cast<std::size_t>(l)];
    for (index i = 0; i < lp.w.size(); ++i) {
      fd_compare(report, lp.w.data()[static_cast<std::size_t>(i)],
                 gs.dw.data()[static_cast<std::size_t>(i)], loss_fn);
    }
    for (index i = 0; i < lp.u.size(); ++i) {
      fd_compare(report, lp.u.data()[static_cast<std::size_t>(i)],
                 gs.du.data()[static_cast<std::size_t>(i)], loss_fn);
    }
    for (std::size_t i = 0; i < lp.b.size(); ++i) {
      fd_compare(report, lp.b[i], gs.db[i], loss_fn);
    }
  }
  for (index t = 0; t < steps; ++t) {
    auto& x = prob.xs[static_cast<std::size_t>(t)];
    const auto& dx = d_input[static_cast<std::size_t>(t)];
    for (index i = 0; i < x.size(); ++i) {
      fd_compare(report, x.data()[static_cast<std::size_t>(i)],
                 dx.data()[static_cast<std::size_t>(i)], loss_fn);
    }
  }
  return report;
}

GradcheckReport gradcheck_model(index vocab, index embed_dim, index hidden, index layers,
                                index batch, index steps, DropoutMode mode, std::uint64_t seed) {
  const ModelConfig config =
      make_model_config(mode, vocab, embed_dim, hidden, layers, 0.5,
                        mode == DropoutMode::nr_rh_st ? std::optional<double>(0.5) : std::nullopt);
  ModelParams<double> params = init_params<double>(config, 0.1, derive_seed(seed, kDataStream));
  Rng rng(derive_seed(seed, kDataStream + 1));
  TokenMatrix tokens(batch, steps);
  TokenMatrix targets(batch, steps);
  for (auto& id : tokens.data()) id = static_cast<std::int32_t>(rng.next_below(vocab));
  for (auto& id : targets.data()) id = static_cast<std::int32_t>(rng.next_below(vocab));
  const MaskSchedule schedule =
      make_window_schedule(config, steps, batch, derive_seed(seed, kMaskStream));

  std::vector<Matrix<double>> logits;
  WindowTape<double> tape;
  CarriedState<double> carried;
  const auto loss_fn = [&] {
    carried.reset(config, batch);
    forward_window(params, config, tokens, carried, &schedule, ComputeMode::sparse, logits, tape);
    return loss_and_grad<double>(logits, targets, nullptr);
  };

  carried.reset(config, batch);
  forward_window(params, config, tokens, carried, &schedule, ComputeMode::sparse, logits, tape);
  std::vector<Matrix<double>> d_logits;
  loss_and_grad(logits, targets, &d_logits);
  ModelGradients<double> grads;
  backward_window(params, config, tape, d_logits, ComputeMode::sparse, grads);

  GradcheckReport report;
  for (index i = 0; i < params.embedding.size(); ++i) {
    fd_compare(report, params.embedding.data()[static_cast<std::size_t>(i)],
               grads.d_embedding.data()[static_cast<std::size_t>(i)], loss_fn);
  }
  for (index l = 0; l < layers; ++l) {
    auto& lp = params.lstm[static_cast<std::size_t>(l)];
    const auto& gs = grads.lstm[static_cast<std::size_t>(l)];
    for (index i = 0; i < lp.w.size(); ++i) {
      fd_compare(report, lp.w.data()[static_cast<std::size_t>(i)],
                 gs.dw.data()[static_cast<std::size_t>(i)], loss_fn);
    }
    for (index i = 0; i < lp.u.size(); ++i) {
      fd_compare(report, lp.u.data()[static_cast<std::size_t>(i)],
                 gs.du.data()[static_cast<std::size_t>(i)], loss_fn);
    }
    for (std::size_t i = 0; i < lp.b.size(); ++i) {
      fd_compare(report, lp.b[i], gs.db[i], loss_fn);
    }
  }
  for (index i = 0; i < params.head.size(); ++i) {
    fd_compare(report, params.head.data()[static_cast<std::size_t>(i)],
               grads.d_head.data()[static_cast<std::size_t>(i)], loss_fn);
  }
  for (std::size_t i = 0; i < params.head_bias.size(); ++i) {
    fd_compare(report, params.head_bias[i], grads.d_head_bias[i], loss_fn);
  }
  return report;
}

}  // namespace sdlstm
