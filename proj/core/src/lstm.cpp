#include "sdlstm/lstm.hpp"

#include <cmath>

namespace sdlstm {

namespace {

template <typename T>
T sigmoid_scalar(T x) {
  return T{1} / (T{1} + std::exp(-x));
}

// Masked projection of gradients: out = mask-applied (g * wt). Sparse mode
// with a structured mask skips dropped output columns; otherwise a dense
// product followed by the recorded mask.
template <typename T>
void backward_projection(Matrix<T>& out, const Matrix<T>& g, const Matrix<T>& wt, MaskRef mask,
                         ComputeMode mode, LstmScratch<T>& scratch) {
  if (mask.is_structured() && mode == ComputeMode::sparse) {
    gemm_output_colsparse_into(out, g, wt, mask.structured(), scratch.kernel);
    return;
  }
  if (!mask.active()) {
    matmul_into(out, g, wt);
    return;
  }
  matmul_into(scratch.kernel.out, g, wt);
  mask.apply_into(out, scratch.kernel.out);
}

}  // namespace

template <typename T>
void LstmParams<T>::validate() const {
  const index h = u.rows();
  check_shape(u.cols() == 4 * h, "LstmParams: U must be H x 4H");
  check_shape(w.cols() == 4 * h, "LstmParams: W must be input_dim x 4H");
  check_shape(static_cast<index>(b.size()) == 4 * h, "LstmParams: bias must have 4H entries");
}

template <typename T>
TransposedParams<T> transpose_params(const LstmParams<T>& params) {
  TransposedParams<T> t;
  transpose_into(t.wt, params.w);
  transpose_into(t.ut, params.u);
  return t;
}

template <typename T>
void GradientSet<T>::resize_like(const LstmParams<T>& params) {
  dw.resize(params.w.rows(), params.w.cols());
  du.resize(params.u.rows(), params.u.cols());
  db.assign(params.b.size(), T{0});
}

template <typename T>
void GradientSet<T>::clear() {
  dw.fill(T{0});
  du.fill(T{0});
  db.assign(db.size(), T{0});
}

template <typename T>
void step_forward(const LstmParams<T>& params, const Matrix<T>& x, const Matrix<T>& h_prev,
                  const Matrix<T>& c_prev, MaskRef nr_mask, MaskRef rh_mask, ComputeMode mode,
                  LstmScratch<T>& scratch, StepCache<T>& cache, Matrix<T>& h_out,
                  Matrix<T>& c_out) {
  const index bsz = x.rows();
  const index h = params.hidden();
  check_shape(x.cols() == params.input_dim(), "step_forward: x width != input_dim");
  check_shape(h_prev.rows() == bsz && h_prev.cols() == h, "step_forward: h_prev shape");
  check_shape(c_prev.rows() == bsz && c_prev.cols() == h, "step_forward: c_prev shape");

  cache.nr_mask = nr_mask;
  cache.rh_mask = rh_mask;
  nr_mask.apply_into(cache.x_dropped, x);
  rh_mask.apply_into(cache.h_prev_dropped, h_prev);
  cache.c_prev = c_prev;

  if (nr_mask.is_structured() && mode == ComputeMode::sparse) {
    gemm_lhs_colsparse_into(scratch.preact, cache.x_dropped, nr_mask.structured(), params.w,
                            scratch.kernel);
  } else {
    matmul_into(scratch.preact, cache.x_dropped, params.w);
  }
  if (rh_mask.is_structured() && mode == ComputeMode::sparse) {
    gemm_lhs_colsparse_into(scratch.preact, cache.h_prev_dropped, rh_mask.structured(), params.u,
                            scratch.kernel, /*accumulate=*/true);
  } else {
    matmul_into(scratch.preact, cache.h_prev_dropped, params.u, /*accumulate=*/true);
  }

  cache.gate_i.resize(bsz, h);
  cache.gate_f.resize(bsz, h);
  cache.gate_o.resize(bsz, h);
  cache.gate_g.resize(bsz, h);
  cache.c_t.resize(bsz, h);
  cache.tanh_c_t.resize(bsz, h);
  h_out.resize(bsz, h);

  const T* bias = params.b.data();
  for (index r = 0; r < bsz; ++r) {
    const T* pre = scratch.preact.row(r);
    const T* cp = cache.c_prev.row(r);
    T* gi = cache.gate_i.row(r);
    T* gf = cache.gate_f.row(r);
    T* go = cache.gate_o.row(r);
    T* gg = cache.gate_g.row(r);
    T* ct = cache.c_t.row(r);
    T* tc = cache.tanh_c_t.row(r);
    T* ho = h_out.row(r);
    for (index j = 0; j < h; ++j) {
      gi[j] = sigmoid_scalar(pre[kGateI * h + j] + bias[kGateI * h + j]);
      gf[j] = sigmoid_scalar(pre[kGateF * h + j] + bias[kGateF * h + j]);
      go[j] = sigmoid_scalar(pre[kGateO * h + j] + bias[kGateO * h + j]);
      gg[j] = std::tanh(pre[kGateG * h + j] + bias[kGateG * h + j]);
      ct[j] = gf[j] * cp[j] + gi[j] * gg[j];
      tc[j] = std::tanh(ct[j]);
      ho[j] = go[j] * tc[j];
    }
  }
  c_out = cache.c_t;
}

template <typename T>
void step_backward(const LstmParams<T>& params, const TransposedParams<T>& tparams,
                   const StepCache<T>& cache, const Matrix<T>& d_h_total,
                   const Matrix<T>& d_c_next, ComputeMode mode, LstmScratch<T>& scratch,
                   StepGradients<T>& out) {
  const index bsz = cache.c_t.rows();
  const index h = params.hidden();
  check_shape(d_h_total.rows() == bsz && d_h_total.cols() == h, "step_backward: d_h_total shape");
  check_shape(d_c_next.rows() == bsz && d_c_next.cols() == h, "step_backward: d_c_next shape");

  out.d_gates_pre.resize(bsz, 4 * h);
  out.d_c_prev.resize(bsz, h);

  for (index r = 0; r < bsz; ++r) {
    const T* dh = d_h_total.row(r);
    const T* dcn = d_c_next.row(r);
    const T* tc = cache.tanh_c_t.row(r);
    const T* cp = cache.c_prev.row(r);
    const T* gi = cache.gate_i.row(r);
    const T* gf = cache.gate_f.row(r);
    const T* go = cache.gate_o.row(r);
    const T* gg = cache.gate_g.row(r);
    T* dgp = out.d_gates_pre.row(r);
    T* dcp = out.d_c_prev.row(r);
    for (index j = 0; j < h; ++j) {
      const T d_o = dh[j] * tc[j];
      const T d_c = dh[j] * go[j] * (T{1} - tc[j] * tc[j]) + dcn[j];
      const T d_f = d_c * cp[j];
      const T d_i = d_c * gg[j];
      const T d_g = d_c * gi[j];
      dcp[j] = d_c * gf[j];
      dgp[kGateI * h + j] = d_i * gi[j] * (T{1} - gi[j]);
      dgp[kGateF * h + j] = d_f * gf[j] * (T{1} - gf[j]);
      dgp[kGateO * h + j] = d_o * go[j] * (T{1} - go[j]);
      dgp[kGateG * h + j] = d_g * (T{1} - gg[j] * gg[j]);
    }
  }

  backward_projection(out.d_h_prev, out.d_gates_pre, tparams.ut, cache.rh_mask, mode, scratch);
  backward_projection(out.d_x, out.d_gates_pre, tparams.wt, cache.nr_mask, mode, scratch);
}

template <typename T>
void step_weight_grads(const StepCache<T>& cache, const Matrix<T>& d_gates_pre, ComputeMode mode,
                       LstmScratch<T>& scratch, GradientSet<T>& accum) {
  const index bsz = d_gates_pre.rows();
  check_shape(cache.x_dropped.rows() == bsz, "step_weight_grads: cache/gradient batch mismatch");

  transpose_into(scratch.xt, cache.x_dropped);
  if (cache.nr_mask.is_structured() && mode == ComputeMode::sparse) {
    gemm_lhs_rowsparse_into(accum.dw, scratch.xt, cache.nr_mask.structured(), d_gates_pre,
                            scratch.kernel, /*accumulate=*/true);
  } else {
    matmul_into(accum.dw, scratch.xt, d_gates_pre, /*accumulate=*/true);
  }

  transpose_into(scratch.ht, cache.h_prev_dropped);
  if (cache.rh_mask.is_structured() && mode == ComputeMode::sparse) {
    gemm_lhs_rowsparse_into(accum.du, scratch.ht, cache.rh_mask.structured(), d_gates_pre,
                            scratch.kernel, /*accumulate=*/true);
  } else {
    matmul_into(accum.du, scratch.ht, d_gates_pre, /*accumulate=*/true);
  }

  T* db = accum.db.data();
  for (index r = 0; r < bsz; ++r) {
    const T* dgp = d_gates_pre.row(r);
    for (index j = 0; j < d_gates_pre.cols(); ++j) db[j] += dgp[j];
  }
}

template <typename T>
void bptt(std::span<const LstmParams<T>> params, const Tape<T>& tape,
          const std::vector<Matrix<T>>& d_out, ComputeMode mode,
          std::vector<GradientSet<T>>& grads, std::vector<Matrix<T>>& d_input) {
  const index layers = tape.layers();
  const index steps = tape.steps();
  check_shape(static_cast<index>(params.size()) == layers, "bptt: params/tape layer mismatch");
  check_shape(static_cast<index>(d_out.size()) == steps, "bptt: d_out length != steps");
  check_value(layers >= 1 && steps >= 1, "bptt: empty tape");

  const index bsz = d_out.front().rows();

  grads.resize(static_cast<std::size_t>(layers));
  for (index l = 0; l < layers; ++l) {
    grads[static_cast<std::size_t>(l)].resize_like(params[static_cast<std::size_t>(l)]);
    grads[static_cast<std::size_t>(l)].clear();
  }
  d_input.resize(static_cast<std::size_t>(steps));

  std::vector<TransposedParams<T>> tparams;
  tparams.reserve(static_cast<std::size_t>(layers));
  for (index l = 0; l < layers; ++l) {
    tparams.push_back(transpose_params(params[static_cast<std::size_t>(l)]));
  }

  std::vector<LstmScratch<T>> scratch(static_cast<std::size_t>(layers));
  std::vector<Matrix<T>> d_h_carry(static_cast<std::size_t>(layers));
  std::vector<Matrix<T>> d_c_carry(static_cast<std::size_t>(layers));
  for (index l = 0; l < layers; ++l) {
    const index h = params[static_cast<std::size_t>(l)].hidden();
    d_h_carry[static_cast<std::size_t>(l)].resize(bsz, h);
    d_c_carry[static_cast<std::size_t>(l)].resize(bsz, h);
  }

  StepGradients<T> sg;
  Matrix<T> d_h_total;
  Matrix<T> d_from_above;
  for (index t = steps - 1; t >= 0; --t) {
    d_from_above = d_out[static_cast<std::size_t>(t)];
    for (index l = layers - 1; l >= 0; --l) {
      const auto lu = static_cast<std::size_t>(l);
      elementwise_into(d_h_total, ElemwiseOp::add, d_from_above, d_h_carry[lu]);
      step_backward(params[lu], tparams[lu], tape.layer_steps[lu][static_cast<std::size_t>(t)],
                    d_h_total, d_c_carry[lu], mode, scratch[lu], sg);
      step_weight_grads(tape.layer_steps[lu][static_cast<std::size_t>(t)], sg.d_gates_pre, mode,
                        scratch[lu], grads[lu]);
      d_h_carry[lu] = sg.d_h_prev;
      d_c_carry[lu] = sg.d_c_prev;
      d_from_above = sg.d_x;
    }
    d_input[static_cast<std::size_t>(t)] = d_from_above;
  }
}

template <typename T>
StepForwardResult<T> step_forward(const LstmParams<T>& params, const Matrix<T>& x,
                                  const Matrix<T>& h_prev, const Matrix<T>& c_prev,
                                  MaskRef nr_mask, MaskRef rh_mask, ComputeMode mode) {
  StepForwardResult<T> result;
  LstmScratch<T> scratch;
  step_forward(params, x, h_prev, c_prev, nr_mask, rh_mask, mode, scratch, result.cache, result.h,
               result.c);
  return result;
}

template <typename T>
StepGradients<T> step_backward(const LstmParams<T>& params, const StepCache<T>& cache,
                               const Matrix<T>& d_h_total, const Matrix<T>& d_c_next,
                               ComputeMode mode) {
  StepGradients<T> out;
  LstmScratch<T> scratch;
  const TransposedParams<T> tparams = transpose_params(params);
  step_backward(params, tparams, cache, d_h_total, d_c_next, mode, scratch, out);
  return out;
}

template <typename T>
void step_weight_grads(const StepCache<T>& cache, const Matrix<T>& d_gates_pre, ComputeMode mode,
                       GradientSet<T>& accum) {
  LstmScratch<T> scratch;
  step_weight_grads(cache, d_gates_pre, mode, scratch, accum);
}

#define SDLSTM_INSTANTIATE_LSTM(T)                                                                \
  template struct LstmParams<T>;                                                                  \
  template TransposedParams<T> transpose_params<T>(const LstmParams<T>&);                         \
  template struct GradientSet<T>;                                                                 \
  template void step_forward<T>(const LstmParams<T>&, const Matrix<T>&, const Matrix<T>&,         \
                                const Matrix<T>&, MaskRef, MaskRef, ComputeMode, LstmScratch<T>&, \
                                StepCache<T>&, Matrix<T>&, Matrix<T>&);                           \
  template void step_backward<T>(const LstmParams<T>&, const TransposedParams<T>&,                \
                                 const StepCache<T>&, const Matrix<T>&, const Matrix<T>&,         \
                                 ComputeMode, LstmScratch<T>&, StepGradients<T>&);                \
  template void step_weight_grads<T>(const StepCache<T>&, const Matrix<T>&, ComputeMode,          \
                                     LstmScratch<T>&, GradientSet<T>&);                           \
  template void bptt<T>(std::span<const LstmParams<T>>, const Tape<T>&,                           \
                        const std::vector<Matrix<T>>&, ComputeMode,                               \
                        std::vector<GradientSet<T>>&, std::vector<Matrix<T>>&);                   \
  template StepForwardResult<T> step_forward<T>(const LstmParams<T>&, const Matrix<T>&,           \
                                                const Matrix<T>&, const Matrix<T>&, MaskRef,      \
                                                MaskRef, ComputeMode);                            \
  template StepGradients<T> step_backward<T>(const LstmParams<T>&, const StepCache<T>&,           \
                                             const Matrix<T>&, const Matrix<T>&, ComputeMode);    \
  template void step_weight_grads<T>(const StepCache<T>&, const Matrix<T>&, ComputeMode,          \
                                     GradientSet<T>&);

SDLSTM_INSTANTIATE_LSTM(float)
SDLSTM_INSTANTIATE_LSTM(double)

#undef SDLSTM_INSTANTIATE_LSTM

}  // namespace sdlstm
