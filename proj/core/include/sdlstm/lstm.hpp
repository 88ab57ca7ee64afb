#pragma once

#include <span>
#include <vector>

#include "sdlstm/masks.hpp"
#include "sdlstm/matrix.hpp"
#include "sdlstm/sparse_kernels.hpp"

namespace sdlstm {

// Whether masked GEMMs run through the compacted kernels or as plain dense
// products on mask-applied operands. Both produce the same values; sparse is
// the computation-skipping path.
enum class ComputeMode { dense, sparse };

// Column blocks of the stacked 4H gate dimension, in fixed order.
inline constexpr index kGateI = 0;
inline constexpr index kGateF = 1;
inline constexpr index kGateO = 2;
inline constexpr index kGateG = 3;

// One LSTM layer's parameters. The four gate projections are stored
// contiguously along columns so each direction of a step is a single GEMM.
template <typename T>
struct LstmParams {
  Matrix<T> w;       // input_dim x 4H, column blocks [i | f | o | g]
  Matrix<T> u;       // hidden x 4H
  std::vector<T> b;  // 4H

  index input_dim() const { return w.rows(); }
  index hidden() const { return u.rows(); }
  void validate() const;
};

// Weight transposes reused across a backward window.
template <typename T>
struct TransposedParams {
  Matrix<T> wt;  // 4H x input_dim
  Matrix<T> ut;  // 4H x hidden
};

template <typename T>
TransposedParams<T> transpose_params(const LstmParams<T>& params);

// Per-step tape record: everything the backward pass reads, including the
// masks the forward pass applied.
template <typename T>
struct StepCache {
  Matrix<T> x_dropped;       // B x input_dim, mask-applied
  Matrix<T> h_prev_dropped;  // B x H, mask-applied (equals h_prev in NR-only mode)
  Matrix<T> c_prev;          // B x H
  Matrix<T> gate_i, gate_f, gate_o, gate_g;  // B x H, post-activation
  Matrix<T> c_t;             // B x H
  Matrix<T> tanh_c_t;        // B x H
  MaskRef nr_mask;
  MaskRef rh_mask;
};

template <typename T>
struct StepGradients {
  Matrix<T> d_gates_pre;  // B x 4H, pre-activation gate gradients, stacked
  Matrix<T> d_h_prev;     // B x H, masked by the step's RH mask when active
  Matrix<T> d_c_prev;     // B x H
  Matrix<T> d_x;          // B x input_dim, masked by the step's NR mask
};

// Parameter gradients for one layer, summed over a window's steps.
template <typename T>
struct GradientSet {
  Matrix<T> dw;
  Matrix<T> du;
  std::vector<T> db;

  void resize_like(const LstmParams<T>& params);
  void clear();
};

// Working buffers owned by the caller and reused across steps.
template <typename T>
struct LstmScratch {
  Matrix<T> preact;  // B x 4H
  Matrix<T> xt;      // transposed activations for weight gradients
  Matrix<T> ht;
  KernelScratch<T> kernel;
};

// One cell step: gates from the two masked projections, then cell and hidden
// state. h_out / c_out may alias h_prev / c_prev. The cell state is never
// masked; h_t and c_t come back dense.
template <typename T>
void step_forward(const LstmParams<T>& params, const Matrix<T>& x, const Matrix<T>& h_prev,
                  const Matrix<T>& c_prev, MaskRef nr_mask, MaskRef rh_mask, ComputeMode mode,
                  LstmScratch<T>& scratch, StepCache<T>& cache, Matrix<T>& h_out,
                  Matrix<T>& c_out);

// Backprop of one step. d_h_total is the already-masked sum of gradients
// arriving at h_t; d_c_next is the cell gradient flowing in from step t+1
// (zeros at the window end).
template <typename T>
void step_backward(const LstmParams<T>& params, const TransposedParams<T>& tparams,
                   const StepCache<T>& cache, const Matrix<T>& d_h_total,
                   const Matrix<T>& d_c_next, ComputeMode mode, LstmScratch<T>& scratch,
                   StepGradients<T>& out);

// Accumulates dW += x_dropped^T * d_gates_pre, dU += h_prev_dropped^T *
// d_gates_pre, db += column sums. Row-sparse kernels in sparse mode.
template <typename T>
void step_weight_grads(const StepCache<T>& cache, const Matrix<T>& d_gates_pre, ComputeMode mode,
                       LstmScratch<T>& scratch, GradientSet<T>& accum);

// Forward tape for a whole window: [layer][step].
template <typename T>
struct Tape {
  std::vector<std::vector<StepCache<T>>> layer_steps;

  index layers() const { return static_cast<index>(layer_steps.size()); }
  index steps() const {
    return layer_steps.empty() ? 0 : static_cast<index>(layer_steps.front().size());
  }
};

// Truncated BPTT over a recorded window. d_out holds the per-step gradients
// arriving at the top layer's h_t (already masked by their consumer).
// Returns per-layer parameter gradients and the per-step gradient w.r.t. the
// bottom layer's input sequence.
template <typename T>
void bptt(std::span<const LstmParams<T>> params, const Tape<T>& tape,
          const std::vector<Matrix<T>>& d_out, ComputeMode mode,
          std::vector<GradientSet<T>>& grads, std::vector<Matrix<T>>& d_input);

// Allocating conveniences.
template <typename T>
struct StepForwardResult {
  Matrix<T> h;
  Matrix<T> c;
  StepCache<T> cache;
};

template <typename T>
StepForwardResult<T> step_forward(const LstmParams<T>& params, const Matrix<T>& x,
                                  const Matrix<T>& h_prev, const Matrix<T>& c_prev,
                                  MaskRef nr_mask, MaskRef rh_mask, ComputeMode mode);

template <typename T>
StepGradients<T> step_backward(const LstmParams<T>& params, const StepCache<T>& cache,
                               const Matrix<T>& d_h_total, const Matrix<T>& d_c_next,
                               ComputeMode mode);

template <typename T>
void step_weight_grads(const StepCache<T>& cache, const Matrix<T>& d_gates_pre, ComputeMode mode,
                       GradientSet<T>& accum);

}  // namespace sdlstm
