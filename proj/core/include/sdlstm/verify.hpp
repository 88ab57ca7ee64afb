#pragma once

#include <cstdint>

#include "sdlstm/lm_model.hpp"

namespace sdlstm {

// Relative error with a unit floor so near-zero pairs compare absolutely:
// |a - b| / max(1, |a|, |b|).
double rel_error(double a, double b);

// Reference product via the naive triple loop, independent of the blocked
// kernel path.
template <typename T>
Matrix<T> naive_matmul(const Matrix<T>& a, const Matrix<T>& b);

struct KernelVerifyReport {
  index trials{0};
  index checks{0};
  index failures{0};
  double max_rel{0.0};
};

// Randomized equivalence suite for the three compacted kernels. Each trial
// draws H in [8, 256], B in [1, 64], p in {0.25, 0.5, 0.65}, builds a
// structured mask, and checks one instance of each kernel against a dense
// product with the dropped operand columns/rows zeroed. A check fails when
// any entry differs by more than 1e-10 relative, or when an output position
// the mask promises to zero is not an exact zero. Double precision.
KernelVerifyReport verify_kernels(index trials, std::uint64_t seed);

struct GradcheckReport {
  double max_rel{0.0};
  index checked{0};

  bool passed(double tol = 1e-5) const { return max_rel < tol; }
};

// Finite-difference check of a stacked-LSTM window in double precision.
// Builds `layers` cells of width `hidden` (input width also `hidden`), runs
// `steps` steps under the mode's mask schedule, and takes the loss
// sum_t <r_t, h_top_t> for fixed random r_t. Every weight, bias, and input
// entry is perturbed by +-1e-5 (central differences) and compared against
// the recorded-tape gradients.
GradcheckReport gradcheck_stack(index hidden, index batch, index steps, index layers,
                                DropoutMode mode, std::uint64_t seed);

// Same check through the whole language model: embedding lookup, stacked
// layers, pre-head dropout, softmax head, mean cross-entropy loss. Perturbs
// every parameter including embedding and head.
GradcheckReport gradcheck_model(index vocab, index embed_dim, index hidden, index layers,
                                index batch, index steps, DropoutMode mode, std::uint64_t seed);

}  // namespace sdlstm
