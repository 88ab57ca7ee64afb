#pragma once

#include "sdlstm/masks.hpp"
#include "sdlstm/matrix.hpp"

namespace sdlstm {

// Which operand of a GEMM carries the known zero pattern.
enum class SparsityKind {
  lhs_column_sparse,     // forward pass: masked activation times weights
  output_column_sparse,  // backward pass: result is masked, skip dropped columns
  lhs_row_sparse,        // weight gradients: transposed masked activation
};

// Reusable compaction buffers. Kernels gather into these and run one dense
// GEMM on the smaller problem; callers keep one scratch alive across time
// steps so timing excludes allocation.
template <typename T>
struct KernelScratch {
  Matrix<T> lhs;
  Matrix<T> rhs;
  Matrix<T> out;
};

// out = xm * w, where xm (B x H) has exact-zero columns on mask.dropped.
// Only kept columns of xm and kept rows of w participate.
template <typename T>
void gemm_lhs_colsparse_into(Matrix<T>& out, const Matrix<T>& xm, const StructuredMask& mask,
                             const Matrix<T>& w, KernelScratch<T>& scratch,
                             bool accumulate = false);

template <typename T>
Matrix<T> gemm_lhs_colsparse(const Matrix<T>& xm, const StructuredMask& mask, const Matrix<T>& w,
                             KernelScratch<T>& scratch);

// out = mask-applied (g * wt): kept output columns are (g * wt) scaled by
// mask.scale, dropped columns are exact zeros. The mask application is fused
// into the scatter, so only kept columns of wt are ever multiplied.
template <typename T>
void gemm_output_colsparse_into(Matrix<T>& out, const Matrix<T>& g, const Matrix<T>& wt,
                                const StructuredMask& mask, KernelScratch<T>& scratch);

template <typename T>
Matrix<T> gemm_output_colsparse(const Matrix<T>& g, const Matrix<T>& wt, const StructuredMask& mask,
                                KernelScratch<T>& scratch);

// out = xmt * g, where xmt (H x B) has exact-zero rows on mask.dropped.
// Kept rows are computed, dropped rows stay exact zeros.
template <typename T>
void gemm_lhs_rowsparse_into(Matrix<T>& out, const Matrix<T>& xmt, const StructuredMask& mask,
                             const Matrix<T>& g, KernelScratch<T>& scratch,
                             bool accumulate = false);

template <typename T>
Matrix<T> gemm_lhs_rowsparse(const Matrix<T>& xmt, const StructuredMask& mask, const Matrix<T>& g,
                             KernelScratch<T>& scratch);

// Multiply-add counts for one B x H by H x M product (or its transposes);
// the compacted kernel touches |kept| of the H dimension.
std::int64_t sparse_flops(SparsityKind kind, index b, index h, index m, const StructuredMask& mask);
std::int64_t dense_flops(index b, index h, index m);

}  // namespace sdlstm
