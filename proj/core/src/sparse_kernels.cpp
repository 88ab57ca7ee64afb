#include "sdlstm/sparse_kernels.hpp"

namespace sdlstm {

template <typename T>
void gemm_lhs_colsparse_into(Matrix<T>& out, const Matrix<T>& xm, const StructuredMask& mask,
                             const Matrix<T>& w, KernelScratch<T>& scratch, bool accumulate) {
  check_shape(xm.cols() == mask.width, "gemm_lhs_colsparse: mask width != lhs cols");
  check_shape(w.rows() == mask.width, "gemm_lhs_colsparse: rhs rows != mask width");
  // Nothing dropped: compaction would be an identity copy.
  if (mask.kept_count() == mask.width) {
    matmul_into(out, xm, w, accumulate);
    return;
  }
  gather_columns_into(scratch.lhs, xm, mask.kept);
  gather_rows_into(scratch.rhs, w, mask.kept);
  matmul_into(out, scratch.lhs, scratch.rhs, accumulate);
}

template <typename T>
Matrix<T> gemm_lhs_colsparse(const Matrix<T>& xm, const StructuredMask& mask, const Matrix<T>& w,
                             KernelScratch<T>& scratch) {
  Matrix<T> out;
  gemm_lhs_colsparse_into(out, xm, mask, w, scratch);
  return out;
}

template <typename T>
void gemm_output_colsparse_into(Matrix<T>& out, const Matrix<T>& g, const Matrix<T>& wt,
                                const StructuredMask& mask, KernelScratch<T>& scratch) {
  check_shape(g.cols() == wt.rows(), "gemm_output_colsparse: inner dimensions differ");
  check_shape(wt.cols() == mask.width, "gemm_output_colsparse: mask width != rhs cols");
  const auto scale = static_cast<T>(mask.scale);
  // Nothing dropped: skip compaction, but the mask's scale still applies.
  if (mask.kept_count() == mask.width) {
    matmul_into(out, g, wt);
    if (scale != T{1}) {
      for (T& v : out.data()) v *= scale;
    }
    return;
  }
  gather_columns_into(scratch.rhs, wt, mask.kept);
  matmul_into(scratch.out, g, scratch.rhs);
  scatter_columns_into(out, scratch.out, mask.kept, mask.width, scale);
}

template <typename T>
Matrix<T> gemm_output_colsparse(const Matrix<T>& g, const Matrix<T>& wt, const StructuredMask& mask,
                                KernelScratch<T>& scratch) {
  Matrix<T> out;
  gemm_output_colsparse_into(out, g, wt, mask, scratch);
  return out;
}

template <typename T>
void gemm_lhs_rowsparse_into(Matrix<T>& out, const Matrix<T>& xmt, const StructuredMask& mask,
                             const Matrix<T>& g, KernelScratch<T>& scratch, bool accumulate) {
  check_shape(xmt.rows() == mask.width, "gemm_lhs_rowsparse: mask width != lhs rows");
  check_shape(xmt.cols() == g.rows(), "gemm_lhs_rowsparse: inner dimensions differ");
  // Nothing dropped: compaction would be an identity copy.
  if (mask.kept_count() == mask.width) {
    matmul_into(out, xmt, g, accumulate);
    return;
  }
  gather_rows_into(scratch.lhs, xmt, mask.kept);
  matmul_into(scratch.out, scratch.lhs, g);
  if (!accumulate) {
    scatter_rows_into(out, scratch.out, mask.kept, mask.width);
  } else {
    scatter_rows_into(out, scratch.out, mask.kept, mask.width, T{1}, true);
  }
}

template <typename T>
Matrix<T> gemm_lhs_rowsparse(const Matrix<T>& xmt, const StructuredMask& mask, const Matrix<T>& g,
                             KernelScratch<T>& scratch) {
  Matrix<T> out;
  gemm_lhs_rowsparse_into(out, xmt, mask, g, scratch);
  return out;
}

std::int64_t sparse_flops(SparsityKind, index b, index, index m, const StructuredMask& mask) {
  return 2 * b * mask.kept_count() * m;
}

std::int64_t dense_flops(index b, index h, index m) { return 2 * b * h * m; }

#define SDLSTM_INSTANTIATE_KERNELS(T)                                                       \
  template void gemm_lhs_colsparse_into<T>(Matrix<T>&, const Matrix<T>&,                    \
                                           const StructuredMask&, const Matrix<T>&,         \
                                           KernelScratch<T>&, bool);                        \
  template Matrix<T> gemm_lhs_colsparse<T>(const Matrix<T>&, const StructuredMask&,         \
                                           const Matrix<T>&, KernelScratch<T>&);            \
  template void gemm_output_colsparse_into<T>(Matrix<T>&, const Matrix<T>&,                 \
                                              const Matrix<T>&, const StructuredMask&,      \
                                              KernelScratch<T>&);                           \
  template Matrix<T> gemm_output_colsparse<T>(const Matrix<T>&, const Matrix<T>&,           \
                                              const StructuredMask&, KernelScratch<T>&);    \
  template void gemm_lhs_rowsparse_into<T>(Matrix<T>&, const Matrix<T>&,                    \
                                           const StructuredMask&, const Matrix<T>&,         \
                                           KernelScratch<T>&, bool);                        \
  template Matrix<T> gemm_lhs_rowsparse<T>(const Matrix<T>&, const StructuredMask&,         \
                                           const Matrix<T>&, KernelScratch<T>&);

SDLSTM_INSTANTIATE_KERNELS(float)
SDLSTM_INSTANTIATE_KERNELS(double)

#undef SDLSTM_INSTANTIATE_KERNELS

}  // namespace sdlstm
