#include "sdlstm/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "sdlstm/threading.hpp"

namespace sdlstm {

namespace {

// Blocked row-major GEMM. The (jb, kb) blocks keep a tile of B hot in cache;
// the inner axpy over j vectorizes. Accumulation order over k is preserved
// across blocks for every output element.
template <typename T>
void gemm_rows(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c, bool accumulate,
               index row_begin, index row_end) {
  const index k = a.cols();
  const index n = b.cols();
  constexpr index kb_step = 64;
  constexpr index nb_step = 512;
  if (!accumulate) {
    for (index i = row_begin; i < row_end; ++i) {
      std::memset(c.row(i), 0, static_cast<std::size_t>(n) * sizeof(T));
    }
  }
  for (index jb = 0; jb < n; jb += nb_step) {
    const index je = std::min(jb + nb_step, n);
    for (index kb = 0; kb < k; kb += kb_step) {
      const index ke = std::min(kb + kb_step, k);
      for (index i = row_begin; i < row_end; ++i) {
        T* crow = c.row(i);
        const T* arow = a.row(i);
        for (index kk = kb; kk < ke; ++kk) {
          const T av = arow[kk];
          const T* brow = b.row(kk);
          for (index j = jb; j < je; ++j) crow[j] += av * brow[j];
        }
      }
    }
  }
}

}  // namespace

template <typename T>
void matmul_into(Matrix<T>& c, const Matrix<T>& a, const Matrix<T>& b, bool accumulate) {
  check_shape(a.cols() == b.rows(), "matmul: inner dimensions differ");
  if (!accumulate) {
    c.resize(a.rows(), b.cols());
  } else {
    check_shape(c.rows() == a.rows() && c.cols() == b.cols(),
                "matmul: accumulator shape mismatch");
  }
  parallel_rows(a.rows(), [&](index begin, index end) { gemm_rows(a, b, c, accumulate, begin, end); });
}

template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
  Matrix<T> c;
  matmul_into(c, a, b);
  return c;
}

template <typename T>
void transpose_into(Matrix<T>& out, const Matrix<T>& a) {
  out.resize(a.cols(), a.rows());
  constexpr index tile = 32;
  for (index ib = 0; ib < a.rows(); ib += tile) {
    const index ie = std::min(ib + tile, a.rows());
    for (index jb = 0; jb < a.cols(); jb += tile) {
      const index je = std::min(jb + tile, a.cols());
      for (index i = ib; i < ie; ++i) {
        for (index j = jb; j < je; ++j) out(j, i) = a(i, j);
      }
    }
  }
}

template <typename T>
Matrix<T> transpose(const Matrix<T>& a) {
  Matrix<T> out;
  transpose_into(out, a);
  return out;
}

template <typename T>
void elementwise_into(Matrix<T>& out, ElemwiseOp op, const Matrix<T>& a, const Matrix<T>& b) {
  check_shape(a.same_shape(b), "elementwise: shape mismatch");
  out.resize(a.rows(), a.cols());
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* po = out.data().data();
  const index n = a.size();
  switch (op) {
    case ElemwiseOp::add:
      for (index i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
      break;
    case ElemwiseOp::sub:
      for (index i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
      break;
    case ElemwiseOp::hadamard:
      for (index i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
      break;
  }
}

template <typename T>
Matrix<T> elementwise(ElemwiseOp op, const Matrix<T>& a, const Matrix<T>& b) {
  Matrix<T> out;
  elementwise_into(out, op, a, b);
  return out;
}

template <typename T>
void activate_into(Matrix<T>& out, Activation kind, const Matrix<T>& a) {
  out.resize(a.rows(), a.cols());
  const T* pa = a.data().data();
  T* po = out.data().data();
  const index n = a.size();
  if (kind == Activation::sigmoid) {
    for (index i = 0; i < n; ++i) po[i] = T{1} / (T{1} + std::exp(-pa[i]));
  } else {
    for (index i = 0; i < n; ++i) po[i] = std::tanh(pa[i]);
  }
}

template <typename T>
Matrix<T> activate(Activation kind, const Matrix<T>& a) {
  Matrix<T> out;
  activate_into(out, kind, a);
  return out;
}

template <typename T>
void activation_grad_into(Matrix<T>& out, Activation kind, const Matrix<T>& activated,
                          const Matrix<T>& upstream) {
  check_shape(activated.same_shape(upstream), "activation_grad: shape mismatch");
  out.resize(activated.rows(), activated.cols());
  const T* pa = activated.data().data();
  const T* pu = upstream.data().data();
  T* po = out.data().data();
  const index n = activated.size();
  if (kind == Activation::sigmoid) {
    for (index i = 0; i < n; ++i) po[i] = pu[i] * pa[i] * (T{1} - pa[i]);
  } else {
    for (index i = 0; i < n; ++i) po[i] = pu[i] * (T{1} - pa[i] * pa[i]);
  }
}

template <typename T>
Matrix<T> activation_grad(Activation kind, const Matrix<T>& activated, const Matrix<T>& upstream) {
  Matrix<T> out;
  activation_grad_into(out, kind, activated, upstream);
  return out;
}

void check_keep_indices(const std::vector<index>& keep, index bound) {
  index prev = -1;
  for (index v : keep) {
    check_value(v > prev, "keep indices must be strictly increasing");
    check_value(v >= 0 && v < bound, "keep index out of range");
    prev = v;
  }
}

template <typename T>
void gather_columns_into(Matrix<T>& out, const Matrix<T>& a, const std::vector<index>& keep) {
  check_keep_indices(keep, a.cols());
  const index k = static_cast<index>(keep.size());
  out.resize(a.rows(), k);
  for (index i = 0; i < a.rows(); ++i) {
    const T* src = a.row(i);
    T* dst = out.row(i);
    for (index j = 0; j < k; ++j) dst[j] = src[keep[static_cast<std::size_t>(j)]];
  }
}

template <typename T>
Matrix<T> gather_columns(const Matrix<T>& a, const std::vector<index>& keep) {
  Matrix<T> out;
  gather_columns_into(out, a, keep);
  return out;
}

template <typename T>
void scatter_columns_into(Matrix<T>& out, const Matrix<T>& compact, const std::vector<index>& keep,
                          index cols, T scale, bool accumulate) {
  check_keep_indices(keep, cols);
  check_shape(compact.cols() == static_cast<index>(keep.size()),
              "scatter_columns: compact width != |keep|");
  if (!accumulate) {
    out.resize(compact.rows(), cols);
  } else {
    check_shape(out.rows() == compact.rows() && out.cols() == cols,
                "scatter_columns: accumulator shape mismatch");
  }
  const index k = static_cast<index>(keep.size());
  for (index i = 0; i < compact.rows(); ++i) {
    const T* src = compact.row(i);
    T* dst = out.row(i);
    if (accumulate) {
      for (index j = 0; j < k; ++j) dst[keep[static_cast<std::size_t>(j)]] += scale * src[j];
    } else {
      for (index j = 0; j < k; ++j) dst[keep[static_cast<std::size_t>(j)]] = scale * src[j];
    }
  }
}

template <typename T>
Matrix<T> scatter_columns(const Matrix<T>& compact, const std::vector<index>& keep, index cols) {
  Matrix<T> out;
  scatter_columns_into(out, compact, keep, cols);
  return out;
}

template <typename T>
void gather_rows_into(Matrix<T>& out, const Matrix<T>& a, const std::vector<index>& keep) {
  check_keep_indices(keep, a.rows());
  const index k = static_cast<index>(keep.size());
  out.resize(k, a.cols());
  for (index j = 0; j < k; ++j) {
    std::memcpy(out.row(j), a.row(keep[static_cast<std::size_t>(j)]),
                static_cast<std::size_t>(a.cols()) * sizeof(T));
  }
}

template <typename T>
Matrix<T> gather_rows(const Matrix<T>& a, const std::vector<index>& keep) {
  Matrix<T> out;
  gather_rows_into(out, a, keep);
  return out;
}

template <typename T>
void scatter_rows_into(Matrix<T>& out, const Matrix<T>& compact, const std::vector<index>& keep,
                       index rows, T scale, bool accumulate) {
  check_keep_indices(keep, rows);
  check_shape(compact.rows() == static_cast<index>(keep.size()),
              "scatter_rows: compact height != |keep|");
  if (!accumulate) {
    out.resize(rows, compact.cols());
  } else {
    check_shape(out.rows() == rows && out.cols() == compact.cols(),
                "scatter_rows: accumulator shape mismatch");
  }
  const index n = compact.cols();
  for (index j = 0; j < compact.rows(); ++j) {
    const T* src = compact.row(j);
    T* dst = out.row(keep[static_cast<std::size_t>(j)]);
    if (accumulate) {
      for (index c = 0; c < n; ++c) dst[c] += scale * src[c];
    } else {
      for (index c = 0; c < n; ++c) dst[c] = scale * src[c];
    }
  }
}

template <typename T>
Matrix<T> scatter_rows(const Matrix<T>& compact, const std::vector<index>& keep, index rows) {
  Matrix<T> out;
  scatter_rows_into(out, compact, keep, rows);
  return out;
}

#define SDLSTM_INSTANTIATE_MATRIX(T)                                                             \
  template void matmul_into<T>(Matrix<T>&, const Matrix<T>&, const Matrix<T>&, bool);            \
  template Matrix<T> matmul<T>(const Matrix<T>&, const Matrix<T>&);                              \
  template void transpose_into<T>(Matrix<T>&, const Matrix<T>&);                                 \
  template Matrix<T> transpose<T>(const Matrix<T>&);                                             \
  template void elementwise_into<T>(Matrix<T>&, ElemwiseOp, const Matrix<T>&, const Matrix<T>&); \
  template Matrix<T> elementwise<T>(ElemwiseOp, const Matrix<T>&, const Matrix<T>&);             \
  template void activate_into<T>(Matrix<T>&, Activation, const Matrix<T>&);                      \
  template Matrix<T> activate<T>(Activation, const Matrix<T>&);                                  \
  template void activation_grad_into<T>(Matrix<T>&, Activation, const Matrix<T>&,                \
                                        const Matrix<T>&);                                       \
  template Matrix<T> activation_grad<T>(Activation, const Matrix<T>&, const Matrix<T>&);         \
  template void gather_columns_into<T>(Matrix<T>&, const Matrix<T>&, const std::vector<index>&); \
  template Matrix<T> gather_columns<T>(const Matrix<T>&, const std::vector<index>&);             \
  template void scatter_columns_into<T>(Matrix<T>&, const Matrix<T>&, const std::vector<index>&, \
                                        index, T, bool);                                         \
  template Matrix<T> scatter_columns<T>(const Matrix<T>&, const std::vector<index>&, index);     \
  template void gather_rows_into<T>(Matrix<T>&, const Matrix<T>&, const std::vector<index>&);    \
  template Matrix<T> gather_rows<T>(const Matrix<T>&, const std::vector<index>&);                \
  template void scatter_rows_into<T>(Matrix<T>&, const Matrix<T>&, const std::vector<index>&,    \
                                     index, T, bool);                                            \
  template Matrix<T> scatter_rows<T>(const Matrix<T>&, const std::vector<index>&, index);

SDLSTM_INSTANTIATE_MATRIX(float)
SDLSTM_INSTANTIATE_MATRIX(double)

#undef SDLSTM_INSTANTIATE_MATRIX

}  // namespace sdlstm
