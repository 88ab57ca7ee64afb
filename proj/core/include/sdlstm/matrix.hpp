#pragma once

#include <initializer_list>
#include <vector>

#include "sdlstm/common.hpp"

namespace sdlstm {

// Dense row-major matrix. The universal operand for activations, gate
// values, gradients, and parameters; float or double, never mixed in a run.
template <typename T>
class Matrix {
public:
  Matrix() = default;
  Matrix(index rows, index cols) { resize(rows, cols); }

  static Matrix from_rows(std::initializer_list<std::initializer_list<T>> rows) {
    Matrix m;
    m.rows_ = static_cast<index>(rows.size());
    m.cols_ = m.rows_ > 0 ? static_cast<index>(rows.begin()->size()) : 0;
    m.data_.reserve(static_cast<std::size_t>(m.rows_ * m.cols_));
    for (const auto& r : rows) {
      check_shape(static_cast<index>(r.size()) == m.cols_, "ragged initializer rows");
      m.data_.insert(m.data_.end(), r.begin(), r.end());
    }
    return m;
  }

  index rows() const { return rows_; }
  index cols() const { return cols_; }
  index size() const { return rows_ * cols_; }
  bool empty() const { return size() == 0; }

  T& operator()(index r, index c) { return data_[static_cast<std::size_t>(r * cols_ + c)]; }
  const T& operator()(index r, index c) const {
    return data_[static_cast<std::size_t>(r * cols_ + c)];
  }

  T* row(index r) { return data_.data() + r * cols_; }
  const T* row(index r) const { return data_.data() + r * cols_; }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  // Reshapes, zero-filling all entries. Keeps vector capacity.
  void resize(index rows, index cols) {
    check_value(rows >= 0 && cols >= 0, "negative matrix dimension");
    rows_ = rows;
    cols_ = cols;
    data_.assign(static_cast<std::size_t>(rows * cols), T{0});
  }

  void fill(T v) { data_.assign(data_.size(), v); }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

private:
  index rows_{0};
  index cols_{0};
  std::vector<T> data_;
};

enum class ElemwiseOp { add, sub, hadamard };
enum class Activation { sigmoid, tanh };

// C = A * B (optionally C += A * B). Inner dimensions must match. Accumulates
// in operand precision; per output element the reduction walks k in order, so
// results do not depend on blocking or the kernel thread count.
template <typename T>
void matmul_into(Matrix<T>& c, const Matrix<T>& a, const Matrix<T>& b, bool accumulate = false);

template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b);

template <typename T>
void transpose_into(Matrix<T>& out, const Matrix<T>& a);

template <typename T>
Matrix<T> transpose(const Matrix<T>& a);

template <typename T>
void elementwise_into(Matrix<T>& out, ElemwiseOp op, const Matrix<T>& a, const Matrix<T>& b);

template <typename T>
Matrix<T> elementwise(ElemwiseOp op, const Matrix<T>& a, const Matrix<T>& b);

template <typename T>
void activate_into(Matrix<T>& out, Activation kind, const Matrix<T>& a);

template <typename T>
Matrix<T> activate(Activation kind, const Matrix<T>& a);

// Backward through sigmoid/tanh given the forward *output* `activated`:
// sigmoid: upstream .* a .* (1 - a); tanh: upstream .* (1 - a^2).
template <typename T>
void activation_grad_into(Matrix<T>& out, Activation kind, const Matrix<T>& activated,
                          const Matrix<T>& upstream);

template <typename T>
Matrix<T> activation_grad(Activation kind, const Matrix<T>& activated, const Matrix<T>& upstream);

// Column/row compaction. `keep` must be strictly increasing and in bounds.
// scatter fills the complement with exact zeros (or leaves it untouched when
// accumulate is set, which is used for gradient accumulation).
template <typename T>
void gather_columns_into(Matrix<T>& out, const Matrix<T>& a, const std::vector<index>& keep);

template <typename T>
Matrix<T> gather_columns(const Matrix<T>& a, const std::vector<index>& keep);

template <typename T>
void scatter_columns_into(Matrix<T>& out, const Matrix<T>& compact, const std::vector<index>& keep,
                          index cols, T scale = T{1}, bool accumulate = false);

template <typename T>
Matrix<T> scatter_columns(const Matrix<T>& compact, const std::vector<index>& keep, index cols);

template <typename T>
void gather_rows_into(Matrix<T>& out, const Matrix<T>& a, const std::vector<index>& keep);

template <typename T>
Matrix<T> gather_rows(const Matrix<T>& a, const std::vector<index>& keep);

template <typename T>
void scatter_rows_into(Matrix<T>& out, const Matrix<T>& compact, const std::vector<index>& keep,
                       index rows, T scale = T{1}, bool accumulate = false);

template <typename T>
Matrix<T> scatter_rows(const Matrix<T>& compact, const std::vector<index>& keep, index rows);

void check_keep_indices(const std::vector<index>& keep, index bound);

}  // namespace sdlstm
