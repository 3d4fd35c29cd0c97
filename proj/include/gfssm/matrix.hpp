#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "gfssm/common.hpp"

namespace gfssm {

// Dense row-major matrix. Deliberately plain: no expression templates, no
// blocked products; every reduction runs in ascending index order.
template <typename Real>
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols, Real fill = Real(0))
      : rows_(rows),
        cols_(cols),
        data_(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols),
              fill) {}

  static Matrix zeros(int rows, int cols) { return Matrix(rows, cols); }

  int rows() const noexcept { return rows_; }
  int cols() const noexcept { return cols_; }

  Real& operator()(int r, int c) {
    return data_[static_cast<std::size_t>(r) * cols_ + c];
  }
  const Real& operator()(int r, int c) const {
    return data_[static_cast<std::size_t>(r) * cols_ + c];
  }

  std::vector<Real>& flat() noexcept { return data_; }
  const std::vector<Real>& flat() const noexcept { return data_; }

  bool same_shape(const Matrix& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  bool is_finite() const {
    for (Real e : data_) {
      if (!std::isfinite(e)) return false;
    }
    return true;
  }

  bool is_zero() const {
    for (Real e : data_) {
      if (e != Real(0)) return false;
    }
    return true;
  }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<Real> data_;
};

// m += scale * col * row^T
template <typename Real>
void add_scaled_outer(Matrix<Real>& m, Real scale, const std::vector<Real>& col,
                      const std::vector<Real>& row) {
  for (int r = 0; r < m.rows(); ++r) {
    for (int c = 0; c < m.cols(); ++c) {
      m(r, c) += scale * (col[r] * row[c]);
    }
  }
}

// Frobenius inner product, ascending row-major order.
template <typename Real>
Real frobenius_dot(const Matrix<Real>& a, const Matrix<Real>& b) {
  Real acc = Real(0);
  const std::vector<Real>& fa = a.flat();
  const std::vector<Real>& fb = b.flat();
  for (std::size_t i = 0; i < fa.size(); ++i) acc += fa[i] * fb[i];
  return acc;
}

template <typename Real>
Matrix<float> to_single(const Matrix<Real>& m) {
  Matrix<float> out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.flat().size(); ++i) {
    out.flat()[i] = static_cast<float>(m.flat()[i]);
  }
  return out;
}

}  // namespace gfssm
