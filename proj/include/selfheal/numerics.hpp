#pragma once

// Dense linear algebra for desk-scale problems (d <= 256).
//
// All reductions run in a fixed order (row-major, left to right) so results
// are bit-stable across runs. Vectors are templated on the scalar type so the
// same layer/solver code can run on forward-mode dual numbers; matrices hold
// plain doubles.

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "selfheal/error.hpp"

namespace selfheal {

template <class T>
class Vector {
 public:
  Vector() = default;
  explicit Vector(std::size_t n, T fill = T{}) : data_(n, fill) {}
  Vector(std::initializer_list<T> init) : data_(init) {}
  explicit Vector(std::vector<T> data) : data_(std::move(data)) {}

  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  auto begin() { return data_.begin(); }
  auto end() { return data_.end(); }
  auto begin() const { return data_.begin(); }
  auto end() const { return data_.end(); }

  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  const std::vector<T>& raw() const { return data_; }

  Vector& operator+=(const Vector& o) {
    check_same(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Vector& operator-=(const Vector& o) {
    check_same(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  template <class S>
  Vector& operator*=(const S& s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  friend bool operator==(const Vector& a, const Vector& b) { return a.data_ == b.data_; }

 private:
  void check_same(const Vector& o) const {
    if (o.size() != size()) {
      throw DimensionError("vector size mismatch: " + std::to_string(size()) + " vs " +
                           std::to_string(o.size()));
    }
  }

  std::vector<T> data_;
};

using Vec64 = Vector<double>;

template <class T>
Vector<T> operator+(Vector<T> a, const Vector<T>& b) {
  a += b;
  return a;
}
template <class T>
Vector<T> operator-(Vector<T> a, const Vector<T>& b) {
  a -= b;
  return a;
}
template <class T>
Vector<T> operator-(Vector<T> a) {
  for (auto& v : a) v = -v;
  return a;
}
template <class T, class S>
Vector<T> operator*(const S& s, Vector<T> a) {
  a *= s;
  return a;
}

template <class T>
T dot(const Vector<T>& a, const Vector<T>& b) {
  if (a.size() != b.size()) throw DimensionError("dot: size mismatch");
  T acc{};
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

template <class T>
T squared_norm(const Vector<T>& a) {
  return dot(a, a);
}

inline double norm2(const Vec64& a) { return std::sqrt(squared_norm(a)); }
double norm1(const Vec64& a);
double norm_inf(const Vec64& a);
bool all_finite(const Vec64& a);

/// Dense row-major matrix of doubles.
class Mat64 {
 public:
  Mat64() = default;
  Mat64(std::size_t rows, std::size_t cols, double fill = 0.0);
  Mat64(std::size_t rows, std::size_t cols, std::vector<double> data);
  Mat64(std::initializer_list<std::initializer_list<double>> rows);

  static Mat64 identity(std::size_t n);
  static Mat64 diag(const Vec64& d);
  static Mat64 outer(const Vec64& a, const Vec64& b);
  static Mat64 from_columns(const std::vector<Vec64>& cols);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool square() const { return rows_ == cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  const std::vector<double>& raw() const { return data_; }
  Vec64 row(std::size_t r) const;
  Vec64 col(std::size_t c) const;
  void set_col(std::size_t c, const Vec64& v);

  Mat64 transpose() const;

  Mat64& operator+=(const Mat64& o);
  Mat64& operator-=(const Mat64& o);
  Mat64& operator*=(double s);

  friend bool operator==(const Mat64& a, const Mat64& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Mat64 operator+(Mat64 a, const Mat64& b);
Mat64 operator-(Mat64 a, const Mat64& b);
Mat64 operator*(double s, Mat64 a);

/// Row-major left-to-right accumulation; throws DimensionError on a.cols != b.rows.
Mat64 matmul(const Mat64& a, const Mat64& b);
inline Mat64 operator*(const Mat64& a, const Mat64& b) { return matmul(a, b); }

template <class T>
Vector<T> matvec(const Mat64& a, const Vector<T>& x) {
  if (a.cols() != x.size()) throw DimensionError("matvec: dimension mismatch");
  Vector<T> y(a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    T acc{};
    for (std::size_t c = 0; c < a.cols(); ++c) acc += a(r, c) * x[c];
    y[r] = acc;
  }
  return y;
}

/// aᵀx without forming the transpose.
template <class T>
Vector<T> matvec_t(const Mat64& a, const Vector<T>& x) {
  if (a.rows() != x.size()) throw DimensionError("matvec_t: dimension mismatch");
  Vector<T> y(a.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t c = 0; c < a.cols(); ++c) y[c] += a(r, c) * x[r];
  }
  return y;
}

inline Vec64 operator*(const Mat64& a, const Vec64& x) { return matvec(a, x); }

double max_abs_diff(const Mat64& a, const Mat64& b);
double max_abs_diff(const Vec64& a, const Vec64& b);
double frobenius_norm(const Mat64& a);
bool all_finite(const Mat64& a);

/// Solves a x = b by Gaussian elimination with partial pivoting.
Vec64 solve(const Mat64& a, const Vec64& b);
Mat64 inverse(const Mat64& a);

/// Largest singular value by power iteration on aᵀa (relative tolerance
/// 1e-10, at most 10000 iterations). Throws ConvergenceError otherwise.
double spectral_norm(const Mat64& a);

/// sigma_max / sigma_min of a square matrix; power iteration on aᵀa and
/// inverse iteration for (aᵀa)^-1. Throws SingularMatrixError when
/// sigma_min < 1e-12 sigma_max.
double condition_number(const Mat64& a);

struct SymmetricEigen {
  Vec64 values;   // descending
  Mat64 vectors;  // columns match values
};

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Eigenvalues are
/// sorted in descending order and each eigenvector's first nonzero component
/// is made positive.
SymmetricEigen jacobi_eigen(const Mat64& sym);

struct TopEigvecs {
  Mat64 vectors;  // d x k, orthonormal columns
  Vec64 values;   // k leading eigenvalues, descending
  Vec64 rest;     // remaining eigenvalues, descending
  bool degenerate = false;  // gap between k-th and (k+1)-th <= 1e-10
};

TopEigvecs top_k_eigvecs(const Mat64& gram, std::size_t k);

/// Orthonormalizes the columns of a by modified Gram-Schmidt (a must have
/// full column rank).
Mat64 orthonormalize_columns(const Mat64& a);

using ScalarField = std::function<double(const Vec64&)>;

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h.
Vec64 finite_diff_grad(const ScalarField& f, const Vec64& x, double h);

/// Formats with 17 significant digits (exact double round trip).
std::string format_double(double v);

}  // namespace selfheal
