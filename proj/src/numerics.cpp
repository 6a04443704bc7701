#include "selfheal/numerics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

namespace selfheal {

double norm1(const Vec64& a) {
  double acc = 0.0;
  for (double v : a) acc += std::abs(v);
  return acc;
}

double norm_inf(const Vec64& a) {
  double acc = 0.0;
  for (double v : a) acc = std::max(acc, std::abs(v));
  return acc;
}

bool all_finite(const Vec64& a) {
  return std::all_of(a.begin(), a.end(), [](double v) { return std::isfinite(v); });
}

Mat64::Mat64(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Mat64::Mat64(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) throw DimensionError("Mat64: data length != rows*cols");
}

Mat64::Mat64(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw DimensionError("Mat64: ragged initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Mat64 Mat64::identity(std::size_t n) {
  Mat64 m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Mat64 Mat64::diag(const Vec64& d) {
  Mat64 m(d.size(), d.size());
  for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
  return m;
}

Mat64 Mat64::outer(const Vec64& a, const Vec64& b) {
  Mat64 m(a.size(), b.size());
  for (std::size_t r = 0; r < a.size(); ++r)
    for (std::size_t c = 0; c < b.size(); ++c) m(r, c) = a[r] * b[c];
  return m;
}

Mat64 Mat64::from_columns(const std::vector<Vec64>& cols) {
  if (cols.empty()) return {};
  Mat64 m(cols.front().size(), cols.size());
  for (std::size_t c = 0; c < cols.size(); ++c) m.set_col(c, cols[c]);
  return m;
}

Vec64 Mat64::row(std::size_t r) const {
  return Vec64(std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(r * cols_),
                                   data_.begin() + static_cast<std::ptrdiff_t>((r + 1) * cols_)));
}

Vec64 Mat64::col(std::size_t c) const {
  Vec64 v(rows_);
  for (std::size_t r = 0; r < rows_; ++r) v[r] = (*this)(r, c);
  return v;
}

void Mat64::set_col(std::size_t c, const Vec64& v) {
  if (v.size() != rows_) throw DimensionError("set_col: size mismatch");
  for (std::size_t r = 0; r < rows_; ++r) (*this)(r, c) = v[r];
}

Mat64 Mat64::transpose() const {
  Mat64 t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

Mat64& Mat64::operator+=(const Mat64& o) {
  if (o.rows_ != rows_ || o.cols_ != cols_) throw DimensionError("Mat64 +=: shape mismatch");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  return *this;
}

Mat64& Mat64::operator-=(const Mat64& o) {
  if (o.rows_ != rows_ || o.cols_ != cols_) throw DimensionError("Mat64 -=: shape mismatch");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
  return *this;
}

Mat64& Mat64::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

Mat64 operator+(Mat64 a, const Mat64& b) { return a += b; }
Mat64 operator-(Mat64 a, const Mat64& b) { return a -= b; }
Mat64 operator*(double s, Mat64 a) { return a *= s; }

Mat64 matmul(const Mat64& a, const Mat64& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                         " times " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  Mat64 out(a.rows(), b.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t c = 0; c < b.cols(); ++c) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a(r, k) * b(k, c);
      out(r, c) = acc;
    }
  }
  return out;
}

double max_abs_diff(const Mat64& a, const Mat64& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionError("max_abs_diff: shape");
  double m = 0.0;
  for (std::size_t i = 0; i < a.raw().size(); ++i) m = std::max(m, std::abs(a.raw()[i] - b.raw()[i]));
  return m;
}

double max_abs_diff(const Vec64& a, const Vec64& b) {
  if (a.size() != b.size()) throw DimensionError("max_abs_diff: size");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double frobenius_norm(const Mat64& a) {
  double acc = 0.0;
  for (double v : a.raw()) acc += v * v;
  return std::sqrt(acc);
}

bool all_finite(const Mat64& a) {
  return std::all_of(a.raw().begin(), a.raw().end(), [](double v) { return std::isfinite(v); });
}

namespace {

struct LuFactor {
  Mat64 lu;
  std::vector<std::size_t> perm;
};

LuFactor lu_factor(const Mat64& a) {
  if (!a.square()) throw DimensionError("lu: matrix not square");
  const std::size_t n = a.rows();
  LuFactor f{a, std::vector<std::size_t>(n)};
  std::iota(f.perm.begin(), f.perm.end(), 0);
  double scale = 0.0;
  for (double v : a.raw()) scale = std::max(scale, std::abs(v));
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    for (std::size_t r = k + 1; r < n; ++r)
      if (std::abs(f.lu(r, k)) > std::abs(f.lu(piv, k))) piv = r;
    if (f.lu(piv, k) == 0.0 || std::abs(f.lu(piv, k)) <= 1e-300 * std::max(scale, 1.0)) {
      throw SingularMatrixError("matrix is singular to working precision");
    }
    if (piv != k) {
      for (std::size_t c = 0; c < n; ++c) std::swap(f.lu(k, c), f.lu(piv, c));
      std::swap(f.perm[k], f.perm[piv]);
    }
    for (std::size_t r = k + 1; r < n; ++r) {
      const double m = f.lu(r, k) / f.lu(k, k);
      f.lu(r, k) = m;
      for (std::size_t c = k + 1; c < n; ++c) f.lu(r, c) -= m * f.lu(k, c);
    }
  }
  return f;
}

Vec64 lu_solve(const LuFactor& f, const Vec64& b) {
  const std::size_t n = f.lu.rows();
  if (b.size() != n) throw DimensionError("solve: rhs size mismatch");
  Vec64 y(n);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = b[f.perm[i]];
    for (std::size_t k = 0; k < i; ++k) acc -= f.lu(i, k) * y[k];
    y[i] = acc;
  }
  for (std::size_t ii = n; ii-- > 0;) {
    double acc = y[ii];
    for (std::size_t k = ii + 1; k < n; ++k) acc -= f.lu(ii, k) * y[k];
    y[ii] = acc / f.lu(ii, ii);
  }
  return y;
}

Vec64 power_start(std::size_t n) {
  Vec64 v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = 1.0 + 0.5 * std::sin(1.0 + 1.7 * static_cast<double>(i));
  v *= 1.0 / norm2(v);
  return v;
}

// Largest eigenvalue of a symmetric PSD matrix via power iteration. When the
// Rayleigh quotient stalls (close top eigenvalues) the iteration switches to
// the matrix squared, which squares the convergence ratio; the reported value
// is always the Rayleigh quotient of the original matrix.
double power_top_eigenvalue(const Mat64& b) {
  const std::size_t n = b.rows();
  Vec64 v = power_start(n);
  Mat64 iter = b;
  double lambda = 0.0;
  int since_square = 0;
  for (int it = 0; it < 10000; ++it) {
    Vec64 w = iter * v;
    const double wn = norm2(w);
    if (wn == 0.0) return 0.0;
    w *= 1.0 / wn;
    const double next = dot(w, b * w);
    if (it > 0 && std::abs(next - lambda) <= 1e-10 * std::abs(next)) return next;
    lambda = next;
    v = std::move(w);
    if (++since_square == 200) {
      iter = iter * iter;
      const double scale = frobenius_norm(iter);
      if (scale == 0.0 || !std::isfinite(scale)) break;
      iter *= 1.0 / scale;
      since_square = 0;
    }
  }
  throw ConvergenceError("power iteration did not converge in 10000 iterations");
}

}  // namespace

Vec64 solve(const Mat64& a, const Vec64& b) { return lu_solve(lu_factor(a), b); }

Mat64 inverse(const Mat64& a) {
  const auto f = lu_factor(a);
  const std::size_t n = a.rows();
  Mat64 inv(n, n);
  for (std::size_t c = 0; c < n; ++c) {
    Vec64 e(n);
    e[c] = 1.0;
    inv.set_col(c, lu_solve(f, e));
  }
  return inv;
}

double spectral_norm(const Mat64& a) {
  if (!all_finite(a)) throw NumericalError("spectral_norm: non-finite entries");
  if (a.rows() == 0 || a.cols() == 0) return 0.0;
  const Mat64 gram = matmul(a.transpose(), a);
  return std::sqrt(std::max(0.0, power_top_eigenvalue(gram)));
}

double condition_number(const Mat64& a) {
  if (!a.square()) throw DimensionError("condition_number: matrix not square");
  const double smax = spectral_norm(a);
  if (smax == 0.0) throw SingularMatrixError("condition_number: zero matrix");
  Mat64 inv;
  try {
    inv = inverse(a);
  } catch (const SingularMatrixError&) {
    throw SingularMatrixError("condition_number: singular matrix (infinite kappa)");
  }
  // (aᵀa)^-1 = a^-1 a^-ᵀ shares its spectrum with a^-ᵀ a^-1.
  const double inv_norm = spectral_norm(inv);
  const double smin = 1.0 / inv_norm;
  if (!std::isfinite(inv_norm) || smin < 1e-12 * smax) {
    throw SingularMatrixError("condition_number: sigma_min below 1e-12 sigma_max (infinite kappa)");
  }
  return smax / smin;
}

SymmetricEigen jacobi_eigen(const Mat64& sym) {
  if (!sym.square()) throw DimensionError("jacobi_eigen: matrix not square");
  const std::size_t n = sym.rows();
  Mat64 a = sym;
  Mat64 v = Mat64::identity(n);
  double total = 0.0;
  for (double x : a.raw()) total += x * x;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off <= 1e-32 * total || off == 0.0) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });
  SymmetricEigen out{Vec64(n), Mat64(n, n)};
  for (std::size_t k = 0; k < n; ++k) {
    out.values[k] = a(order[k], order[k]);
    Vec64 col = v.col(order[k]);
    for (std::size_t r = 0; r < n; ++r) {
      if (std::abs(col[r]) > 1e-14) {
        if (col[r] < 0.0) col *= -1.0;
        break;
      }
    }
    out.vectors.set_col(k, col);
  }
  return out;
}

TopEigvecs top_k_eigvecs(const Mat64& gram, std::size_t k) {
  if (!gram.square()) throw DimensionError("top_k_eigvecs: gram not square");
  const std::size_t d = gram.rows();
  if (k < 1 || k > d) throw DimensionError("top_k_eigvecs: k out of range");
  double scale = 0.0;
  for (double v : gram.raw()) scale = std::max(scale, std::abs(v));
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t c = r + 1; c < d; ++c)
      if (std::abs(gram(r, c) - gram(c, r)) > 1e-10 * std::max(scale, 1.0))
        throw Error("top_k_eigvecs: gram matrix not symmetric");
  const auto eig = jacobi_eigen(gram);
  TopEigvecs out;
  out.vectors = Mat64(d, k);
  out.values = Vec64(k);
  out.rest = Vec64(d - k);
  for (std::size_t c = 0; c < k; ++c) {
    out.vectors.set_col(c, eig.vectors.col(c));
    out.values[c] = eig.values[c];
  }
  for (std::size_t c = k; c < d; ++c) out.rest[c - k] = eig.values[c];
  if (k < d) out.degenerate = std::abs(eig.values[k - 1] - eig.values[k]) <= 1e-10;
  return out;
}

Mat64 orthonormalize_columns(const Mat64& a) {
  Mat64 q = a;
  for (std::size_t c = 0; c < a.cols(); ++c) {
    Vec64 v = q.col(c);
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t j = 0; j < c; ++j) {
        const Vec64 qj = q.col(j);
        const double p = dot(qj, v);
        for (std::size_t r = 0; r < v.size(); ++r) v[r] -= p * qj[r];
      }
    }
    const double n = norm2(v);
    if (n <= 1e-14) throw SingularMatrixError("orthonormalize_columns: rank deficient");
    v *= 1.0 / n;
    q.set_col(c, v);
  }
  return q;
}

Vec64 finite_diff_grad(const ScalarField& f, const Vec64& x, double h) {
  if (!(h > 0.0)) throw Error("finite_diff_grad: step must be positive");
  Vec64 g(x.size());
  Vec64 probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double fp = f(probe);
    probe[i] = x[i] - h;
    const double fm = f(probe);
    probe[i] = x[i];
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace selfheal
