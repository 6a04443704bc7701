#pragma once

// Per-layer embedding manifolds: PCA subspaces, shallow autoencoders and an
// analytic quadratic hypersurface. Each carries a submersion residual f whose
// zero set is the manifold.

#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "selfheal/data.hpp"
#include "selfheal/dynamics.hpp"
#include "selfheal/numerics.hpp"

namespace selfheal {

struct LinearSubspaceEmbedding {
  Vec64 mean;
  Mat64 basis;         // d x r, orthonormal columns
  Vec64 eigenvalues;   // full covariance spectrum at fit time, descending (may be empty)
  bool degenerate = false;

  std::size_t dim() const { return basis.rows(); }
  std::size_t rank() const { return basis.cols(); }
  void validate() const;
};

struct AutoencoderEmbedding {
  DynamicalNet encoder;  // d -> r
  DynamicalNet decoder;  // r -> d
  double train_error = 0.0;  // mean squared reconstruction error at fit time

  std::size_t dim() const { return encoder.input_dim(); }
  std::size_t code_dim() const { return encoder.num_classes(); }
  void validate() const;
};

/// f(x) = nᵀ(x - c) - a |(I - nnᵀ)(x - c)|^2 with unit normal n.
/// The default frame (c = 0, n = e_d) gives f(x) = x_d - a sum_{i<d} x_i^2.
struct QuadraticSubmersion {
  double curvature = 0.0;
  Vec64 center;
  Vec64 normal;

  static QuadraticSubmersion standard(std::size_t d, double a);
  std::size_t dim() const { return normal.size(); }
  /// sup of the second-derivative norm, exactly 2|a|.
  double sigma() const { return 2.0 * std::abs(curvature); }
  void validate() const;
};

using Embedding = std::variant<LinearSubspaceEmbedding, AutoencoderEmbedding, QuadraticSubmersion>;

std::size_t embedding_dim(const Embedding& e);
std::string embedding_kind(const Embedding& e);  // "linear", "autoencoder" or "quadratic"
void validate_embedding(const Embedding& e);

struct Projectors {
  Mat64 P;  // onto the tangent space
  Mat64 Q;  // onto its orthogonal complement
};

LinearSubspaceEmbedding fit_pca(const std::vector<Vec64>& data, std::size_t r);

Vec64 project_linear(const LinearSubspaceEmbedding& e, const Vec64& x);

template <class T>
Vector<T> reconstruct(const AutoencoderEmbedding& e, const Vector<T>& x) {
  return net_output(e.decoder, net_output(e.encoder, x));
}

namespace detail {

template <class T>
Vector<T> quadratic_offset_tangent(const QuadraticSubmersion& q, const Vector<T>& x, T& normal_coord) {
  Vector<T> y = x;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= q.center[i];
  normal_coord = T(0.0);
  for (std::size_t i = 0; i < y.size(); ++i) normal_coord += q.normal[i] * y[i];
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= normal_coord * q.normal[i];
  return y;
}

}  // namespace detail

/// f(x): (I - VVᵀ)(x - mean) for subspaces, reconstruction minus input for
/// autoencoders, and the scalar quadratic form (as a 1-vector) otherwise.
template <class T>
Vector<T> submersion_residual(const Embedding& e, const Vector<T>& x) {
  if (x.size() != embedding_dim(e)) throw DimensionError("submersion_residual: input dim mismatch");
  if (const auto* lin = std::get_if<LinearSubspaceEmbedding>(&e)) {
    Vector<T> y = x;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] -= lin->mean[i];
    const Vector<T> coords = matvec_t(lin->basis, y);
    const Vector<T> proj = matvec(lin->basis, coords);
    return y - proj;
  }
  if (const auto* ae = std::get_if<AutoencoderEmbedding>(&e)) return reconstruct(*ae, x) - x;
  const auto& q = std::get<QuadraticSubmersion>(e);
  T s;
  const Vector<T> y = detail::quadratic_offset_tangent(q, x, s);
  return Vector<T>{s - q.curvature * squared_norm(y)};
}

/// f'(x)ᵀ w.
template <class T>
Vector<T> residual_vjp(const Embedding& e, const Vector<T>& x, const Vector<T>& w) {
  if (const auto* lin = std::get_if<LinearSubspaceEmbedding>(&e)) {
    // f' = I - VVᵀ is symmetric
    const Vector<T> coords = matvec_t(lin->basis, w);
    return w - matvec(lin->basis, coords);
  }
  if (const auto* ae = std::get_if<AutoencoderEmbedding>(&e)) {
    const Vector<T> code = net_output(ae->encoder, x);
    const Vector<T> g = net_vjp(ae->decoder, code, w);
    return net_vjp(ae->encoder, x, g) - w;
  }
  const auto& q = std::get<QuadraticSubmersion>(e);
  if (w.size() != 1) throw DimensionError("residual_vjp: quadratic residual is scalar");
  T s;
  Vector<T> y = detail::quadratic_offset_tangent(q, x, s);
  Vector<T> grad(x.size());
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = (q.normal[i] - 2.0 * q.curvature * y[i]) * w[0];
  return grad;
}

/// Dense f'(x) (rows = residual dim).
Mat64 residual_jacobian(const Embedding& e, const Vec64& x);

/// Tangent/normal projectors at x. Subspaces give P = VVᵀ; the quadratic
/// surface uses P = I - f'ᵀ(f'f'ᵀ)^-1 f'. For autoencoders P projects onto the
/// range of the decoder Jacobian at the code of x. `layer` only labels errors.
Projectors tangent_projectors(const Embedding& e, const Vec64& x, int layer = -1);

/// Nearest point on the quadratic surface by damped Newton (gradient <= 1e-10, 200 steps).
Vec64 project_quadratic(const QuadraticSubmersion& q, const Vec64& x);

/// The manifold projection: closed form for subspaces, decoder(encoder(x))
/// for autoencoders, Newton for the quadratic surface (double only).
template <class T>
Vector<T> manifold_project(const Embedding& e, const Vector<T>& x) {
  if (x.size() != embedding_dim(e)) throw DimensionError("manifold_project: input dim mismatch");
  if (const auto* q = std::get_if<QuadraticSubmersion>(&e)) {
    if constexpr (std::is_same_v<T, double>) {
      return project_quadratic(*q, x);
    } else {
      throw Error("manifold_project: quadratic surfaces are not differentiable here");
    }
  }
  // subspace residuals point away from the manifold, autoencoder residuals toward it
  if (std::holds_alternative<LinearSubspaceEmbedding>(e)) return x - submersion_residual(e, x);
  return x + submersion_residual(e, x);
}

struct AutoencoderConfig {
  std::size_t hidden = 16;
  Activation activation = Activation::tanh;
  // Weight of a classifier cross-entropy term in embedding training; only 0 is supported.
  double ce_weight = 0.0;
  // Denoising: inputs get N(0, input_noise^2 I) added, targets stay clean.
  double input_noise = 0.0;
  TrainConfig train;
};

/// Momentum SGD on the mean of 1/2 |decoder(encoder(x + noise)) - x|^2.
AutoencoderEmbedding fit_autoencoder(const std::vector<Vec64>& data, std::size_t r, const AutoencoderConfig& cfg);

/// Mean squared reconstruction error (1/n) sum |decoder(encoder(x)) - x|^2.
double reconstruction_error(const AutoencoderEmbedding& e, const std::vector<Vec64>& data);

}  // namespace selfheal
