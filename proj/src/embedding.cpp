#include "selfheal/embedding.hpp"

#include <algorithm>

#include "selfheal/rng.hpp"

namespace selfheal {

void LinearSubspaceEmbedding::validate() const {
  if (mean.size() != basis.rows()) throw DimensionError("linear embedding: mean and basis disagree on dim");
  if (basis.cols() == 0) throw DimensionError("linear embedding: empty basis");
  if (max_abs_diff(basis.transpose() * basis, Mat64::identity(basis.cols())) > 1e-10)
    throw Error("linear embedding: basis columns are not orthonormal");
}

void AutoencoderEmbedding::validate() const {
  encoder.validate();
  decoder.validate();
  if (decoder.input_dim() != encoder.num_classes()) throw DimensionError("autoencoder: code dims do not chain");
  if (decoder.num_classes() != encoder.input_dim()) throw DimensionError("autoencoder: output dim != input dim");
}

QuadraticSubmersion QuadraticSubmersion::standard(std::size_t d, double a) {
  QuadraticSubmersion q;
  q.curvature = a;
  q.center = Vec64(d);
  q.normal = Vec64(d);
  q.normal[d - 1] = 1.0;
  return q;
}

void QuadraticSubmersion::validate() const {
  if (center.size() != normal.size() || normal.empty()) throw DimensionError("quadratic: center/normal dims");
  if (std::abs(norm2(normal) - 1.0) > 1e-10) throw Error("quadratic: normal must be a unit vector");
  if (!std::isfinite(curvature)) throw NumericalError("quadratic: non-finite curvature");
}

std::size_t embedding_dim(const Embedding& e) {
  return std::visit([](const auto& v) { return v.dim(); }, e);
}

std::string embedding_kind(const Embedding& e) {
  if (std::holds_alternative<LinearSubspaceEmbedding>(e)) return "linear";
  if (std::holds_alternative<AutoencoderEmbedding>(e)) return "autoencoder";
  return "quadratic";
}

void validate_embedding(const Embedding& e) {
  std::visit([](const auto& v) { v.validate(); }, e);
}

LinearSubspaceEmbedding fit_pca(const std::vector<Vec64>& data, std::size_t r) {
  if (data.empty()) throw Error("fit_pca: no data");
  const std::size_t d = data.front().size();
  if (r < 1 || r >= d) throw DimensionError("fit_pca: need 1 <= r < d");
  if (data.size() < r + 1) throw Error("fit_pca: need at least r + 1 samples");
  Vec64 mean(d);
  for (const auto& x : data) {
    if (x.size() != d) throw DimensionError("fit_pca: ragged data");
    mean += x;
  }
  mean *= 1.0 / static_cast<double>(data.size());
  Mat64 cov(d, d);
  for (const auto& x : data) {
    const Vec64 y = x - mean;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) cov(i, j) += y[i] * y[j];
  }
  cov *= 1.0 / static_cast<double>(data.size());
  const auto top = top_k_eigvecs(cov, r);
  LinearSubspaceEmbedding e;
  e.mean = std::move(mean);
  e.basis = top.vectors;
  e.degenerate = top.degenerate;
  e.eigenvalues = Vec64(d);
  for (std::size_t i = 0; i < r; ++i) e.eigenvalues[i] = top.values[i];
  for (std::size_t i = r; i < d; ++i) e.eigenvalues[i] = top.rest[i - r];
  return e;
}

Vec64 project_linear(const LinearSubspaceEmbedding& e, const Vec64& x) {
  if (x.size() != e.dim()) throw DimensionError("project_linear: input dim mismatch");
  const Vec64 y = x - e.mean;
  return e.mean + e.basis * matvec_t(e.basis, y);
}

Mat64 residual_jacobian(const Embedding& e, const Vec64& x) {
  const std::size_t d = embedding_dim(e);
  if (x.size() != d) throw DimensionError("residual_jacobian: input dim mismatch");
  const std::size_t m = std::holds_alternative<QuadraticSubmersion>(e) ? 1 : d;
  Mat64 j(m, d);
  for (std::size_t r = 0; r < m; ++r) {
    Vec64 w(m);
    w[r] = 1.0;
    const Vec64 row = residual_vjp(e, x, w);
    for (std::size_t c = 0; c < d; ++c) j(r, c) = row[c];
  }
  return j;
}

namespace {

[[noreturn]] void rank_error(int layer, const Vec64& x) {
  std::string where = layer >= 0 ? "layer " + std::to_string(layer) : "unlabelled layer";
  std::string point;
  for (std::size_t i = 0; i < x.size() && i < 8; ++i) point += (i ? "," : "") + format_double(x[i]);
  if (x.size() > 8) point += ",...";
  throw SingularMatrixError("tangent_projectors: rank-deficient differential at " + where + ", x=(" + point + ")");
}

}  // namespace

Projectors tangent_projectors(const Embedding& e, const Vec64& x, int layer) {
  const std::size_t d = embedding_dim(e);
  if (x.size() != d) throw DimensionError("tangent_projectors: input dim mismatch");
  const Mat64 eye = Mat64::identity(d);
  Mat64 p;
  if (const auto* lin = std::get_if<LinearSubspaceEmbedding>(&e)) {
    p = lin->basis * lin->basis.transpose();
  } else if (std::holds_alternative<QuadraticSubmersion>(e)) {
    const Mat64 g = residual_jacobian(e, x);
    const double gram = (g * g.transpose())(0, 0);
    if (gram <= 1e-10) rank_error(layer, x);
    p = eye - (1.0 / gram) * (g.transpose() * g);
  } else {
    const auto& ae = std::get<AutoencoderEmbedding>(e);
    const Vec64 code = net_output(ae.encoder, x);
    const std::size_t r = code.size();
    Mat64 jd(d, r);
    for (std::size_t i = 0; i < d; ++i) {
      Vec64 w(d);
      w[i] = 1.0;
      const Vec64 row = net_vjp(ae.decoder, code, w);
      for (std::size_t c = 0; c < r; ++c) jd(i, c) = row[c];
    }
    const Mat64 gram = jd.transpose() * jd;
    const auto eig = jacobi_eigen(gram);
    if (eig.values[r - 1] <= 1e-10) rank_error(layer, x);
    p = jd * inverse(gram) * jd.transpose();
    // symmetrize against rounding
    p = 0.5 * (p + p.transpose());
  }
  return {p, eye - p};
}

Vec64 project_quadratic(const QuadraticSubmersion& q, const Vec64& x) {
  if (x.size() != q.dim()) throw DimensionError("project_quadratic: input dim mismatch");
  const double a = q.curvature;
  double sx = 0.0;
  const Vec64 yx = detail::quadratic_offset_tangent(q, x, sx);
  const auto lift = [&](const Vec64& y) {
    Vec64 z = q.center + y;
    const double h = a * squared_norm(y);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] += h * q.normal[i];
    return z;
  };
  if (a == 0.0) return lift(yx);
  // minimize g(y) = 1/2 |y - yx|^2 + 1/2 (a|y|^2 - sx)^2 over y orthogonal to n
  const auto objective = [&](const Vec64& y) {
    const double h = a * squared_norm(y) - sx;
    return 0.5 * squared_norm(y - yx) + 0.5 * h * h;
  };
  const auto tangent = [&](Vec64 v) {
    const double c = dot(v, q.normal);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= c * q.normal[i];
    return v;
  };
  Vec64 y = yx;
  const std::size_t d = x.size();
  for (int it = 0; it < 200; ++it) {
    const double h = a * squared_norm(y) - sx;
    const Vec64 grad = tangent((y - yx) + (2.0 * a * h) * y);
    if (norm2(grad) <= 1e-10) return lift(y);
    double beta = 1.0 + 2.0 * a * h;
    if (beta <= 0.0) beta = 1.0;  // leave the concave region with a gradient-like step
    Mat64 hess = beta * Mat64::identity(d) + (4.0 * a * a) * Mat64::outer(y, y);
    const Mat64 nn = Mat64::outer(q.normal, q.normal);
    hess += (1.0 - beta) * nn;
    Vec64 step = tangent(-solve(hess, grad));
    if (1.0 + 2.0 * a * h > 0.0) {
      const Vec64 trial = tangent(y + step);
      const double ht = a * squared_norm(trial) - sx;
      if (norm2(tangent((trial - yx) + (2.0 * a * ht) * trial)) < 0.5 * norm2(grad)) {
        y = trial;
        continue;
      }
    }
    const double f0 = objective(y);
    double t = 1.0;
    Vec64 trial = y + step;
    while (objective(trial) > f0 - 1e-4 * t * dot(grad, grad) / std::max(beta, 1.0) && t > 1e-12) {
      t *= 0.5;
      trial = y + t * step;
    }
    if (t <= 1e-12) {
      if (norm2(grad) <= 1e-8) return lift(y);
      break;
    }
    y = tangent(trial);
  }
  throw ConvergenceError("project_quadratic: Newton did not converge in 200 steps");
}

namespace {

Layer random_layer(SeededRng& rng, std::size_t out, std::size_t in, Activation act) {
  Layer l;
  l.weight = rng.normal_mat(out, in, 1.0 / std::sqrt(static_cast<double>(in)));
  l.bias = Vec64(out);
  l.activation = act;
  return l;
}

std::vector<Layer*> params(AutoencoderEmbedding& e) {
  return {&e.encoder.layers[0], &e.encoder.head, &e.decoder.layers[0], &e.decoder.head};
}

}  // namespace

double reconstruction_error(const AutoencoderEmbedding& e, const std::vector<Vec64>& data) {
  if (data.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& x : data) acc += squared_norm(reconstruct(e, x) - x);
  return acc / static_cast<double>(data.size());
}

AutoencoderEmbedding fit_autoencoder(const std::vector<Vec64>& data, std::size_t r, const AutoencoderConfig& cfg) {
  if (data.empty()) throw Error("fit_autoencoder: no data");
  if (cfg.ce_weight != 0.0)
    throw Error("fit_autoencoder: a cross-entropy term is not supported; use ce_weight 0");
  cfg.train.validate();
  const std::size_t d = data.front().size();
  if (r < 1 || cfg.hidden < 1) throw DimensionError("fit_autoencoder: code and hidden widths must be positive");
  SeededRng rng(sub_seed(cfg.train.seed, 4));
  AutoencoderEmbedding e;
  e.encoder.layers.push_back(random_layer(rng, cfg.hidden, d, cfg.activation));
  e.encoder.head = random_layer(rng, r, cfg.hidden, Activation::identity);
  e.decoder.layers.push_back(random_layer(rng, cfg.hidden, r, cfg.activation));
  e.decoder.head = random_layer(rng, d, cfg.hidden, Activation::identity);
  e.validate();

  auto layers = params(e);
  std::vector<Mat64> vw;
  std::vector<Vec64> vb;
  for (auto* l : layers) {
    vw.emplace_back(l->weight.rows(), l->weight.cols());
    vb.emplace_back(l->bias.size());
  }
  const std::size_t n = data.size();
  const auto& tc = cfg.train;
  if (cfg.input_noise < 0.0) throw Error("fit_autoencoder: input noise must be nonnegative");
  SeededRng noise_rng(sub_seed(tc.seed, 5));
  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    const auto order = shuffled_indices(n, tc.seed, epoch);
    for (std::size_t start = 0; start < n; start += tc.batch_size) {
      const std::size_t stop = std::min(n, start + tc.batch_size);
      std::vector<Mat64> gw;
      std::vector<Vec64> gb;
      for (auto* l : layers) {
        gw.emplace_back(l->weight.rows(), l->weight.cols());
        gb.emplace_back(l->bias.size());
      }
      for (std::size_t k = start; k < stop; ++k) {
        const Vec64& x = data[order[k]];
        if (x.size() != d) throw DimensionError("fit_autoencoder: ragged data");
        Vec64 input = x;
        if (cfg.input_noise > 0.0)
          for (auto& v : input) v += cfg.input_noise * noise_rng.normal();
        const Vec64 code = net_output(e.encoder, input);
        const Vec64 err = net_output(e.decoder, code) - x;
        const auto dec = net_backward(e.decoder, code, err);
        const auto enc = net_backward(e.encoder, input, dec.input);
        const LayerGrads* g[4] = {&enc.layers[0], &enc.head, &dec.layers[0], &dec.head};
        for (std::size_t j = 0; j < 4; ++j) {
          gw[j] += g[j]->weight;
          gb[j] += g[j]->bias;
        }
      }
      const double scale = tc.learning_rate / static_cast<double>(stop - start);
      for (std::size_t j = 0; j < layers.size(); ++j) {
        vw[j] *= tc.momentum;
        vw[j] -= scale * gw[j];
        vb[j] *= tc.momentum;
        vb[j] -= scale * gb[j];
        layers[j]->weight += vw[j];
        layers[j]->bias += vb[j];
      }
    }
    if (!all_finite(layers[3]->weight) || !all_finite(layers[0]->weight))
      throw NumericalError("fit_autoencoder: training diverged at epoch " + std::to_string(epoch));
  }
  e.train_error = reconstruction_error(e, data);
  if (!std::isfinite(e.train_error)) throw NumericalError("fit_autoencoder: non-finite reconstruction error");
  return e;
}

}  // namespace selfheal
