#include "selfheal/bounds.hpp"

#include <algorithm>
#include <limits>

#include "selfheal/rng.hpp"

namespace selfheal {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Product that treats 0 * inf as 0 (a vanishing factor kills an unbounded one).
double safe_mul(double a, double b) { return (a == 0.0 || b == 0.0) ? 0.0 : a * b; }

void check_square_chain(const std::vector<Mat64>& jacobians) {
  if (jacobians.empty()) throw DimensionError("need at least one layer jacobian");
  const std::size_t d = jacobians.front().rows();
  for (const auto& j : jacobians)
    if (j.rows() != d || j.cols() != d) throw DimensionError("layer jacobians must be square and of equal size");
}

}  // namespace

void LinearizedSystem::validate() const {
  check_square_chain(jacobians);
  if (bases.size() != jacobians.size()) throw DimensionError("linearized system: need one tangent basis per layer");
  if (c < 0.0) throw Error("linearized system: c must be nonnegative");
  for (const auto& v : bases) {
    if (v.rows() != dim()) throw DimensionError("linearized system: basis row count != state dim");
    if (v.cols() > 0 && max_abs_diff(v.transpose() * v, Mat64::identity(v.cols())) > 1e-10)
      throw Error("linearized system: basis columns not orthonormal");
  }
}

PerturbationSplit perturbation_split(const Vec64& z, const Mat64& v0) {
  if (z.size() != v0.rows()) throw DimensionError("perturbation_split: dim mismatch");
  PerturbationSplit s;
  s.parallel = v0 * matvec_t(v0, z);
  s.perp = z - s.parallel;
  return s;
}

std::vector<Mat64> partial_products(const std::vector<Mat64>& jacobians) {
  check_square_chain(jacobians);
  std::vector<Mat64> out{Mat64::identity(jacobians.front().rows())};
  for (const auto& j : jacobians) out.push_back(j * out.back());
  return out;
}

std::vector<double> partial_condition_numbers(const std::vector<Mat64>& jacobians) {
  std::vector<double> out;
  for (const auto& p : partial_products(jacobians)) {
    try {
      out.push_back(condition_number(p));
    } catch (const SingularMatrixError&) {
      out.push_back(kInf);
    }
  }
  return out;
}

namespace {

std::vector<double> gamma_from(const std::vector<Mat64>& products, const std::vector<double>& kappa) {
  std::vector<double> gamma;
  double running = 0.0;
  for (std::size_t s = 0; s < products.size(); ++s) {
    const Mat64& p = products[s];
    const double defect = spectral_norm(Mat64::identity(p.rows()) - p.transpose() * p);
    running = std::max(running, safe_mul(1.0 + kappa[s] * kappa[s], defect));
    gamma.push_back(running);
  }
  return gamma;
}

struct LinearSeries {
  std::vector<Mat64> products;
  std::vector<double> kappa;
  std::vector<double> gamma;
  std::vector<double> product_norm;
};

LinearSeries linear_series(const std::vector<Mat64>& jacobians) {
  LinearSeries s;
  s.products = partial_products(jacobians);
  s.kappa = partial_condition_numbers(jacobians);
  s.gamma = gamma_from(s.products, s.kappa);
  for (const auto& p : s.products) s.product_norm.push_back(spectral_norm(p));
  return s;
}

// Squared-norm form of the linear bound divided by |z|-scale inputs.
double linear_bound_sq(double alpha, std::size_t t, double gamma, double prod_norm, double perp_sq, double par_sq,
                       double total_sq) {
  const double at = std::pow(alpha, static_cast<double>(t));
  const double atm1 = std::pow(alpha, static_cast<double>(t) - 1.0);
  const double inner = safe_mul(gamma * alpha * alpha, (1.0 - atm1) * (1.0 - atm1)) + 2.0 * (alpha - at);
  const double mixing = safe_mul(safe_mul(gamma, total_sq), inner);
  return prod_norm * prod_norm * (at * at * perp_sq + par_sq + mixing);
}

double linear_bound_sqrt_form(double alpha, std::size_t t, double gamma, double prod_norm, double perp, double par,
                              double total) {
  const double at = std::pow(alpha, static_cast<double>(t));
  const double atm1 = std::pow(alpha, static_cast<double>(t) - 1.0);
  const double mixing = safe_mul(gamma * alpha, 1.0 - atm1) + std::sqrt(safe_mul(2.0 * gamma, alpha - at));
  return prod_norm * (at * perp + par + safe_mul(total, mixing));
}

}  // namespace

std::vector<double> gamma_series(const std::vector<Mat64>& jacobians) {
  return gamma_from(partial_products(jacobians), partial_condition_numbers(jacobians));
}

double theorem1_bound(const LinearizedSystem& sys, const Vec64& z, std::size_t t) {
  sys.validate();
  if (t < 1 || t > sys.depth()) throw Error("theorem1_bound: need 1 <= t <= T");
  const auto s = linear_series(sys.jacobians);
  const auto split = perturbation_split(z, sys.bases.front());
  const double alpha = sys.c / (1.0 + sys.c);
  return linear_bound_sq(alpha, t, s.gamma[t], s.product_norm[t], squared_norm(split.perp),
                         squared_norm(split.parallel), squared_norm(z));
}

std::vector<double> simulate_linear_controlled(const LinearizedSystem& sys, const Vec64& z) {
  sys.validate();
  if (z.size() != sys.dim()) throw DimensionError("simulate_linear_controlled: z dim mismatch");
  const std::size_t d = sys.dim();
  std::vector<double> errors{norm2(z)};
  Vec64 q = z;
  for (std::size_t t = 0; t < sys.depth(); ++t) {
    const Mat64 p = sys.bases[t] * sys.bases[t].transpose();
    const auto gain = feedback_from_projectors({p, Mat64::identity(d) - p}, Vec64(d), sys.c);
    q = sys.jacobians[t] * (q - gain.K * q);
    errors.push_back(norm2(q));
  }
  return errors;
}

BoundCertificate theorem1_certificate(const LinearizedSystem& sys, const Vec64& z) {
  sys.validate();
  const auto s = linear_series(sys.jacobians);
  const auto split = perturbation_split(z, sys.bases.front());
  BoundCertificate cert;
  cert.alpha = sys.c / (1.0 + sys.c);
  cert.gamma_t = s.gamma;
  cert.kappa_t = s.kappa;
  const auto errors = simulate_linear_controlled(sys, z);
  cert.bound_t.push_back(squared_norm(z));
  for (double e : errors) cert.empirical_t.push_back(e * e);
  cert.holds = true;
  for (std::size_t t = 1; t <= sys.depth(); ++t) {
    const double b = linear_bound_sq(cert.alpha, t, s.gamma[t], s.product_norm[t], squared_norm(split.perp),
                                     squared_norm(split.parallel), squared_norm(z));
    cert.bound_t.push_back(b);
    if (!std::isfinite(b)) cert.vacuous = true;
    if (!(cert.empirical_t[t] <= b + 1e-9)) cert.holds = false;
  }
  return cert;
}

namespace {

void certify(const DynamicalNet& net, const std::vector<Embedding>& embeddings, const Vec64& x0, const Vec64& v,
             double eps, double c, NonlinearCertificate& cert) {
  net.validate();
  const std::size_t depth = net.depth();
  if (embeddings.size() != depth) throw DimensionError("certificate: need one embedding per layer");
  for (std::size_t t = 0; t < depth; ++t) {
    if (net.layers[t].activation == Activation::relu)
      throw Error("certificate: layer " + std::to_string(t) + " uses relu, which is not twice differentiable");
    if (net.layers[t].in_dim() != net.layers[t].out_dim())
      throw DimensionError("certificate: layer " + std::to_string(t) + " is not square");
    if (embedding_dim(embeddings[t]) != net.layers[t].in_dim())
      throw DimensionError("certificate: embedding " + std::to_string(t) + " does not match layer width");
  }
  if (c < 0.0) throw Error("certificate: c must be nonnegative");
  if (eps < 0.0) throw Error("certificate: eps must be nonnegative");
  if (std::abs(norm2(v) - 1.0) > 1e-10) throw Error("certificate: direction v must have unit norm");
  if (norm2(submersion_residual(embeddings[0], x0)) > 1e-8)
    throw Error("certificate: clean input is not on the first manifold (|f_0(x0)| > 1e-8)");
  for (std::size_t t = 0; t < depth; ++t) {
    if (std::holds_alternative<AutoencoderEmbedding>(embeddings[t])) {
      cert.certified = false;
      cert.reason = "uncertified: autoencoder embedding at layer " + std::to_string(t) +
                    " has no analytic curvature bound";
      return;
    }
  }
  cert.certified = true;
  cert.eps = eps;
  cert.alpha = c / (1.0 + c);
  const double alpha = cert.alpha;

  // clean and perturbed closed-loop runs, plus the linearized recursion
  std::vector<Vec64> clean{x0};
  std::vector<Vec64> pert{x0 + eps * v};
  std::vector<Mat64> thetas;
  Vec64 lin = eps * v;
  cert.empirical_t.push_back(norm2(pert[0] - clean[0]));
  cert.linearization_error_t.push_back(0.0);
  std::vector<Mat64> tangent;
  for (std::size_t t = 0; t < depth; ++t) {
    const Layer& layer = net.layers[t];
    const Vec64 u_clean = regularized_control(embeddings[t], clean[t], c);
    const Vec64 u_pert = regularized_control(embeddings[t], pert[t], c);
    thetas.push_back(jacobian(layer, clean[t] + u_clean));
    const auto proj = tangent_projectors(embeddings[t], clean[t], static_cast<int>(t));
    tangent.push_back(proj.P);
    const auto gain = feedback_from_projectors(proj, clean[t], c);
    lin = thetas[t] * (lin - gain.K * lin);
    clean.push_back(apply(layer, clean[t] + u_clean));
    pert.push_back(apply(layer, pert[t] + u_pert));
    if (!all_finite(pert.back())) throw NumericalError("certificate: non-finite perturbed state");
    cert.empirical_t.push_back(norm2(pert.back() - clean.back()));
    cert.linearization_error_t.push_back(norm2((pert.back() - clean.back()) - lin));
  }

  const auto s = linear_series(thetas);
  cert.gamma_t = s.gamma;
  cert.kappa_t = s.kappa;
  cert.theta_bar_norm = s.product_norm;
  for (std::size_t t = 0; t < depth; ++t) {
    cert.theta_norm.push_back(spectral_norm(thetas[t]));
    double sigma = 0.0;
    if (const auto* q = std::get_if<QuadraticSubmersion>(&embeddings[t])) sigma = q->sigma();
    cert.sigma_t.push_back(sigma);
    cert.k_t.push_back(4.0 * sigma * (1.0 + 2.0 * sigma));
    cert.beta_t.push_back(hessian_norm_bound(net.layers[t]));
  }

  const Vec64 v_par = tangent[0] * v;
  const Vec64 v_perp = v - v_par;
  const double vpar2 = squared_norm(v_par);
  const double vperp2 = squared_norm(v_perp);
  const double v2 = squared_norm(v);
  for (std::size_t t = 0; t < depth; ++t) {
    if (t == 0) {
      cert.delta_t.push_back(1.0);
    } else {
      cert.delta_t.push_back(
          linear_bound_sq(alpha, t, s.gamma[t], s.product_norm[t], vperp2, vpar2, v2));
    }
  }

  // coefficient of eps^2 in the linearization error, by its forward recursion
  cert.linearization_t.push_back(0.0);
  for (std::size_t t = 0; t < depth; ++t) {
    const double growth = cert.theta_norm[t] * (1.0 + cert.k_t[t]) + 2.0 * cert.beta_t[t];
    const double source = cert.k_t[t] * cert.theta_norm[t] + 2.0 * cert.beta_t[t];
    cert.linearization_t.push_back(safe_mul(growth, cert.linearization_t[t]) + safe_mul(cert.delta_t[t], source));
  }
  const double total = cert.linearization_t.back();
  cert.eps_threshold = total > 0.0 ? std::sqrt(1.0 / total) : kInf;
  cert.vacuous = eps > cert.eps_threshold;

  const Vec64 z = eps * v;
  const Vec64 z_par = tangent[0] * z;
  const Vec64 z_perp = z - z_par;
  cert.linear_part_t.push_back(norm2(z));
  cert.bound_t.push_back(norm2(z));
  cert.holds = true;
  for (std::size_t t = 1; t <= depth; ++t) {
    const double lp = linear_bound_sqrt_form(alpha, t, s.gamma[t], s.product_norm[t], norm2(z_perp), norm2(z_par),
                                             norm2(z));
    cert.linear_part_t.push_back(lp);
    const double b = lp + safe_mul(cert.linearization_t[t], eps * eps);
    cert.bound_t.push_back(b);
    if (!(cert.empirical_t[t] <= b + 1e-9)) cert.holds = false;
  }
}

}  // namespace

NonlinearCertificate theorem2_certificate(const DynamicalNet& net, const std::vector<Embedding>& embeddings,
                                          const Vec64& x0_clean, const Vec64& v, double eps, double c) {
  NonlinearCertificate cert;
  certify(net, embeddings, x0_clean, v, eps, c, cert);
  return cert;
}

LinearizationSeries linearization_error_series(const DynamicalNet& net, const std::vector<Embedding>& embeddings,
                                               const Vec64& x0, const Vec64& v, double eps, double c) {
  NonlinearCertificate cert;
  certify(net, embeddings, x0, v, eps, c, cert);
  if (!cert.certified) throw Error("linearization_error_series: " + cert.reason);
  LinearizationSeries out;
  out.e_t = cert.linearization_error_t;
  out.eps_threshold = cert.eps_threshold;
  out.holds = true;
  for (std::size_t t = 0; t < out.e_t.size(); ++t) {
    out.bound_t.push_back(safe_mul(cert.linearization_t[t], eps * eps));
    if (!(out.e_t[t] <= out.bound_t[t] + 1e-12)) out.holds = false;
  }
  return out;
}

PropC2Gap propC2_check(const QuadraticSubmersion& q, const Vec64& x_on, const Vec64& v, double eps, double c) {
  q.validate();
  const Embedding e = q;
  if (std::abs(submersion_residual(e, x_on)[0]) > 1e-10) throw Error("propC2_check: anchor is not on the manifold");
  if (eps < 0.0 || eps > 1.0) throw Error("propC2_check: need 0 <= eps <= 1");
  const Vec64 x_eps = x_on + eps * v;
  PropC2Gap out;
  out.u_manifold = regularized_control(e, x_eps, c);
  out.u_linear = feedback_from_projectors(tangent_projectors(e, x_on), x_on, c).control(x_eps);
  out.gap = norm2(out.u_manifold - out.u_linear);
  const double sigma = q.sigma();
  out.bound = 4.0 * eps * eps * sigma * (1.0 + 2.0 * sigma);
  return out;
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw Error("loglog_slope: need two or more matching samples");
  double mx = 0.0, my = 0.0;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

LinearFixture random_linear_fixture(std::uint64_t seed, const LinearSystemOptions& opt) {
  SeededRng rng(seed);
  const std::size_t d = 2 + static_cast<std::size_t>(rng.below(opt.max_dim - 1));
  const std::size_t depth = 1 + static_cast<std::size_t>(rng.below(opt.max_depth));
  const std::size_t r = 1 + static_cast<std::size_t>(rng.below(d - 1));
  LinearFixture fx;
  fx.sys.c = opt.c;
  for (std::size_t t = 0; t < depth; ++t) {
    if (opt.orthogonal) {
      fx.sys.jacobians.push_back(rng.orthogonal(d));
    } else {
      Vec64 s(d);
      for (auto& x : s) x = rng.uniform(opt.min_singular, opt.max_singular);
      fx.sys.jacobians.push_back(rng.orthogonal(d) * Mat64::diag(s) * rng.orthogonal(d).transpose());
    }
  }
  fx.sys.bases.push_back(rng.orthonormal_basis(d, r));
  for (std::size_t t = 0; t + 1 < depth; ++t)
    fx.sys.bases.push_back(orthonormalize_columns(fx.sys.jacobians[t] * fx.sys.bases[t]));
  fx.z = rng.normal_vec(d);
  return fx;
}

NonlinearFixture random_nonlinear_fixture(std::uint64_t seed, const NonlinearFixtureOptions& opt) {
  SeededRng rng(seed);
  const std::size_t d = opt.min_dim + static_cast<std::size_t>(rng.below(opt.max_dim - opt.min_dim + 1));
  const std::size_t depth = 1 + static_cast<std::size_t>(rng.below(opt.max_depth));
  NonlinearFixture fx;
  fx.c = opt.c_choices[rng.below(opt.c_choices.size())];
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t t = 0; t < depth; ++t) {
    Layer l;
    l.weight = rng.normal_mat(d, d, scale);
    l.bias = 0.3 * rng.normal_vec(d);
    l.activation = opt.activation;
    fx.net.layers.push_back(std::move(l));
  }
  fx.net.head.weight = rng.normal_mat(2, d, scale);
  fx.net.head.bias = Vec64(2);
  fx.net.validate();
  fx.x0 = rng.normal_vec(d);
  Vec64 x = fx.x0;
  Vec64 n = rng.unit_vec(d);
  for (std::size_t t = 0; t < depth; ++t) {
    QuadraticSubmersion q;
    const double mag = rng.uniform(opt.min_curvature, opt.max_curvature);
    q.curvature = rng.uniform() < 0.5 ? -mag : mag;
    q.center = x;
    q.normal = n;
    fx.embeddings.emplace_back(q);
    const Mat64 theta = jacobian(fx.net.layers[t], x);
    n = solve(theta.transpose(), n);
    n *= 1.0 / norm2(n);
    x = apply(fx.net.layers[t], x);
  }
  fx.v = rng.unit_vec(d);
  return fx;
}

}  // namespace selfheal
