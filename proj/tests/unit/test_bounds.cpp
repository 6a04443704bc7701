#include <doctest.h>

#include <cmath>

#include "selfheal/bounds.hpp"
#include "selfheal/experiments.hpp"
#include "selfheal/rng.hpp"

using namespace selfheal;

namespace {

// Orthogonal linear layers with subspaces carried forward along the clean trajectory.
struct LinearChain {
  DynamicalNet net;
  std::vector<Embedding> embeddings;
  LinearizedSystem sys;
  Vec64 x0;
};

LinearChain linear_chain(std::uint64_t seed, std::size_t d, std::size_t r, std::size_t depth, double c) {
  SeededRng rng(seed);
  LinearChain ch;
  ch.x0 = rng.normal_vec(d);
  Mat64 basis = rng.orthonormal_basis(d, r);
  Vec64 x = ch.x0;
  for (std::size_t t = 0; t < depth; ++t) {
    Layer l;
    l.weight = rng.orthogonal(d);
    l.bias = Vec64(d);
    ch.net.layers.push_back(l);
    LinearSubspaceEmbedding e;
    e.mean = x;
    e.basis = basis;
    ch.embeddings.push_back(e);
    ch.sys.jacobians.push_back(l.weight);
    ch.sys.bases.push_back(basis);
    basis = orthonormalize_columns(l.weight * basis);
    x = apply(l, x);
  }
  ch.net.head = Layer{Mat64::identity(d), Vec64(d), Activation::identity, false};
  ch.sys.c = c;
  return ch;
}

}  // namespace

TEST_CASE("perturbation split") {
  const Mat64 e1{{1.0}, {0.0}};
  const auto s = perturbation_split(Vec64{3.0, 4.0}, e1);
  CHECK(s.parallel == Vec64{3.0, 0.0});
  CHECK(s.perp == Vec64{0.0, 4.0});
  CHECK(norm2(perturbation_split(Vec64{2.0, 0.0}, e1).perp) == 0.0);
  SeededRng rng(1);
  const Mat64 v = rng.orthonormal_basis(5, 2);
  const Vec64 z = rng.normal_vec(5);
  const auto sp = perturbation_split(z, v);
  CHECK(std::abs(squared_norm(sp.parallel) + squared_norm(sp.perp) - squared_norm(z)) < 1e-12);
}

TEST_CASE("partial products and gamma") {
  SeededRng rng(2);
  const std::vector<Mat64> th{rng.normal_mat(3, 3), rng.normal_mat(3, 3)};
  const auto p = partial_products(th);
  CHECK(p[0] == Mat64::identity(3));
  CHECK(max_abs_diff(p[2], th[1] * th[0]) < 1e-15);
  const auto g = gamma_series({rng.orthogonal(4), rng.orthogonal(4)});
  for (double v : g) CHECK(v < 1e-9);
}

TEST_CASE("linear bound on orthogonal systems") {
  const auto a0 = linear_chain(3, 4, 2, 3, 0.0);
  SeededRng rng(4);
  const Vec64 tangent = a0.sys.bases[0] * rng.normal_vec(2);
  for (std::size_t t = 1; t <= 3; ++t)
    CHECK(theorem1_bound(a0.sys, tangent, t) == doctest::Approx(squared_norm(tangent)).epsilon(1e-9));

  const auto a1 = linear_chain(5, 4, 2, 2, 1.0);
  const auto pz = perturbation_split(rng.normal_vec(4), a1.sys.bases[0]);
  CHECK(theorem1_bound(a1.sys, pz.perp, 2) == doctest::Approx(squared_norm(pz.perp) / 16.0).epsilon(1e-9));
  const auto cert = theorem1_certificate(a1.sys, pz.perp);
  CHECK(cert.holds);
  CHECK(std::abs(cert.empirical_t[2] - squared_norm(pz.perp) / 16.0) < 1e-12);
}

TEST_CASE("linear bound on random systems") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    LinearSystemOptions opt;
    opt.c = std::vector<double>{0.0, 0.1, 1.0}[seed % 3];
    const auto fx = random_linear_fixture(seed, opt);
    const auto errs = simulate_linear_controlled(fx.sys, fx.z);
    for (std::size_t t = 1; t <= fx.sys.depth(); ++t) CHECK(errs[t] * errs[t] <= theorem1_bound(fx.sys, fx.z, t) + 1e-9);
  }
}

TEST_CASE("closed-loop linear simulation") {
  const auto fx = random_linear_fixture(9, {});
  for (double e : simulate_linear_controlled(fx.sys, Vec64(fx.sys.dim()))) CHECK(e == 0.0);

  LinearizedSystem one = fx.sys;
  one.jacobians.resize(1);
  one.bases.resize(1);
  one.c = 0.0;
  const Mat64 p = one.bases[0] * one.bases[0].transpose();
  CHECK(simulate_linear_controlled(one, fx.z)[1] == doctest::Approx(norm2(one.jacobians[0] * (p * fx.z))).epsilon(1e-12));

  // step-by-step with I - K written as alpha I + (1 - alpha) P
  const double alpha = fx.sys.c / (1.0 + fx.sys.c);
  Vec64 q = fx.z;
  const auto errs = simulate_linear_controlled(fx.sys, fx.z);
  for (std::size_t t = 0; t < fx.sys.depth(); ++t) {
    const Mat64 pt = fx.sys.bases[t] * fx.sys.bases[t].transpose();
    q = fx.sys.jacobians[t] * (alpha * q + (1.0 - alpha) * (pt * q));
    CHECK(std::abs(norm2(q) - errs[t + 1]) <= 1e-10 * std::max(1.0, norm2(q)));
  }
}

TEST_CASE("nonlinear bound degenerates on linear systems") {
  const auto ch = linear_chain(6, 4, 2, 3, 0.5);
  SeededRng rng(7);
  const Vec64 v = rng.unit_vec(4);
  const double eps = 0.3;
  const auto cert = theorem2_certificate(ch.net, ch.embeddings, ch.x0, v, eps, 0.5);
  CHECK(cert.certified);
  CHECK(std::isinf(cert.eps_threshold));
  for (double s : cert.sigma_t) CHECK(s == 0.0);
  for (double b : cert.beta_t) CHECK(b == 0.0);
  for (double k : cert.k_t) CHECK(k == 0.0);
  CHECK(cert.holds);
  const auto sp = perturbation_split(eps * v, ch.sys.bases[0]);
  for (std::size_t t = 1; t <= 3; ++t) {
    const double at = std::pow(1.0 / 3.0, static_cast<double>(t));
    CHECK(cert.bound_t[t] == doctest::Approx(at * norm2(sp.perp) + norm2(sp.parallel)).epsilon(1e-6));
    CHECK(cert.bound_t[t] * cert.bound_t[t] >= theorem1_bound(ch.sys, eps * v, t) - 1e-12);
  }
}

TEST_CASE("nonlinear bound on curved fixtures") {
  auto fx = random_nonlinear_fixture(8, {});
  for (auto& e : fx.embeddings) std::get<QuadraticSubmersion>(e).curvature = 0.25;
  const auto cert = theorem2_certificate(fx.net, fx.embeddings, fx.x0, fx.v, 1e-3, fx.c);
  for (double k : cert.k_t) CHECK(k == doctest::Approx(4.0));

  NonlinearFixtureOptions opt;
  opt.max_depth = 2;
  std::size_t holds = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto f = random_nonlinear_fixture(1000 + seed, opt);
    const double thr = theorem2_certificate(f.net, f.embeddings, f.x0, f.v, 1e-6, f.c).eps_threshold;
    const auto c2 = theorem2_certificate(f.net, f.embeddings, f.x0, f.v, 0.5 * thr, f.c);
    holds += c2.holds && !c2.vacuous;
  }
  CHECK(holds == 100);

  // autoencoders and relu layers are outside the certified class
  auto relu = fx;
  relu.net.layers[0].activation = Activation::relu;
  CHECK_THROWS(theorem2_certificate(relu.net, relu.embeddings, relu.x0, relu.v, 0.01, relu.c));
  CHECK_THROWS(theorem2_certificate(fx.net, fx.embeddings, fx.x0, 2.0 * fx.v, 0.01, fx.c));
}

TEST_CASE("regularized projection gap") {
  SeededRng rng(9);
  const auto q = QuadraticSubmersion::standard(4, 0.5);
  const Vec64 on(4);
  Vec64 v = rng.unit_vec(4);
  v[3] = 0.0;
  v *= 1.0 / norm2(v);
  CHECK(propC2_check(q, on, v, 0.0, 0.1).gap == 0.0);
  CHECK(propC2_check(QuadraticSubmersion::standard(4, 0.0), on, v, 0.2, 0.1).gap <= 1e-9);
  std::vector<double> eps{0.05, 0.1, 0.2}, gaps;
  for (double e : eps) {
    const auto g = propC2_check(q, on, v, e, 0.1);
    CHECK(g.gap <= g.bound);
    CHECK(g.bound == doctest::Approx(4.0 * e * e * 1.0 * 3.0));
    gaps.push_back(g.gap);
  }
  CHECK(std::abs(loglog_slope(eps, gaps) - 2.0) <= 0.2);
}

TEST_CASE("linearization error") {
  NonlinearFixtureOptions flat;
  flat.activation = Activation::identity;
  flat.min_curvature = 0.0;
  flat.max_curvature = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto f = random_nonlinear_fixture(seed, flat);
    for (double e : linearization_error_series(f.net, f.embeddings, f.x0, f.v, 0.5, f.c).e_t) CHECK(e <= 1e-10);
  }
  const auto f = random_nonlinear_fixture(77, {});
  const double thr = linearization_error_series(f.net, f.embeddings, f.x0, f.v, 1e-6, f.c).eps_threshold;
  const auto s = linearization_error_series(f.net, f.embeddings, f.x0, f.v, 0.5 * thr, f.c);
  CHECK(s.holds);
  std::vector<double> eps, err;
  for (double e = 0.05; eps.size() < 6; e *= 0.5) {
    eps.push_back(e);
    err.push_back(linearization_error_series(f.net, f.embeddings, f.x0, f.v, e, f.c).e_t.back());
  }
  CHECK(std::abs(loglog_slope(eps, err) - 2.0) <= 0.2);
}

TEST_CASE("log-log slope") {
  CHECK(loglog_slope({1.0, 2.0, 4.0}, {3.0, 12.0, 48.0}) == doctest::Approx(2.0));
}

TEST_CASE("sweeps are deterministic") {
  const auto a = thm1_sweep(30, 10, 5), b = thm1_sweep(30, 10, 5);
  CHECK(a.violations == 0);
  CHECK(a.max_ratio == b.max_ratio);
  CHECK(a.max_equality_error <= 1e-9);
  const auto c = propC2_sweep({0.5}, {0.05, 0.1, 0.2}, {0.1}, 3, 1);
  CHECK(c.violations == 0);
  CHECK(c.rows.size() == 3);
}
