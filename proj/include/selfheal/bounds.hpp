#pragma once

// Error bounds for the closed-loop controlled network and their empirical
// checks: the linearized system (orthogonal-projection feedback per layer),
// the nonlinear system with regularized projections onto curved manifolds,
// the control-gap estimate, and the linearization-error series.

#include <cstdint>
#include <string>
#include <vector>

#include "selfheal/control.hpp"
#include "selfheal/dynamics.hpp"
#include "selfheal/embedding.hpp"

namespace selfheal {

struct LinearizedSystem {
  std::vector<Mat64> jacobians;  // theta_0 .. theta_{T-1}, square
  std::vector<Mat64> bases;      // V_0 .. V_{T-1}, orthonormal tangent bases
  double c = 0.0;

  std::size_t depth() const { return jacobians.size(); }
  std::size_t dim() const { return jacobians.front().rows(); }
  void validate() const;
};

struct PerturbationSplit {
  Vec64 parallel;
  Vec64 perp;
};

PerturbationSplit perturbation_split(const Vec64& z, const Mat64& v0);

/// Products theta_{s-1} ... theta_0 for s = 0 .. T (the first is I).
std::vector<Mat64> partial_products(const std::vector<Mat64>& jacobians);

/// kappa(partial product s) for s = 0 .. T; infinity where singular.
std::vector<double> partial_condition_numbers(const std::vector<Mat64>& jacobians);

/// gamma_t = max_{s<=t} (1 + kappa_s^2) |I - P_sᵀ P_s|_2 for t = 0 .. T.
std::vector<double> gamma_series(const std::vector<Mat64>& jacobians);

/// Squared-error bound at layer t (1 <= t <= T); infinity when a partial product is singular.
double theorem1_bound(const LinearizedSystem& sys, const Vec64& z, std::size_t t);

/// |q_t - x_t| for t = 0 .. T under q_{t+1} - x_{t+1} = theta_t (I - K_t)(q_t - x_t).
std::vector<double> simulate_linear_controlled(const LinearizedSystem& sys, const Vec64& z);

struct BoundCertificate {
  double alpha = 0.0;
  std::vector<double> gamma_t;      // t = 0 .. T
  std::vector<double> kappa_t;      // t = 0 .. T
  std::vector<double> bound_t;      // squared bound, t = 1 .. T stored at index t (index 0 = |z|^2)
  std::vector<double> empirical_t;  // squared error, t = 0 .. T
  bool holds = false;
  bool vacuous = false;  // some bound is infinite
};

BoundCertificate theorem1_certificate(const LinearizedSystem& sys, const Vec64& z);

struct NonlinearCertificate {
  bool certified = false;  // false for embeddings without an analytic curvature bound
  std::string reason;
  double alpha = 0.0;
  double eps = 0.0;
  double eps_threshold = 0.0;  // sqrt of the admissible eps^2
  bool vacuous = false;        // eps above the threshold
  std::vector<double> theta_norm;      // |theta_t|, t = 0 .. T-1
  std::vector<double> theta_bar_norm;  // |theta_{t-1} ... theta_0|, t = 0 .. T
  std::vector<double> gamma_t;         // t = 0 .. T
  std::vector<double> kappa_t;         // t = 0 .. T
  std::vector<double> sigma_t;         // t = 0 .. T-1
  std::vector<double> k_t;             // t = 0 .. T-1
  std::vector<double> beta_t;          // t = 0 .. T-1
  std::vector<double> delta_t;         // t = 0 .. T-1 (delta_0 = 1)
  std::vector<double> linear_part_t;   // t = 0 .. T, linearized-system term
  std::vector<double> linearization_t; // t = 0 .. T, coefficient of eps^2 (Prop. series)
  std::vector<double> bound_t;         // t = 0 .. T (index 0 = |z|)
  std::vector<double> empirical_t;     // |xbar_t - x_t|, t = 0 .. T
  std::vector<double> linearization_error_t;  // e_t, t = 0 .. T
  bool holds = false;  // empirical_t <= bound_t + 1e-9 for t = 1 .. T
};

/// Runs the clean and perturbed (x0 + eps v) systems under per-layer
/// regularized projection control and evaluates every symbol of the bound.
/// Embeddings must be linear subspaces or quadratic surfaces; autoencoders
/// return an uncertified result. relu layers are rejected.
NonlinearCertificate theorem2_certificate(const DynamicalNet& net, const std::vector<Embedding>& embeddings,
                                          const Vec64& x0_clean, const Vec64& v, double eps, double c);

struct LinearizationSeries {
  std::vector<double> e_t;      // t = 0 .. T
  std::vector<double> bound_t;  // coefficient * eps^2, t = 0 .. T
  double eps_threshold = 0.0;
  bool holds = false;  // e_t <= bound_t + 1e-12 for every t
};

LinearizationSeries linearization_error_series(const DynamicalNet& net, const std::vector<Embedding>& embeddings,
                                               const Vec64& x0, const Vec64& v, double eps, double c);

struct PropC2Gap {
  double gap = 0.0;
  double bound = 0.0;  // 4 eps^2 sigma (1 + 2 sigma)
  Vec64 u_manifold;
  Vec64 u_linear;
};

PropC2Gap propC2_check(const QuadraticSubmersion& q, const Vec64& x_on, const Vec64& v, double eps, double c);

/// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

// Random fixtures used by the sweeps.

struct LinearSystemOptions {
  std::size_t max_dim = 16;
  std::size_t max_depth = 6;
  double c = 0.1;
  bool orthogonal = false;
  double min_singular = 0.5;
  double max_singular = 1.5;
};

struct LinearFixture {
  LinearizedSystem sys;
  Vec64 z;
};

/// Random square jacobians with tangent bases carried forward (V_{t+1} spans theta_t V_t).
LinearFixture random_linear_fixture(std::uint64_t seed, const LinearSystemOptions& opt);

struct NonlinearFixture {
  DynamicalNet net;
  std::vector<Embedding> embeddings;
  Vec64 x0;
  Vec64 v;
  double c = 0.1;
};

struct NonlinearFixtureOptions {
  std::size_t min_dim = 2;
  std::size_t max_dim = 5;
  std::size_t max_depth = 3;
  std::vector<double> c_choices{0.01, 0.1, 1.0};
  Activation activation = Activation::tanh;
  double min_curvature = 0.05;
  double max_curvature = 0.5;
};

/// Random tanh net with one quadratic surface per layer through the clean
/// trajectory; each surface's tangent space is the previous one pushed
/// forward by the layer Jacobian.
NonlinearFixture random_nonlinear_fixture(std::uint64_t seed, const NonlinearFixtureOptions& opt);

}  // namespace selfheal
