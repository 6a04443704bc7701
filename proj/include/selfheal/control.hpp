#pragma once

// Closed-loop control of a layered network: running loss, greedy and linear
// feedback controls, the discrete Hamiltonian, and two solvers for the summed
// running loss (successive approximations on the Hamiltonian, and plain
// gradient descent on the stacked controls as a reference).

#include <vector>

#include "selfheal/dynamics.hpp"
#include "selfheal/embedding.hpp"

namespace selfheal {

struct ControlObjective {
  double c = 0.0;                    // control regularization
  std::vector<Embedding> embeddings;  // one per layer, dim = layer input width

  void validate(const DynamicalNet& net) const;
};

struct PmpConfig {
  std::size_t max_itr = 3;
  std::size_t inner_itr = 10;
  double step = 0.1;  // gradient-ascent rate for the inner Hamiltonian maximization
  double c = 0.001;   // regularization used when a config builds an objective
  bool greedy_only = false;  // stop after the greedy initialization

  void validate() const;
};

struct ControlSolution {
  std::vector<Vec64> controls;
  Trajectory trajectory;
  std::vector<double> history;  // objective after each outer iteration (or GD step)
  std::vector<std::size_t> increases;  // iterations whose objective rose by more than 1e-8
};

struct FeedbackGain {
  Mat64 K;
  double alpha = 0.0;  // c / (1 + c)
  Vec64 anchor;        // on-manifold reference point

  /// u = -K (x - anchor)
  Vec64 control(const Vec64& x) const;
};

/// 1/2 |f(x+u)|^2 + c/2 |u|^2
template <class T>
T running_loss(const Embedding& e, const Vector<T>& x, const Vector<T>& u, double c) {
  const Vector<T> f = submersion_residual(e, x + u);
  return 0.5 * squared_norm(f) + (0.5 * c) * squared_norm(u);
}

/// Gradient of the running loss in u.
template <class T>
Vector<T> running_loss_grad_u(const Embedding& e, const Vector<T>& x, const Vector<T>& u, double c) {
  const Vector<T> xu = x + u;
  Vector<T> g = residual_vjp(e, xu, submersion_residual(e, xu));
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += c * u[i];
  return g;
}

template <class T>
Vector<T> greedy_control(const Embedding& e, const Vector<T>& x) {
  return manifold_project(e, x) - x;
}

/// K = (cI + Q)^-1 Q for the subspace's normal projector Q.
FeedbackGain linear_feedback(const LinearSubspaceEmbedding& e, const Vec64& x_anchor, double c);

/// Same gain for arbitrary tangent/normal projectors.
FeedbackGain feedback_from_projectors(const Projectors& proj, const Vec64& x_anchor, double c);

/// Minimizer of the running loss in u at state x. Closed form for subspaces,
/// damped Newton for the quadratic surface, greedy projection when c == 0.
Vec64 regularized_control(const Embedding& e, const Vec64& x, double c);

/// H = pᵀ F_t(x + u) - running loss.
template <class T>
T hamiltonian(const DynamicalNet& net, std::size_t t, const Vector<T>& x, const Vector<T>& p_next,
              const Vector<T>& u, const ControlObjective& obj) {
  const Vector<T> next = apply(net.layers[t], x + u);
  return dot(p_next, next) - running_loss(obj.embeddings[t], x, u, obj.c);
}

template <class T>
Vector<T> hamiltonian_grad_u(const DynamicalNet& net, std::size_t t, const Vector<T>& x, const Vector<T>& p_next,
                             const Vector<T>& u, const ControlObjective& obj) {
  return vjp(net.layers[t], x + u, p_next) - running_loss_grad_u(obj.embeddings[t], x, u, obj.c);
}

template <class T>
Vector<T> hamiltonian_grad_x(const DynamicalNet& net, std::size_t t, const Vector<T>& x, const Vector<T>& p_next,
                             const Vector<T>& u, const ControlObjective& obj) {
  Vector<T> g = hamiltonian_grad_u(net, t, x, p_next, u, obj);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += obj.c * u[i];
  return g;
}

/// Sum of running losses along the controlled trajectory from x0.
template <class T>
T control_objective(const DynamicalNet& net, const ControlObjective& obj, const Vector<T>& x0,
                    const std::vector<Vector<T>>& controls) {
  T total(0.0);
  Vector<T> x = x0;
  for (std::size_t t = 0; t < net.depth(); ++t) {
    total += running_loss(obj.embeddings[t], x, controls[t], obj.c);
    x = apply(net.layers[t], x + controls[t]);
  }
  return total;
}

template <class T>
struct PmpRun {
  std::vector<Vector<T>> controls;
  std::vector<Vector<T>> states;  // x_0 .. x_T under the final controls
  std::vector<double> history;
};

namespace detail {

template <class T>
void check_finite(const Vector<T>& v, const char* what, std::size_t t) {
  for (const auto& s : v) {
    if (!std::isfinite(value_of(s)))
      throw NumericalError(std::string("solve_pmp: non-finite ") + what + " at layer " + std::to_string(t));
  }
}

template <class T>
std::vector<Vector<T>> controlled_states(const DynamicalNet& net, const Vector<T>& x0,
                                         const std::vector<Vector<T>>& u) {
  std::vector<Vector<T>> xs{x0};
  for (std::size_t t = 0; t < net.depth(); ++t) {
    xs.push_back(apply(net.layers[t], xs[t] + u[t]));
    check_finite(xs.back(), "state", t + 1);
  }
  return xs;
}

}  // namespace detail

/// Successive approximations: greedy init, then max_itr rounds of a forward
/// pass followed by a backward sweep that takes inner_itr ascent steps on H
/// at each layer before propagating the adjoint.
template <class T>
PmpRun<T> run_pmp(const DynamicalNet& net, const ControlObjective& obj, const Vector<T>& x0, const PmpConfig& cfg) {
  const std::size_t depth = net.depth();
  PmpRun<T> run;
  Vector<T> x = x0;
  for (std::size_t t = 0; t < depth; ++t) {
    run.controls.push_back(greedy_control(obj.embeddings[t], x));
    x = apply(net.layers[t], x + run.controls[t]);
    detail::check_finite(x, "state", t + 1);
  }
  if (!cfg.greedy_only) {
    for (std::size_t itr = 0; itr < cfg.max_itr; ++itr) {
      const auto xs = detail::controlled_states(net, x0, run.controls);
      Vector<T> p(xs.back().size());
      for (std::size_t t = depth; t-- > 0;) {
        Vector<T>& u = run.controls[t];
        for (std::size_t k = 0; k < cfg.inner_itr; ++k) {
          Vector<T> g = hamiltonian_grad_u(net, t, xs[t], p, u, obj);
          g *= cfg.step;
          u += g;
        }
        p = hamiltonian_grad_x(net, t, xs[t], p, u, obj);
        detail::check_finite(p, "adjoint", t);
      }
      run.history.push_back(value_of(control_objective(net, obj, x0, run.controls)));
    }
  }
  run.states = detail::controlled_states(net, x0, run.controls);
  return run;
}

ControlSolution solve_pmp(const DynamicalNet& net, const ControlObjective& obj, const Vec64& x0, const PmpConfig& cfg);

/// Gradient descent on all controls jointly, starting from zero.
ControlSolution solve_joint_gd(const DynamicalNet& net, const ControlObjective& obj, const Vec64& x0,
                               std::size_t steps, double lr);

/// Gradient of the summed running loss with respect to every control.
std::vector<Vec64> objective_grad_controls(const DynamicalNet& net, const ControlObjective& obj, const Vec64& x0,
                                           const std::vector<Vec64>& controls);

/// Adjoint states p_0 .. p_T with p_T = 0 and p_t = grad_x H at (x_t, p_{t+1}, u_t).
/// p_t is the negative gradient of the cost-to-go from layer t with controls frozen.
std::vector<Vec64> adjoint_states(const DynamicalNet& net, const ControlObjective& obj, const Trajectory& traj);

}  // namespace selfheal
