#include "selfheal/control.hpp"

#include <algorithm>

namespace selfheal {

void ControlObjective::validate(const DynamicalNet& net) const {
  if (c < 0.0 || !std::isfinite(c)) throw Error("control objective: c must be finite and nonnegative");
  if (embeddings.size() != net.depth())
    throw DimensionError("control objective: need " + std::to_string(net.depth()) + " embeddings, got " +
                         std::to_string(embeddings.size()));
  for (std::size_t t = 0; t < embeddings.size(); ++t) {
    if (embedding_dim(embeddings[t]) != net.layers[t].in_dim())
      throw DimensionError("control objective: embedding " + std::to_string(t) + " does not match layer width");
  }
}

void PmpConfig::validate() const {
  if (max_itr < 1 || inner_itr < 1) throw Error("pmp config: max_itr and inner_itr must be at least 1");
  if (!(step > 0.0)) throw Error("pmp config: step must be positive");
  if (c < 0.0) throw Error("pmp config: c must be nonnegative");
}

Vec64 FeedbackGain::control(const Vec64& x) const { return -(K * (x - anchor)); }

FeedbackGain feedback_from_projectors(const Projectors& proj, const Vec64& x_anchor, double c) {
  if (c < 0.0) throw Error("linear_feedback: c must be nonnegative");
  const std::size_t d = proj.Q.rows();
  if (x_anchor.size() != d) throw DimensionError("linear_feedback: anchor dim mismatch");
  FeedbackGain g;
  g.alpha = c / (1.0 + c);
  g.anchor = x_anchor;
  const Mat64 eye = Mat64::identity(d);
  g.K = c > 0.0 ? inverse(c * eye + proj.Q) * proj.Q : proj.Q;
  const Mat64 lhs = eye - g.K;
  const Mat64 rhs = g.alpha * eye + (1.0 - g.alpha) * proj.P;
  if (max_abs_diff(lhs, rhs) > 1e-10)
    throw NumericalError("linear_feedback: I - K deviates from alpha I + (1 - alpha) P");
  return g;
}

FeedbackGain linear_feedback(const LinearSubspaceEmbedding& e, const Vec64& x_anchor, double c) {
  const Mat64 p = e.basis * e.basis.transpose();
  return feedback_from_projectors({p, Mat64::identity(e.dim()) - p}, x_anchor, c);
}

namespace {

Vec64 quadratic_regularized(const QuadraticSubmersion& q, const Vec64& x, double c) {
  const Embedding e = q;
  const std::size_t d = x.size();
  const auto value = [&](const Vec64& u) { return running_loss(e, x, u, c); };
  // Gauss-Newton start: the linearized minimizer
  Vec64 u(d);
  {
    const double f = submersion_residual(e, x)[0];
    const Vec64 g = residual_vjp(e, x, Vec64{1.0});
    u = (-f / (squared_norm(g) + c)) * g;
  }
  Mat64 pn = Mat64::identity(d) - Mat64::outer(q.normal, q.normal);
  for (int it = 0; it < 200; ++it) {
    const Vec64 xu = x + u;
    const double f = submersion_residual(e, xu)[0];
    const Vec64 df = residual_vjp(e, xu, Vec64{1.0});
    const Vec64 grad = f * df + c * u;
    if (norm2(grad) <= 1e-10) return u;
    Mat64 hess = Mat64::outer(df, df) + (-2.0 * q.curvature * f) * pn;
    for (std::size_t i = 0; i < d; ++i) hess(i, i) += c;
    double shift = 0.0;
    Vec64 step;
    for (;;) {
      Mat64 h = hess;
      for (std::size_t i = 0; i < d; ++i) h(i, i) += shift;
      step = -solve(h, grad);
      if (dot(step, grad) < 0.0) break;
      shift = shift == 0.0 ? 1e-6 + std::abs(2.0 * q.curvature * f) : 10.0 * shift;
    }
    if (shift == 0.0) {
      // near the minimizer the objective is flat to rounding; judge by gradient
      const Vec64 trial = u + step;
      const Vec64 xt = x + trial;
      const Vec64 gt = submersion_residual(e, xt)[0] * residual_vjp(e, xt, Vec64{1.0}) + c * trial;
      if (norm2(gt) < 0.5 * norm2(grad)) {
        u = trial;
        continue;
      }
    }
    const double f0 = value(u);
    double t = 1.0;
    while (value(u + t * step) > f0 + 1e-4 * t * dot(step, grad) && t > 1e-14) t *= 0.5;
    if (t <= 1e-14) {
      if (norm2(grad) <= 1e-8) return u;
      break;
    }
    u += t * step;
  }
  throw ConvergenceError("regularized_control: Newton did not reach gradient norm 1e-10");
}

}  // namespace

Vec64 regularized_control(const Embedding& e, const Vec64& x, double c) {
  if (c < 0.0) throw Error("regularized_control: c must be nonnegative");
  if (c == 0.0) return greedy_control(e, x);
  if (std::holds_alternative<LinearSubspaceEmbedding>(e)) return (-1.0 / (1.0 + c)) * submersion_residual(e, x);
  if (const auto* q = std::get_if<QuadraticSubmersion>(&e)) return quadratic_regularized(*q, x, c);
  throw Error("regularized_control: autoencoder embeddings have no certified minimizer");
}

namespace {

std::vector<std::size_t> rises(const std::vector<double>& history) {
  std::vector<std::size_t> out;
  for (std::size_t i = 1; i < history.size(); ++i)
    if (history[i] > history[i - 1] + 1e-8) out.push_back(i);
  return out;
}

}  // namespace

ControlSolution solve_pmp(const DynamicalNet& net, const ControlObjective& obj, const Vec64& x0, const PmpConfig& cfg) {
  cfg.validate();
  net.validate();
  obj.validate(net);
  if (x0.size() != net.input_dim()) throw DimensionError("solve_pmp: input dim mismatch");
  auto run = run_pmp(net, obj, x0, cfg);
  ControlSolution sol;
  sol.controls = run.controls;
  sol.trajectory.states = run.states;
  sol.trajectory.controls = run.controls;
  sol.history = run.history;
  sol.increases = rises(sol.history);
  return sol;
}

std::vector<Vec64> objective_grad_controls(const DynamicalNet& net, const ControlObjective& obj, const Vec64& x0,
                                           const std::vector<Vec64>& controls) {
  const auto xs = detail::controlled_states(net, x0, controls);
  std::vector<Vec64> grads(net.depth());
  Vec64 lambda(xs.back().size());  // d(cost-to-go)/dx_{t+1}
  for (std::size_t t = net.depth(); t-- > 0;) {
    const Vec64 through = vjp(net.layers[t], xs[t] + controls[t], lambda);
    const Vec64 local = running_loss_grad_u(obj.embeddings[t], xs[t], controls[t], obj.c);
    grads[t] = local + through;
    lambda = grads[t] - obj.c * controls[t];
  }
  return grads;
}

ControlSolution solve_joint_gd(const DynamicalNet& net, const ControlObjective& obj, const Vec64& x0,
                               std::size_t steps, double lr) {
  if (steps < 1) throw Error("solve_joint_gd: steps must be at least 1");
  if (!(lr > 0.0)) throw Error("solve_joint_gd: lr must be positive");
  net.validate();
  obj.validate(net);
  ControlSolution sol;
  sol.controls = zero_controls<double>(net);
  for (std::size_t s = 0; s < steps; ++s) {
    const auto grads = objective_grad_controls(net, obj, x0, sol.controls);
    for (std::size_t t = 0; t < net.depth(); ++t) sol.controls[t] -= lr * grads[t];
    const double j = control_objective(net, obj, x0, sol.controls);
    if (!std::isfinite(j)) throw NumericalError("solve_joint_gd: diverged at step " + std::to_string(s));
    sol.history.push_back(j);
  }
  sol.trajectory = forward(net, x0, sol.controls);
  sol.increases = rises(sol.history);
  return sol;
}

std::vector<Vec64> adjoint_states(const DynamicalNet& net, const ControlObjective& obj, const Trajectory& traj) {
  obj.validate(net);
  if (traj.states.size() != net.depth() + 1 || traj.controls.size() != net.depth())
    throw DimensionError("adjoint_states: trajectory length does not match depth");
  std::vector<Vec64> p(net.depth() + 1);
  p[net.depth()] = Vec64(traj.states.back().size());
  for (std::size_t t = net.depth(); t-- > 0;)
    p[t] = hamiltonian_grad_x(net, t, traj.states[t], p[t + 1], traj.controls[t], obj);
  return p;
}

}  // namespace selfheal
