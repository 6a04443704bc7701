#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "selfheal/bounds.hpp"
#include "selfheal/control.hpp"
#include "selfheal/rng.hpp"

using namespace selfheal;

namespace {

// Q = diag(0, 1): the manifold is the first axis.
Embedding axis() {
  LinearSubspaceEmbedding e;
  e.mean = Vec64(2);
  e.basis = Mat64{{1.0}, {0.0}};
  return e;
}

DynamicalNet identity_net(std::size_t d, std::size_t depth) {
  DynamicalNet net;
  Layer l;
  l.weight = Mat64::identity(d);
  l.bias = Vec64(d);
  net.layers.assign(depth, l);
  net.head = l;
  return net;
}

// Cost-to-go from layer t with the controls frozen, as a function of x_t.
double cost_to_go(const DynamicalNet& net, const ControlObjective& obj, std::size_t t, Vec64 x,
                  const std::vector<Vec64>& u) {
  double j = 0.0;
  for (std::size_t s = t; s < net.depth(); ++s) {
    j += running_loss(obj.embeddings[s], x, u[s], obj.c);
    x = apply(net.layers[s], x + u[s]);
  }
  return j;
}

}  // namespace

TEST_CASE("running loss values") {
  const Embedding e = axis();
  CHECK(running_loss(e, Vec64{5.0, 0.0}, Vec64(2), 0.3) == 0.0);
  CHECK(running_loss(e, Vec64{3.0, 4.0}, Vec64(2), 7.0) == doctest::Approx(8.0));
  CHECK(running_loss(e, Vec64{3.0, 4.0}, Vec64{0.0, -2.0}, 1.0) == doctest::Approx(4.0));
  SeededRng rng(1);
  const Embedding q = QuadraticSubmersion::standard(3, 0.6);
  const Vec64 x = rng.normal_vec(3), u = rng.normal_vec(3);
  const Vec64 fd = finite_diff_grad([&](const Vec64& v) { return running_loss(q, x, v, 0.4); }, u, 1e-6);
  CHECK(oracle::rel_err(running_loss_grad_u(q, x, u, 0.4), fd) < 1e-6);
}

TEST_CASE("greedy control") {
  const Embedding e = axis();
  CHECK(greedy_control(e, Vec64{2.0, 0.0}) == Vec64(2));
  CHECK(greedy_control(e, Vec64{3.0, 4.0}) == Vec64{0.0, -4.0});
  // projection lands on the subspace for an arbitrary offset subspace
  SeededRng rng(2);
  LinearSubspaceEmbedding lin;
  lin.mean = rng.normal_vec(4);
  lin.basis = rng.orthonormal_basis(4, 2);
  const Vec64 x = rng.normal_vec(4);
  const Vec64 moved = x + greedy_control(Embedding(lin), x);
  CHECK(norm2(submersion_residual(Embedding(lin), moved)) < 1e-12);
  const auto gain = linear_feedback(lin, lin.mean, 0.0);
  CHECK(max_abs_diff(greedy_control(Embedding(lin), x), gain.control(x)) < 1e-12);
  CHECK(max_abs_diff(regularized_control(Embedding(lin), x, 0.0), gain.control(x)) < 1e-12);
}

TEST_CASE("linear feedback gain") {
  LinearSubspaceEmbedding e = std::get<LinearSubspaceEmbedding>(axis());
  const auto k0 = linear_feedback(e, Vec64(2), 0.0);
  CHECK(k0.K == Mat64::diag(Vec64{0.0, 1.0}));
  const auto k1 = linear_feedback(e, Vec64(2), 1.0);
  CHECK(max_abs_diff(k1.control(Vec64{3.0, 4.0}), Vec64{0.0, -2.0}) < 1e-14);
  CHECK(max_abs_diff(Vec64{3.0, 4.0} + k1.control(Vec64{3.0, 4.0}), Vec64{3.0, 2.0}) < 1e-14);
  // the same control minimizes the running loss numerically
  const Vec64 x{3.0, 4.0};
  Vec64 u(2);
  for (int i = 0; i < 2000; ++i) u -= 0.1 * running_loss_grad_u(Embedding(e), x, u, 1.0);
  CHECK(max_abs_diff(u, k1.control(x)) < 1e-10);
  const auto big = linear_feedback(e, Vec64(2), 1e9);
  CHECK(norm2(big.control(x)) <= 1e-8 * norm2(x));
  CHECK_THROWS(linear_feedback(e, Vec64(2), -1.0));
}

TEST_CASE("I - K = alpha I + (1 - alpha) P on random pairs") {
  SeededRng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t d = 2 + rng.below(6), r = 1 + rng.below(d - 1);
    LinearSubspaceEmbedding e;
    e.mean = Vec64(d);
    e.basis = rng.orthonormal_basis(d, r);
    const double c = std::pow(10.0, rng.uniform(-3.0, 2.0));
    const auto g = linear_feedback(e, Vec64(d), c);
    const Mat64 p = e.basis * e.basis.transpose();
    const double alpha = c / (1.0 + c);
    CHECK(max_abs_diff(Mat64::identity(d) - g.K, alpha * Mat64::identity(d) + (1.0 - alpha) * p) <= 1e-10);
  }
}

TEST_CASE("regularized control on a curved surface") {
  SeededRng rng(4);
  const Embedding q = QuadraticSubmersion::standard(3, 0.8);
  for (double c : {0.05, 0.5, 2.0}) {
    const Vec64 x = rng.normal_vec(3);
    const Vec64 u = regularized_control(q, x, c);
    CHECK(norm2(running_loss_grad_u(q, x, u, c)) <= 1e-9);
    for (int probe = 0; probe < 20; ++probe)
      CHECK(running_loss(q, x, u, c) <= running_loss(q, x, u + 0.05 * rng.normal_vec(3), c) + 1e-15);
  }
}

TEST_CASE("hamiltonian") {
  SeededRng rng(5);
  const auto fx = random_nonlinear_fixture(11, {});
  ControlObjective obj{fx.c, fx.embeddings};
  const std::size_t d = fx.net.state_dim(0);
  const Vec64 x = fx.x0, u = 0.1 * rng.normal_vec(d);
  const Vec64 p0(fx.net.state_dim(1));
  CHECK(hamiltonian(fx.net, 0, x, p0, u, obj) == doctest::Approx(-running_loss(obj.embeddings[0], x, u, obj.c)));
  const Vec64 p = rng.normal_vec(fx.net.state_dim(1));
  const Vec64 fd = finite_diff_grad([&](const Vec64& v) { return hamiltonian(fx.net, 0, x, p, v, obj); }, u, 1e-6);
  CHECK(oracle::rel_err(hamiltonian_grad_u(fx.net, 0, x, p, u, obj), fd) < 1e-6);
  const Vec64 fdx = finite_diff_grad([&](const Vec64& v) { return hamiltonian(fx.net, 0, v, p, u, obj); }, x, 1e-6);
  CHECK(oracle::rel_err(hamiltonian_grad_x(fx.net, 0, x, p, u, obj), fdx) < 1e-6);

  // greedy control with c = 0 on a subspace: the loss term vanishes
  const DynamicalNet net = identity_net(2, 1);
  ControlObjective lin{0.0, {axis()}};
  const Vec64 y{3.0, 4.0}, pn{0.5, -1.0};
  const Vec64 g = greedy_control(lin.embeddings[0], y);
  CHECK(hamiltonian(net, 0, y, pn, g, lin) == doctest::Approx(dot(pn, apply(net.layers[0], y + g))));
}

TEST_CASE("pmp on the one-layer linear problem") {
  const DynamicalNet net = identity_net(2, 1);
  PmpConfig cfg;
  cfg.max_itr = 10;
  cfg.inner_itr = 10;
  ControlObjective obj{0.0, {axis()}};
  const auto s0 = solve_pmp(net, obj, Vec64{3.0, 4.0}, cfg);
  CHECK(max_abs_diff(s0.controls[0], Vec64{0.0, -4.0}) < 1e-12);
  CHECK(s0.history.back() < 1e-20);
  obj.c = 1.0;
  const auto s1 = solve_pmp(net, obj, Vec64{3.0, 4.0}, cfg);
  CHECK(max_abs_diff(s1.controls[0], Vec64{0.0, -2.0}) < 1e-6);
  CHECK(s1.increases.empty());
  cfg.greedy_only = true;
  CHECK(solve_pmp(net, obj, Vec64{3.0, 4.0}, cfg).controls[0] == Vec64{0.0, -4.0});
}

TEST_CASE("joint gradient descent") {
  const DynamicalNet net = identity_net(2, 1);
  ControlObjective obj{1.0, {axis()}};
  const auto s = solve_joint_gd(net, obj, Vec64{3.0, 4.0}, 500, 0.2);
  CHECK(max_abs_diff(s.controls[0], Vec64{0.0, -2.0}) < 1e-6);
  const auto still = solve_joint_gd(net, obj, Vec64{3.0, 0.0}, 50, 0.2);
  CHECK(still.controls[0] == Vec64(2));

  const auto fx = random_nonlinear_fixture(21, {});
  ControlObjective o{fx.c, fx.embeddings};
  SeededRng rng(6);
  std::vector<Vec64> u;
  for (std::size_t t = 0; t < fx.net.depth(); ++t) u.push_back(0.1 * rng.normal_vec(fx.net.state_dim(t)));
  const auto grads = objective_grad_controls(fx.net, o, fx.x0, u);
  for (std::size_t t = 0; t < u.size(); ++t) {
    const Vec64 fd = finite_diff_grad(
        [&](const Vec64& v) {
          auto w = u;
          w[t] = v;
          return control_objective(fx.net, o, fx.x0, w);
        },
        u[t], 1e-6);
    CHECK(oracle::rel_err(grads[t], fd) < 1e-6);
  }
}

TEST_CASE("adjoint states") {
  // on-manifold trajectory with zero controls: nothing to correct
  const DynamicalNet net = identity_net(2, 3);
  ControlObjective obj{0.5, {axis(), axis(), axis()}};
  const auto traj = forward(net, Vec64{1.0, 0.0});
  for (const auto& p : adjoint_states(net, obj, traj)) CHECK(norm2(p) == 0.0);

  // one linear layer: p_0 = thetaᵀ p_1 - grad_x L with p_1 = 0
  SeededRng rng(7);
  DynamicalNet one = identity_net(2, 1);
  one.layers[0].weight = rng.normal_mat(2, 2);
  ControlObjective o1{0.3, {axis()}};
  Trajectory t1 = forward(one, Vec64{1.0, 2.0}, {Vec64{0.1, -0.4}});
  const auto p1 = adjoint_states(one, o1, t1);
  const Vec64 xu = t1.states[0] + t1.controls[0];
  CHECK(max_abs_diff(p1[0], -Vec64{0.0, xu[1]}) < 1e-14);

  // finite differences of the frozen-control cost-to-go on random instances
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto fx = random_nonlinear_fixture(100 + seed, {});
    ControlObjective o{fx.c, fx.embeddings};
    PmpConfig cfg;
    // off the clean trajectory, where the adjoint is nonzero
    SeededRng off(seed);
    const Vec64 x0 = fx.x0 + 0.3 * off.normal_vec(fx.x0.size());
    const auto sol = solve_pmp(fx.net, o, x0, cfg);
    const auto ps = adjoint_states(fx.net, o, sol.trajectory);
    for (std::size_t t = 0; t < fx.net.depth(); ++t) {
      const Vec64 fd = finite_diff_grad(
          [&](const Vec64& x) { return cost_to_go(fx.net, o, t, x, sol.controls); }, sol.trajectory.states[t], 1e-6);
      CHECK(oracle::rel_err(-ps[t], fd) < 1e-5);
    }
  }
}

TEST_CASE("pmp approaches the joint-descent optimum on a depth-3 net") {
  NonlinearFixtureOptions opt;
  opt.max_depth = 3;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto fx = random_nonlinear_fixture(300 + seed, opt);
    ControlObjective o{fx.c, fx.embeddings};
    SeededRng off(seed);
    const Vec64 x0 = fx.x0 + 0.3 * off.normal_vec(fx.x0.size());
    PmpConfig cfg;
    cfg.max_itr = 20;
    cfg.inner_itr = 20;
    cfg.step = 0.05;
    const double pmp = solve_pmp(fx.net, o, x0, cfg).history.back();
    const double gd = solve_joint_gd(fx.net, o, x0, 20000, 0.02).history.back();
    CHECK(gd > 1e-6);
    CHECK(pmp <= 1.01 * gd);
  }
}

TEST_CASE("solver config validation") {
  PmpConfig cfg;
  cfg.step = 0.0;
  CHECK_THROWS(cfg.validate());
  ControlObjective obj{0.0, {axis()}};
  CHECK_THROWS(obj.validate(identity_net(2, 2)));
}
