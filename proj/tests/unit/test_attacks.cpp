#include <doctest.h>

#include <cmath>
#include <memory>

#include "oracles.hpp"
#include "selfheal/attacks.hpp"
#include "selfheal/bounds.hpp"
#include "selfheal/margins.hpp"
#include "selfheal/rng.hpp"

using namespace selfheal;

namespace {

// Soft-threshold level found by bisection: the l1 projection is sign(v) max(|v| - tau, 0).
Vec64 l1_projection_oracle(const Vec64& v, double r) {
  if (norm1(v) <= r) return v;
  double lo = 0.0, hi = norm_inf(v);
  for (int i = 0; i < 200; ++i) {
    const double tau = 0.5 * (lo + hi);
    double s = 0.0;
    for (double x : v) s += std::max(std::abs(x) - tau, 0.0);
    (s > r ? lo : hi) = tau;
  }
  const double tau = 0.5 * (lo + hi);
  Vec64 out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::copysign(std::max(std::abs(v[i]) - tau, 0.0), v[i]);
  return out;
}

Embedding line_embedding(const Vec64& direction) {
  LinearSubspaceEmbedding e;
  e.mean = Vec64(direction.size());
  e.basis = Mat64::from_columns({direction});
  return e;
}

}  // namespace

TEST_CASE("ball projections") {
  CHECK(max_abs_diff(project_l2_ball(Vec64{2.0, 0.0}, 1.0), Vec64{1.0, 0.0}) < 1e-15);
  CHECK(max_abs_diff(project_l1_ball(Vec64{0.8, 0.8}, 1.0), Vec64{0.5, 0.5}) < 1e-15);
  CHECK(project_linf_ball(Vec64{0.3, -2.0}, 0.5) == Vec64{0.3, -0.5});
  SeededRng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const Vec64 v = 2.0 * rng.normal_vec(1 + rng.below(8));
    const double r = rng.uniform(0.1, 2.0);
    const Vec64 p = project_l1_ball(v, r);
    CHECK(norm1(p) <= r * (1 + 1e-12));
    CHECK(max_abs_diff(p, l1_projection_oracle(v, r)) < 1e-10);
    CHECK(norm2(project_l2_ball(v, r)) <= r * (1 + 1e-12));
    CHECK(norm_inf(project_ball(Norm::linf, v, r)) <= r);
  }
  CHECK(project_l1_ball(Vec64{0.1, -0.2}, 1.0) == Vec64{0.1, -0.2});
}

TEST_CASE("fgsm on an affine classifier") {
  // loss gradient of class 1 under logits (0, -wᵀx) points along +w, so the step is eps sign(w)
  const Vec64 w{1.0, -2.0};
  AffineClassifier clf(Mat64{{0.0, 0.0}, {-w[0], -w[1]}}, Vec64(2));
  const auto r = fgsm(clf, Vec64{0.3, 0.4}, 1, 0.1);
  CHECK(max_abs_diff(r.point - Vec64{0.3, 0.4}, Vec64{0.1, -0.1}) < 1e-15);
  CHECK(fgsm(clf, Vec64{0.3, 0.4}, 1, 0.0).point == Vec64{0.3, 0.4});
  const auto boxed = fgsm(clf, Vec64{0.95, 0.05}, 1, 0.1, InputBox{0.0, 1.0});
  CHECK(boxed.point == Vec64{1.0, 0.0});
}

TEST_CASE("pgd") {
  SeededRng rng(2);
  AffineClassifier clf(rng.normal_mat(3, 4), rng.normal_vec(3));
  const Vec64 x = rng.normal_vec(4);
  AttackConfig cfg;
  cfg.norm = Norm::linf;
  cfg.eps = 0.2;
  cfg.steps = 1;
  cfg.step_size = 0.2;
  cfg.random_start = false;
  CHECK(max_abs_diff(pgd(clf, x, 1, cfg).adversarial[0], fgsm(clf, x, 1, 0.2).point) < 1e-15);
  for (Norm n : {Norm::l1, Norm::l2, Norm::linf}) {
    cfg.norm = n;
    cfg.steps = 15;
    cfg.step_size = 0.05;
    cfg.random_start = true;
    const auto r = pgd(clf, x, 0, cfg, 3);
    CHECK(norm_of(n, r.adversarial[0] - x) <= cfg.eps * (1 + 1e-12));
    CHECK(r.adversarial[0] == pgd(clf, x, 0, cfg, 3).adversarial[0]);
    CHECK(r.loss_trace[0].back() >= cross_entropy(clf.logits(x), 0).loss);
  }
  CHECK(parse_norm("l1") == Norm::l1);
  CHECK_THROWS_AS(parse_norm("l3"), ParseError);
  cfg.eps = -1.0;
  CHECK_THROWS(cfg.validate());
}

TEST_CASE("model gradients match finite differences") {
  SeededRng rng(3);
  auto fx = random_nonlinear_fixture(5, {});
  const std::size_t d = fx.net.input_dim();
  Layer head;
  head.weight = rng.normal_mat(2, fx.net.state_dim(fx.net.depth()));
  head.bias = Vec64(2);
  fx.net.head = head;
  const Vec64 x = fx.x0 + 0.2 * fx.v;
  auto check = [&](const Model& m) {
    const auto lg = m.loss_grad(x, 1);
    const Vec64 fd = finite_diff_grad([&](const Vec64& y) { return cross_entropy(m.logits(y), 1).loss; }, x, 1e-6);
    CHECK(oracle::rel_err(lg.grad, fd) < 1e-4);
    CHECK(lg.loss == doctest::Approx(cross_entropy(m.logits(x), 1).loss));
  };
  check(NetModel(fx.net));
  ControlObjective obj{fx.c, fx.embeddings};
  // quadratic projections are not differentiable; use subspaces through the same trajectory
  std::vector<Embedding> lines;
  Vec64 s = fx.x0;
  for (std::size_t t = 0; t < fx.net.depth(); ++t) {
    LinearSubspaceEmbedding e;
    e.mean = s;
    e.basis = rng.orthonormal_basis(s.size(), 1);
    lines.push_back(e);
    s = apply(fx.net.layers[t], s);
  }
  obj.embeddings = lines;
  PmpConfig cfg;
  cfg.max_itr = 2;
  cfg.inner_itr = 3;
  check(ControlledModel(fx.net, obj, cfg));
  cfg.greedy_only = true;
  check(ControlledModel(fx.net, obj, cfg));
  auto bare = std::make_shared<NetModel>(fx.net);
  check(ProjectedModel(bare, lines[0]));

  AutoencoderConfig ac;
  ac.hidden = 6;
  ac.train.epochs = 5;
  std::vector<Vec64> pts;
  for (int i = 0; i < 20; ++i) pts.push_back(rng.normal_vec(d));
  check(ProjectedModel(bare, fit_autoencoder(pts, 1, ac)));
}

TEST_CASE("white-box attack") {
  const auto rec = fig2_toy(0);
  const DynamicalNet net = fig2_network(rec.normal);
  AttackConfig cfg;
  cfg.norm = Norm::linf;
  cfg.eps = rec.eps;
  cfg.steps = 10;
  cfg.step_size = rec.eps / 4;
  cfg.threat = Threat::whitebox;
  PmpConfig pmp;
  pmp.c = 0.0;

  // the full space as the manifold: the controller never acts
  LinearSubspaceEmbedding everything;
  everything.mean = Vec64(2);
  everything.basis = Mat64::identity(2);
  const NetModel bare(net);
  for (std::size_t i = 0; i < 5; ++i) {
    const auto wb = attack_controlled(net, {1.0, {Embedding(everything)}}, pmp, rec.data.points[i], rec.data.labels[i],
                                      cfg, i);
    const auto ob = pgd(bare, rec.data.points[i], rec.data.labels[i], cfg, i);
    CHECK(max_abs_diff(wb.adversarial[0], ob.adversarial[0]) < 1e-6);
  }

  // projection onto the data line defeats the attack that breaks the bare classifier
  const ControlObjective line{0.0, {line_embedding(rec.direction)}};
  double controlled_success = 0.0, bare_success = 0.0;
  for (std::size_t i = 0; i < rec.data.size(); i += 5) {
    controlled_success += attack_controlled(net, line, pmp, rec.data.points[i], rec.data.labels[i], cfg, i).success[0];
    bare_success += pgd(bare, rec.data.points[i], rec.data.labels[i], cfg, i).success[0];
  }
  CHECK(controlled_success < bare_success);

  cfg.budget = 10.0;
  CHECK_THROWS_AS(attack_controlled(net, line, pmp, rec.data.points[0], 0, cfg), BudgetError);
  cfg.threat = Threat::oblivious;
  cfg.budget = 5e8;
  CHECK_THROWS(attack_controlled(net, line, pmp, rec.data.points[0], 0, cfg));
}
