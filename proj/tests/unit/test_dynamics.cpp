#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "selfheal/data.hpp"
#include "selfheal/dynamics.hpp"
#include "selfheal/rng.hpp"

using namespace selfheal;

namespace {

Layer random_layer(SeededRng& rng, std::size_t in, std::size_t out, Activation act, bool skip = false) {
  Layer l;
  l.weight = rng.normal_mat(out, in, 1.0 / std::sqrt(static_cast<double>(in)));
  l.bias = rng.normal_vec(out);
  l.activation = act;
  l.residual_skip = skip;
  return l;
}

Layer identity_layer(std::size_t d) {
  Layer l;
  l.weight = Mat64::identity(d);
  l.bias = Vec64(d);
  return l;
}

}  // namespace

TEST_CASE("forward with identity layers") {
  DynamicalNet net;
  net.layers = {identity_layer(2), identity_layer(2)};
  net.head = identity_layer(2);
  const auto traj = forward(net, Vec64{3.0, 4.0});
  for (const auto& x : traj.states) CHECK(x == Vec64{3.0, 4.0});
  const auto ctl = forward(net, Vec64{3.0, 4.0}, {Vec64{0.0, -4.0}, Vec64(2)});
  CHECK(ctl.states[1] == Vec64{3.0, 0.0});
}

TEST_CASE("forward matches a hand-written tanh evaluation") {
  SeededRng rng(1);
  DynamicalNet net;
  net.layers = {random_layer(rng, 3, 4, Activation::tanh), random_layer(rng, 4, 4, Activation::tanh)};
  net.head = random_layer(rng, 4, 2, Activation::identity);
  const Vec64 x0 = rng.normal_vec(3);
  std::vector<double> x(x0.begin(), x0.end());
  for (const auto& l : net.layers) {
    std::vector<double> y(l.out_dim());
    for (std::size_t i = 0; i < y.size(); ++i) {
      double z = l.bias[i];
      for (std::size_t j = 0; j < x.size(); ++j) z += l.weight(i, j) * x[j];
      y[i] = std::tanh(z);
    }
    x = y;
  }
  const auto traj = forward(net, x0);
  CHECK(max_abs_diff(traj.states.back(), Vec64(x)) < 1e-14);
}

TEST_CASE("layer jacobian") {
  SeededRng rng(2);
  Layer lin = random_layer(rng, 3, 3, Activation::identity);
  CHECK(jacobian(lin, rng.normal_vec(3)) == lin.weight);
  lin.residual_skip = true;
  CHECK(max_abs_diff(jacobian(lin, rng.normal_vec(3)), lin.weight + Mat64::identity(3)) == 0.0);

  for (bool skip : {false, true}) {
    const Layer l = random_layer(rng, 4, 4, Activation::tanh, skip);
    const Vec64 x = rng.normal_vec(4);
    const Mat64 fd = oracle::central_jacobian([&](const Vec64& y) { return apply(l, y); }, x, 1e-6);
    CHECK(oracle::rel_err(jacobian(l, x), fd) < 1e-6);
  }

  Layer relu = random_layer(rng, 3, 3, Activation::relu);
  for (auto& b : relu.bias) b = -100.0;
  CHECK(jacobian(relu, rng.normal_vec(3)) == Mat64(3, 3));
  relu.residual_skip = true;
  CHECK(jacobian(relu, rng.normal_vec(3)) == Mat64::identity(3));
}

TEST_CASE("vjp agrees with the dense jacobian") {
  SeededRng rng(3);
  for (Activation a : {Activation::identity, Activation::tanh, Activation::relu, Activation::softplus}) {
    const Layer l = random_layer(rng, 5, 3, a);
    const Vec64 x = rng.normal_vec(5), w = rng.normal_vec(3);
    CHECK(max_abs_diff(vjp(l, x, w), matvec_t(jacobian(l, x), w)) < 1e-12);
    CHECK(vjp(l, x, Vec64(3)) == Vec64(5));
  }
  const Layer id = random_layer(rng, 3, 2, Activation::identity);
  const Vec64 w{1.0, -2.0};
  CHECK(max_abs_diff(vjp(id, Vec64(3), w), id.weight.transpose() * w) < 1e-15);
}

TEST_CASE("hessian norm bound") {
  SeededRng rng(4);
  CHECK(hessian_norm_bound(random_layer(rng, 3, 3, Activation::identity)) == 0.0);
  CHECK(hessian_norm_bound(random_layer(rng, 3, 3, Activation::relu)) == 0.0);
  const Layer l = random_layer(rng, 4, 4, Activation::tanh);
  const double bound = hessian_norm_bound(l);
  const double h = 1e-4;
  for (int probe = 0; probe < 100; ++probe) {
    const Vec64 x = rng.normal_vec(4);
    const Vec64 dir = rng.unit_vec(4);
    const Vec64 second = (1.0 / (h * h)) * (apply(l, x + h * dir) - 2.0 * apply(l, x) + apply(l, x - h * dir));
    CHECK(norm2(second) <= bound * (1.0 + 1e-3));
  }
}

TEST_CASE("net backward matches finite differences") {
  SeededRng rng(5);
  DynamicalNet net;
  net.layers = {random_layer(rng, 3, 4, Activation::tanh), random_layer(rng, 4, 4, Activation::softplus, true)};
  net.head = random_layer(rng, 4, 2, Activation::identity);
  const Vec64 x = rng.normal_vec(3), w = rng.normal_vec(2);
  const auto f = [&](const Vec64& y) { return dot(w, net_output(net, y)); };
  const auto g = net_backward(net, x, w);
  CHECK(oracle::rel_err(g.input, oracle::central_diff(f, x, 1e-6)) < 1e-7);
  CHECK(max_abs_diff(net_vjp(net, x, w), g.input) < 1e-12);

  // weight gradient of the first layer, one entry
  DynamicalNet bumped = net;
  const double h = 1e-6;
  bumped.layers[0].weight(1, 2) += h;
  const double up = dot(w, net_output(bumped, x));
  bumped.layers[0].weight(1, 2) -= 2 * h;
  const double down = dot(w, net_output(bumped, x));
  CHECK(std::abs(g.layers[0].weight(1, 2) - (up - down) / (2 * h)) < 1e-7);
}

TEST_CASE("dual numbers carry directional derivatives") {
  const Dual x(0.3, 1.0);
  const Dual y = tanh(x) * exp(x) + log1p(x) / sqrt(x + 1.0);
  const auto f = [](double v) { return std::tanh(v) * std::exp(v) + std::log1p(v) / std::sqrt(v + 1.0); };
  CHECK(y.v == doctest::Approx(f(0.3)));
  CHECK(y.d == doctest::Approx((f(0.3 + 1e-6) - f(0.3 - 1e-6)) / 2e-6).epsilon(1e-7));
}

TEST_CASE("activations") {
  for (Activation a : {Activation::tanh, Activation::softplus}) {
    for (double z : {-3.0, -0.2, 0.0, 0.7, 40.0}) {
      const double fd = (activation_value(a, z + 1e-6) - activation_value(a, z - 1e-6)) / 2e-6;
      CHECK(activation_deriv(a, z) == doctest::Approx(fd).epsilon(1e-6));
    }
  }
  CHECK(activation_value(Activation::softplus, 800.0) == doctest::Approx(800.0));
  CHECK(activation_deriv(Activation::relu, 0.0) == 0.0);
  CHECK(parse_activation(activation_name(Activation::softplus)) == Activation::softplus);
  CHECK_THROWS(parse_activation("sigmoid"));
  CHECK(argmax(Vec64{1.0, 3.0, 3.0}) == 1);
}

TEST_CASE("cross entropy") {
  const auto u = cross_entropy(Vec64{0.5, 0.5, 0.5, 0.5}, 2);
  CHECK(u.loss == doctest::Approx(std::log(4.0)).epsilon(1e-14));
  CHECK(cross_entropy(Vec64{50.0, 0.0}, 0).loss < 1e-20);
  CHECK(std::isfinite(cross_entropy(Vec64{1000.0, -1000.0}, 1).loss));
  SeededRng rng(6);
  for (int t = 0; t < 10; ++t) {
    const Vec64 z = rng.normal_vec(4);
    const auto ce = cross_entropy(z, 1);
    const Vec64 fd = oracle::central_diff([](const Vec64& y) { return cross_entropy(y, 1).loss; }, z, 1e-5);
    CHECK(max_abs_diff(ce.grad, fd) < 1e-8);
  }
}

TEST_CASE("generators") {
  SyntheticSpec s;
  s.d = 6;
  s.r = 2;
  s.n_per_class = 30;
  s.seed = 11;
  const auto a = generate(s), b = generate(s);
  CHECK(a.points == b.points);
  CHECK(a.labels == b.labels);
  const Mat64 v = subspace_basis(s);
  for (const auto& x : a.points) CHECK(norm2(x - v * (v.transpose() * x)) < 1e-12);
  std::size_t ones = 0;
  for (auto l : a.labels) ones += l;
  CHECK(ones == 30);
  CHECK(a.size() == 60);

  SyntheticSpec c;
  c.kind = DatasetKind::circle;
  c.radius = 2.5;
  c.n_per_class = 20;
  for (const auto& x : generate(c).points) CHECK(std::abs(norm2(x) - 2.5) < 1e-12);

  SyntheticSpec bad;
  bad.r = 3;
  bad.d = 2;
  CHECK_THROWS(bad.validate());
  CHECK(parse_dataset_kind(dataset_kind_name(DatasetKind::two_moons_like)) == DatasetKind::two_moons_like);
}

TEST_CASE("trainer") {
  SyntheticSpec s;
  s.d = 4;
  s.r = 1;
  s.n_per_class = 40;
  s.seed = 2;
  const auto data = generate(s);
  ArchSpec arch;
  arch.widths = {4};
  TrainConfig cfg;
  cfg.epochs = 40;
  cfg.seed = 5;
  const auto r1 = train_classifier(data, arch, cfg);
  const auto r2 = train_classifier(data, arch, cfg);
  CHECK(r1.train_accuracy == 1.0);
  CHECK(r1.net.layers[0].weight == r2.net.layers[0].weight);
  CHECK(r1.net.head.weight == r2.net.head.weight);
  std::size_t non_increasing = 0;
  for (std::size_t e = 1; e < r1.epoch_loss.size(); ++e) non_increasing += r1.epoch_loss[e] <= r1.epoch_loss[e - 1];
  CHECK(non_increasing >= static_cast<std::size_t>(0.95 * (r1.epoch_loss.size() - 1)));

  LabeledDataset single;
  single.points = {Vec64{1.0, 0.0}, Vec64{0.0, 1.0}};
  single.labels = {0, 0};
  arch.widths = {2};
  CHECK(train_classifier(single, arch, cfg).train_accuracy == 1.0);

  const auto perm = shuffled_indices(10, 3, 0);
  std::vector<std::size_t> sorted = perm;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 10; ++i) CHECK(sorted[i] == i);
  CHECK(perm != shuffled_indices(10, 3, 1));
}
