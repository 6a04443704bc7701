#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "selfheal/margins.hpp"
#include "selfheal/rng.hpp"

using namespace selfheal;

namespace {

// predicts class 1 when wᵀx + b > 0
std::shared_ptr<AffineClassifier> halfplane(const Vec64& w, double b) {
  Mat64 m(2, w.size());
  for (std::size_t i = 0; i < w.size(); ++i) m(1, i) = w[i];
  return std::make_shared<AffineClassifier>(m, Vec64{0.0, b});
}

LabeledDataset labeled(const std::vector<Vec64>& pts, const Model& m) {
  LabeledDataset d;
  d.points = pts;
  for (const auto& p : pts) d.labels.push_back(m.predict(p));
  return d;
}

}  // namespace

TEST_CASE("euclidean margin of an affine classifier") {
  const auto clf = halfplane(Vec64{1.0, 0.0}, 0.0);
  const auto data = labeled({Vec64{2.0, 0.0}, Vec64{-2.0, 0.0}, Vec64{3.0, 1.0}, Vec64{-3.0, 1.0}}, *clf);
  const auto m = euclidean_margin(*clf, data);
  CHECK(m.value == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(m.method == "exact");
  CHECK(std::abs(data.points[m.witness][0]) == 2.0);
  const auto on = labeled({Vec64{0.0, 1.0}, Vec64{0.0, -3.0}}, *clf);
  CHECK(euclidean_margin(*clf, on).value == 0.0);
}

TEST_CASE("euclidean margin of a tanh net against a radial grid search") {
  SyntheticSpec s;
  s.kind = DatasetKind::two_moons_like;
  s.n_per_class = 15;
  s.noise = 0.05;
  s.seed = 1;
  const auto data = generate(s);
  ArchSpec arch;
  arch.widths = {8};
  TrainConfig tc;
  tc.epochs = 200;
  tc.seed = 2;
  const NetModel model(train_classifier(data, arch, tc).net);
  const auto est = euclidean_margin(model, data);

  double grid = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t label = model.predict(data.points[i]);
    for (int a = 0; a < 720; ++a) {
      const double th = 2.0 * M_PI * a / 720.0;
      const Vec64 dir{std::cos(th), std::sin(th)};
      for (double r = 0.0; r < std::min(grid, 3.0); r += 0.001) {
        if (model.predict(data.points[i] + r * dir) != label) {
          grid = std::min(grid, r);
          break;
        }
      }
    }
  }
  REQUIRE(std::isfinite(grid));
  CHECK(std::abs(est.value - grid) <= 0.05 * grid);
}

TEST_CASE("knn graph and geodesic margin") {
  const auto clf = halfplane(Vec64{1.0, 0.0}, -1.5);
  const std::vector<Vec64> chain{Vec64{0.0, 0.0}, Vec64{1.0, 0.0}, Vec64{2.0, 0.0}, Vec64{3.0, 0.0}};
  const auto data = labeled(chain, *clf);
  const auto g = build_knn_graph(chain, 1);
  CHECK(g.components == 1);
  CHECK(g.max_edge == 1.0);
  for (std::size_t i = 0; i < g.size(); ++i)
    for (const auto& [j, w] : g.adjacency[i]) {
      bool back = false;
      for (const auto& [k, w2] : g.adjacency[j]) back |= (k == i && w2 == w);
      CHECK(back);
    }
  const auto m = manifold_margin(*clf, data, g);
  CHECK(m.value == 0.5);
  CHECK(((m.witness == 1 && m.witness_b == 2) || (m.witness == 2 && m.witness_b == 1)));
  CHECK(shortest_paths(g, 0)[3] == 3.0);

  const auto same = halfplane(Vec64{1.0, 0.0}, 10.0);
  CHECK(manifold_margin(*same, labeled(chain, *same), g).infinite);

  // circle split by a line through the centre: exact answer is half the arc across the cut
  SyntheticSpec c;
  c.kind = DatasetKind::circle;
  c.radius = 1.0;
  c.n_per_class = 60;
  c.seed = 4;
  const auto circle = generate(c);
  const auto cut = halfplane(Vec64{1.0, 0.2}, 0.0);
  const auto lab = labeled(circle.points, *cut);
  const auto cg = build_knn_graph(lab.points, 4);
  double exact = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < lab.size(); ++i)
    for (std::size_t j = 0; j < lab.size(); ++j)
      if (lab.labels[i] != lab.labels[j]) {
        const double cosang = std::clamp(dot(lab.points[i], lab.points[j]), -1.0, 1.0);
        exact = std::min(exact, 0.5 * std::acos(cosang));
      }
  CHECK(std::abs(manifold_margin(*cut, lab, cg).value - exact) <= 2.0 * cg.max_edge);
}

TEST_CASE("projection margin") {
  const auto clf = halfplane(Vec64{1.0, 1.0}, 0.0);
  const auto data = labeled({Vec64{1.0, 2.0}, Vec64{-1.0, -0.5}, Vec64{3.0, -1.0}}, *clf);
  LinearSubspaceEmbedding id;
  id.mean = Vec64(2);
  id.basis = Mat64::identity(2);
  CHECK(projection_margin(clf, Embedding(id), data).value == euclidean_margin(*clf, data).value);

  const auto rec = fig2_toy(0);
  CHECK(rec.projection_margin > rec.euclidean_margin);

  // an autoencoder whose decoder ignores its code maps everything to one point
  AutoencoderEmbedding collapse;
  Layer enc;
  enc.weight = Mat64{{1.0, 0.0}};
  enc.bias = Vec64(1);
  collapse.encoder.layers = {enc};
  collapse.encoder.head = Layer{Mat64{{1.0}}, Vec64(1), Activation::identity, false};
  Layer dec;
  dec.weight = Mat64(2, 1);
  dec.bias = Vec64{1.0, 1.0};
  collapse.decoder.layers = {dec};
  collapse.decoder.head = Layer{Mat64::identity(2), Vec64(2), Activation::identity, false};
  CHECK(projection_margin(clf, Embedding(collapse), data).infinite);
}

TEST_CASE("random-boundary margin ratio") {
  const auto full = prop1_monte_carlo(3, 3, 2000, 1);
  CHECK(full.mean_sin == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(full.bound == 1.0);
  const auto e = prop1_monte_carlo(1, 2, 100000, 7);
  CHECK(std::abs(e.mean_sin - 2.0 / M_PI) < 0.005);
  CHECK(e.bound == doctest::Approx(std::sqrt(0.5)));
  const auto f = prop1_monte_carlo(5, 50, 100000, 7);
  CHECK(std::abs(f.mean_sin2 - 0.1) <= 3.0 * f.se_sin2);
  CHECK(prop1_monte_carlo(2, 10, 5000, 3).mean_sin == prop1_monte_carlo(2, 10, 5000, 3).mean_sin);
  CHECK_THROWS(prop1_monte_carlo(3, 2, 5000, 1));
}

TEST_CASE("two-cluster subspace toy") {
  const auto rec = fig2_toy(0);
  CHECK(rec.clean_accuracy == 1.0);
  CHECK(rec.fgsm_accuracy == 0.0);
  CHECK(rec.controlled_fgsm_accuracy == 1.0);
  CHECK(rec.controlled_clean_accuracy == 1.0);
  CHECK(rec.grid_csv.rfind("x1,x2,loss\n", 0) == 0);
}

TEST_CASE("bisection estimate agrees with the exact affine margin") {
  SeededRng rng(12);
  for (int trial = 0; trial < 5; ++trial) {
    const Vec64 w = rng.normal_vec(2);
    const auto clf = halfplane(w, rng.normal());
    std::vector<Vec64> pts;
    for (int i = 0; i < 10; ++i) pts.push_back(2.0 * rng.normal_vec(2));
    const auto data = labeled(pts, *clf);
    const double exact = euclidean_margin(*clf, data).value;
    double estimate = std::numeric_limits<double>::infinity();
    for (const auto& p : pts) estimate = std::min(estimate, point_flip_radius(*clf, p, MarginConfig{}));
    CHECK(std::abs(estimate - exact) <= 0.02 * exact + 1e-9);
  }
}

TEST_CASE("refining the circle graph moves the geodesic margin by at most the spacing bound") {
  const auto cut = halfplane(Vec64{1.0, 0.2}, 0.0);
  auto margin_at = [&](std::size_t n, double& spacing) {
    SyntheticSpec c;
    c.kind = DatasetKind::circle;
    c.n_per_class = n;
    c.seed = 4;
    const auto lab = labeled(generate(c).points, *cut);
    const auto g = build_knn_graph(lab.points, 4);
    spacing = g.max_edge;
    return manifold_margin(*cut, lab, g).value;
  };
  double coarse_spacing = 0.0, fine_spacing = 0.0;
  const double coarse = margin_at(60, coarse_spacing);
  const double fine = margin_at(120, fine_spacing);
  CHECK(fine <= coarse + 2.0 * coarse_spacing);
  CHECK(fine_spacing <= coarse_spacing);
}
