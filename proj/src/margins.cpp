#include "selfheal/margins.hpp"

#include <algorithm>
#include <queue>
#include <sstream>

#include "selfheal/parallel.hpp"
#include "selfheal/rng.hpp"

namespace selfheal {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

MarginResult exact_affine_margin(const AffineClassifier& model, const LabeledDataset& data) {
  MarginResult best;
  best.method = "exact";
  const Mat64& w = model.weight();
  const Vec64& b = model.bias();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Vec64 z = model.logits(data.points[i]);
    const std::size_t k = argmax(z);
    for (std::size_t j = 0; j < z.size(); ++j) {
      if (j == k) continue;
      const Vec64 diff = w.row(k) - w.row(j);
      const double len = norm2(diff);
      if (len == 0.0) {
        if (b[k] == b[j]) {  // tied class everywhere: already on the boundary
          if (best.infinite || 0.0 < best.value) best = {0.0, false, i, 0, "exact"};
        }
        continue;
      }
      const double dist = std::abs(z[k] - z[j]) / len;
      if (best.infinite || dist < best.value) best = {dist, false, i, 0, "exact"};
    }
  }
  return best;
}

}  // namespace

double point_flip_radius(const Model& model, const Vec64& x, const MarginConfig& cfg, double cap) {
  const std::size_t label = model.predict(x);
  const auto flips = [&](double radius) {
    if (radius <= 0.0) return false;
    AttackConfig ac;
    ac.norm = Norm::l2;
    ac.eps = radius;
    ac.steps = cfg.pgd_steps;
    ac.step_size = 2.5 * radius / static_cast<double>(cfg.pgd_steps);
    ac.random_start = false;
    return pgd(model, x, label, ac).success.front() == 1;
  };
  double hi = std::min(cfg.initial_radius, cap);
  double lo = 0.0;
  std::size_t doublings = 0;
  while (!flips(hi)) {
    lo = hi;
    if (hi >= cap || doublings++ >= cfg.max_doublings) return kInf;
    hi = std::min(2.0 * hi, cap);
  }
  for (std::size_t s = 0; s < cfg.bisection_steps; ++s) {
    const double mid = 0.5 * (lo + hi);
    if (flips(mid)) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return hi;
}

MarginResult euclidean_margin(const Model& model, const LabeledDataset& data, const MarginConfig& cfg) {
  data.validate();
  if (const auto* affine = dynamic_cast<const AffineClassifier*>(&model)) return exact_affine_margin(*affine, data);
  MarginResult best;
  best.method = "pgd_bisection";
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double r = point_flip_radius(model, data.points[i], cfg, best.infinite ? kInf : best.value);
    if (r < best.value) {
      best.value = r;
      best.infinite = false;
      best.witness = i;
    }
  }
  return best;
}

GeodesicGraph build_knn_graph(const std::vector<Vec64>& points, std::size_t k) {
  if (k < 1) throw Error("knn graph: k must be at least 1");
  const std::size_t n = points.size();
  GeodesicGraph g;
  g.k = k;
  g.adjacency.resize(n);
  std::vector<std::vector<double>> dist(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) dist[i][j] = dist[j][i] = norm2(points[i] - points[j]);
  std::vector<std::vector<char>> linked(n, std::vector<char>(n, 0));
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::size_t> order;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) order.push_back(j);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dist[i][a] < dist[i][b]; });
    for (std::size_t m = 0; m < std::min(k, order.size()); ++m) linked[i][order[m]] = linked[order[m]][i] = 1;
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (!linked[i][j]) continue;
      g.adjacency[i].emplace_back(j, dist[i][j]);
      g.max_edge = std::max(g.max_edge, dist[i][j]);
    }
  }
  // count components
  std::vector<char> seen(n, 0);
  for (std::size_t s = 0; s < n; ++s) {
    if (seen[s]) continue;
    ++g.components;
    std::vector<std::size_t> stack{s};
    seen[s] = 1;
    while (!stack.empty()) {
      const std::size_t u = stack.back();
      stack.pop_back();
      for (const auto& [v, w] : g.adjacency[u]) {
        if (!seen[v]) {
          seen[v] = 1;
          stack.push_back(v);
        }
      }
    }
  }
  return g;
}

std::vector<double> shortest_paths(const GeodesicGraph& g, std::size_t source) {
  std::vector<double> dist(g.size(), kInf);
  using Item = std::pair<double, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  dist[source] = 0.0;
  heap.emplace(0.0, source);
  while (!heap.empty()) {
    const auto [du, u] = heap.top();
    heap.pop();
    if (du > dist[u]) continue;
    for (const auto& [v, w] : g.adjacency[u]) {
      if (du + w < dist[v]) {
        dist[v] = du + w;
        heap.emplace(dist[v], v);
      }
    }
  }
  return dist;
}

MarginResult manifold_margin(const Model& model, const LabeledDataset& data, const GeodesicGraph& g) {
  data.validate();
  if (g.size() != data.size()) throw DimensionError("manifold_margin: graph and dataset sizes differ");
  const std::size_t n = data.size();
  std::vector<std::size_t> pred(n);
  for (std::size_t i = 0; i < n; ++i) pred[i] = model.predict(data.points[i]);
  const auto dists = parallel_map<std::vector<double>>(n, [&](std::size_t i) { return shortest_paths(g, i); });
  MarginResult best;
  best.method = "knn_dijkstra";
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (pred[i] == pred[j] || !std::isfinite(dists[i][j])) continue;
      const double m = 0.5 * dists[i][j];
      if (best.infinite || m < best.value) best = {m, false, i, j, "knn_dijkstra"};
    }
  }
  return best;
}

MarginResult projection_margin(std::shared_ptr<const Model> model, const Embedding& embedding,
                               const LabeledDataset& data, const MarginConfig& cfg) {
  const auto* affine = dynamic_cast<const AffineClassifier*>(model.get());
  const auto* lin = std::get_if<LinearSubspaceEmbedding>(&embedding);
  if (affine && lin) {
    // W (mean + P (x - mean)) + b is again affine
    const Mat64 p = lin->basis * lin->basis.transpose();
    const Mat64 w = affine->weight() * p;
    const Vec64 b = affine->weight() * (lin->mean - p * lin->mean) + affine->bias();
    return euclidean_margin(AffineClassifier(w, b), data, cfg);
  }
  return euclidean_margin(ProjectedModel(std::move(model), embedding), data, cfg);
}

Prop1Estimate prop1_monte_carlo(std::size_t r, std::size_t d, std::size_t n_samples, std::uint64_t seed) {
  if (r < 1 || r > d) throw DimensionError("prop1: need 1 <= r <= d");
  if (n_samples < 1000) throw Error("prop1: need at least 1000 samples");
  // fixed partition of the sample stream, independent of the thread count
  constexpr std::size_t kChunks = 16;
  struct Sums {
    double s = 0.0, s2 = 0.0, q = 0.0, q2 = 0.0;
  };
  const auto sums = parallel_map<Sums>(kChunks, [&](std::size_t c) {
    const std::size_t begin = n_samples * c / kChunks;
    const std::size_t end = n_samples * (c + 1) / kChunks;
    SeededRng rng(sub_seed(seed, c));
    Sums acc;
    for (std::size_t i = begin; i < end; ++i) {
      const Vec64 n = rng.unit_vec(d);
      double inside = 0.0;
      for (std::size_t k = 0; k < r; ++k) inside += n[k] * n[k];
      const double sin_theta = std::sqrt(inside);
      acc.s += sin_theta;
      acc.s2 += sin_theta * sin_theta;
      acc.q += inside;
      acc.q2 += inside * inside;
    }
    return acc;
  });
  Sums total;
  for (const auto& s : sums) {
    total.s += s.s;
    total.s2 += s.s2;
    total.q += s.q;
    total.q2 += s.q2;
  }
  const double n = static_cast<double>(n_samples);
  Prop1Estimate est;
  est.r = r;
  est.d = d;
  est.samples = n_samples;
  est.mean_sin = total.s / n;
  est.mean_sin2 = total.q / n;
  const double var_sin = std::max(0.0, total.s2 / n - est.mean_sin * est.mean_sin) * n / (n - 1.0);
  const double var_sin2 = std::max(0.0, total.q2 / n - est.mean_sin2 * est.mean_sin2) * n / (n - 1.0);
  est.se_sin = std::sqrt(var_sin / n);
  est.se_sin2 = std::sqrt(var_sin2 / n);
  est.bound = std::sqrt(static_cast<double>(r) / static_cast<double>(d));
  return est;
}

DynamicalNet fig2_network(const Vec64& normal) {
  DynamicalNet net;
  Layer id;
  id.weight = Mat64::identity(2);
  id.bias = Vec64(2);
  net.layers.push_back(id);
  net.head.weight = Mat64{{0.0, 0.0}, {normal[0], normal[1]}};
  net.head.bias = Vec64(2);
  net.validate();
  return net;
}

Fig2Record fig2_toy(std::uint64_t seed) {
  Fig2Record rec;
  const double s = 1.0 / std::sqrt(2.0);
  rec.direction = Vec64{s, s};
  // Boundary nearly perpendicular to the data line, tilted by a small angle:
  // clean margins are |t| sin(tilt) <= 0.15 while an linf step of 0.5 moves
  // the score by 0.5 |normal|_1 ~ 0.71, and the projection discards all of
  // the step's off-line component (|vᵀδ| <= 0.5 sqrt(2) < 1 = smallest |t|).
  const double tilt = 0.05;
  const Vec64 across{-s, s};
  rec.normal = std::cos(tilt) * across + std::sin(tilt) * rec.direction;
  rec.eps = 0.5;

  SyntheticSpec spec;
  spec.kind = DatasetKind::subspace_two_class;
  spec.d = 2;
  spec.r = 1;
  spec.n_per_class = 50;
  spec.gap = 2.0;
  spec.spread = 2.0;
  spec.seed = seed;
  spec.basis = Mat64::from_columns({rec.direction});
  rec.data = generate(spec);

  const DynamicalNet net = fig2_network(rec.normal);
  const NetModel bare(net);
  LinearSubspaceEmbedding line;
  line.mean = Vec64(2);
  line.basis = spec.basis;
  ControlObjective obj;
  obj.c = 0.0;
  obj.embeddings = {Embedding(line)};
  PmpConfig pmp;
  pmp.c = 0.0;
  const ControlledModel controlled(net, obj, pmp);

  std::vector<Vec64> fgsm_points;
  for (std::size_t i = 0; i < rec.data.size(); ++i)
    fgsm_points.push_back(fgsm(bare, rec.data.points[i], rec.data.labels[i], rec.eps).point);
  AttackConfig ac;
  ac.norm = Norm::linf;
  ac.eps = rec.eps;
  ac.steps = 20;
  ac.step_size = rec.eps / 4.0;
  ac.seed = seed;
  const auto pgd_res = pgd_batch(bare, rec.data, ac);

  rec.clean_accuracy = model_accuracy(bare, rec.data.points, rec.data.labels);
  rec.fgsm_accuracy = model_accuracy(bare, fgsm_points, rec.data.labels);
  rec.pgd_accuracy = model_accuracy(bare, pgd_res.adversarial, rec.data.labels);
  rec.controlled_clean_accuracy = model_accuracy(controlled, rec.data.points, rec.data.labels);
  rec.controlled_fgsm_accuracy = model_accuracy(controlled, fgsm_points, rec.data.labels);
  rec.controlled_pgd_accuracy = model_accuracy(controlled, pgd_res.adversarial, rec.data.labels);

  const auto affine = std::make_shared<AffineClassifier>(net.head.weight, net.head.bias);
  rec.euclidean_margin = euclidean_margin(*affine, rec.data).value;
  rec.projection_margin = projection_margin(affine, obj.embeddings[0], rec.data).value;

  std::ostringstream csv;
  csv << "x1,x2,loss\n";
  const int steps = 40;
  for (int i = 0; i <= steps; ++i) {
    for (int j = 0; j <= steps; ++j) {
      const Vec64 x{-4.0 + 8.0 * i / steps, -4.0 + 8.0 * j / steps};
      const double loss = running_loss(obj.embeddings[0], x, Vec64(2), 0.0);
      csv << format_double(x[0]) << ',' << format_double(x[1]) << ',' << format_double(loss) << '\n';
    }
  }
  rec.grid_csv = csv.str();
  return rec;
}

}  // namespace selfheal
