#pragma once

// Euclidean, geodesic and projection margins over finite datasets, a Monte
// Carlo check of the random-boundary margin ratio, and the two-cluster toy.

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "selfheal/attacks.hpp"
#include "selfheal/data.hpp"
#include "selfheal/embedding.hpp"

namespace selfheal {

struct MarginResult {
  double value = std::numeric_limits<double>::infinity();
  bool infinite = true;       // no perturbation / pair changes the prediction
  std::size_t witness = 0;    // point index (euclidean) or first pair index (geodesic)
  std::size_t witness_b = 0;  // second pair index (geodesic only)
  std::string method;         // "exact", "pgd_bisection" or "knn_dijkstra"
};

struct MarginConfig {
  std::size_t bisection_steps = 20;
  std::size_t pgd_steps = 50;
  double initial_radius = 1.0;
  std::size_t max_doublings = 16;
};

/// Smallest l2 perturbation of any point that changes its prediction. Exact
/// for affine classifiers, otherwise an upper-bound estimate by PGD inside a
/// bisection on the radius.
MarginResult euclidean_margin(const Model& model, const LabeledDataset& data, const MarginConfig& cfg = {});

/// PGD-bisection estimate for a single point (infinity if no flip is found).
double point_flip_radius(const Model& model, const Vec64& x, const MarginConfig& cfg,
                         double cap = std::numeric_limits<double>::infinity());

struct GeodesicGraph {
  std::size_t k = 8;
  std::vector<std::vector<std::pair<std::size_t, double>>> adjacency;  // symmetric
  std::size_t components = 0;
  double max_edge = 0.0;  // longest edge, a proxy for sample spacing

  std::size_t size() const { return adjacency.size(); }
};

/// Symmetric union of k-nearest-neighbour edges (lowest index wins distance ties).
GeodesicGraph build_knn_graph(const std::vector<Vec64>& points, std::size_t k);

/// Dijkstra distances from one source.
std::vector<double> shortest_paths(const GeodesicGraph& g, std::size_t source);

/// Half the shortest graph path between two differently-predicted points.
MarginResult manifold_margin(const Model& model, const LabeledDataset& data, const GeodesicGraph& g);

/// Euclidean margin of the classifier composed with the embedding's projection.
MarginResult projection_margin(std::shared_ptr<const Model> model, const Embedding& embedding,
                               const LabeledDataset& data, const MarginConfig& cfg = {});

struct Prop1Estimate {
  std::size_t r = 0;
  std::size_t d = 0;
  std::size_t samples = 0;
  double mean_sin = 0.0;
  double se_sin = 0.0;
  double mean_sin2 = 0.0;
  double se_sin2 = 0.0;
  double bound = 0.0;  // sqrt(r / d)
};

/// Draws unit normals uniformly on the sphere and measures the length of
/// their component inside a fixed r-dim subspace.
Prop1Estimate prop1_monte_carlo(std::size_t r, std::size_t d, std::size_t n_samples, std::uint64_t seed);

struct Fig2Record {
  LabeledDataset data;
  Vec64 direction;   // the data subspace
  Vec64 normal;      // classifier normal
  double clean_accuracy = 0.0;
  double fgsm_accuracy = 0.0;
  double pgd_accuracy = 0.0;
  double controlled_clean_accuracy = 0.0;
  double controlled_fgsm_accuracy = 0.0;
  double controlled_pgd_accuracy = 0.0;
  double euclidean_margin = 0.0;
  double projection_margin = 0.0;
  double eps = 0.0;
  std::string grid_csv;  // x1,x2,loss
};

Fig2Record fig2_toy(std::uint64_t seed);

/// The toy's classifier as a one-layer identity network with a linear head.
DynamicalNet fig2_network(const Vec64& normal);

}  // namespace selfheal
