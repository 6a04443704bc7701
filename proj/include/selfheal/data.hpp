#pragma once

// Synthetic labeled datasets and a deterministic momentum-SGD trainer.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "selfheal/dynamics.hpp"
#include "selfheal/numerics.hpp"

namespace selfheal {

struct LabeledDataset {
  std::vector<Vec64> points;
  std::vector<std::size_t> labels;
  std::vector<int> manifold_tags;  // empty or one per point

  std::size_t size() const { return points.size(); }
  std::size_t dim() const { return points.empty() ? 0 : points.front().size(); }
  std::size_t num_classes() const;
  void validate() const;
};

enum class DatasetKind { subspace_two_class, curved_manifold_two_class, circle, two_moons_like };

std::string dataset_kind_name(DatasetKind k);
DatasetKind parse_dataset_kind(const std::string& name);

struct SyntheticSpec {
  DatasetKind kind = DatasetKind::subspace_two_class;
  std::size_t d = 2;
  std::size_t r = 1;
  std::size_t n_per_class = 50;
  double noise = 0.0;
  std::uint64_t seed = 0;
  // Subspace and curved kinds: classes sit at intrinsic coordinate
  // s_1 in +-[gap/2, gap/2 + spread]; other intrinsic coordinates in [-spread, spread].
  double gap = 2.0;
  double spread = 2.0;
  double curvature = 0.5;  // curved kind: height = curvature * |s|^2
  double radius = 1.0;     // circle kind
  // Subspace kind: explicit d x r orthonormal basis; random when empty.
  Mat64 basis;

  void validate() const;
};

/// Deterministic in spec. The subspace kind has mean 0 and tags points by the
/// half-space (0 for negative s_1, 1 for positive); other kinds tag by class.
LabeledDataset generate(const SyntheticSpec& spec);

/// Basis actually used by generate() for the subspace kind.
Mat64 subspace_basis(const SyntheticSpec& spec);

struct CrossEntropy {
  double loss = 0.0;
  Vec64 grad;  // d loss / d logits
};

CrossEntropy cross_entropy(const Vec64& logits, std::size_t label);

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 16;
  double learning_rate = 0.05;
  double momentum = 0.9;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ArchSpec {
  std::vector<std::size_t> widths;  // output width of each hidden layer
  Activation activation = Activation::tanh;
  bool residual_skip = false;
  std::size_t classes = 2;
};

/// Gaussian init scaled by 1/sqrt(fan_in); zero biases.
DynamicalNet init_net(const ArchSpec& arch, std::size_t input_dim, std::uint64_t seed);

struct TrainResult {
  DynamicalNet net;
  double train_accuracy = 0.0;
  std::vector<double> epoch_loss;  // mean training loss per epoch
};

TrainResult train_classifier(const LabeledDataset& data, const ArchSpec& arch, const TrainConfig& cfg);

/// Continues training an existing net in place of a fresh init.
TrainResult train_net(DynamicalNet net, const LabeledDataset& data, const TrainConfig& cfg);

double accuracy(const DynamicalNet& net, const LabeledDataset& data);

/// Fresh per-epoch permutation used by the trainers (Fisher-Yates on SeededRng).
std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed, std::size_t epoch);

}  // namespace selfheal
