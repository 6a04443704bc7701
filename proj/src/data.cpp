#include "selfheal/data.hpp"

#include <algorithm>
#include <numeric>

#include "selfheal/rng.hpp"

namespace selfheal {

std::size_t LabeledDataset::num_classes() const {
  std::size_t k = 0;
  for (auto l : labels) k = std::max(k, l + 1);
  return k;
}

void LabeledDataset::validate() const {
  if (points.size() != labels.size()) throw DimensionError("dataset: points and labels differ in length");
  if (!manifold_tags.empty() && manifold_tags.size() != points.size())
    throw DimensionError("dataset: manifold tags length mismatch");
  for (const auto& p : points) {
    if (p.size() != dim()) throw DimensionError("dataset: ragged points");
    if (!all_finite(p)) throw NumericalError("dataset: non-finite point");
  }
}

std::string dataset_kind_name(DatasetKind k) {
  switch (k) {
    case DatasetKind::subspace_two_class:
      return "subspace_two_class";
    case DatasetKind::curved_manifold_two_class:
      return "curved_manifold_two_class";
    case DatasetKind::circle:
      return "circle";
    case DatasetKind::two_moons_like:
      return "two_moons_like";
  }
  return "subspace_two_class";
}

DatasetKind parse_dataset_kind(const std::string& name) {
  if (name == "subspace_two_class") return DatasetKind::subspace_two_class;
  if (name == "curved_manifold_two_class") return DatasetKind::curved_manifold_two_class;
  if (name == "circle") return DatasetKind::circle;
  if (name == "two_moons_like") return DatasetKind::two_moons_like;
  throw ParseError("unknown dataset kind '" + name + "'");
}

void SyntheticSpec::validate() const {
  if (d < 2) throw Error("synthetic spec: d must be at least 2");
  if (r < 1 || r >= d) throw Error("synthetic spec: need 1 <= r < d");
  if (n_per_class < 2) throw Error("synthetic spec: need at least 2 points per class");
  if (noise < 0.0) throw Error("synthetic spec: negative noise");
  if (kind == DatasetKind::curved_manifold_two_class && r + 1 > d)
    throw Error("synthetic spec: curved kind needs r + 1 <= d");
  if (basis.rows() != 0) {
    if (basis.rows() != d || basis.cols() != r) throw DimensionError("synthetic spec: basis must be d x r");
    if (max_abs_diff(basis.transpose() * basis, Mat64::identity(r)) > 1e-10)
      throw Error("synthetic spec: basis columns not orthonormal");
  }
}

Mat64 subspace_basis(const SyntheticSpec& spec) {
  if (spec.basis.rows() != 0) return spec.basis;
  SeededRng rng(sub_seed(spec.seed, 1));
  return rng.orthonormal_basis(spec.d, spec.r);
}

namespace {

// Intrinsic coordinates: s_1 sets the class, the rest fill a box.
Vec64 intrinsic_sample(SeededRng& rng, const SyntheticSpec& spec, std::size_t cls) {
  Vec64 s(spec.r);
  const double mag = spec.gap / 2.0 + spec.spread * rng.uniform();
  s[0] = cls == 0 ? -mag : mag;
  for (std::size_t i = 1; i < spec.r; ++i) s[i] = rng.uniform(-spec.spread, spec.spread);
  return s;
}

void add_noise(SeededRng& rng, Vec64& x, double noise) {
  if (noise == 0.0) return;
  for (auto& v : x) v += noise * rng.normal();
}

}  // namespace

LabeledDataset generate(const SyntheticSpec& spec) {
  spec.validate();
  LabeledDataset out;
  SeededRng rng(sub_seed(spec.seed, 2));
  const std::size_t n = spec.n_per_class;
  switch (spec.kind) {
    case DatasetKind::subspace_two_class: {
      const Mat64 v = subspace_basis(spec);
      for (std::size_t cls = 0; cls < 2; ++cls) {
        for (std::size_t i = 0; i < n; ++i) {
          Vec64 x = v * intrinsic_sample(rng, spec, cls);
          add_noise(rng, x, spec.noise);
          out.points.push_back(std::move(x));
          out.labels.push_back(cls);
          out.manifold_tags.push_back(static_cast<int>(cls));
        }
      }
      break;
    }
    case DatasetKind::curved_manifold_two_class: {
      // graph of height = curvature * |s|^2 over an r-dim chart, rotated into R^d
      SeededRng rot_rng(sub_seed(spec.seed, 1));
      const Mat64 rot = rot_rng.orthogonal(spec.d);
      for (std::size_t cls = 0; cls < 2; ++cls) {
        for (std::size_t i = 0; i < n; ++i) {
          const Vec64 s = intrinsic_sample(rng, spec, cls);
          Vec64 local(spec.d);
          for (std::size_t k = 0; k < spec.r; ++k) local[k] = s[k];
          local[spec.r] = spec.curvature * squared_norm(s);
          Vec64 x = rot * local;
          add_noise(rng, x, spec.noise);
          out.points.push_back(std::move(x));
          out.labels.push_back(cls);
          out.manifold_tags.push_back(static_cast<int>(cls));
        }
      }
      break;
    }
    case DatasetKind::circle: {
      const double phase = 2.0 * M_PI * rng.uniform();
      const std::size_t total = 2 * n;
      for (std::size_t i = 0; i < total; ++i) {
        const double angle = phase + 2.0 * M_PI * static_cast<double>(i) / static_cast<double>(total);
        Vec64 x(spec.d);
        x[0] = spec.radius * std::cos(angle);
        x[1] = spec.radius * std::sin(angle);
        add_noise(rng, x, spec.noise);
        out.points.push_back(std::move(x));
        out.labels.push_back(i < n ? 0 : 1);
        out.manifold_tags.push_back(0);
      }
      break;
    }
    case DatasetKind::two_moons_like: {
      for (std::size_t cls = 0; cls < 2; ++cls) {
        for (std::size_t i = 0; i < n; ++i) {
          const double t = M_PI * rng.uniform();
          Vec64 x(spec.d);
          if (cls == 0) {
            x[0] = std::cos(t);
            x[1] = std::sin(t);
          } else {
            x[0] = 1.0 - std::cos(t);
            x[1] = 0.5 - std::sin(t);
          }
          add_noise(rng, x, spec.noise);
          out.points.push_back(std::move(x));
          out.labels.push_back(cls);
          out.manifold_tags.push_back(static_cast<int>(cls));
        }
      }
      break;
    }
  }
  return out;
}

CrossEntropy cross_entropy(const Vec64& logits, std::size_t label) {
  if (label >= logits.size()) throw DimensionError("cross_entropy: label out of range");
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  CrossEntropy out{lse - logits[label], Vec64(logits.size())};
  for (std::size_t i = 0; i < logits.size(); ++i) out.grad[i] = std::exp(logits[i] - lse);
  out.grad[label] -= 1.0;
  return out;
}

void TrainConfig::validate() const {
  if (epochs < 1 || batch_size < 1) throw Error("train config: epochs and batch size must be positive");
  if (!(learning_rate > 0.0)) throw Error("train config: learning rate must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw Error("train config: momentum must be in [0, 1)");
}

DynamicalNet init_net(const ArchSpec& arch, std::size_t input_dim, std::uint64_t seed) {
  if (arch.widths.empty()) throw Error("architecture needs at least one layer");
  SeededRng rng(sub_seed(seed, 3));
  DynamicalNet net;
  std::size_t in = input_dim;
  for (std::size_t w : arch.widths) {
    Layer layer;
    layer.weight = rng.normal_mat(w, in, 1.0 / std::sqrt(static_cast<double>(in)));
    layer.bias = Vec64(w);
    layer.activation = arch.activation;
    layer.residual_skip = arch.residual_skip && w == in;
    if (layer.residual_skip) layer.weight *= 0.5;
    net.layers.push_back(std::move(layer));
    in = w;
  }
  net.head.weight = rng.normal_mat(arch.classes, in, 1.0 / std::sqrt(static_cast<double>(in)));
  net.head.bias = Vec64(arch.classes);
  net.validate();
  return net;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  SeededRng rng(sub_seed(seed, 1000 + epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  return idx;
}

double accuracy(const DynamicalNet& net, const LabeledDataset& data) {
  if (data.size() == 0) return 1.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i) hits += predict(net, data.points[i]) == data.labels[i];
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

namespace {

struct Velocity {
  std::vector<Mat64> weight;
  std::vector<Vec64> bias;
};

std::vector<Layer*> all_layers(DynamicalNet& net) {
  std::vector<Layer*> out;
  for (auto& l : net.layers) out.push_back(&l);
  out.push_back(&net.head);
  return out;
}

}  // namespace

TrainResult train_net(DynamicalNet net, const LabeledDataset& data, const TrainConfig& cfg) {
  cfg.validate();
  data.validate();
  net.validate();
  if (data.dim() != net.input_dim()) throw DimensionError("train: data dim does not match network input");
  for (auto l : data.labels)
    if (l >= net.num_classes()) throw DimensionError("train: label exceeds head width");
  auto layers = all_layers(net);
  Velocity vel;
  for (auto* l : layers) {
    vel.weight.emplace_back(l->weight.rows(), l->weight.cols());
    vel.bias.emplace_back(l->bias.size());
  }
  TrainResult result;
  const std::size_t n = data.size();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffled_indices(n, cfg.seed, epoch);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t stop = std::min(n, start + cfg.batch_size);
      std::vector<Mat64> gw;
      std::vector<Vec64> gb;
      for (auto* l : layers) {
        gw.emplace_back(l->weight.rows(), l->weight.cols());
        gb.emplace_back(l->bias.size());
      }
      for (std::size_t k = start; k < stop; ++k) {
        const std::size_t i = order[k];
        const auto ce = cross_entropy(logits(net, data.points[i]), data.labels[i]);
        epoch_loss += ce.loss;
        const auto grads = net_backward(net, data.points[i], ce.grad);
        for (std::size_t j = 0; j < net.depth(); ++j) {
          gw[j] += grads.layers[j].weight;
          gb[j] += grads.layers[j].bias;
        }
        gw.back() += grads.head.weight;
        gb.back() += grads.head.bias;
      }
      const double scale = cfg.learning_rate / static_cast<double>(stop - start);
      for (std::size_t j = 0; j < layers.size(); ++j) {
        vel.weight[j] *= cfg.momentum;
        vel.weight[j] -= scale * gw[j];
        vel.bias[j] *= cfg.momentum;
        vel.bias[j] -= scale * gb[j];
        layers[j]->weight += vel.weight[j];
        layers[j]->bias += vel.bias[j];
      }
    }
    epoch_loss /= static_cast<double>(n);
    if (!std::isfinite(epoch_loss)) throw NumericalError("train: loss diverged at epoch " + std::to_string(epoch));
    result.epoch_loss.push_back(epoch_loss);
  }
  result.train_accuracy = accuracy(net, data);
  result.net = std::move(net);
  return result;
}

TrainResult train_classifier(const LabeledDataset& data, const ArchSpec& arch, const TrainConfig& cfg) {
  return train_net(init_net(arch, data.dim(), cfg.seed), data, cfg);
}

}  // namespace selfheal
