#pragma once

// FGSM and PGD under l1/l2/linf balls, against bare models (oblivious) or
// through the fully unrolled control solver (white-box).

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "selfheal/control.hpp"
#include "selfheal/data.hpp"
#include "selfheal/dynamics.hpp"

namespace selfheal {

struct LossGrad {
  double loss = 0.0;
  Vec64 grad;  // d loss / d input
};

/// A classifier whose cross-entropy can be differentiated in its input.
class Model {
 public:
  virtual ~Model() = default;
  virtual std::size_t input_dim() const = 0;
  virtual Vec64 logits(const Vec64& x) const = 0;
  virtual LossGrad loss_grad(const Vec64& x, std::size_t label) const = 0;
  std::size_t predict(const Vec64& x) const { return argmax(logits(x)); }
};

class NetModel : public Model {
 public:
  explicit NetModel(DynamicalNet net);
  std::size_t input_dim() const override { return net_.input_dim(); }
  Vec64 logits(const Vec64& x) const override;
  LossGrad loss_grad(const Vec64& x, std::size_t label) const override;
  const DynamicalNet& net() const { return net_; }

 private:
  DynamicalNet net_;
};

/// logits = W x + b
class AffineClassifier : public Model {
 public:
  AffineClassifier(Mat64 weight, Vec64 bias);
  std::size_t input_dim() const override { return weight_.cols(); }
  Vec64 logits(const Vec64& x) const override;
  LossGrad loss_grad(const Vec64& x, std::size_t label) const override;
  const Mat64& weight() const { return weight_; }
  const Vec64& bias() const { return bias_; }

 private:
  Mat64 weight_;
  Vec64 bias_;
};

/// Head logits of the controlled trajectory. Gradients run forward-mode duals
/// through every greedy, outer and inner solver step (one pass per input coordinate).
class ControlledModel : public Model {
 public:
  ControlledModel(DynamicalNet net, ControlObjective objective, PmpConfig cfg);
  std::size_t input_dim() const override { return net_.input_dim(); }
  Vec64 logits(const Vec64& x) const override;
  LossGrad loss_grad(const Vec64& x, std::size_t label) const override;
  /// Layer evaluations spent by one loss_grad call.
  std::size_t unrolled_cost() const;
  const DynamicalNet& net() const { return net_; }
  const ControlObjective& objective() const { return objective_; }
  const PmpConfig& config() const { return cfg_; }

 private:
  DynamicalNet net_;
  ControlObjective objective_;
  PmpConfig cfg_;
};

/// Classifier applied after an embedding's projection: x -> inner(E(x)).
class ProjectedModel : public Model {
 public:
  ProjectedModel(std::shared_ptr<const Model> inner, Embedding embedding);
  std::size_t input_dim() const override { return inner_->input_dim(); }
  Vec64 logits(const Vec64& x) const override;
  LossGrad loss_grad(const Vec64& x, std::size_t label) const override;

 private:
  std::shared_ptr<const Model> inner_;
  Embedding embedding_;
};

enum class Norm { l1, l2, linf };
enum class Threat { oblivious, whitebox };

std::string norm_name(Norm n);
Norm parse_norm(const std::string& name);
double norm_of(Norm n, const Vec64& v);

struct InputBox {
  double lo = 0.0;
  double hi = 1.0;
};

struct AttackConfig {
  Norm norm = Norm::linf;
  double eps = 0.1;
  std::size_t steps = 10;
  double step_size = 0.025;
  Threat threat = Threat::oblivious;
  std::uint64_t seed = 0;
  bool random_start = true;
  std::optional<InputBox> box;
  // Cap on unrolled layer evaluations for one white-box point.
  double budget = 5e8;

  void validate() const;
};

struct AttackResult {
  std::vector<Vec64> adversarial;
  std::vector<char> success;  // 1 when the prediction differs from the label
  std::vector<std::vector<double>> loss_trace;

  double success_rate() const;
};

struct FgsmResult {
  Vec64 point;
  bool zero_gradient = false;
};

/// x + eps * sign(grad CE), clamped to the box when given.
FgsmResult fgsm(const Model& model, const Vec64& x, std::size_t label, double eps,
                const std::optional<InputBox>& box = std::nullopt);

/// Euclidean projections of a perturbation onto a centered ball.
Vec64 project_linf_ball(const Vec64& delta, double radius);
Vec64 project_l2_ball(const Vec64& delta, double radius);
Vec64 project_l1_ball(const Vec64& delta, double radius);
Vec64 project_ball(Norm n, const Vec64& delta, double radius);

/// Single-point PGD; `index` picks the random-start sub-stream.
AttackResult pgd(const Model& model, const Vec64& x, std::size_t label, const AttackConfig& cfg,
                 std::size_t index = 0);

/// PGD over a dataset, parallel over points, deterministic per point.
AttackResult pgd_batch(const Model& model, const LabeledDataset& data, const AttackConfig& cfg);

/// White-box PGD through the controlled network. Throws BudgetError when
/// steps times the unrolled cost exceeds cfg.budget.
AttackResult attack_controlled(const DynamicalNet& net, const ControlObjective& objective, const PmpConfig& pmp_cfg,
                               const Vec64& x, std::size_t label, const AttackConfig& cfg, std::size_t index = 0);

double model_accuracy(const Model& model, const std::vector<Vec64>& points, const std::vector<std::size_t>& labels);

}  // namespace selfheal
