#include "selfheal/attacks.hpp"

#include <algorithm>
#include <functional>

#include "selfheal/parallel.hpp"
#include "selfheal/rng.hpp"

namespace selfheal {

NetModel::NetModel(DynamicalNet net) : net_(std::move(net)) { net_.validate(); }

Vec64 NetModel::logits(const Vec64& x) const { return net_output(net_, x); }

LossGrad NetModel::loss_grad(const Vec64& x, std::size_t label) const {
  const auto ce = cross_entropy(logits(x), label);
  return {ce.loss, net_vjp(net_, x, ce.grad)};
}

AffineClassifier::AffineClassifier(Mat64 weight, Vec64 bias) : weight_(std::move(weight)), bias_(std::move(bias)) {
  if (bias_.size() != weight_.rows()) throw DimensionError("affine classifier: bias length != weight rows");
}

Vec64 AffineClassifier::logits(const Vec64& x) const { return weight_ * x + bias_; }

LossGrad AffineClassifier::loss_grad(const Vec64& x, std::size_t label) const {
  const auto ce = cross_entropy(logits(x), label);
  return {ce.loss, matvec_t(weight_, ce.grad)};
}

ControlledModel::ControlledModel(DynamicalNet net, ControlObjective objective, PmpConfig cfg)
    : net_(std::move(net)), objective_(std::move(objective)), cfg_(cfg) {
  net_.validate();
  objective_.validate(net_);
  cfg_.validate();
}

Vec64 ControlledModel::logits(const Vec64& x) const {
  const auto run = run_pmp(net_, objective_, x, cfg_);
  return apply(net_.head, run.states.back());
}

std::size_t ControlledModel::unrolled_cost() const {
  const std::size_t per_layer = cfg_.greedy_only ? 2 : 2 + cfg_.max_itr * (cfg_.inner_itr + 4);
  return net_.input_dim() * net_.depth() * per_layer;
}

LossGrad ControlledModel::loss_grad(const Vec64& x, std::size_t label) const {
  const std::size_t d = x.size();
  const Vec64 z = logits(x);
  const auto ce = cross_entropy(z, label);
  LossGrad out{ce.loss, Vec64(d)};
  for (std::size_t i = 0; i < d; ++i) {
    Vector<Dual> xd(d);
    for (std::size_t k = 0; k < d; ++k) xd[k] = Dual(x[k], k == i ? 1.0 : 0.0);
    const auto run = run_pmp(net_, objective_, xd, cfg_);
    const Vector<Dual> zd = apply(net_.head, run.states.back());
    double acc = 0.0;
    for (std::size_t k = 0; k < zd.size(); ++k) acc += ce.grad[k] * zd[k].d;
    out.grad[i] = acc;
  }
  return out;
}

ProjectedModel::ProjectedModel(std::shared_ptr<const Model> inner, Embedding embedding)
    : inner_(std::move(inner)), embedding_(std::move(embedding)) {
  if (std::holds_alternative<QuadraticSubmersion>(embedding_))
    throw Error("projected model: quadratic surfaces are not supported");
  if (embedding_dim(embedding_) != inner_->input_dim()) throw DimensionError("projected model: dim mismatch");
}

Vec64 ProjectedModel::logits(const Vec64& x) const { return inner_->logits(manifold_project(embedding_, x)); }

LossGrad ProjectedModel::loss_grad(const Vec64& x, std::size_t label) const {
  // E(x) = x - f(x) for subspaces and x + f(x) for autoencoders
  auto lg = inner_->loss_grad(manifold_project(embedding_, x), label);
  const Vec64 pulled = residual_vjp(embedding_, x, lg.grad);
  lg.grad = std::holds_alternative<LinearSubspaceEmbedding>(embedding_) ? lg.grad - pulled : lg.grad + pulled;
  return lg;
}

std::string norm_name(Norm n) {
  switch (n) {
    case Norm::l1:
      return "l1";
    case Norm::l2:
      return "l2";
    case Norm::linf:
      return "linf";
  }
  return "linf";
}

Norm parse_norm(const std::string& name) {
  if (name == "l1") return Norm::l1;
  if (name == "l2") return Norm::l2;
  if (name == "linf") return Norm::linf;
  throw ParseError("unknown norm '" + name + "' (expected l1, l2 or linf)");
}

double norm_of(Norm n, const Vec64& v) {
  switch (n) {
    case Norm::l1:
      return norm1(v);
    case Norm::l2:
      return norm2(v);
    case Norm::linf:
      return norm_inf(v);
  }
  return norm_inf(v);
}

void AttackConfig::validate() const {
  if (steps < 1) throw Error("attack config: steps must be at least 1");
  if (!(eps > 0.0)) throw Error("attack config: eps must be positive");
  if (!(step_size > 0.0)) throw Error("attack config: step size must be positive");
  if (box && !(box->lo < box->hi)) throw Error("attack config: empty input box");
}

double AttackResult::success_rate() const {
  if (success.empty()) return 0.0;
  return static_cast<double>(std::count(success.begin(), success.end(), 1)) / static_cast<double>(success.size());
}

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void clamp_box(Vec64& x, const std::optional<InputBox>& box) {
  if (!box) return;
  for (auto& v : x) v = std::clamp(v, box->lo, box->hi);
}

}  // namespace

FgsmResult fgsm(const Model& model, const Vec64& x, std::size_t label, double eps,
                const std::optional<InputBox>& box) {
  if (eps < 0.0) throw Error("fgsm: eps must be nonnegative");
  const auto lg = model.loss_grad(x, label);
  FgsmResult out{x, norm_inf(lg.grad) == 0.0};
  for (std::size_t i = 0; i < x.size(); ++i) out.point[i] += eps * sign(lg.grad[i]);
  clamp_box(out.point, box);
  return out;
}

Vec64 project_linf_ball(const Vec64& delta, double radius) {
  Vec64 out = delta;
  for (auto& v : out) v = std::clamp(v, -radius, radius);
  return out;
}

Vec64 project_l2_ball(const Vec64& delta, double radius) {
  const double n = norm2(delta);
  if (n <= radius) return delta;
  return (radius / n) * delta;
}

Vec64 project_l1_ball(const Vec64& delta, double radius) {
  if (norm1(delta) <= radius) return delta;
  // project |delta| onto the simplex of the given radius by sorting
  std::vector<double> mag(delta.size());
  for (std::size_t i = 0; i < delta.size(); ++i) mag[i] = std::abs(delta[i]);
  std::vector<double> sorted = mag;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double cumsum = 0.0;
  double theta = 0.0;
  for (std::size_t k = 0; k < sorted.size(); ++k) {
    cumsum += sorted[k];
    const double t = (cumsum - radius) / static_cast<double>(k + 1);
    if (sorted[k] - t > 0.0) theta = t;
  }
  Vec64 out(delta.size());
  for (std::size_t i = 0; i < delta.size(); ++i) out[i] = sign(delta[i]) * std::max(mag[i] - theta, 0.0);
  return out;
}

Vec64 project_ball(Norm n, const Vec64& delta, double radius) {
  switch (n) {
    case Norm::l1:
      return project_l1_ball(delta, radius);
    case Norm::l2:
      return project_l2_ball(delta, radius);
    case Norm::linf:
      return project_linf_ball(delta, radius);
  }
  return delta;
}

namespace {

Vec64 random_start(Norm n, std::size_t d, double eps, SeededRng& rng) {
  switch (n) {
    case Norm::linf: {
      Vec64 v(d);
      for (auto& x : v) x = rng.uniform(-eps, eps);
      return v;
    }
    case Norm::l2: {
      const double radius = eps * std::pow(rng.uniform(), 1.0 / static_cast<double>(d));
      return radius * rng.unit_vec(d);
    }
    case Norm::l1: {
      Vec64 v(d);
      for (auto& x : v) x = rng.uniform(-eps, eps);
      return project_l1_ball(v, eps * rng.uniform());
    }
  }
  return Vec64(d);
}

Vec64 ascent_step(Norm n, const Vec64& g, double step) {
  Vec64 s(g.size());
  switch (n) {
    case Norm::linf:
      for (std::size_t i = 0; i < g.size(); ++i) s[i] = step * sign(g[i]);
      break;
    case Norm::l2: {
      const double gn = norm2(g);
      if (gn > 0.0) s = (step / gn) * g;
      break;
    }
    case Norm::l1: {
      std::size_t best = 0;
      for (std::size_t i = 1; i < g.size(); ++i)
        if (std::abs(g[i]) > std::abs(g[best])) best = i;
      s[best] = step * sign(g[best]);
      break;
    }
  }
  return s;
}

}  // namespace

AttackResult pgd(const Model& model, const Vec64& x, std::size_t label, const AttackConfig& cfg, std::size_t index) {
  cfg.validate();
  if (x.size() != model.input_dim()) throw DimensionError("pgd: input dim mismatch");
  SeededRng rng(sub_seed(cfg.seed, index));
  Vec64 adv = x;
  if (cfg.random_start) {
    adv = x + random_start(cfg.norm, x.size(), cfg.eps, rng);
    clamp_box(adv, cfg.box);
  }
  std::vector<double> trace;
  trace.reserve(cfg.steps);
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    const auto lg = model.loss_grad(adv, label);
    if (!std::isfinite(lg.loss)) throw NumericalError("pgd: non-finite loss at step " + std::to_string(s));
    adv += ascent_step(cfg.norm, lg.grad, cfg.step_size);
    adv = x + project_ball(cfg.norm, adv - x, cfg.eps);
    clamp_box(adv, cfg.box);
    trace.push_back(cross_entropy(model.logits(adv), label).loss);
  }
  AttackResult out;
  out.success.push_back(model.predict(adv) != label ? 1 : 0);
  out.adversarial.push_back(std::move(adv));
  out.loss_trace.push_back(std::move(trace));
  return out;
}

AttackResult pgd_batch(const Model& model, const LabeledDataset& data, const AttackConfig& cfg) {
  data.validate();
  auto per_point = parallel_map<AttackResult>(
      data.size(), [&](std::size_t i) { return pgd(model, data.points[i], data.labels[i], cfg, i); });
  AttackResult out;
  for (auto& r : per_point) {
    out.adversarial.push_back(std::move(r.adversarial.front()));
    out.success.push_back(r.success.front());
    out.loss_trace.push_back(std::move(r.loss_trace.front()));
  }
  return out;
}

AttackResult attack_controlled(const DynamicalNet& net, const ControlObjective& objective, const PmpConfig& pmp_cfg,
                               const Vec64& x, std::size_t label, const AttackConfig& cfg, std::size_t index) {
  if (cfg.threat != Threat::whitebox) throw Error("attack_controlled: threat must be whitebox");
  ControlledModel model(net, objective, pmp_cfg);
  const double cost = static_cast<double>(model.unrolled_cost()) * static_cast<double>(cfg.steps);
  if (cost > cfg.budget) {
    throw BudgetError("attack_controlled: " + format_double(cost) + " unrolled layer evaluations exceed budget " +
                      format_double(cfg.budget));
  }
  return pgd(model, x, label, cfg, index);
}

double model_accuracy(const Model& model, const std::vector<Vec64>& points, const std::vector<std::size_t>& labels) {
  if (points.empty()) return 1.0;
  const auto hits = parallel_map<int>(points.size(), [&](std::size_t i) {
    return model.predict(points[i]) == labels[i] ? 1 : 0;
  });
  return static_cast<double>(std::count(hits.begin(), hits.end(), 1)) / static_cast<double>(points.size());
}

}  // namespace selfheal
