#include "selfheal/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <memory>
#include <ostream>
#include <set>
#include <sstream>

#include "selfheal/experiments.hpp"
#include "selfheal/margins.hpp"
#include "selfheal/parallel.hpp"
#include "selfheal/rng.hpp"

namespace selfheal {

namespace fs = std::filesystem;

namespace {

constexpr const char* kLibrary = "selfheal 1.0.0";

// Reads an object's fields with defaults and rejects keys nobody asked for.
class Params {
 public:
  Params(const Json& j, std::string where) : where_(std::move(where)) {
    if (j.is_null()) return;
    if (!j.is_object()) throw ParseError(where_ + ": expected an object");
    j_ = &j;
  }

  double num(const char* key, double def) {
    const Json* v = take(key);
    if (!v) return def;
    return number_from_json(*v, at(key));
  }

  double positive(const char* key, double def) {
    const double v = num(key, def);
    if (!(v > 0.0)) throw ParseError(at(key) + ": must be positive");
    return v;
  }

  std::size_t count(const char* key, std::size_t def) {
    const Json* v = take(key);
    if (!v) return def;
    if (!v->is_number_unsigned()) throw ParseError(at(key) + ": expected a nonnegative integer");
    return v->get<std::size_t>();
  }

  bool flag(const char* key, bool def) {
    const Json* v = take(key);
    if (!v) return def;
    if (!v->is_boolean()) throw ParseError(at(key) + ": expected a boolean");
    return v->get<bool>();
  }

  std::string str(const char* key, const std::string& def) {
    const Json* v = take(key);
    if (!v) return def;
    if (!v->is_string()) throw ParseError(at(key) + ": expected a string");
    return v->get<std::string>();
  }

  std::vector<double> nums(const char* key, const std::vector<double>& def) {
    const Json* v = take(key);
    if (!v) return def;
    const Vec64 x = vector_from_json(*v, at(key));
    return {x.begin(), x.end()};
  }

  std::vector<std::size_t> counts(const char* key, const std::vector<std::size_t>& def) {
    const Json* v = take(key);
    if (!v) return def;
    if (!v->is_array()) throw ParseError(at(key) + ": expected an array");
    std::vector<std::size_t> out;
    for (const auto& e : *v) {
      if (!e.is_number_unsigned()) throw ParseError(at(key) + ": expected nonnegative integers");
      out.push_back(e.get<std::size_t>());
    }
    return out;
  }

  // Null when absent.
  const Json& sub(const char* key) {
    static const Json null;
    const Json* v = take(key);
    return v ? *v : null;
  }

  std::string at(const char* key) const { return where_ + "." + key; }

  void finish() const {
    if (!j_) return;
    for (const auto& [k, v] : j_->items()) {
      if (!used_.count(k)) throw ParseError(where_ + ": unknown field '" + k + "'");
    }
  }

 private:
  const Json* take(const char* key) {
    used_.insert(key);
    if (!j_) return nullptr;
    auto it = j_->find(key);
    return it == j_->end() ? nullptr : &*it;
  }

  const Json* j_ = nullptr;
  std::string where_;
  std::set<std::string> used_;
};

SyntheticSpec parse_spec(const Json& j, const std::string& where) {
  Params p(j, where);
  SyntheticSpec s;
  s.kind = parse_dataset_kind(p.str("kind", dataset_kind_name(s.kind)));
  s.d = p.count("d", s.d);
  s.r = p.count("r", s.r);
  s.n_per_class = p.count("n_per_class", s.n_per_class);
  s.noise = p.num("noise", s.noise);
  s.gap = p.num("gap", s.gap);
  s.spread = p.num("spread", s.spread);
  s.curvature = p.num("curvature", s.curvature);
  s.radius = p.num("radius", s.radius);
  p.finish();
  try {
    s.validate();
  } catch (const Error& e) {
    throw ParseError(where + ": " + e.what());
  }
  return s;
}

TrainConfig parse_train(const Json& j, const std::string& where, TrainConfig t = {}) {
  Params p(j, where);
  t.epochs = p.count("epochs", t.epochs);
  t.batch_size = p.count("batch_size", t.batch_size);
  t.learning_rate = p.positive("learning_rate", t.learning_rate);
  t.momentum = p.num("momentum", t.momentum);
  p.finish();
  try {
    t.validate();
  } catch (const Error& e) {
    throw ParseError(where + ": " + e.what());
  }
  return t;
}

ArchSpec parse_arch(const Json& j, const std::string& where) {
  Params p(j, where);
  ArchSpec a;
  a.widths = p.counts("widths", {});
  a.activation = parse_activation(p.str("activation", activation_name(a.activation)));
  a.residual_skip = p.flag("residual_skip", a.residual_skip);
  a.classes = p.count("classes", a.classes);
  p.finish();
  if (a.widths.empty()) throw ParseError(where + ".widths: need at least one hidden layer");
  return a;
}

EmbeddingFitConfig parse_embedding_fit(Params& p, const std::string& where) {
  EmbeddingFitConfig c;
  c.kind = p.str("kind", c.kind);
  if (c.kind != "linear" && c.kind != "autoencoder")
    throw ParseError(p.at("kind") + ": expected linear or autoencoder");
  c.rank = p.count("rank", c.rank);
  Params a(p.sub("autoencoder"), where + ".autoencoder");
  auto& ac = c.autoencoder;
  ac.hidden = a.count("hidden", ac.hidden);
  ac.activation = parse_activation(a.str("activation", activation_name(ac.activation)));
  ac.ce_weight = a.num("ce_weight", ac.ce_weight);
  ac.input_noise = a.num("input_noise", ac.input_noise);
  ac.train.epochs = a.count("epochs", ac.train.epochs);
  ac.train.batch_size = a.count("batch_size", ac.train.batch_size);
  ac.train.learning_rate = a.positive("learning_rate", ac.train.learning_rate);
  ac.train.momentum = a.num("momentum", ac.train.momentum);
  a.finish();
  return c;
}

PmpConfig parse_pmp(const Json& j, const std::string& where) {
  Params p(j, where);
  PmpConfig c;
  c.max_itr = p.count("max_itr", c.max_itr);
  c.inner_itr = p.count("inner_itr", c.inner_itr);
  c.step = p.positive("step", c.step);
  c.c = p.num("c", c.c);
  c.greedy_only = p.flag("greedy_only", c.greedy_only);
  p.finish();
  try {
    c.validate();
  } catch (const Error& e) {
    throw ParseError(where + ": " + e.what());
  }
  return c;
}

std::vector<NormBudget> parse_budgets(const Json& j, const std::string& where) {
  if (j.is_null()) throw ParseError(where + ": missing attack budgets");
  if (!j.is_array() || j.empty()) throw ParseError(where + ": expected a nonempty array");
  std::vector<NormBudget> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    Params p(j[i], where + "[" + std::to_string(i) + "]");
    NormBudget b;
    b.norm = parse_norm(p.str("norm", norm_name(b.norm)));
    b.eps = p.positive("eps", b.eps);
    b.step_size = p.num("step_size", 0.0);
    p.finish();
    out.push_back(b);
  }
  return out;
}

MarginConfig parse_margin(const Json& j, const std::string& where) {
  Params p(j, where);
  MarginConfig m;
  m.bisection_steps = p.count("bisection_steps", m.bisection_steps);
  m.pgd_steps = p.count("pgd_steps", m.pgd_steps);
  m.initial_radius = p.positive("initial_radius", m.initial_radius);
  m.max_doublings = p.count("max_doublings", m.max_doublings);
  p.finish();
  return m;
}

const fs::path& need(const std::map<std::string, fs::path>& m, const char* role, const char* stage) {
  auto it = m.find(role);
  if (it == m.end()) throw Error(std::string(stage) + ": no path for '" + role + "'");
  return it->second;
}

const fs::path* maybe(const std::map<std::string, fs::path>& m, const char* role) {
  auto it = m.find(role);
  return it == m.end() ? nullptr : &it->second;
}

fs::path with_suffix(const fs::path& p, const std::string& suffix) {
  fs::path out = p;
  out.replace_filename(p.stem().string() + "_" + suffix + p.extension().string());
  return out;
}

std::string table_csv(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::string out;
  for (std::size_t i = 0; i < header.size(); ++i) out += (i ? "," : "") + header[i];
  out += "\n";
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) out += (i ? "," : "") + r[i];
    out += "\n";
  }
  return out;
}

// Mean squared residual |f_t(x_t)|^2 over the propagated training states.
std::vector<double> embedding_residuals(const DynamicalNet& net, const std::vector<Embedding>& embs,
                                        const std::vector<Vec64>& points) {
  std::vector<double> out;
  std::vector<Vec64> states = points;
  for (std::size_t t = 0; t < net.depth(); ++t) {
    double acc = 0.0;
    for (const auto& x : states) acc += squared_norm(submersion_residual(embs[t], x));
    out.push_back(points.empty() ? 0.0 : acc / static_cast<double>(points.size()));
    for (auto& x : states) x = apply(net.layers[t], x);
  }
  return out;
}

void check_embeddings(const DynamicalNet& net, const std::vector<Embedding>& embs, const fs::path& path) {
  if (embs.size() != net.depth())
    throw ParseError(path.string() + ": " + std::to_string(embs.size()) + " embeddings for a depth-" +
                     std::to_string(net.depth()) + " model");
  for (std::size_t t = 0; t < embs.size(); ++t)
    if (embedding_dim(embs[t]) != net.state_dim(t))
      throw ParseError(path.string() + ": embedding " + std::to_string(t) + " has the wrong dimension");
}

Metrics stage_generate(Params& p, std::uint64_t seed, const StageIo& io) {
  SyntheticSpec spec = parse_spec(p.sub("spec"), p.at("spec"));
  spec.seed = seed;
  const bool holdout = p.flag("holdout", false);
  p.finish();
  const auto data = generate(spec);
  LabeledDataset train = data, test = data;
  if (holdout) std::tie(train, test) = split_alternating(data);
  save_dataset(need(io.outputs, "train", "generate"), train);
  if (const auto* t = maybe(io.outputs, "test")) save_dataset(*t, test);
  return {{"train_points", static_cast<double>(train.size())},
          {"test_points", static_cast<double>(test.size())},
          {"dim", static_cast<double>(data.dim())},
          {"classes", static_cast<double>(data.num_classes())}};
}

Metrics stage_train(Params& p, std::uint64_t seed, const StageIo& io) {
  const ArchSpec arch = parse_arch(p.sub("arch"), p.at("arch"));
  TrainConfig tc = parse_train(p.sub("train"), p.at("train"));
  p.finish();
  tc.seed = sub_seed(seed, 1);
  const auto train = load_dataset(need(io.inputs, "train", "train"));
  const auto result = train_classifier(train, arch, tc);
  save_model(need(io.outputs, "model", "train"), result.net);
  Metrics m{{"train_accuracy", result.train_accuracy},
            {"final_loss", result.epoch_loss.empty() ? 0.0 : result.epoch_loss.back()}};
  if (const auto* t = maybe(io.inputs, "test"); t && fs::exists(*t))
    m.emplace_back("test_accuracy", accuracy(result.net, load_dataset(*t)));
  return m;
}

Metrics stage_fit_embedding(Params& p, std::uint64_t seed, const StageIo& io) {
  EmbeddingFitConfig cfg = parse_embedding_fit(p, "fit-embedding");
  p.finish();
  cfg.autoencoder.train.seed = sub_seed(seed, 2);
  const auto net = load_model(need(io.inputs, "model", "fit-embedding"));
  const auto train = load_dataset(need(io.inputs, "train", "fit-embedding"));
  if (train.dim() != net.input_dim()) throw ParseError("fit-embedding: data dimension does not match the model");
  const auto embs = fit_layer_embeddings(net, train.points, cfg);
  save_embeddings(need(io.outputs, "embeddings", "fit-embedding"), embs);
  Metrics m;
  const auto res = embedding_residuals(net, embs, train.points);
  for (std::size_t t = 0; t < res.size(); ++t) m.emplace_back("layer" + std::to_string(t) + "_residual", res[t]);
  return m;
}

Metrics stage_control(Params& p, std::uint64_t, const StageIo& io) {
  const PmpConfig pmp = parse_pmp(p.sub("pmp"), p.at("pmp"));
  p.finish();
  const auto net = load_model(need(io.inputs, "model", "control"));
  const auto& epath = need(io.inputs, "embeddings", "control");
  ControlObjective obj;
  obj.c = pmp.c;
  obj.embeddings = load_embeddings(epath);
  check_embeddings(net, obj.embeddings, epath);
  const auto data = load_dataset(need(io.inputs, "data", "control"));
  if (data.dim() != net.input_dim()) throw ParseError("control: data dimension does not match the model");

  struct Row {
    std::size_t base = 0, ctrl = 0, increases = 0;
    double objective = 0.0;
  };
  const auto rows = parallel_map<Row>(data.size(), [&](std::size_t i) {
    const auto sol = solve_pmp(net, obj, data.points[i], pmp);
    Row r;
    r.base = argmax(logits(net, data.points[i]));
    r.ctrl = argmax(apply(net.head, sol.trajectory.states.back()));
    r.increases = sol.increases.size();
    r.objective = control_objective(net, obj, data.points[i], sol.controls);
    return r;
  });
  std::vector<std::vector<std::string>> table;
  double base_hits = 0, ctrl_hits = 0, objective = 0, increases = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    base_hits += r.base == data.labels[i];
    ctrl_hits += r.ctrl == data.labels[i];
    objective += r.objective;
    increases += static_cast<double>(r.increases);
    table.push_back({std::to_string(i), std::to_string(data.labels[i]), std::to_string(r.base),
                     std::to_string(r.ctrl), format_double(r.objective), std::to_string(r.increases)});
  }
  if (const auto* t = maybe(io.outputs, "table"))
    write_text_file(*t, table_csv({"index", "label", "baseline_pred", "controlled_pred", "objective", "increases"},
                                  table));
  const double n = std::max<double>(1.0, static_cast<double>(data.size()));
  return {{"baseline_clean", base_hits / n},
          {"controlled_clean", ctrl_hits / n},
          {"mean_objective", objective / n},
          {"objective_increases", increases}};
}

Metrics stage_attack(Params& p, std::uint64_t seed, const StageIo& io) {
  AttackSuite suite;
  suite.budgets = parse_budgets(p.sub("budgets"), p.at("budgets"));
  suite.steps = p.count("steps", suite.steps);
  const std::string threat = p.str("threat", "oblivious");
  if (threat != "oblivious" && threat != "whitebox") throw ParseError(p.at("threat") + ": expected oblivious or whitebox");
  suite.threat = threat == "whitebox" ? Threat::whitebox : Threat::oblivious;
  suite.max_points = p.count("max_points", 0);
  const bool controlled = p.flag("controlled", true);
  const PmpConfig pmp = parse_pmp(p.sub("pmp"), p.at("pmp"));
  p.finish();
  suite.seed = sub_seed(seed, 3);

  const auto net = load_model(need(io.inputs, "model", "attack"));
  const auto data = load_dataset(need(io.inputs, "data", "attack"));
  if (data.dim() != net.input_dim()) throw ParseError("attack: data dimension does not match the model");

  RobustnessEval eval;
  if (controlled) {
    const auto& epath = need(io.inputs, "embeddings", "attack");
    ControlObjective obj;
    obj.c = pmp.c;
    obj.embeddings = load_embeddings(epath);
    check_embeddings(net, obj.embeddings, epath);
    eval = evaluate_robustness(net, obj, pmp, data, suite);
  } else {
    eval.evaluated = subsample(data, suite.max_points, suite.seed);
    NetModel bare(net);
    eval.clean_baseline = model_accuracy(bare, eval.evaluated.points, eval.evaluated.labels);
    for (const auto& b : suite.budgets) {
      AttackConfig cfg = attack_config(b, suite);
      cfg.threat = Threat::oblivious;
      NormOutcome o;
      o.norm = b.norm;
      o.eps = b.eps;
      o.adversarial = pgd_batch(bare, eval.evaluated, cfg).adversarial;
      o.baseline = model_accuracy(bare, o.adversarial, eval.evaluated.labels);
      eval.norms.push_back(std::move(o));
    }
  }

  Metrics m;
  std::vector<std::vector<std::string>> table;
  m.emplace_back("accuracy_clean", controlled ? eval.clean_controlled : eval.clean_baseline);
  for (const auto& o : eval.norms)
    m.emplace_back("accuracy_" + norm_name(o.norm), controlled ? o.controlled : o.baseline);
  if (controlled) {
    m.emplace_back("baseline_clean", eval.clean_baseline);
    for (const auto& o : eval.norms) {
      m.emplace_back("baseline_" + norm_name(o.norm), o.baseline);
      m.emplace_back("delta_" + norm_name(o.norm), o.controlled - o.baseline);
    }
  }
  for (const auto& o : eval.norms)
    table.push_back({norm_name(o.norm), format_double(o.eps), format_double(o.baseline),
                     controlled ? format_double(o.controlled) : std::string("")});
  if (const auto* t = maybe(io.outputs, "table"))
    write_text_file(*t, table_csv({"norm", "eps", "baseline", "controlled"}, table));
  if (const auto* a = maybe(io.outputs, "adversarial")) {
    for (const auto& o : eval.norms) {
      LabeledDataset adv;
      adv.points = o.adversarial;
      adv.labels = eval.evaluated.labels;
      save_dataset(eval.norms.size() == 1 ? *a : with_suffix(*a, norm_name(o.norm)), adv);
    }
  }
  return m;
}

Metrics stage_margins(Params& p, std::uint64_t, const StageIo& io) {
  const std::size_t k = p.count("k", 8);
  const MarginConfig cfg = parse_margin(p.sub("margin"), p.at("margin"));
  const bool projection = p.flag("projection", false);
  p.finish();
  const auto net = load_model(need(io.inputs, "model", "margins"));
  const auto data = load_dataset(need(io.inputs, "data", "margins"));
  if (data.dim() != net.input_dim()) throw ParseError("margins: data dimension does not match the model");
  auto model = std::make_shared<NetModel>(net);

  const auto eu = euclidean_margin(*model, data, cfg);
  const auto graph = build_knn_graph(data.points, k);
  const auto geo = manifold_margin(*model, data, graph);
  Metrics m{{"euclidean_margin", eu.value},
            {"manifold_margin", geo.value},
            {"graph_components", static_cast<double>(graph.components)},
            {"graph_max_edge", graph.max_edge}};
  Json doc;
  doc["format"] = "selfheal.margins";
  doc["version"] = kFormatVersion;
  auto describe = [](const MarginResult& r) {
    Json j;
    j["value"] = number_to_json(r.value);
    j["infinite"] = r.infinite;
    j["method"] = r.method;
    j["witness"] = r.witness;
    j["witness_b"] = r.witness_b;
    return j;
  };
  doc["euclidean"] = describe(eu);
  doc["manifold"] = describe(geo);
  if (projection) {
    const auto& epath = need(io.inputs, "embeddings", "margins");
    const auto embs = load_embeddings(epath);
    check_embeddings(net, embs, epath);
    const auto pr = projection_margin(model, embs.front(), data, cfg);
    m.emplace_back("projection_margin", pr.value);
    doc["projection"] = describe(pr);
  }
  if (const auto* t = maybe(io.outputs, "table")) write_json_file(*t, doc);
  return m;
}

Metrics stage_verify_bounds(Params& p, std::uint64_t seed, const StageIo& io) {
  const std::string suite = p.str("suite", "thm1");
  Json doc;
  doc["format"] = "selfheal.certificates";
  doc["version"] = kFormatVersion;
  doc["suite"] = suite;
  doc["seed"] = seed;
  Json certs = Json::array();
  Metrics m;
  if (suite == "thm1") {
    const std::size_t trials = p.count("trials", 1000);
    const std::size_t orth = p.count("orthogonal_trials", 200);
    p.finish();
    const auto r = thm1_sweep(trials, orth, seed, true);
    m = {{"trials", static_cast<double>(r.trials)},
         {"violations", static_cast<double>(r.violations)},
         {"vacuous", static_cast<double>(r.vacuous)},
         {"max_ratio", r.max_ratio},
         {"orthogonal_trials", static_cast<double>(r.orthogonal_trials)},
         {"max_equality_error", r.max_equality_error}};
    for (const auto& c : r.certificates) certs.push_back(certificate_to_json(c));
  } else if (suite == "thm2") {
    const std::size_t trials = p.count("trials", 100);
    const double frac = p.positive("eps_fraction", 0.5);
    p.finish();
    const auto r = thm2_sweep(trials, seed, frac, true);
    m = {{"trials", static_cast<double>(r.trials)},
         {"violations", static_cast<double>(r.violations)},
         {"vacuous", static_cast<double>(r.vacuous)},
         {"eps_fraction", r.eps_fraction},
         {"max_ratio", r.max_ratio}};
    for (const auto& c : r.certificates) certs.push_back(certificate_to_json(c));
  } else if (suite == "propC2") {
    const auto curvatures = p.nums("curvatures", {0.25, 0.5, 1.0});
    const auto eps = p.nums("eps", {0.05, 0.1, 0.2});
    const auto costs = p.nums("costs", {0.0, 0.1, 1.0});
    const std::size_t dim = p.count("dim", 4);
    p.finish();
    const auto r = propC2_sweep(curvatures, eps, costs, dim, seed);
    m = {{"cases", static_cast<double>(r.rows.size())},
         {"violations", static_cast<double>(r.violations)},
         {"min_slope", r.min_slope},
         {"max_slope", r.max_slope}};
    for (const auto& row : r.rows) {
      Json j;
      j["kind"] = "regularized_projection_gap";
      j["curvature"] = number_to_json(row.curvature);
      j["c"] = number_to_json(row.c);
      j["eps"] = number_to_json(row.eps);
      j["gap"] = number_to_json(row.gap);
      j["bound"] = number_to_json(row.bound);
      certs.push_back(j);
    }
  } else if (suite == "propC4") {
    const std::size_t lin = p.count("linear_trials", 100);
    const std::size_t trials = p.count("trials", 100);
    const std::size_t slopes = p.count("slope_trials", 100);
    p.finish();
    const auto r = propC4_sweep(lin, trials, slopes, seed, true);
    m = {{"linear_trials", static_cast<double>(r.linear_trials)},
         {"max_linear_error", r.max_linear_error},
         {"trials", static_cast<double>(r.trials)},
         {"violations", static_cast<double>(r.violations)},
         {"min_slope", r.min_slope},
         {"max_slope", r.max_slope}};
    for (const auto& s : r.series) certs.push_back(certificate_to_json(s));
  } else {
    throw ParseError(p.at("suite") + ": expected thm1, thm2, propC2 or propC4, found '" + suite + "'");
  }
  doc["certificates"] = std::move(certs);
  if (const auto* t = maybe(io.outputs, "certificates")) write_json_file(*t, doc);
  return m;
}

Metrics stage_fig2(Params& p, std::uint64_t seed, const StageIo& io) {
  p.finish();
  const auto rec = fig2_toy(seed);
  if (const auto* g = maybe(io.outputs, "grid")) write_text_file(*g, rec.grid_csv);
  if (const auto* d = maybe(io.outputs, "data")) save_dataset(*d, rec.data);
  return {{"eps", rec.eps},
          {"clean_accuracy", rec.clean_accuracy},
          {"fgsm_accuracy", rec.fgsm_accuracy},
          {"pgd_accuracy", rec.pgd_accuracy},
          {"controlled_clean_accuracy", rec.controlled_clean_accuracy},
          {"controlled_fgsm_accuracy", rec.controlled_fgsm_accuracy},
          {"controlled_pgd_accuracy", rec.controlled_pgd_accuracy},
          {"euclidean_margin", rec.euclidean_margin},
          {"projection_margin", rec.projection_margin}};
}

Metrics stage_prop1(Params& p, std::uint64_t seed, const StageIo& io) {
  const Json& pairs_json = p.sub("pairs");
  const std::size_t samples = p.count("samples", 100000);
  p.finish();
  std::vector<std::pair<std::size_t, std::size_t>> pairs{{1, 2}, {2, 10}, {5, 50}};
  if (!pairs_json.is_null()) {
    pairs.clear();
    if (!pairs_json.is_array()) throw ParseError("prop1.pairs: expected an array of [r, d] pairs");
    for (const auto& e : pairs_json) {
      if (!e.is_array() || e.size() != 2 || !e[0].is_number_unsigned() || !e[1].is_number_unsigned())
        throw ParseError("prop1.pairs: expected [r, d] integer pairs");
      pairs.emplace_back(e[0].get<std::size_t>(), e[1].get<std::size_t>());
    }
  }
  Metrics m;
  std::vector<std::vector<std::string>> table;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto [r, d] = pairs[i];
    const auto est = prop1_monte_carlo(r, d, samples, sub_seed(seed, i));
    const std::string key = "r" + std::to_string(r) + "_d" + std::to_string(d) + "_";
    m.emplace_back(key + "mean_sin", est.mean_sin);
    m.emplace_back(key + "se_sin", est.se_sin);
    m.emplace_back(key + "mean_sin2", est.mean_sin2);
    m.emplace_back(key + "se_sin2", est.se_sin2);
    m.emplace_back(key + "bound", est.bound);
    table.push_back({std::to_string(r), std::to_string(d), format_double(est.mean_sin), format_double(est.se_sin),
                     format_double(est.mean_sin2), format_double(est.se_sin2), format_double(est.bound)});
  }
  if (const auto* t = maybe(io.outputs, "table"))
    write_text_file(*t, table_csv({"r", "d", "mean_sin", "se_sin", "mean_sin2", "se_sin2", "bound"}, table));
  return m;
}

Json metrics_json(const Metrics& m) {
  Json j = Json::object();
  for (const auto& [k, v] : m) j[k] = number_to_json(v);
  return j;
}

fs::file_time_type newest(const std::vector<fs::path>& paths) {
  auto t = fs::file_time_type::min();
  for (const auto& p : paths)
    if (fs::exists(p)) t = std::max(t, fs::last_write_time(p));
  return t;
}

bool up_to_date(const StagePlan& s, const fs::path& metrics_file, const fs::path& config) {
  std::vector<fs::path> outputs{metrics_file};
  for (const auto& [role, p] : s.io.outputs) {
    // several budgets write one adversarial file per norm
    const Json* budgets = s.params.is_object() && s.params.contains("budgets") ? &s.params["budgets"] : nullptr;
    if (s.type == "attack" && role == "adversarial" && budgets && budgets->is_array() && budgets->size() > 1) {
      for (const auto& b : *budgets)
        if (b.is_object() && b.contains("norm") && b["norm"].is_string())
          outputs.push_back(with_suffix(p, b["norm"].get<std::string>()));
      continue;
    }
    outputs.push_back(p);
  }
  auto oldest_output = fs::file_time_type::max();
  for (const auto& p : outputs) {
    if (!fs::exists(p)) return false;
    oldest_output = std::min(oldest_output, fs::last_write_time(p));
  }
  std::vector<fs::path> inputs{config};
  for (const auto& [role, p] : s.io.inputs) inputs.push_back(p);
  return oldest_output >= newest(inputs);
}

}  // namespace

const std::vector<std::string>& stage_types() {
  static const std::vector<std::string> types{"generate", "train",         "fit-embedding", "control", "attack",
                                              "margins",  "verify-bounds", "fig2",          "prop1"};
  return types;
}

Metrics execute_stage(const std::string& type, const Json& params, std::uint64_t seed, const StageIo& io) {
  Params p(params, type);
  if (type == "generate") return stage_generate(p, seed, io);
  if (type == "train") return stage_train(p, seed, io);
  if (type == "fit-embedding") return stage_fit_embedding(p, seed, io);
  if (type == "control") return stage_control(p, seed, io);
  if (type == "attack") return stage_attack(p, seed, io);
  if (type == "margins") return stage_margins(p, seed, io);
  if (type == "verify-bounds") return stage_verify_bounds(p, seed, io);
  if (type == "fig2") return stage_fig2(p, seed, io);
  if (type == "prop1") return stage_prop1(p, seed, io);
  throw ParseError("unknown stage type '" + type + "'");
}

StageIo default_stage_io(const std::string& type, const std::string& name, const Json& params, const fs::path& dir) {
  StageIo io;
  auto& in = io.inputs;
  auto& out = io.outputs;
  if (type == "generate") {
    out["train"] = dir / "train.csv";
    out["test"] = dir / "test.csv";
  } else if (type == "train") {
    in["train"] = dir / "train.csv";
    in["test"] = dir / "test.csv";
    out["model"] = dir / "model.json";
  } else if (type == "fit-embedding") {
    in["model"] = dir / "model.json";
    in["train"] = dir / "train.csv";
    out["embeddings"] = dir / "embeddings.json";
  } else if (type == "control") {
    in["model"] = dir / "model.json";
    in["embeddings"] = dir / "embeddings.json";
    in["data"] = dir / "test.csv";
    out["table"] = dir / (name + ".csv");
  } else if (type == "attack") {
    in["model"] = dir / "model.json";
    in["data"] = dir / "test.csv";
    const auto it = params.is_object() ? params.find("controlled") : params.end();
    if (!params.is_object() || it == params.end() || !it->is_boolean() || it->get<bool>())
      in["embeddings"] = dir / "embeddings.json";
    out["table"] = dir / (name + ".csv");
    out["adversarial"] = dir / (name + "_adv.csv");
  } else if (type == "margins") {
    in["model"] = dir / "model.json";
    in["data"] = dir / "test.csv";
    const auto it = params.is_object() ? params.find("projection") : params.end();
    if (params.is_object() && it != params.end() && it->is_boolean() && it->get<bool>())
      in["embeddings"] = dir / "embeddings.json";
    out["table"] = dir / (name + ".json");
  } else if (type == "verify-bounds") {
    out["certificates"] = dir / (name + ".certificates.json");
  } else if (type == "fig2") {
    out["grid"] = dir / (name + "_grid.csv");
    out["data"] = dir / (name + "_data.csv");
  } else if (type == "prop1") {
    out["table"] = dir / (name + ".csv");
  } else {
    throw ParseError("unknown stage type '" + type + "'");
  }
  return io;
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = digits[h & 0xf];
  return out;
}

ExperimentConfig parse_experiment_config(const Json& doc, const std::string& where) {
  Params top(doc, where);
  ExperimentConfig cfg;
  if (doc.is_null()) throw ParseError(where + ": expected an object");
  const Json& seed = top.sub("seed");
  if (!seed.is_null()) {
    if (!seed.is_number_unsigned()) throw ParseError(where + ".seed: expected a nonnegative integer");
    cfg.seed = seed.get<std::uint64_t>();
  }
  cfg.output_dir = top.str("output_dir", "out");
  top.str("description", "");
  const Json& stages = top.sub("stages");
  top.finish();
  if (stages.is_null()) throw ParseError(where + ": missing field 'stages'");
  if (!stages.is_array()) throw ParseError(where + ".stages: expected an array");

  std::set<std::string> names;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const std::string at = where + ".stages[" + std::to_string(i) + "]";
    const Json& s = stages[i];
    if (!s.is_object()) throw ParseError(at + ": expected an object");
    StagePlan plan;
    auto get = [&](const char* key) -> const Json* {
      auto it = s.find(key);
      return it == s.end() ? nullptr : &*it;
    };
    const Json* type = get("stage");
    if (!type || !type->is_string()) throw ParseError(at + ": missing string field 'stage'");
    plan.type = type->get<std::string>();
    if (std::find(stage_types().begin(), stage_types().end(), plan.type) == stage_types().end())
      throw ParseError(at + ": unknown stage type '" + plan.type + "'");
    plan.name = plan.type;
    if (const Json* n = get("name")) {
      if (!n->is_string() || n->get<std::string>().empty()) throw ParseError(at + ".name: expected a nonempty string");
      plan.name = n->get<std::string>();
    }
    if (plan.name.find_first_of("/\\,") != std::string::npos)
      throw ParseError(at + ".name: must not contain '/', '\\' or ','");
    if (!names.insert(plan.name).second) throw ParseError(at + ": duplicate stage name '" + plan.name + "'");
    plan.seed = cfg.seed;
    if (const Json* sd = get("seed")) {
      if (!sd->is_number_unsigned()) throw ParseError(at + ".seed: expected a nonnegative integer");
      plan.seed = sd->get<std::uint64_t>();
    }
    plan.params = Json::object();
    for (const auto& [k, v] : s.items())
      if (k != "stage" && k != "name" && k != "seed" && k != "io") plan.params[k] = v;
    if (const Json* io = get("io")) {
      Params iop(*io, at + ".io");
      for (const char* side : {"inputs", "outputs"}) {
        const Json& m = iop.sub(side);
        if (m.is_null()) continue;
        if (!m.is_object()) throw ParseError(at + ".io." + side + ": expected an object");
        for (const auto& [role, path] : m.items())
          if (!path.is_string()) throw ParseError(at + ".io." + side + "." + role + ": expected a path string");
      }
      iop.finish();
      plan.io_override = *io;
    }
    cfg.stages.push_back(std::move(plan));
  }
  cfg.hash = fnv1a_hex(doc.dump());
  return cfg;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  return parse_experiment_config(read_json_file(path), path.string());
}

RunSummary run_experiment(const fs::path& config_path, const RunOptions& options) {
  ExperimentConfig cfg = load_experiment_config(config_path);
  RunSummary summary;
  summary.output_dir = options.output_dir.empty() ? cfg.output_dir : options.output_dir;
  const fs::path& dir = summary.output_dir;
  fs::create_directories(dir);

  Json report;
  report["format"] = "selfheal.report";
  report["version"] = kFormatVersion;
  report["library"] = kLibrary;
  report["config_hash"] = cfg.hash;
  report["seed"] = cfg.seed;
  report["stages"] = Json::array();

  for (auto& plan : cfg.stages) {
    const Json& params = plan.params;
    plan.io = default_stage_io(plan.type, plan.name, params, dir);
    for (const char* side : {"inputs", "outputs"}) {
      if (!plan.io_override.is_object() || !plan.io_override.contains(side)) continue;
      auto& target = std::string(side) == "inputs" ? plan.io.inputs : plan.io.outputs;
      for (const auto& [role, path] : plan.io_override.at(side).items()) target[role] = dir / path.get<std::string>();
    }
    const fs::path metrics_file = dir / (plan.name + ".metrics.json");

    StageOutcome outcome{plan.name, false};
    Metrics metrics;
    if (!options.force && up_to_date(plan, metrics_file, config_path)) {
      outcome.skipped = true;
      const Json doc = read_json_file(metrics_file);
      if (!doc.contains("metrics") || !doc.at("metrics").is_object())
        throw StageError(plan.name, metrics_file.string() + ": no metrics object", 2);
      for (const auto& [k, v] : doc.at("metrics").items())
        metrics.emplace_back(k, number_from_json(v, metrics_file.string() + "." + k));
    } else {
      const auto t0 = std::chrono::steady_clock::now();
      try {
        metrics = execute_stage(plan.type, params, plan.seed, plan.io);
      } catch (const ParseError& e) {
        throw StageError(plan.name, e.what(), 2);
      } catch (const std::exception& e) {
        throw StageError(plan.name, e.what(), 1);
      }
      Json doc;
      doc["format"] = "selfheal.metrics";
      doc["version"] = kFormatVersion;
      doc["stage"] = plan.type;
      doc["name"] = plan.name;
      doc["seed"] = plan.seed;
      doc["metrics"] = metrics_json(metrics);
      write_json_file(metrics_file, doc);
      if (options.log) {
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::ostringstream line;
        line << "stage " << plan.name << ": ran in " << std::fixed << std::setprecision(2) << secs << " s\n";
        *options.log << line.str();
      }
    }
    if (outcome.skipped && options.log) *options.log << "stage " << plan.name << ": up to date, skipped\n";

    Json entry;
    entry["name"] = plan.name;
    entry["stage"] = plan.type;
    entry["seed"] = plan.seed;
    entry["metrics"] = metrics_json(metrics);
    entry["metrics_file"] = metrics_file.filename().string();
    Json artifacts = Json::array();
    for (const auto& [role, p] : plan.io.outputs)
      if (fs::exists(p)) artifacts.push_back(p.filename().string());
    entry["artifacts"] = artifacts;
    report["stages"].push_back(entry);
    summary.stages.push_back(outcome);
  }
  write_json_file(dir / "report.json", report);
  write_text_file(dir / "report.csv", report_csv(report));
  summary.report = std::move(report);
  return summary;
}

std::string report_csv(const Json& report) {
  std::string out = "stage,metric,value\n";
  for (const auto& s : report.at("stages")) {
    const std::string name = s.at("name").get<std::string>();
    for (const auto& [k, v] : s.at("metrics").items())
      out += name + "," + k + "," + format_double(number_from_json(v, name + "." + k)) + "\n";
  }
  return out;
}

std::vector<CompareRow> compare_reports(const Json& a, const Json& b) {
  auto flatten = [](const Json& r, const char* which) {
    if (!r.is_object() || !r.contains("format") || r["format"] != "selfheal.report" || !r.contains("stages") ||
        !r["stages"].is_array())
      throw ParseError(std::string("report ") + which + " is not a selfheal report");
    std::vector<std::pair<std::pair<std::string, std::string>, double>> rows;
    for (const auto& s : r["stages"]) {
      if (!s.contains("name") || !s.contains("metrics") || !s["metrics"].is_object())
        throw ParseError(std::string("report ") + which + ": malformed stage entry");
      const std::string name = s["name"].get<std::string>();
      for (const auto& [k, v] : s["metrics"].items()) rows.push_back({{name, k}, number_from_json(v, name + "." + k)});
    }
    return rows;
  };
  const auto ra = flatten(a, "a");
  const auto rb = flatten(b, "b");
  std::vector<CompareRow> out;
  for (const auto& [key, va] : ra) {
    CompareRow row{key.first, key.second, va, 0.0, 0.0, "only_a"};
    for (const auto& [kb, vb] : rb) {
      if (kb == key) {
        row.b = vb;
        row.delta = vb - va;
        row.status = "both";
        break;
      }
    }
    out.push_back(row);
  }
  for (const auto& [key, vb] : rb) {
    const bool seen = std::any_of(ra.begin(), ra.end(), [&](const auto& r) { return r.first == key; });
    if (!seen) out.push_back({key.first, key.second, 0.0, vb, 0.0, "only_b"});
  }
  return out;
}

}  // namespace selfheal
