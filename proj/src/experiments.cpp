#include "selfheal/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "selfheal/parallel.hpp"
#include "selfheal/rng.hpp"

namespace selfheal {

std::vector<Embedding> fit_layer_embeddings(const DynamicalNet& net, const std::vector<Vec64>& points,
                                            const EmbeddingFitConfig& cfg) {
  net.validate();
  if (points.empty()) throw Error("fit_layer_embeddings: no training points");
  if (cfg.kind != "linear" && cfg.kind != "autoencoder")
    throw Error("fit_layer_embeddings: unknown embedding kind '" + cfg.kind + "'");
  std::vector<Embedding> out;
  std::vector<Vec64> states = points;
  for (std::size_t t = 0; t < net.depth(); ++t) {
    if (cfg.kind == "linear") {
      out.emplace_back(fit_pca(states, cfg.rank));
    } else {
      AutoencoderConfig ac = cfg.autoencoder;
      ac.train.seed = sub_seed(cfg.autoencoder.train.seed, t);
      out.emplace_back(fit_autoencoder(states, cfg.rank, ac));
    }
    for (auto& x : states) x = apply(net.layers[t], x);
  }
  return out;
}

std::pair<LabeledDataset, LabeledDataset> split_alternating(const LabeledDataset& data) {
  data.validate();
  LabeledDataset parts[2];
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto& p = parts[i % 2];
    p.points.push_back(data.points[i]);
    p.labels.push_back(data.labels[i]);
    if (!data.manifold_tags.empty()) p.manifold_tags.push_back(data.manifold_tags[i]);
  }
  return {std::move(parts[0]), std::move(parts[1])};
}

LabeledDataset subsample(const LabeledDataset& data, std::size_t max_points, std::uint64_t seed) {
  if (max_points == 0 || max_points >= data.size()) return data;
  const auto idx = shuffled_indices(data.size(), seed, 0);
  LabeledDataset sub;
  for (std::size_t k = 0; k < max_points; ++k) {
    sub.points.push_back(data.points[idx[k]]);
    sub.labels.push_back(data.labels[idx[k]]);
    if (!data.manifold_tags.empty()) sub.manifold_tags.push_back(data.manifold_tags[idx[k]]);
  }
  return sub;
}

AttackConfig attack_config(const NormBudget& b, const AttackSuite& suite) {
  AttackConfig a;
  a.norm = b.norm;
  a.eps = b.eps;
  a.steps = suite.steps;
  a.step_size = b.step_size > 0.0 ? b.step_size : b.eps / (b.norm == Norm::l1 ? 4.0 : 8.0);
  a.threat = suite.threat;
  a.seed = suite.seed;
  a.validate();
  return a;
}

RobustnessEval evaluate_robustness(const DynamicalNet& net, const ControlObjective& objective, const PmpConfig& pmp,
                                   const LabeledDataset& full, const AttackSuite& suite) {
  LabeledDataset data = subsample(full, suite.max_points, suite.seed);
  NetModel bare(net);
  ControlledModel controlled(net, objective, pmp);

  RobustnessEval out;
  out.clean_baseline = model_accuracy(bare, data.points, data.labels);
  out.clean_controlled = model_accuracy(controlled, data.points, data.labels);
  for (const auto& b : suite.budgets) {
    const AttackConfig cfg = attack_config(b, suite);
    NormOutcome o;
    o.norm = b.norm;
    o.eps = b.eps;
    AttackConfig bare_cfg = cfg;
    bare_cfg.threat = Threat::oblivious;
    const auto adv = pgd_batch(bare, data, bare_cfg);
    o.baseline = model_accuracy(bare, adv.adversarial, data.labels);
    if (suite.threat == Threat::oblivious) {
      o.controlled = model_accuracy(controlled, adv.adversarial, data.labels);
      o.adversarial = adv.adversarial;
    } else {
      o.adversarial = parallel_map<Vec64>(data.size(), [&](std::size_t i) {
        return attack_controlled(net, objective, pmp, data.points[i], data.labels[i], cfg, i).adversarial.front();
      });
      o.controlled = model_accuracy(controlled, o.adversarial, data.labels);
    }
    out.norms.push_back(std::move(o));
  }
  out.evaluated = std::move(data);
  return out;
}

RobustnessSetup default_robustness_setup() {
  RobustnessSetup s;
  s.data.kind = DatasetKind::curved_manifold_two_class;
  s.data.d = 30;
  s.data.r = 1;
  s.data.n_per_class = 200;
  s.data.curvature = 0.5;
  s.data.gap = 2.0;
  s.data.spread = 2.0;

  s.arch.widths = {30, 30};
  s.arch.activation = Activation::tanh;
  s.train.epochs = 100;
  s.train.batch_size = 16;
  s.train.learning_rate = 0.05;
  s.train.momentum = 0.9;

  s.embedding.kind = "autoencoder";
  s.embedding.rank = 1;
  s.embedding.autoencoder.hidden = 32;
  s.embedding.autoencoder.input_noise = 0.2;
  s.embedding.autoencoder.train.epochs = 600;
  s.embedding.autoencoder.train.batch_size = 16;
  s.embedding.autoencoder.train.learning_rate = 0.01;
  s.embedding.autoencoder.train.momentum = 0.9;

  s.control_cost = 0.001;
  s.pmp.c = s.control_cost;

  // The l2 radius stays below the on-manifold half gap (1); l1 and linf balls
  // reach further only along sparse or sign-pattern directions.
  s.attacks.budgets = {{Norm::l1, 4.0, 0.0}, {Norm::l2, 1.5, 0.0}, {Norm::linf, 0.4, 0.0}};
  s.attacks.steps = 20;
  s.attacks.threat = Threat::oblivious;
  return s;
}

RobustnessResult run_robustness(const RobustnessSetup& setup, std::uint64_t seed) {
  SyntheticSpec spec = setup.data;
  spec.seed = seed;
  const auto [train, test] = split_alternating(generate(spec));

  TrainConfig tc = setup.train;
  tc.seed = sub_seed(seed, 1);
  const auto trained = train_classifier(train, setup.arch, tc);

  EmbeddingFitConfig ec = setup.embedding;
  ec.autoencoder.train.seed = sub_seed(seed, 2);
  ControlObjective obj;
  obj.c = setup.control_cost;
  obj.embeddings = fit_layer_embeddings(trained.net, train.points, ec);

  RobustnessResult out;
  out.train_accuracy = trained.train_accuracy;
  for (const auto& e : obj.embeddings) {
    if (const auto* ae = std::get_if<AutoencoderEmbedding>(&e)) out.embedding_errors.push_back(ae->train_error);
  }
  AttackSuite suite = setup.attacks;
  suite.seed = sub_seed(seed, 3);
  out.eval = evaluate_robustness(trained.net, obj, setup.pmp, test, suite);
  return out;
}

Thm1Sweep thm1_sweep(std::size_t trials, std::size_t orthogonal_trials, std::uint64_t seed, bool keep_certificates) {
  static constexpr double kCosts[] = {0.0, 0.1, 1.0};
  Thm1Sweep out;
  out.trials = trials;
  out.orthogonal_trials = orthogonal_trials;
  const std::size_t total = trials + orthogonal_trials;
  const auto certs = parallel_map<BoundCertificate>(total, [&](std::size_t i) {
    LinearSystemOptions opt;
    opt.c = kCosts[i % 3];
    opt.orthogonal = i >= trials;
    const auto fx = random_linear_fixture(sub_seed(seed, i), opt);
    return theorem1_certificate(fx.sys, fx.z);
  });
  for (std::size_t i = 0; i < total; ++i) {
    const auto& cert = certs[i];
    if (i < trials) {
      if (!cert.holds) ++out.violations;
      if (cert.vacuous) ++out.vacuous;
      for (std::size_t t = 1; t < cert.bound_t.size(); ++t)
        if (std::isfinite(cert.bound_t[t]) && cert.bound_t[t] > 0.0)
          out.max_ratio = std::max(out.max_ratio, cert.empirical_t[t] / cert.bound_t[t]);
    } else {
      // Rebuild the split to evaluate the equality case independently of the bound code.
      LinearSystemOptions opt;
      opt.c = kCosts[i % 3];
      opt.orthogonal = true;
      const auto fx = random_linear_fixture(sub_seed(seed, i), opt);
      const auto split = perturbation_split(fx.z, fx.sys.bases.front());
      for (std::size_t t = 1; t < cert.empirical_t.size(); ++t) {
        const double exact = std::pow(cert.alpha, 2.0 * static_cast<double>(t)) * squared_norm(split.perp) +
                             squared_norm(split.parallel);
        out.max_equality_error = std::max(out.max_equality_error, std::abs(cert.empirical_t[t] - exact));
      }
    }
  }
  if (keep_certificates) out.certificates = certs;
  return out;
}

Thm2Sweep thm2_sweep(std::size_t trials, std::uint64_t seed, double eps_fraction, bool keep_certificates) {
  if (!(eps_fraction > 0.0)) throw Error("thm2_sweep: eps fraction must be positive");
  Thm2Sweep out;
  out.trials = trials;
  out.eps_fraction = eps_fraction;
  const auto certs = parallel_map<NonlinearCertificate>(trials, [&](std::size_t i) {
    const auto fx = random_nonlinear_fixture(sub_seed(seed, i), {});
    // The threshold does not depend on eps, so a probe run reads it off.
    const auto probe = theorem2_certificate(fx.net, fx.embeddings, fx.x0, fx.v, 1e-6, fx.c);
    const double eps = std::isfinite(probe.eps_threshold) ? eps_fraction * probe.eps_threshold : 1.0;
    return theorem2_certificate(fx.net, fx.embeddings, fx.x0, fx.v, eps, fx.c);
  });
  for (const auto& cert : certs) {
    if (!cert.holds) ++out.violations;
    if (cert.vacuous) ++out.vacuous;
    for (std::size_t t = 1; t < cert.bound_t.size(); ++t)
      if (std::isfinite(cert.bound_t[t]) && cert.bound_t[t] > 0.0)
        out.max_ratio = std::max(out.max_ratio, cert.empirical_t[t] / cert.bound_t[t]);
  }
  if (keep_certificates) out.certificates = certs;
  return out;
}

PropC2Sweep propC2_sweep(const std::vector<double>& curvatures, const std::vector<double>& eps_values,
                         const std::vector<double>& costs, std::size_t d, std::uint64_t seed) {
  if (d < 2) throw DimensionError("propC2_sweep: need d >= 2");
  PropC2Sweep out;
  out.min_slope = std::numeric_limits<double>::infinity();
  out.max_slope = -std::numeric_limits<double>::infinity();
  std::size_t pair = 0;
  for (double a : curvatures) {
    for (double c : costs) {
      const auto q = QuadraticSubmersion::standard(d, a);
      SeededRng rng(sub_seed(seed, pair++));
      // Random direction in the tangent hyperplane at the center.
      Vec64 v = rng.normal_vec(d);
      v -= dot(v, q.normal) * q.normal;
      v *= 1.0 / norm2(v);
      std::vector<double> gaps;
      for (double eps : eps_values) {
        const auto g = propC2_check(q, q.center, v, eps, c);
        out.rows.push_back({a, c, eps, g.gap, g.bound});
        if (!(g.gap <= g.bound + 1e-12)) ++out.violations;
        gaps.push_back(g.gap);
      }
      if (eps_values.size() >= 2 && a != 0.0) {
        const double slope = loglog_slope(eps_values, gaps);
        out.slopes.push_back(slope);
        out.min_slope = std::min(out.min_slope, slope);
        out.max_slope = std::max(out.max_slope, slope);
      }
    }
  }
  return out;
}

PropC4Sweep propC4_sweep(std::size_t linear_trials, std::size_t trials, std::size_t slope_trials, std::uint64_t seed,
                         bool keep_series) {
  PropC4Sweep out;
  out.linear_trials = linear_trials;
  out.trials = trials;
  out.slope_trials = std::min(slope_trials, trials);
  NonlinearFixtureOptions flat;
  flat.activation = Activation::identity;
  flat.min_curvature = 0.0;
  flat.max_curvature = 0.0;
  const auto linear_errors = parallel_map<double>(linear_trials, [&](std::size_t i) {
    const auto fx = random_nonlinear_fixture(sub_seed(seed, i), flat);
    const auto s = linearization_error_series(fx.net, fx.embeddings, fx.x0, fx.v, 0.5, fx.c);
    return *std::max_element(s.e_t.begin(), s.e_t.end());
  });
  for (double e : linear_errors) out.max_linear_error = std::max(out.max_linear_error, e);

  struct Trial {
    LinearizationSeries series;
    double slope = 0.0;
  };
  const auto results = parallel_map<Trial>(trials, [&](std::size_t i) {
    const auto fx = random_nonlinear_fixture(sub_seed(seed, linear_trials + i), {});
    const auto probe = linearization_error_series(fx.net, fx.embeddings, fx.x0, fx.v, 1e-6, fx.c);
    const double thr = probe.eps_threshold;
    Trial tr;
    tr.series = linearization_error_series(fx.net, fx.embeddings, fx.x0, fx.v, 0.5 * thr, fx.c);
    if (i < out.slope_trials) {
      std::vector<double> eps, err;
      // Scaling is a small-eps property, independent of the threshold; tiny
      // thresholds would push e_t down to rounding level.
      double e = 0.05;
      for (int k = 0; k < 6; ++k, e *= 0.5) {
        const auto s = linearization_error_series(fx.net, fx.embeddings, fx.x0, fx.v, e, fx.c);
        eps.push_back(e);
        err.push_back(s.e_t.back());
      }
      tr.slope = loglog_slope(eps, err);
    }
    return tr;
  });
  out.min_slope = std::numeric_limits<double>::infinity();
  out.max_slope = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (!results[i].series.holds) ++out.violations;
    if (i < out.slope_trials) {
      out.min_slope = std::min(out.min_slope, results[i].slope);
      out.max_slope = std::max(out.max_slope, results[i].slope);
    }
    if (keep_series) out.series.push_back(results[i].series);
  }
  return out;
}

}  // namespace selfheal
