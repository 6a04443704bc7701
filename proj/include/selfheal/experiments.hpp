#pragma once

// End-to-end experiment building blocks shared by the pipeline and the test
// suites: per-layer embedding fits, baseline-vs-controlled robustness and
// randomized bound sweeps.

#include <cstdint>
#include <string>
#include <vector>

#include "selfheal/attacks.hpp"
#include "selfheal/bounds.hpp"
#include "selfheal/control.hpp"
#include "selfheal/data.hpp"
#include "selfheal/embedding.hpp"

namespace selfheal {

struct EmbeddingFitConfig {
  std::string kind = "autoencoder";  // "linear" or "autoencoder"
  std::size_t rank = 1;
  AutoencoderConfig autoencoder;
};

/// Fits one embedding per layer on the training states x_t of the bare net.
/// Layer t's autoencoder trains with seed sub_seed(autoencoder.train.seed, t).
std::vector<Embedding> fit_layer_embeddings(const DynamicalNet& net, const std::vector<Vec64>& points,
                                            const EmbeddingFitConfig& cfg);

/// Even-indexed points train, odd-indexed points test.
std::pair<LabeledDataset, LabeledDataset> split_alternating(const LabeledDataset& data);

/// Seeded random subset of at most max_points points (all when 0).
LabeledDataset subsample(const LabeledDataset& data, std::size_t max_points, std::uint64_t seed);

struct NormBudget {
  Norm norm = Norm::linf;
  double eps = 0.1;
  double step_size = 0.0;  // 0 picks eps / 8 (eps / 4 for l1)
};

struct AttackSuite {
  std::vector<NormBudget> budgets;
  std::size_t steps = 20;
  Threat threat = Threat::oblivious;
  std::uint64_t seed = 0;
  std::size_t max_points = 0;  // 0 evaluates every point
};

struct NormOutcome {
  Norm norm = Norm::linf;
  double eps = 0.0;
  double baseline = 0.0;
  double controlled = 0.0;
  std::vector<Vec64> adversarial;  // points that attacked the controlled model
};

struct RobustnessEval {
  double clean_baseline = 0.0;
  double clean_controlled = 0.0;
  std::vector<NormOutcome> norms;
  LabeledDataset evaluated;  // the (possibly subsampled) points
};

AttackConfig attack_config(const NormBudget& b, const AttackSuite& suite);

/// Oblivious: one PGD batch against the bare net, scored on both models.
/// White-box: the bare net faces its own PGD; the controlled net faces PGD
/// through the unrolled solver.
RobustnessEval evaluate_robustness(const DynamicalNet& net, const ControlObjective& objective, const PmpConfig& pmp,
                                   const LabeledDataset& data, const AttackSuite& suite);

struct RobustnessSetup {
  SyntheticSpec data;  // n_per_class counts train and test together
  ArchSpec arch;
  TrainConfig train;
  EmbeddingFitConfig embedding;
  double control_cost = 0.001;
  PmpConfig pmp;
  AttackSuite attacks;
};

/// Curved-manifold fixture in which off-manifold directions keep their
/// untrained weights, so oblivious attacks hurt the bare net far more than the
/// projected one.
RobustnessSetup default_robustness_setup();

struct RobustnessResult {
  double train_accuracy = 0.0;
  std::vector<double> embedding_errors;
  RobustnessEval eval;
};

/// Every seed-dependent piece (data, init, embeddings, attacks) derives from `seed`.
RobustnessResult run_robustness(const RobustnessSetup& setup, std::uint64_t seed);

// Randomized bound sweeps. Trial i draws its fixture from sub_seed(seed, i).

struct Thm1Sweep {
  std::size_t trials = 0;
  std::size_t violations = 0;  // trials with some layer above its bound
  std::size_t vacuous = 0;
  double max_ratio = 0.0;      // largest empirical / bound over finite bounds
  std::size_t orthogonal_trials = 0;
  double max_equality_error = 0.0;  // orthogonal trials: |empirical^2 - alpha^2t |z_perp|^2 - |z_par|^2|
  std::vector<BoundCertificate> certificates;
};

/// Random systems cycle c through {0, 0.1, 1}.
Thm1Sweep thm1_sweep(std::size_t trials, std::size_t orthogonal_trials, std::uint64_t seed,
                     bool keep_certificates = false);

struct Thm2Sweep {
  std::size_t trials = 0;
  std::size_t violations = 0;
  std::size_t vacuous = 0;
  double eps_fraction = 0.5;  // eps as a fraction of each trial's threshold
  double max_ratio = 0.0;
  std::vector<NonlinearCertificate> certificates;
};

Thm2Sweep thm2_sweep(std::size_t trials, std::uint64_t seed, double eps_fraction, bool keep_certificates = false);

struct PropC2Row {
  double curvature = 0.0;
  double c = 0.0;
  double eps = 0.0;
  double gap = 0.0;
  double bound = 0.0;
};

struct PropC2Sweep {
  std::vector<PropC2Row> rows;
  std::size_t violations = 0;
  std::vector<double> slopes;  // one per (curvature, c) pair
  double min_slope = 0.0;
  double max_slope = 0.0;
};

/// Anchor at the surface center, random unit tangent direction per (curvature, c) pair.
PropC2Sweep propC2_sweep(const std::vector<double>& curvatures, const std::vector<double>& eps_values,
                         const std::vector<double>& costs, std::size_t d, std::uint64_t seed);

struct PropC4Sweep {
  std::size_t linear_trials = 0;
  double max_linear_error = 0.0;  // largest e_t over identity-activation nets with flat surfaces
  std::size_t trials = 0;
  std::size_t violations = 0;
  std::size_t slope_trials = 0;
  double min_slope = 0.0;  // log-log slope of e_T against eps
  double max_slope = 0.0;
  std::vector<LinearizationSeries> series;
};

/// Tanh trials run at half the threshold; the first `slope_trials` also halve
/// eps five times from 0.05 to fit the order of e_T.
PropC4Sweep propC4_sweep(std::size_t linear_trials, std::size_t trials, std::size_t slope_trials, std::uint64_t seed,
                         bool keep_series = false);

}  // namespace selfheal
