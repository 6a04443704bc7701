// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 when any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "selfheal/control.hpp"
#include "selfheal/experiments.hpp"
#include "selfheal/margins.hpp"
#include "selfheal/numerics.hpp"
#include "selfheal/pipeline.hpp"
#include "selfheal/rng.hpp"

using namespace selfheal;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

// 1. clean 100%, FGSM 0%, controlled 100% on the same adversarial points
Outcome toy_subspace() {
  const auto rec = fig2_toy(0);
  Outcome o;
  o.pass = rec.clean_accuracy == 1.0 && rec.fgsm_accuracy == 0.0 && rec.controlled_fgsm_accuracy == 1.0;
  o.detail = "clean " + fmt(rec.clean_accuracy) + " fgsm " + fmt(rec.fgsm_accuracy) + " controlled " +
             fmt(rec.controlled_fgsm_accuracy);
  return o;
}

// 2. random subspace angles
Outcome subspace_angles() {
  Outcome o{true, ""};
  const std::vector<std::pair<std::size_t, std::size_t>> pairs{{1, 2}, {2, 10}, {5, 50}};
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto [r, d] = pairs[i];
    const auto e = prop1_monte_carlo(r, d, 100000, sub_seed(0, i));
    const double ratio = static_cast<double>(r) / static_cast<double>(d);
    bool ok = e.mean_sin <= std::sqrt(ratio) + 3.0 * e.se_sin && std::abs(e.mean_sin2 - ratio) <= 3.0 * e.se_sin2;
    if (d == 2) ok = ok && std::abs(e.mean_sin - 2.0 / std::numbers::pi) <= 3.0 * e.se_sin;
    o.pass = o.pass && ok;
    o.detail += "(" + std::to_string(r) + "," + std::to_string(d) + ") sin " + fmt(e.mean_sin) + " sin2 " +
                fmt(e.mean_sin2) + (ok ? "; " : " FAILED; ");
  }
  return o;
}

// 3. linear error bound and its orthogonal equality case
Outcome linear_bound() {
  const auto s = thm1_sweep(1000, 200, 0, true);
  std::size_t violations = 0;
  for (const auto& c : s.certificates)
    for (std::size_t t = 1; t < c.bound_t.size(); ++t)
      if (!(c.empirical_t[t] <= c.bound_t[t] * (1.0 + 1e-9) + 1e-9)) {
        ++violations;
        break;
      }
  Outcome o;
  o.pass = violations == 0 && s.violations == 0 && s.max_equality_error <= 1e-9 && s.certificates.size() == 1200;
  o.detail = "violations " + std::to_string(violations) + "/" + std::to_string(s.certificates.size()) +
             " max ratio " + fmt(s.max_ratio) + " equality error " + fmt(s.max_equality_error);
  return o;
}

// 4. nonlinear error bound at half the threshold
Outcome nonlinear_bound() {
  const auto s = thm2_sweep(100, 0, 0.5, true);
  std::size_t violations = 0, uncertified = 0;
  for (const auto& c : s.certificates) {
    if (!c.certified) ++uncertified;
    for (std::size_t t = 0; t < c.bound_t.size(); ++t)
      if (!(c.empirical_t[t] <= c.bound_t[t] * (1.0 + 1e-9) + 1e-12)) {
        ++violations;
        break;
      }
  }
  Outcome o;
  o.pass = violations == 0 && uncertified == 0 && s.violations == 0 && s.certificates.size() == 100;
  o.detail = "violations " + std::to_string(violations) + "/100 max ratio " + fmt(s.max_ratio);
  return o;
}

// 5. curved-surface control gap
Outcome quadratic_gap() {
  const std::vector<double> curvatures{0.25, 0.5, 1.0}, eps{0.05, 0.1, 0.2};
  const auto s = propC2_sweep(curvatures, eps, {0.0, 0.1, 1.0}, 4, 0);
  std::size_t violations = 0;
  for (const auto& r : s.rows) {
    const double sigma = 2.0 * r.curvature;
    if (!(r.gap <= 4.0 * r.eps * r.eps * sigma * (1.0 + 2.0 * sigma) + 1e-12)) ++violations;
  }
  Outcome o;
  o.pass = violations == 0 && s.rows.size() == 27 && s.min_slope >= 1.8 && s.max_slope <= 2.2;
  o.detail = "violations " + std::to_string(violations) + "/" + std::to_string(s.rows.size()) + " slopes [" +
             fmt(s.min_slope) + ", " + fmt(s.max_slope) + "]";
  return o;
}

// 6. linearization error
Outcome linearization() {
  const auto s = propC4_sweep(100, 100, 100, 0);
  Outcome o;
  o.pass = s.max_linear_error <= 1e-10 && s.violations == 0 && s.min_slope >= 1.8 && s.max_slope <= 2.2;
  o.detail = "linear error " + fmt(s.max_linear_error) + " violations " + std::to_string(s.violations) +
             "/100 slopes [" + fmt(s.min_slope) + ", " + fmt(s.max_slope) + "]";
  return o;
}

// 7a. one linear layer: u = -Q (x - m) / (1 + c) since Q is idempotent
double one_layer_error() {
  double worst = 0.0;
  for (std::uint64_t i = 0; i < 20; ++i) {
    SeededRng rng(sub_seed(7, i));
    const std::size_t d = 2 + rng.below(5), r = 1 + rng.below(d - 1);
    LinearSubspaceEmbedding e;
    e.mean = rng.normal_vec(d);
    e.basis = rng.orthonormal_basis(d, r);
    DynamicalNet net;
    Layer l;
    l.weight = rng.normal_mat(d, d);
    l.bias = rng.normal_vec(d);
    l.activation = Activation::identity;
    net.layers = {l};
    net.head = l;
    const double c = std::vector<double>{0.0, 0.1, 1.0}[i % 3];
    const Vec64 x = rng.normal_vec(d);
    PmpConfig cfg;
    cfg.max_itr = 20;
    cfg.inner_itr = 20;
    const auto sol = solve_pmp(net, ControlObjective{c, {e}}, x, cfg);
    const Vec64 dx = x - e.mean;
    const Vec64 normal = dx - e.basis * (e.basis.transpose() * dx);
    worst = std::max(worst, max_abs_diff(sol.controls[0], (-1.0 / (1.0 + c)) * normal));
  }
  return worst;
}

// 7b. worst PMP / joint-descent objective ratio on depth-3 tanh nets
double depth3_ratio() {
  double worst = 0.0;
  std::size_t found = 0;
  NonlinearFixtureOptions opt;
  opt.max_depth = 3;
  for (std::uint64_t seed = 0; found < 5; ++seed) {
    const auto fx = random_nonlinear_fixture(sub_seed(11, seed), opt);
    if (fx.net.depth() != 3) continue;
    ++found;
    SeededRng rng(seed);
    const Vec64 x0 = fx.x0 + 0.3 * rng.normal_vec(fx.x0.size());
    const ControlObjective obj{fx.c, fx.embeddings};
    PmpConfig cfg;
    cfg.max_itr = 20;
    cfg.inner_itr = 20;
    cfg.step = 0.05;
    const double pmp = solve_pmp(fx.net, obj, x0, cfg).history.back();
    const double gd = solve_joint_gd(fx.net, obj, x0, 20000, 0.02).history.back();
    worst = std::max(worst, pmp / gd);
  }
  return worst;
}

// 7c. adjoint states against central differences of the cost-to-go
double adjoint_error() {
  double worst = 0.0;
  for (std::uint64_t i = 0; i < 50; ++i) {
    const auto fx = random_nonlinear_fixture(sub_seed(13, i), {});
    const ControlObjective obj{fx.c, fx.embeddings};
    SeededRng rng(i);
    const Vec64 x0 = fx.x0 + 0.3 * rng.normal_vec(fx.x0.size());
    const auto sol = solve_pmp(fx.net, obj, x0, PmpConfig{});
    const auto p = adjoint_states(fx.net, obj, sol.trajectory);
    for (std::size_t t = 0; t < fx.net.depth(); ++t) {
      const auto cost = [&](const Vec64& x) {
        Vec64 y = x;
        double j = 0.0;
        for (std::size_t s = t; s < fx.net.depth(); ++s) {
          j += running_loss(obj.embeddings[s], y, sol.controls[s], obj.c);
          y = apply(fx.net.layers[s], y + sol.controls[s]);
        }
        return j;
      };
      const Vec64& xt = sol.trajectory.states[t];
      Vec64 fd(xt.size());
      for (std::size_t k = 0; k < xt.size(); ++k) {
        const double h = 1e-6;
        Vec64 a = xt, b = xt;
        a[k] += h;
        b[k] -= h;
        fd[k] = (cost(a) - cost(b)) / (2.0 * h);
      }
      worst = std::max(worst, norm2(p[t] + fd) / std::max(norm2(fd), 1e-8));
    }
  }
  return worst;
}

Outcome solver() {
  const double one = one_layer_error(), ratio = depth3_ratio(), adj = adjoint_error();
  Outcome o;
  o.pass = one <= 1e-6 && ratio <= 1.01 && adj <= 1e-5;
  o.detail = "one-layer error " + fmt(one) + " pmp/gd " + fmt(ratio) + " adjoint rel error " + fmt(adj);
  return o;
}

// 8. I - K = alpha I + (1 - alpha) P
Outcome gain_identity() {
  SeededRng rng(8);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t d = 2 + rng.below(9), r = 1 + rng.below(d - 1);
    LinearSubspaceEmbedding e;
    e.mean = Vec64(d);
    e.basis = rng.orthonormal_basis(d, r);
    const double c = std::exp(rng.uniform(std::log(1e-3), std::log(1e3)));
    const Mat64 P = e.basis * e.basis.transpose();
    const double alpha = c / (1.0 + c);
    const Mat64 I = Mat64::identity(d);
    worst = std::max(worst, max_abs_diff(I - linear_feedback(e, Vec64(d), c).K, alpha * I + (1.0 - alpha) * P));
  }
  return {worst <= 1e-10, "max deviation " + fmt(worst)};
}

// 9. controlled beats bare under PGD on every norm without costing clean accuracy
Outcome robustness() {
  const auto setup = default_robustness_setup();
  Outcome o{true, ""};
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto r = run_robustness(setup, seed);
    bool ok = r.eval.clean_baseline - r.eval.clean_controlled <= 0.02;
    std::string row = "seed " + std::to_string(seed) + " clean " + fmt(r.eval.clean_baseline) + "/" +
                      fmt(r.eval.clean_controlled);
    for (const auto& n : r.eval.norms) {
      ok = ok && n.controlled > n.baseline;
      row += " " + norm_name(n.norm) + " " + fmt(n.baseline) + "/" + fmt(n.controlled);
    }
    o.pass = o.pass && ok && r.eval.norms.size() == 3;
    o.detail += row + (ok ? "; " : " FAILED; ");
  }
  return o;
}

// 10. every preset twice, byte-identical report.csv
Outcome determinism() {
  const fs::path scratch = fs::temp_directory_path() / "selfheal_acceptance";
  fs::remove_all(scratch);
  std::vector<fs::path> presets;
  for (const auto& entry : fs::directory_iterator(SELFHEAL_PRESET_DIR))
    if (entry.path().extension() == ".json") presets.push_back(entry.path());
  std::sort(presets.begin(), presets.end());
  Outcome o{!presets.empty(), ""};
  for (const auto& p : presets) {
    std::string text[2];
    for (int run = 0; run < 2; ++run) {
      RunOptions opt;
      opt.force = true;
      opt.output_dir = scratch / (p.stem().string() + "_" + std::to_string(run));
      run_experiment(p, opt);
      text[run] = read_text_file(opt.output_dir / "report.csv");
    }
    const bool same = text[0] == text[1];
    o.pass = o.pass && same;
    o.detail += p.stem().string() + (same ? " identical; " : " DIFFERS; ");
  }
  fs::remove_all(scratch);
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"toy subspace attack and control", toy_subspace},
      {"random subspace angles", subspace_angles},
      {"linear error bound sweep", linear_bound},
      {"nonlinear error bound sweep", nonlinear_bound},
      {"curved surface control gap", quadratic_gap},
      {"linearization error", linearization},
      {"control solver correctness", solver},
      {"feedback gain identity", gain_identity},
      {"robustness improvement", robustness},
      {"preset determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failed += !o.pass;
    std::printf("%s %2zu %s (%.2f s): %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), secs,
                o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failed, criteria.size());
  return failed ? 1 : 0;
}
