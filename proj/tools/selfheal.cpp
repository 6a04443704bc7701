// selfheal command-line driver. Every subcommand is a thin flag-to-params
// mapping onto the same stage runners the pipeline uses.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "selfheal/pipeline.hpp"

namespace fs = std::filesystem;
using namespace selfheal;

namespace {

struct Common {
  std::uint64_t seed = 0;
  bool json = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "Random seed")->capture_default_str();
  cmd->add_flag("--json", c.json, "Print machine-readable JSON to stdout");
}

void print_metrics(const std::string& stage, const Metrics& m, bool json) {
  if (json) {
    Json doc;
    doc["stage"] = stage;
    Json metrics = Json::object();
    for (const auto& [k, v] : m) metrics[k] = number_to_json(v);
    doc["metrics"] = metrics;
    std::cout << doc.dump(2) << "\n";
    return;
  }
  for (const auto& [k, v] : m) std::cout << k << " " << format_double(v) << "\n";
}

int report_failure(const std::exception& e, int code, bool json) {
  if (json) {
    Json doc;
    doc["error"] = e.what();
    doc["exit_code"] = code;
    std::cout << doc.dump(2) << "\n";
  }
  std::cerr << "error: " << e.what() << "\n";
  return code;
}

// Runs fn and maps failures onto exit codes: 2 for malformed input, 1 otherwise.
template <class Fn>
int guarded(bool json, Fn&& fn) {
  try {
    fn();
    return 0;
  } catch (const StageError& e) {
    return report_failure(e, e.exit_code(), json);
  } catch (const ParseError& e) {
    return report_failure(e, 2, json);
  } catch (const std::exception& e) {
    return report_failure(e, 1, json);
  }
}

Json pmp_params(std::size_t max_itr, std::size_t inner_itr, double step, double c, bool greedy_only) {
  Json j;
  j["max_itr"] = max_itr;
  j["inner_itr"] = inner_itr;
  j["step"] = step;
  j["c"] = c;
  j["greedy_only"] = greedy_only;
  return j;
}

fs::path report_path(const fs::path& p) { return fs::is_directory(p) ? p / "report.json" : p; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Closed-loop control for classifier robustness: experiments, attacks and bound checks."};
  app.require_subcommand(1);
  int exit_code = 0;

  // generate
  Common gen_c;
  SyntheticSpec spec;
  std::string kind = "subspace_two_class";
  bool holdout = false;
  std::string gen_out = "train.csv", gen_test;
  auto* gen = app.add_subcommand("generate", "Write a synthetic labeled dataset as CSV");
  add_common(gen, gen_c);
  gen->add_option("--kind", kind, "subspace_two_class, curved_manifold_two_class, circle or two_moons_like")
      ->capture_default_str();
  gen->add_option("--d", spec.d, "Ambient dimension")->capture_default_str();
  gen->add_option("--r", spec.r, "Intrinsic dimension")->capture_default_str();
  gen->add_option("--n-per-class", spec.n_per_class, "Points per class")->capture_default_str();
  gen->add_option("--noise", spec.noise, "Off-manifold noise level")->capture_default_str();
  gen->add_option("--gap", spec.gap, "Gap between the classes along the first intrinsic axis")->capture_default_str();
  gen->add_option("--spread", spec.spread, "Extent of each class")->capture_default_str();
  gen->add_option("--curvature", spec.curvature, "Curved kind: height coefficient")->capture_default_str();
  gen->add_option("--radius", spec.radius, "Circle kind: radius")->capture_default_str();
  gen->add_flag("--holdout", holdout, "Split alternate points into a test file");
  gen->add_option("--out", gen_out, "Training CSV path")->capture_default_str();
  gen->add_option("--test-out", gen_test, "Test CSV path (with --holdout)");
  gen->callback([&] {
    exit_code = guarded(gen_c.json, [&] {
      Json p;
      p["spec"] = {{"kind", kind},         {"d", spec.d},         {"r", spec.r},
                   {"n_per_class", spec.n_per_class}, {"noise", spec.noise}, {"gap", spec.gap},
                   {"spread", spec.spread}, {"curvature", spec.curvature}, {"radius", spec.radius}};
      p["holdout"] = holdout;
      StageIo io;
      io.outputs["train"] = gen_out;
      if (!gen_test.empty()) io.outputs["test"] = gen_test;
      print_metrics("generate", execute_stage("generate", p, gen_c.seed, io), gen_c.json);
    });
  });

  // train
  Common tr_c;
  std::string tr_data, tr_test, tr_out = "model.json", tr_act = "tanh";
  std::vector<std::size_t> widths;
  TrainConfig tcfg;
  bool tr_skip = false;
  auto* tr = app.add_subcommand("train", "Train a feed-forward classifier with momentum SGD");
  add_common(tr, tr_c);
  tr->add_option("--data", tr_data, "Training CSV")->required();
  tr->add_option("--test", tr_test, "Optional test CSV for a held-out accuracy");
  tr->add_option("--widths", widths, "Hidden layer widths")->required()->delimiter(',');
  tr->add_option("--activation", tr_act, "identity, tanh, relu or softplus")->capture_default_str();
  tr->add_flag("--residual", tr_skip, "Add identity skips to square layers");
  tr->add_option("--epochs", tcfg.epochs)->capture_default_str();
  tr->add_option("--batch-size", tcfg.batch_size)->capture_default_str();
  tr->add_option("--lr", tcfg.learning_rate)->capture_default_str();
  tr->add_option("--momentum", tcfg.momentum)->capture_default_str();
  tr->add_option("--out", tr_out, "Model JSON path")->capture_default_str();
  tr->callback([&] {
    exit_code = guarded(tr_c.json, [&] {
      Json p;
      p["arch"] = {{"widths", widths}, {"activation", tr_act}, {"residual_skip", tr_skip}};
      p["train"] = {{"epochs", tcfg.epochs},
                    {"batch_size", tcfg.batch_size},
                    {"learning_rate", tcfg.learning_rate},
                    {"momentum", tcfg.momentum}};
      StageIo io;
      io.inputs["train"] = tr_data;
      if (!tr_test.empty()) io.inputs["test"] = tr_test;
      io.outputs["model"] = tr_out;
      print_metrics("train", execute_stage("train", p, tr_c.seed, io), tr_c.json);
    });
  });

  // fit-embedding
  Common fe_c;
  std::string fe_model, fe_data, fe_out = "embeddings.json", fe_kind = "autoencoder";
  std::size_t fe_rank = 1;
  AutoencoderConfig ac;
  auto* fe = app.add_subcommand("fit-embedding", "Fit one embedding manifold per layer on the training states");
  add_common(fe, fe_c);
  fe->add_option("--model", fe_model, "Model JSON")->required();
  fe->add_option("--data", fe_data, "Training CSV")->required();
  fe->add_option("--kind", fe_kind, "linear or autoencoder")->capture_default_str();
  fe->add_option("--rank", fe_rank, "Manifold dimension")->capture_default_str();
  fe->add_option("--hidden", ac.hidden, "Autoencoder hidden width")->capture_default_str();
  fe->add_option("--input-noise", ac.input_noise, "Denoising noise level")->capture_default_str();
  fe->add_option("--ce-weight", ac.ce_weight, "Classifier loss weight (only 0 is supported)")->capture_default_str();
  fe->add_option("--epochs", ac.train.epochs)->capture_default_str();
  fe->add_option("--batch-size", ac.train.batch_size)->capture_default_str();
  fe->add_option("--lr", ac.train.learning_rate)->capture_default_str();
  fe->add_option("--momentum", ac.train.momentum)->capture_default_str();
  fe->add_option("--out", fe_out, "Embeddings JSON path")->capture_default_str();
  fe->callback([&] {
    exit_code = guarded(fe_c.json, [&] {
      Json p;
      p["kind"] = fe_kind;
      p["rank"] = fe_rank;
      p["autoencoder"] = {{"hidden", ac.hidden},
                          {"input_noise", ac.input_noise},
                          {"ce_weight", ac.ce_weight},
                          {"epochs", ac.train.epochs},
                          {"batch_size", ac.train.batch_size},
                          {"learning_rate", ac.train.learning_rate},
                          {"momentum", ac.train.momentum}};
      StageIo io;
      io.inputs["model"] = fe_model;
      io.inputs["train"] = fe_data;
      io.outputs["embeddings"] = fe_out;
      print_metrics("fit-embedding", execute_stage("fit-embedding", p, fe_c.seed, io), fe_c.json);
    });
  });

  // Solver flags shared by control and attack.
  PmpConfig pmp;
  auto add_pmp = [&](CLI::App* cmd) {
    cmd->add_option("--c", pmp.c, "Control cost")->capture_default_str();
    cmd->add_option("--max-itr", pmp.max_itr, "Outer solver iterations")->capture_default_str();
    cmd->add_option("--inner-itr", pmp.inner_itr, "Inner ascent steps per layer")->capture_default_str();
    cmd->add_option("--step", pmp.step, "Inner ascent rate")->capture_default_str();
    cmd->add_flag("--greedy-only", pmp.greedy_only, "Stop after the greedy projection");
  };

  // control
  Common ct_c;
  std::string ct_model, ct_emb, ct_data, ct_out;
  auto* ct = app.add_subcommand("control", "Solve the closed-loop controls for every point of a dataset");
  add_common(ct, ct_c);
  ct->add_option("--model", ct_model, "Model JSON")->required();
  ct->add_option("--embeddings", ct_emb, "Embeddings JSON")->required();
  ct->add_option("--data,--input", ct_data, "Dataset CSV")->required();
  ct->add_option("--out", ct_out, "Per-point CSV (optional)");
  add_pmp(ct);
  ct->callback([&] {
    exit_code = guarded(ct_c.json, [&] {
      Json p;
      p["pmp"] = pmp_params(pmp.max_itr, pmp.inner_itr, pmp.step, pmp.c, pmp.greedy_only);
      StageIo io;
      io.inputs = {{"model", ct_model}, {"embeddings", ct_emb}, {"data", ct_data}};
      if (!ct_out.empty()) io.outputs["table"] = ct_out;
      print_metrics("control", execute_stage("control", p, ct_c.seed, io), ct_c.json);
    });
  });

  // attack
  Common at_c;
  std::string at_model, at_emb, at_data, at_out, at_table, at_norm = "linf";
  double at_eps = 0.1, at_step_size = 0.0;
  std::size_t at_steps = 20, at_max_points = 0;
  bool whitebox = false;
  auto* at = app.add_subcommand("attack", "PGD against the bare model, optionally scored on the controlled one");
  add_common(at, at_c);
  at->add_option("--model", at_model, "Model JSON")->required();
  at->add_option("--embeddings", at_emb, "Embeddings JSON; enables controlled evaluation");
  at->add_flag("--whitebox", whitebox, "Differentiate through the unrolled controlled solver");
  at->add_option("--norm", at_norm, "l1, l2 or linf")->capture_default_str();
  at->add_option("--eps", at_eps, "Ball radius")->capture_default_str();
  at->add_option("--steps", at_steps, "PGD steps")->capture_default_str();
  at->add_option("--step-size", at_step_size, "PGD step (0 picks eps/8, eps/4 for l1)")->capture_default_str();
  at->add_option("--max-points", at_max_points, "Attack a seeded subset (0 = all)")->capture_default_str();
  at->add_option("--data", at_data, "Dataset CSV")->required();
  at->add_option("--out", at_out, "Adversarial CSV (optional)");
  at->add_option("--table", at_table, "Summary CSV (optional)");
  add_pmp(at);
  at->callback([&] {
    exit_code = guarded(at_c.json, [&] {
      if (whitebox && at_emb.empty()) throw ParseError("--whitebox needs --embeddings");
      Json p;
      p["budgets"] = Json::array({{{"norm", at_norm}, {"eps", at_eps}, {"step_size", at_step_size}}});
      p["steps"] = at_steps;
      p["threat"] = whitebox ? "whitebox" : "oblivious";
      p["max_points"] = at_max_points;
      p["controlled"] = !at_emb.empty();
      p["pmp"] = pmp_params(pmp.max_itr, pmp.inner_itr, pmp.step, pmp.c, pmp.greedy_only);
      StageIo io;
      io.inputs = {{"model", at_model}, {"data", at_data}};
      if (!at_emb.empty()) io.inputs["embeddings"] = at_emb;
      if (!at_out.empty()) io.outputs["adversarial"] = at_out;
      if (!at_table.empty()) io.outputs["table"] = at_table;
      print_metrics("attack", execute_stage("attack", p, at_c.seed, io), at_c.json);
    });
  });

  // margins
  Common mg_c;
  std::string mg_model, mg_data, mg_emb, mg_out;
  std::size_t mg_k = 8;
  auto* mg = app.add_subcommand("margins", "Euclidean, geodesic and projected classifier margins");
  add_common(mg, mg_c);
  mg->add_option("--model", mg_model, "Model JSON")->required();
  mg->add_option("--data", mg_data, "Dataset CSV")->required();
  mg->add_option("--embeddings,--embedding", mg_emb, "Embeddings JSON; adds the margin after input projection");
  mg->add_option("--k,--knn", mg_k, "Neighbours in the geodesic graph")->capture_default_str();
  mg->add_option("--out", mg_out, "Margins JSON (optional)");
  mg->callback([&] {
    exit_code = guarded(mg_c.json, [&] {
      Json p;
      p["k"] = mg_k;
      p["projection"] = !mg_emb.empty();
      StageIo io;
      io.inputs = {{"model", mg_model}, {"data", mg_data}};
      if (!mg_emb.empty()) io.inputs["embeddings"] = mg_emb;
      if (!mg_out.empty()) io.outputs["table"] = mg_out;
      print_metrics("margins", execute_stage("margins", p, mg_c.seed, io), mg_c.json);
    });
  });

  // verify-bounds
  Common vb_c;
  std::string suite = "thm1", vb_out;
  std::optional<std::size_t> trials;
  std::size_t orth = 200;
  double eps_fraction = 0.5;
  auto* vb = app.add_subcommand("verify-bounds", "Randomized checks of the closed-loop error bounds");
  add_common(vb, vb_c);
  vb->add_option("--suite", suite, "thm1, thm2, propC2 or propC4")
      ->check(CLI::IsMember({"thm1", "thm2", "propC2", "propC4"}))
      ->capture_default_str();
  vb->add_option("--trials", trials, "Random trials (suite default when omitted)");
  vb->add_option("--orthogonal-trials", orth, "thm1: extra orthogonal-Jacobian trials")->capture_default_str();
  vb->add_option("--eps-fraction", eps_fraction, "thm2: eps as a fraction of the threshold")->capture_default_str();
  vb->add_option("--out", vb_out, "Certificate JSON (optional)");
  vb->callback([&] {
    exit_code = guarded(vb_c.json, [&] {
      Json p;
      p["suite"] = suite;
      if (suite == "thm1") {
        if (trials) p["trials"] = *trials;
        p["orthogonal_trials"] = orth;
      } else if (suite == "thm2") {
        if (trials) p["trials"] = *trials;
        p["eps_fraction"] = eps_fraction;
      } else if (suite == "propC4") {
        if (trials) p["trials"] = *trials;
      }
      StageIo io;
      if (!vb_out.empty()) io.outputs["certificates"] = vb_out;
      print_metrics("verify-bounds", execute_stage("verify-bounds", p, vb_c.seed, io), vb_c.json);
    });
  });

  // run
  bool run_json = false, force = false;
  std::string config, run_out;
  auto* run = app.add_subcommand("run", "Execute an experiment config and write report.json / report.csv");
  run->add_option("config", config, "Experiment config JSON")->required();
  run->add_flag("--force", force, "Rerun stages even when their outputs are up to date");
  run->add_option("--out", run_out, "Output directory (overrides the config)");
  run->add_flag("--json", run_json, "Print the report JSON to stdout");
  std::uint64_t run_seed = 0;
  run->add_option("--seed", run_seed, "Accepted for uniformity; the config's seed is authoritative");
  run->callback([&] {
    exit_code = guarded(run_json, [&] {
      RunOptions opt;
      opt.force = force;
      opt.output_dir = run_out;
      opt.log = &std::cerr;
      const auto summary = run_experiment(config, opt);
      if (run_json) {
        std::cout << summary.report.dump(2) << "\n";
      } else {
        std::cout << report_csv(summary.report);
        std::cout << "report written to " << (summary.output_dir / "report.csv").string() << "\n";
      }
    });
  });

  // compare
  bool cmp_json = false;
  std::string rep_a, rep_b;
  auto* cmp = app.add_subcommand("compare", "Metric deltas between two reports (b - a)");
  cmp->add_option("a", rep_a, "report.json or its directory")->required();
  cmp->add_option("b", rep_b, "report.json or its directory")->required();
  cmp->add_flag("--json", cmp_json, "Print rows as JSON");
  std::uint64_t cmp_seed = 0;
  cmp->add_option("--seed", cmp_seed, "Accepted for uniformity; unused");
  cmp->callback([&] {
    exit_code = guarded(cmp_json, [&] {
      const auto rows = compare_reports(read_json_file(report_path(rep_a)), read_json_file(report_path(rep_b)));
      if (cmp_json) {
        Json out = Json::array();
        for (const auto& r : rows)
          out.push_back({{"stage", r.stage},
                         {"metric", r.metric},
                         {"a", number_to_json(r.a)},
                         {"b", number_to_json(r.b)},
                         {"delta", number_to_json(r.delta)},
                         {"status", r.status}});
        std::cout << out.dump(2) << "\n";
        return;
      }
      std::cout << "stage,metric,a,b,delta,status\n";
      for (const auto& r : rows) {
        std::cout << r.stage << "," << r.metric << ",";
        std::cout << (r.status == "only_b" ? "" : format_double(r.a)) << ",";
        std::cout << (r.status == "only_a" ? "" : format_double(r.b)) << ",";
        std::cout << (r.status == "both" ? format_double(r.delta) : "") << "," << r.status << "\n";
      }
    });
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // Help and version requests exit 0; malformed command lines count as parse errors.
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  return exit_code;
}
