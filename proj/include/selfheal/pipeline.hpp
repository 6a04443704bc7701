#pragma once

// Experiment orchestration. A config names a global seed, an output
// directory and an ordered list of stages; each stage reads and writes
// artifacts in that directory and records a metrics file. Reports are
// assembled from the metrics files only, so they are reproducible from disk.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "selfheal/io.hpp"

namespace selfheal {

using Metrics = std::vector<std::pair<std::string, double>>;

/// A failure inside a named stage. exit_code is 2 for malformed inputs
/// (configs, artifacts) and 1 otherwise.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what, int exit_code)
      : Error("stage '" + stage + "' failed: " + what), stage_(std::move(stage)), exit_code_(exit_code) {}
  const std::string& stage() const { return stage_; }
  int exit_code() const { return exit_code_; }

 private:
  std::string stage_;
  int exit_code_;
};

/// Artifact paths by role ("train", "test", "data", "model", "embeddings",
/// "table", "adversarial", "certificates", "grid").
struct StageIo {
  std::map<std::string, std::filesystem::path> inputs;
  std::map<std::string, std::filesystem::path> outputs;
};

const std::vector<std::string>& stage_types();

/// Runs one stage. Params are the stage's JSON object minus the bookkeeping
/// keys; unknown keys raise ParseError.
Metrics execute_stage(const std::string& type, const Json& params, std::uint64_t seed, const StageIo& io);

/// Default artifact layout of a stage inside the output directory.
StageIo default_stage_io(const std::string& type, const std::string& name, const Json& params,
                         const std::filesystem::path& dir);

struct StagePlan {
  std::string type;
  std::string name;
  std::uint64_t seed = 0;
  Json params;
  Json io_override;  // {"inputs": {role: file}, "outputs": {...}} relative to the output directory
  StageIo io;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir;
  std::vector<StagePlan> stages;
  std::string hash;  // FNV-1a of the canonical config text
};

ExperimentConfig parse_experiment_config(const Json& doc, const std::string& where);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// 64-bit FNV-1a as 16 lowercase hex digits.
std::string fnv1a_hex(const std::string& text);

struct RunOptions {
  bool force = false;
  std::filesystem::path output_dir;  // overrides the config when nonempty
  std::ostream* log = nullptr;
};

struct StageOutcome {
  std::string name;
  bool skipped = false;
};

struct RunSummary {
  std::filesystem::path output_dir;
  std::vector<StageOutcome> stages;
  Json report;
};

/// Executes the stages in order, skipping a stage when every output is at
/// least as new as every input and the config file, then writes
/// report.json and report.csv.
RunSummary run_experiment(const std::filesystem::path& config_path, const RunOptions& options);

/// report.csv text: "stage,metric,value" rows in stage order.
std::string report_csv(const Json& report);

struct CompareRow {
  std::string stage;
  std::string metric;
  double a = 0.0;
  double b = 0.0;
  double delta = 0.0;  // b - a
  std::string status;  // "both", "only_a" or "only_b"
};

/// Side-by-side metrics of two report.json documents; throws ParseError when
/// either is not a report.
std::vector<CompareRow> compare_reports(const Json& a, const Json& b);

}  // namespace selfheal
