#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "popsynth/batch_synth.hpp"
#include "popsynth/marginals.hpp"
#include "popsynth/outlier.hpp"

namespace popsynth {

enum ExitCode : int { kExitOk = 0, kExitValidation = 2, kExitPhase = 3, kExitConsistency = 4 };

struct PipelineConfig {
  std::filesystem::path coarse;
  std::filesystem::path schema;
  std::filesystem::path out;
  std::uint64_t seed = 0;
  SigmaMode sigma_mode = SigmaMode::SqrtN;
  DetectorKind outlier_detector = DetectorKind::RobustZ;
  /// Non-positive selects the detector's default.
  double outlier_threshold = 0.0;
  /// Empty: <out>/outlier_report.json.
  std::filesystem::path outlier_report;
  ModelKind batch_model = ModelKind::Knn;
  int knn_k = 5;
  bool scaling_report = true;
  /// Empty: <out>/scaling_report.json.
  std::filesystem::path scaling_report_path;
  /// Empty: <out>/correlation.csv.
  std::filesystem::path correlation_out;
  int threads = 1;

  std::filesystem::path population_path() const { return out / "population.csv"; }
  std::filesystem::path manifest_path() const { return out / "manifest.json"; }
  std::filesystem::path outlier_report_path() const;
  std::filesystem::path scaling_report_file() const;
  std::filesystem::path correlation_path() const;

  /// Every setting with defaults resolved, as recorded in the run manifest.
  nlohmann::json to_json() const;
};

/// Keys accepted in a config file, written with underscores (hyphens are
/// accepted as equivalent).
const std::vector<std::string>& config_keys();

/// Raw key/value settings keyed by canonical (underscore) name.
using ConfigValues = std::map<std::string, std::string>;

/// Reads a TOML-style `key = value` file. Unknown keys are rejected by name.
ConfigValues read_config_values(const std::filesystem::path& path);

/// Applies values over `base`. Relative paths resolve against `base_dir`.
PipelineConfig apply_config_values(PipelineConfig base, const ConfigValues& values,
                                   const std::filesystem::path& base_dir);

/// Thread count from POPSYNTH_THREADS, or 1.
int default_threads();

/// Checks settings and that input files exist.
void check_config(const PipelineConfig& config);

/// Loads a config file or a run manifest (JSON, its "config" object) over the
/// defaults without checking it.
PipelineConfig load_config(const std::filesystem::path& path);

/// load_config followed by check_config.
PipelineConfig validate_config(const std::filesystem::path& path);

struct PhaseRecord {
  std::string name;
  std::string status;  // ok, skipped, failed
  double seconds = 0.0;
  std::string detail;
};

struct RunResult {
  int exit_code = kExitOk;
  std::string message;
  std::vector<PhaseRecord> phases;
  /// Final artifact paths (".partial" names when the run did not succeed).
  std::vector<std::filesystem::path> artifacts;
  nlohmann::json manifest;
};

/// Outlier removal, core synthesis, batch extension, marginal scaling and
/// consistency verification. Artifacts are written with a ".partial" suffix and
/// renamed only when every phase succeeds.
RunResult run_synthesize(const PipelineConfig& config, std::ostream* log = nullptr);

/// Correlation matrix as CSV with a leading "feature" column.
std::string correlation_to_csv(const Matrix& corr, const std::vector<std::string>& names);

}  // namespace popsynth
