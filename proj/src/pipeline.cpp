#include "popsynth/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <functional>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <boost/version.hpp>

#include "popsynth/scaling.hpp"

#ifndef POPSYNTH_VERSION
#define POPSYNTH_VERSION "unknown"
#endif

namespace popsynth {

namespace fs = std::filesystem;

namespace {

std::string canonical_key(std::string key) {
  std::replace(key.begin(), key.end(), '-', '_');
  return key;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw Error(Errc::ConfigInvalid, "'" + key + "' expects true or false, got '" + text + "'");
}

template <typename T>
T parse_integer(const std::string& key, const std::string& text) {
  T value{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw Error(Errc::ConfigInvalid, "'" + key + "' expects an integer, got '" + text + "'");
  }
  return value;
}

fs::path resolve(const fs::path& base_dir, const std::string& text) {
  fs::path p(text);
  if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
  return p.lexically_normal();
}

std::string path_text(const fs::path& p) { return p.empty() ? std::string() : p.string(); }

fs::path partial(const fs::path& p) { return fs::path(p.string() + ".partial"); }

}  // namespace

fs::path PipelineConfig::outlier_report_path() const {
  return outlier_report.empty() ? out / "outlier_report.json" : outlier_report;
}
fs::path PipelineConfig::scaling_report_file() const {
  return scaling_report_path.empty() ? out / "scaling_report.json" : scaling_report_path;
}
fs::path PipelineConfig::correlation_path() const {
  return correlation_out.empty() ? out / "correlation.csv" : correlation_out;
}

nlohmann::json PipelineConfig::to_json() const {
  return nlohmann::json{{"coarse", path_text(coarse)},
                        {"schema", path_text(schema)},
                        {"out", path_text(out)},
                        {"seed", seed},
                        {"sigma_mode", to_string(sigma_mode)},
                        {"outlier_detector", to_string(outlier_detector)},
                        {"outlier_threshold", outlier_threshold},
                        {"outlier_report", path_text(outlier_report_path())},
                        {"batch_model", to_string(batch_model)},
                        {"knn_k", knn_k},
                        {"scaling_report", scaling_report},
                        {"scaling_report_path", path_text(scaling_report_file())},
                        {"correlation_out", path_text(correlation_path())},
                        {"threads", threads}};
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys{
      "coarse",     "schema",         "out",         "seed",           "sigma_mode",
      "outlier_detector", "outlier_threshold", "outlier_report", "batch_model", "knn_k",
      "scaling_report", "scaling_report_path", "correlation_out", "threads"};
  return keys;
}

ConfigValues read_config_values(const fs::path& path) {
  if (!fs::exists(path)) throw Error(Errc::Io, "config file '" + path.string() + "' does not exist");
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigTOML().from_file(path.string());
  } catch (const CLI::Error& e) {
    throw Error(Errc::ConfigInvalid, "cannot parse '" + path.string() + "': " + e.what());
  }
  ConfigValues values;
  const auto& known = config_keys();
  for (const auto& item : items) {
    const std::string key = canonical_key(item.fullname());
    if (item.name == "++" || item.name == "--") continue;  // section markers
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw Error(Errc::UnknownKey, "unknown config key '" + item.fullname() + "'");
    }
    if (item.inputs.size() != 1) throw Error(Errc::ConfigInvalid, "config key '" + key + "' needs one value");
    values[key] = item.inputs.front();
  }
  return values;
}

PipelineConfig apply_config_values(PipelineConfig cfg, const ConfigValues& values, const fs::path& base_dir) {
  const auto& known = config_keys();
  for (const auto& [raw_key, value] : values) {
    const std::string key = canonical_key(raw_key);
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw Error(Errc::UnknownKey, "unknown config key '" + raw_key + "'");
    }
    if (key == "coarse") cfg.coarse = resolve(base_dir, value);
    else if (key == "schema") cfg.schema = resolve(base_dir, value);
    else if (key == "out") cfg.out = resolve(base_dir, value);
    else if (key == "seed") cfg.seed = parse_integer<std::uint64_t>(key, value);
    else if (key == "sigma_mode") cfg.sigma_mode = parse_sigma_mode(value);
    else if (key == "outlier_detector") cfg.outlier_detector = parse_detector_kind(value);
    else if (key == "outlier_threshold") {
      try {
        cfg.outlier_threshold = parse_double(value);
      } catch (const Error&) {
        throw Error(Errc::ConfigInvalid, "'outlier_threshold' expects a number, got '" + value + "'");
      }
    } else if (key == "outlier_report") cfg.outlier_report = resolve(base_dir, value);
    else if (key == "batch_model") cfg.batch_model = parse_model_kind(value);
    else if (key == "knn_k") cfg.knn_k = parse_integer<int>(key, value);
    else if (key == "scaling_report") cfg.scaling_report = parse_bool(key, value);
    else if (key == "scaling_report_path") cfg.scaling_report_path = resolve(base_dir, value);
    else if (key == "correlation_out") cfg.correlation_out = resolve(base_dir, value);
    else if (key == "threads") cfg.threads = parse_integer<int>(key, value);
  }
  return cfg;
}

int default_threads() {
  if (const char* env = std::getenv("POPSYNTH_THREADS")) {
    const std::string text(env);
    if (!text.empty()) {
      const int n = parse_integer<int>("POPSYNTH_THREADS", text);
      if (n >= 1) return n;
      throw Error(Errc::ConfigInvalid, "POPSYNTH_THREADS must be at least 1");
    }
  }
  return 1;
}

void check_config(const PipelineConfig& cfg) {
  if (cfg.coarse.empty()) throw Error(Errc::ConfigInvalid, "no coarse table given");
  if (cfg.schema.empty()) throw Error(Errc::ConfigInvalid, "no schema given");
  if (cfg.out.empty()) throw Error(Errc::ConfigInvalid, "no output directory given");
  if (!fs::is_regular_file(cfg.coarse)) throw Error(Errc::Io, "coarse table '" + cfg.coarse.string() + "' does not exist");
  if (!fs::is_regular_file(cfg.schema)) throw Error(Errc::Io, "schema '" + cfg.schema.string() + "' does not exist");
  if (cfg.knn_k < 1) throw Error(Errc::ConfigInvalid, "knn_k must be at least 1");
  if (cfg.threads < 1) throw Error(Errc::ConfigInvalid, "threads must be at least 1");
}

PipelineConfig load_config(const fs::path& path) {
  const fs::path base_dir = fs::absolute(path).parent_path();
  PipelineConfig cfg;
  cfg.threads = default_threads();
  const std::string text = read_text(path);
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::ConfigInvalid, "cannot parse manifest '" + path.string() + "': " + e.what());
    }
    const nlohmann::json& settings = doc.contains("config") ? doc["config"] : doc;
    ConfigValues values;
    for (const auto& [key, value] : settings.items()) {
      values[key] = value.is_string() ? value.get<std::string>() : value.dump();
    }
    cfg = apply_config_values(cfg, values, base_dir);
  } else {
    cfg = apply_config_values(cfg, read_config_values(path), base_dir);
  }
  return cfg;
}

PipelineConfig validate_config(const fs::path& path) {
  PipelineConfig cfg = load_config(path);
  check_config(cfg);
  return cfg;
}

std::string correlation_to_csv(const Matrix& corr, const std::vector<std::string>& names) {
  StringTable table;
  table.header.push_back("feature");
  for (const auto& n : names) table.header.push_back(n);
  for (Index i = 0; i < corr.rows(); ++i) {
    std::vector<std::string> row{names.at(static_cast<std::size_t>(i))};
    for (Index j = 0; j < corr.cols(); ++j) row.push_back(format_double(corr(i, j)));
    table.rows.push_back(std::move(row));
  }
  return to_csv(table);
}

namespace {

struct PhaseFailure {
  int code;
  std::string message;
};

class Runner {
 public:
  Runner(const PipelineConfig& cfg, std::ostream* log) : cfg_(cfg), log_(log) {}

  RunResult run();

 private:
  void phase(const std::string& name, int failure_code, const std::function<std::string()>& body);
  void skip(const std::string& name, const std::string& detail);
  void write(const fs::path& final_path, std::string_view text);
  void finish(bool success);

  const PipelineConfig& cfg_;
  std::ostream* log_;
  RunResult result_;
  std::vector<fs::path> pending_;
};

void Runner::phase(const std::string& name, int failure_code, const std::function<std::string()>& body) {
  const auto start = std::chrono::steady_clock::now();
  PhaseRecord record{name, "ok", 0.0, {}};
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };
  try {
    record.detail = body();
  } catch (const PhaseFailure&) {
    throw;
  } catch (const std::exception& e) {
    record.status = "failed";
    record.seconds = elapsed();
    record.detail = e.what();
    result_.phases.push_back(record);
    if (log_) *log_ << "[" << name << "] failed: " << e.what() << "\n";
    throw PhaseFailure{failure_code, name + ": " + e.what()};
  }
  record.seconds = elapsed();
  if (log_) {
    *log_ << "[" << name << "] ok";
    if (!record.detail.empty()) *log_ << ": " << record.detail;
    *log_ << "\n";
  }
  result_.phases.push_back(std::move(record));
}

void Runner::skip(const std::string& name, const std::string& detail) {
  result_.phases.push_back({name, "skipped", 0.0, detail});
  if (log_) *log_ << "[" << name << "] skipped: " << detail << "\n";
}

void Runner::write(const fs::path& final_path, std::string_view text) {
  if (final_path.has_parent_path()) fs::create_directories(final_path.parent_path());
  write_text(partial(final_path), text);
  pending_.push_back(final_path);
}

void Runner::finish(bool success) {
  for (const auto& p : pending_) {
    if (success) {
      fs::rename(partial(p), p);
      result_.artifacts.push_back(p);
    } else {
      result_.artifacts.push_back(partial(p));
    }
  }
}

RunResult Runner::run() {
  FeatureSchema schema;
  CoarseTable table;
  SyntheticPopulation pop;
  CorrelationModel core_model;
  std::vector<BatchDiagnostics> batch_diag;
  nlohmann::json outlier_doc = {{"skipped", true}};
  nlohmann::json scaling_doc;
  bool consistent = true;

  nlohmann::json& manifest = result_.manifest;
  manifest["format"] = "popsynth-manifest";
  manifest["config"] = cfg_.to_json();
  manifest["seed"] = cfg_.seed;
  manifest["versions"] = {{"popsynth", POPSYNTH_VERSION},
                          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                                        "." + std::to_string(EIGEN_MINOR_VERSION)},
                          {"boost", BOOST_LIB_VERSION},
                          {"compiler", __VERSION__}};

  try {
    phase("load", kExitValidation, [&] {
      check_config(cfg_);
      schema = load_schema(cfg_.schema);
      table = load_coarse_table(cfg_.coarse, schema);
      return std::to_string(table.num_units()) + " units, " + std::to_string(schema.size()) + " features";
    });
    fs::create_directories(cfg_.out);

    if (cfg_.outlier_detector == DetectorKind::None) {
      skip("outliers", "detector none");
    } else {
      phase("outliers", kExitPhase, [&] {
        const auto detector = make_detector(cfg_.outlier_detector, cfg_.outlier_threshold, &schema);
        const OutlierReport report = detect_outliers(table, *detector);
        table = remove_outliers(table, report);
        outlier_doc = report.to_json();
        outlier_doc["skipped"] = false;
        write(cfg_.outlier_report_path(), report.to_json().dump(2) + "\n");
        return std::to_string(report.flagged_units.size()) + " unit(s) removed";
      });
    }

    const SynthesisOptions options{cfg_.sigma_mode, cfg_.threads};
    phase("core", kExitPhase, [&] {
      pop = synthesize_core(table, schema, cfg_.seed, options, &core_model);
      write(cfg_.correlation_path(), correlation_to_csv(core_model.gamma, core_model.features));
      return std::to_string(pop.num_rows()) + " individuals" + (core_model.repaired ? ", correlation repaired" : "");
    });

    const BatchModelConfig model_cfg{cfg_.batch_model, cfg_.knn_k};
    const BatchPlan plan = make_batch_plan(schema, model_cfg);
    if (plan.batches.empty()) {
      skip("batches", "no batch features");
    } else {
      phase("batches", kExitPhase, [&] {
        pop = run_batches(pop, table, schema, plan, cfg_.seed, options, model_cfg, &batch_diag);
        return std::to_string(plan.batches.size()) + " batch(es)";
      });
    }

    ScalingReport scaling;
    phase("scaling", kExitPhase, [&] {
      auto scaled = scale_population(pop, table, schema, cfg_.seed, cfg_.threads);
      pop = std::move(scaled.population);
      scaling = std::move(scaled.report);
      return "correlation drift " + format_double(scaling.correlation_drift);
    });

    phase("verify", kExitPhase, [&] {
      const ScalingReport verification = verify_consistency(pop, table, schema);
      consistent = verification.passed();
      scaling_doc = {{"scaling", scaling.to_json()}, {"verification", verification.to_json()}};
      return consistent ? std::string("all aggregates match")
                        : std::to_string(verification.failures().size()) + " aggregate(s) deviate";
    });

    write(cfg_.population_path(), population_to_csv(pop));
    write(metadata_path(cfg_.population_path()), population_metadata(pop).dump(2) + "\n");
    if (cfg_.scaling_report) write(cfg_.scaling_report_file(), scaling_doc.dump(2) + "\n");

    if (!consistent) {
      result_.exit_code = kExitConsistency;
      result_.message = "consistency verification failed";
    }
  } catch (const PhaseFailure& failure) {
    result_.exit_code = failure.code;
    result_.message = failure.message;
  }

  nlohmann::json phases = nlohmann::json::array();
  for (const auto& p : result_.phases) {
    phases.push_back({{"name", p.name}, {"status", p.status}, {"seconds", p.seconds}, {"detail", p.detail}});
  }
  manifest["phases"] = std::move(phases);
  manifest["outliers"] = outlier_doc;
  nlohmann::json batches = nlohmann::json::array();
  for (const auto& b : batch_diag) {
    batches.push_back({{"label", b.label},
                       {"training_rows", b.training_rows},
                       {"correlation_repaired", b.correlation_repaired},
                       {"marginal_only", b.marginal_only}});
  }
  manifest["batches"] = std::move(batches);
  manifest["exit_code"] = result_.exit_code;
  if (!result_.message.empty()) manifest["message"] = result_.message;

  const bool success = result_.exit_code == kExitOk;
  if (result_.exit_code != kExitValidation) {
    nlohmann::json artifacts = nlohmann::json::array();
    for (const auto& p : pending_) artifacts.push_back(path_text(success ? p : partial(p)));
    artifacts.push_back(path_text(success ? cfg_.manifest_path() : partial(cfg_.manifest_path())));
    manifest["artifacts"] = std::move(artifacts);
    write(cfg_.manifest_path(), manifest.dump(2) + "\n");
  }
  finish(success);
  return result_;
}

}  // namespace

RunResult run_synthesize(const PipelineConfig& config, std::ostream* log) {
  Runner runner(config, log);
  return runner.run();
}

}  // namespace popsynth
