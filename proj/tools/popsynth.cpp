#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "popsynth/evaluation.hpp"
#include "popsynth/matching.hpp"
#include "popsynth/pipeline.hpp"
#include "popsynth/testkit.hpp"

namespace fs = std::filesystem;
using namespace popsynth;

namespace {

// Flag name -> config key, for options forwarded into the pipeline config.
const std::vector<std::pair<std::string, std::string>> kSynthFlags{
    {"coarse", "coarse"},
    {"schema", "schema"},
    {"out", "out"},
    {"seed", "seed"},
    {"sigma-mode", "sigma_mode"},
    {"outlier-detector", "outlier_detector"},
    {"outlier-threshold", "outlier_threshold"},
    {"outlier-report", "outlier_report"},
    {"batch-model", "batch_model"},
    {"knn-k", "knn_k"},
    {"scaling-report", "scaling_report_path"},
    {"correlation-out", "correlation_out"},
    {"threads", "threads"},
};

int validation_exit(const std::exception& e) {
  std::cerr << "error: " << e.what() << "\n";
  return kExitValidation;
}

void emit(const std::string& text, const std::string& out) {
  if (out.empty()) {
    std::cout << text;
  } else {
    write_text(out, text);
  }
}

PipelineConfig resolve_config(const std::string& config_path, const std::map<std::string, std::string>& flags,
                              bool no_scaling_report) {
  PipelineConfig cfg;
  cfg.threads = default_threads();
  if (!config_path.empty()) cfg = load_config(config_path);
  ConfigValues overrides;
  for (const auto& [flag, key] : kSynthFlags) {
    if (auto it = flags.find(flag); it != flags.end()) overrides[key] = it->second;
  }
  cfg = apply_config_values(cfg, overrides, fs::current_path());
  if (overrides.count("scaling_report_path")) cfg.scaling_report = true;
  if (no_scaling_report) cfg.scaling_report = false;
  check_config(cfg);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic population reconstruction from aggregated tables"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("popsynth ") + POPSYNTH_VERSION_STRING);

  // synthesize
  auto* synth = app.add_subcommand("synthesize", "Run the four-phase synthesis pipeline");
  std::string synth_config;
  std::map<std::string, std::string> synth_values;
  bool no_scaling_report = false;
  synth->add_option("--config", synth_config, "Config file (key = value) or run manifest");
  for (const auto& [flag, key] : kSynthFlags) {
    synth->add_option_function<std::string>("--" + flag, [&synth_values, flag = flag](const std::string& v) {
      synth_values[flag] = v;
    });
  }
  synth->add_flag("--no-scaling-report", no_scaling_report, "Do not write the scaling report");

  // validate
  auto* validate = app.add_subcommand("validate", "Check a config and its inputs, print the resolved settings");
  std::string validate_config_path;
  validate->add_option("--config", validate_config_path, "Config file or run manifest")->required();

  // match
  auto* match = app.add_subcommand("match", "Link external records to synthetic individuals");
  std::string m_external, m_population, m_schema, m_keys, m_caps, m_mode = "best", m_attrs, m_out, m_report;
  int m_threads = 0;
  match->add_option("--external", m_external, "External records CSV")->required();
  match->add_option("--population", m_population, "Synthetic population CSV")->required();
  match->add_option("--schema", m_schema, "Feature schema JSON")->required();
  match->add_option("--keys", m_keys, "Exact keys: col or col=variable, comma separated");
  match->add_option("--caps", m_caps, "Fuzzy keys: col=cap or col:variable=cap, comma separated");
  match->add_option("--mode", m_mode, "best or vote")->check(CLI::IsMember({"best", "vote"}));
  match->add_option("--attrs", m_attrs, "Attributes to transfer, comma separated");
  match->add_option("--out", m_out, "Augmented CSV (stdout if omitted)");
  match->add_option("--report", m_report, "Per-record match details as JSON");
  match->add_option("--threads", m_threads, "Worker threads");

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Score a population against surveyed individuals");
  std::string e_survey, e_population, e_schema, e_out;
  bool e_ordinal = false;
  int e_threads = 0;
  evaluate->add_option("--survey", e_survey, "Survey CSV (unit_id plus schema columns)")->required();
  evaluate->add_option("--population", e_population, "Synthetic population CSV")->required();
  evaluate->add_option("--schema", e_schema, "Feature schema JSON")->required();
  evaluate->add_flag("--ordinal-mode", e_ordinal, "Score categorical classes by rank distance");
  evaluate->add_option("--out", e_out, "JSON report (stdout if omitted)");
  evaluate->add_option("--threads", e_threads, "Worker threads");

  // generate-fixture (hidden)
  auto* fixture = app.add_subcommand("generate-fixture", "");
  fixture->group("");
  std::string f_out;
  std::uint64_t f_seed = 0;
  int f_units = 10;
  long f_size = 50;
  double f_rho = 0.6;
  fixture->add_option("--out", f_out)->required();
  fixture->add_option("--seed", f_seed);
  fixture->add_option("--units", f_units);
  fixture->add_option("--size", f_size);
  fixture->add_option("--rho", f_rho);

  CLI11_PARSE(app, argc, argv);

  if (*synth) {
    PipelineConfig cfg;
    try {
      cfg = resolve_config(synth_config, synth_values, no_scaling_report);
    } catch (const std::exception& e) {
      return validation_exit(e);
    }
    const RunResult result = run_synthesize(cfg, &std::cerr);
    if (result.exit_code != kExitOk) std::cerr << "error: " << result.message << "\n";
    for (const auto& a : result.artifacts) std::cerr << "wrote " << a.string() << "\n";
    return result.exit_code;
  }

  if (*validate) {
    try {
      const PipelineConfig cfg = validate_config(validate_config_path);
      const FeatureSchema schema = load_schema(cfg.schema);
      const CoarseTable table = load_coarse_table(cfg.coarse, schema);
      nlohmann::json doc{{"config", cfg.to_json()},
                         {"units", table.num_units()},
                         {"individuals", table.total_size()},
                         {"features", schema.size()}};
      std::cout << doc.dump(2) << "\n";
      return kExitOk;
    } catch (const std::exception& e) {
      return validation_exit(e);
    }
  }

  if (*match) {
    FeatureSchema schema;
    SyntheticPopulation pop;
    StringTable external;
    MatchConfig config;
    std::vector<std::string> attrs;
    try {
      schema = load_schema(m_schema);
      pop = read_population(m_population);
      external = read_csv(m_external);
      config.exact = parse_exact_keys(m_keys);
      config.fuzzy = parse_fuzzy_keys(m_caps);
      config.mode = parse_aggregation(m_mode);
      config.validate();
      for (const auto& a : CLI::detail::split(m_attrs, ',')) {
        const std::string t = CLI::detail::trim_copy(a);
        if (!t.empty()) attrs.push_back(t);
      }
    } catch (const std::exception& e) {
      return validation_exit(e);
    }
    try {
      const int threads = m_threads > 0 ? m_threads : default_threads();
      const auto results = match_records(external, pop, schema, config, threads);
      emit(to_csv(augment_table(external, results, schema, attrs)), m_out);
      if (!m_report.empty()) {
        nlohmann::json doc = nlohmann::json::array();
        for (const auto& r : results) {
          nlohmann::json cands = nlohmann::json::array();
          for (const auto& c : r.candidates) {
            cands.push_back({{"unit_id", c.unit_id}, {"k", c.k}, {"distance", c.distance}});
          }
          nlohmann::json entry{{"external_row", r.external_row}, {"quality", r.quality}, {"candidates", cands}};
          for (const auto& [var, shares] : r.votes) {
            nlohmann::json s = nlohmann::json::object();
            for (const auto& v : shares) s[v.label] = v.share;
            entry["votes"][var] = s;
          }
          doc.push_back(std::move(entry));
        }
        write_text(m_report, doc.dump(2) + "\n");
      }
      return kExitOk;
    } catch (const Error& e) {
      std::cerr << "error: " << e.what() << "\n";
      return e.code() == Errc::UnknownAttribute || e.code() == Errc::MissingColumn ||
                     e.code() == Errc::NonNumeric || e.code() == Errc::ConfigInvalid
                 ? kExitValidation
                 : kExitPhase;
    }
  }

  if (*evaluate) {
    FeatureSchema schema;
    SyntheticPopulation pop;
    SurveySet survey;
    try {
      schema = load_schema(e_schema);
      pop = read_population(e_population);
      survey = read_survey(e_survey, schema);
    } catch (const std::exception& e) {
      return validation_exit(e);
    }
    try {
      const int threads = e_threads > 0 ? e_threads : default_threads();
      const EvalResult result = assign_and_score(survey, pop, schema, e_ordinal, threads);
      nlohmann::json doc = result.to_json();
      doc["ordinal_mode"] = e_ordinal;
      emit(doc.dump(2) + "\n", e_out);
      return kExitOk;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kExitPhase;
    }
  }

  if (*fixture) {
    try {
      testkit::WorldSpec spec;
      spec.features = {{"income", FeatureKind::ContinuousPositive, 30000.0, 90000.0, 0.5, ""},
                       {"age", FeatureKind::ContinuousReal, 30.0, 50.0, 12.0, ""},
                       {"owner", FeatureKind::Share, 0.2, 0.8, 1.0, ""}};
      spec.correlation = Matrix::Identity(3, 3);
      spec.correlation(0, 1) = spec.correlation(1, 0) = f_rho;
      spec.sizes.assign(static_cast<std::size_t>(f_units), f_size);
      spec.heterogeneity = 1.0;
      const auto world = testkit::generate_world(spec, f_seed);
      const fs::path dir(f_out);
      fs::create_directories(dir);
      write_coarse_table(world.coarse, dir / "coarse.csv");
      write_text(dir / "schema.json", world.schema.to_json().dump(2) + "\n");
      write_text(dir / "individuals.csv", population_to_csv(world.individuals));
      return kExitOk;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kExitPhase;
    }
  }
  return kExitOk;
}
