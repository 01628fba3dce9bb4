#include "popsynth/evaluation.hpp"

#include <algorithm>
#include <map>

#include "popsynth/numeric.hpp"

namespace popsynth {

double pairwise_similarity(const Eigen::Ref<const Vector>& survey, const Eigen::Ref<const Vector>& synthetic,
                           const FeatureSchema& schema, const SimilarityOptions& options) {
  const auto vars = schema.variables();
  if (survey.size() != static_cast<Index>(vars.size()) || synthetic.size() != survey.size()) {
    throw Error(Errc::DimensionMismatch, "rows do not match the schema's variables");
  }
  if (vars.empty()) return 1.0;
  double total = 0.0;
  for (std::size_t v = 0; v < vars.size(); ++v) {
    const double x = survey(static_cast<Index>(v));
    const double y = synthetic(static_cast<Index>(v));
    if (vars[v].categorical) {
      if (x < 0 || y < 0) continue;
      if (options.ordinal) {
        const Index k = schema.groups()[static_cast<std::size_t>(vars[v].index)].num_classes();
        total += k > 1 ? 1.0 - std::abs(x - y) / static_cast<double>(k - 1) : 1.0;
      } else {
        total += x == y ? 1.0 : 0.0;
      }
    } else if (options.mode == SimilarityMode::Indicator || x == 0.0) {
      total += x == y ? 1.0 : 0.0;
    } else {
      total += std::max(0.0, 1.0 - std::abs(x - y) / std::abs(x));
    }
  }
  return total / static_cast<double>(vars.size());
}

nlohmann::json EvalResult::to_json() const {
  nlohmann::json units_doc = nlohmann::json::array();
  for (const auto& u : units) {
    units_doc.push_back({{"unit_id", u.unit_id}, {"surveyed", u.surveyed}, {"score", u.score}, {"greedy", u.greedy}});
  }
  return nlohmann::json{{"metric", metric}, {"greedy_used", greedy_used}, {"units", std::move(units_doc)},
                        {"assignment", assignment}};
}

SurveySet parse_survey_csv(std::string_view text, const FeatureSchema& schema) {
  const StringTable table = parse_csv(text);
  if (table.header.empty() || table.header[0] != "unit_id") {
    throw Error(Errc::MissingHeader, "survey header must start with unit_id");
  }
  const auto names = schema.names();
  std::vector<std::size_t> source(names.size());
  for (std::size_t d = 0; d < names.size(); ++d) {
    const auto col = table.find_column(names[d]);
    if (!col) throw Error(Errc::MissingColumn, "survey lacks column '" + names[d] + "'");
    source[d] = *col;
  }
  for (std::size_t c = 1; c < table.header.size(); ++c) {
    if (table.header[c] != "k" && !schema.find(table.header[c])) {
      throw Error(Errc::SchemaInvalid, "survey column '" + table.header[c] + "' is not in the schema");
    }
  }

  std::vector<std::string> ids;
  std::map<std::string, std::vector<Index>> members;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const std::string& id = table.rows[r].at(0);
    auto [it, inserted] = members.try_emplace(id);
    if (inserted) ids.push_back(id);
    it->second.push_back(static_cast<Index>(r));
  }
  std::vector<long> sizes;
  SurveySet out;
  for (const auto& id : ids) {
    sizes.push_back(static_cast<long>(members[id].size()));
    for (Index r : members[id]) out.source_rows.push_back(r);
  }
  Matrix values(static_cast<Index>(table.rows.size()), static_cast<Index>(names.size()));
  for (std::size_t i = 0; i < out.source_rows.size(); ++i) {
    const auto& row = table.rows[static_cast<std::size_t>(out.source_rows[i])];
    if (row.size() != table.header.size()) {
      throw Error(Errc::RowLength, "survey row " + std::to_string(out.source_rows[i] + 1) + " has " +
                                       std::to_string(row.size()) + " fields");
    }
    for (std::size_t d = 0; d < names.size(); ++d) {
      try {
        values(static_cast<Index>(i), static_cast<Index>(d)) = parse_double(row[source[d]]);
      } catch (const Error&) {
        throw Error(Errc::NonNumeric, "survey row " + std::to_string(out.source_rows[i] + 1) + ", column '" +
                                          names[d] + "': '" + row[source[d]] + "'");
      }
    }
  }
  out.rows = SyntheticPopulation(SyntheticPopulation::layout(ids, sizes), names, std::move(values),
                                 Provenance::PostScaling);
  return out;
}

SurveySet read_survey(const std::filesystem::path& path, const FeatureSchema& schema) {
  return parse_survey_csv(read_text(path), schema);
}

SurveySet make_survey(const SyntheticPopulation& rows) {
  SurveySet out{rows, {}};
  for (Index r = 0; r < rows.num_rows(); ++r) out.source_rows.push_back(r);
  return out;
}

namespace {

std::vector<Index> canonical_order(const Matrix& vars, Index offset, Index size) {
  std::vector<Index> order(static_cast<std::size_t>(size));
  for (Index i = 0; i < size; ++i) order[static_cast<std::size_t>(i)] = offset + i;
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    for (Index c = 0; c < vars.cols(); ++c) {
      if (vars(a, c) != vars(b, c)) return vars(a, c) < vars(b, c);
    }
    return false;
  });
  return order;
}

}  // namespace

EvalResult assign_and_score(const SurveySet& survey, const SyntheticPopulation& pop,
                            const FeatureSchema& schema, bool ordinal, int threads) {
  const Matrix x = variable_matrix(survey.rows, schema);
  const Matrix y = variable_matrix(pop, schema);
  const SimilarityOptions assign_opts{SimilarityMode::Assignment, ordinal};
  const SimilarityOptions score_opts{SimilarityMode::Indicator, ordinal};

  const auto& units = survey.rows.units();
  std::vector<Index> pop_unit(units.size());
  for (std::size_t u = 0; u < units.size(); ++u) {
    const auto m = pop.find_unit(units[u].unit_id);
    if (!m) throw Error(Errc::UnknownUnit, "surveyed unit '" + units[u].unit_id + "' is not in the population");
    if (units[u].size > pop.units()[static_cast<std::size_t>(*m)].size) {
      throw Error(Errc::DimensionMismatch, "unit '" + units[u].unit_id + "' has more surveyed than synthetic individuals");
    }
    pop_unit[u] = *m;
  }

  EvalResult result;
  result.units.resize(units.size());
  std::vector<Index> assigned(static_cast<std::size_t>(survey.rows.num_rows()), -1);
  parallel_for(units.size(), threads, [&](std::size_t u) {
    const auto& su = units[u];
    const auto& pu = pop.units()[static_cast<std::size_t>(pop_unit[u])];
    const auto rows = canonical_order(x, su.offset, su.size);
    const auto cols = canonical_order(y, pu.offset, pu.size);
    Matrix sim(su.size, pu.size);
    for (Index i = 0; i < su.size; ++i) {
      for (Index j = 0; j < pu.size; ++j) {
        sim(i, j) = pairwise_similarity(x.row(rows[static_cast<std::size_t>(i)]).transpose(),
                                        y.row(cols[static_cast<std::size_t>(j)]).transpose(), schema, assign_opts);
      }
    }
    UnitScore& score = result.units[u];
    score.unit_id = su.unit_id;
    score.surveyed = su.size;
    score.greedy = su.size > kExactAssignmentLimit;
    const Assignment a = score.greedy ? greedy_assignment(sim) : solve_assignment(sim);
    double total = 0.0;
    for (Index i = 0; i < su.size; ++i) {
      const Index srow = rows[static_cast<std::size_t>(i)];
      const Index prow = cols[static_cast<std::size_t>(a.columns[static_cast<std::size_t>(i)])];
      assigned[static_cast<std::size_t>(srow)] = prow;
      total += pairwise_similarity(x.row(srow).transpose(), y.row(prow).transpose(), schema, score_opts);
    }
    score.score = su.size > 0 ? total / static_cast<double>(su.size) : 0.0;
  });

  result.assignment.assign(assigned.size(), -1);
  for (std::size_t r = 0; r < assigned.size(); ++r) {
    const Index source = survey.source_rows.empty() ? static_cast<Index>(r) : survey.source_rows[r];
    if (static_cast<std::size_t>(source) >= result.assignment.size()) result.assignment.resize(static_cast<std::size_t>(source) + 1, -1);
    result.assignment[static_cast<std::size_t>(source)] = assigned[r];
  }
  double sum = 0.0;
  for (const auto& s : result.units) {
    sum += s.score;
    result.greedy_used = result.greedy_used || s.greedy;
  }
  result.metric = result.units.empty() ? 0.0 : sum / static_cast<double>(result.units.size());
  return result;
}

}  // namespace popsynth
