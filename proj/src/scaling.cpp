#include "popsynth/scaling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "popsynth/copula.hpp"
#include "popsynth/numeric.hpp"
#include "popsynth/random.hpp"

namespace popsynth {

namespace {

double relative_deviation(double value, double target) {
  const double diff = std::abs(value - target);
  return target != 0.0 ? diff / std::abs(target) : diff;
}

std::vector<double> as_doubles(const std::vector<long>& v) { return {v.begin(), v.end()}; }

std::vector<long> count_classes(const std::vector<int>& classes, Index k) {
  std::vector<long> counts(static_cast<std::size_t>(k), 0);
  for (int c : classes) {
    if (c >= 0 && c < k) ++counts[static_cast<std::size_t>(c)];
  }
  return counts;
}

}  // namespace

bool ScalingEntry::passed() const {
  if (categorical) return deviation == 0.0;
  return deviation <= kContinuousTolerance;
}

nlohmann::json ScalingEntry::to_json() const {
  nlohmann::json doc{{"unit_id", unit_id},
                     {"variable", variable},
                     {"type", categorical ? "categorical" : "continuous"},
                     {"pre", pre},
                     {"target", target},
                     {"post", post},
                     {"iterations", iterations},
                     {"resampled", resampled},
                     {"deviation", deviation},
                     {"passed", passed()}};
  if (floored) doc["floored"] = true;
  if (uniform_fallback) doc["uniform_fallback"] = true;
  if (!note.empty()) doc["note"] = note;
  return doc;
}

bool ScalingReport::passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed(); });
}

std::vector<const ScalingEntry*> ScalingReport::failures() const {
  std::vector<const ScalingEntry*> out;
  for (const auto& e : entries) {
    if (!e.passed()) out.push_back(&e);
  }
  return out;
}

nlohmann::json ScalingReport::to_json() const {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& e : entries) list.push_back(e.to_json());
  return nlohmann::json{{"passed", passed()},
                        {"failures", failures().size()},
                        {"correlation_drift", correlation_drift},
                        {"entries", std::move(list)}};
}

std::vector<long> target_counts(const std::vector<double>& shares, long n) {
  return largest_remainder(shares, n);
}

CategoricalScaleResult scale_categorical(std::vector<int> classes, const Matrix& probabilities,
                                         const std::vector<double>& target_shares, std::uint64_t seed,
                                         int max_iterations) {
  const auto n = static_cast<long>(classes.size());
  const auto k = static_cast<Index>(target_shares.size());
  if (probabilities.rows() != static_cast<Index>(n) || probabilities.cols() != k) {
    throw Error(Errc::MissingInput, "probability sidecar must have one row per individual and one "
                                    "column per class");
  }
  const double share_sum = std::accumulate(target_shares.begin(), target_shares.end(), 0.0);
  if (std::abs(share_sum - 1.0) > 1e-6) {
    throw Error(Errc::InfeasibleTarget, "target shares sum to " + format_double(share_sum));
  }
  for (int c : classes) {
    if (c < 0 || c >= k) throw Error(Errc::DomainViolation, "individual without a valid class");
  }
  const std::vector<long> targets = target_counts(target_shares, n);
  for (long t : targets) {
    if (t > n || t < 0) throw Error(Errc::InfeasibleTarget, "class target exceeds unit size");
  }

  CategoricalScaleResult result;
  auto& entry = result.entry;
  entry.categorical = true;
  entry.target = as_doubles(targets);
  std::vector<long> counts = count_classes(classes, k);
  entry.pre = as_doubles(counts);

  RandomStream rng(seed);
  while (counts != targets) {
    if (entry.iterations >= max_iterations) {
      entry.post = as_doubles(counts);
      entry.deviation = 0.0;
      for (Index c = 0; c < k; ++c) {
        entry.deviation += static_cast<double>(std::abs(counts[static_cast<std::size_t>(c)] - targets[static_cast<std::size_t>(c)]));
      }
      throw Error(Errc::NotConverged, "categorical scaling did not converge in " +
                                          std::to_string(max_iterations) + " iterations; " +
                                          entry.to_json().dump());
    }
    ++entry.iterations;

    std::vector<Index> under;
    for (Index c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] < targets[static_cast<std::size_t>(c)]) under.push_back(c);
    }
    std::vector<std::size_t> removed;
    for (Index c = 0; c < k; ++c) {
      const long surplus = counts[static_cast<std::size_t>(c)] - targets[static_cast<std::size_t>(c)];
      if (surplus <= 0) continue;
      std::vector<std::size_t> members;
      for (std::size_t i = 0; i < classes.size(); ++i) {
        if (classes[i] == c) members.push_back(i);
      }
      // Partial Fisher-Yates: the first `surplus` slots are a uniform subset.
      for (long s = 0; s < surplus; ++s) {
        const auto j = static_cast<std::size_t>(s) +
                       static_cast<std::size_t>(rng.below(members.size() - static_cast<std::size_t>(s)));
        std::swap(members[static_cast<std::size_t>(s)], members[j]);
        removed.push_back(members[static_cast<std::size_t>(s)]);
      }
    }
    for (std::size_t row : removed) {
      double total = 0.0;
      for (Index c : under) total += std::max(0.0, probabilities(static_cast<Index>(row), c));
      const double u = rng.uniform();
      Index chosen = under.back();
      if (total > 0.0) {
        double cum = 0.0;
        for (Index c : under) {
          const double p = std::max(0.0, probabilities(static_cast<Index>(row), c));
          if (p <= 0.0) continue;
          cum += p / total;
          chosen = c;
          if (u < cum) break;
        }
      } else {
        entry.uniform_fallback = true;
        chosen = under[std::min(under.size() - 1, static_cast<std::size_t>(u * static_cast<double>(under.size())))];
      }
      classes[row] = static_cast<int>(chosen);
    }
    entry.resampled += static_cast<long>(removed.size());
    counts = count_classes(classes, k);
  }
  entry.post = as_doubles(counts);
  result.classes = std::move(classes);
  return result;
}

ScalingEntry scale_continuous(Eigen::Ref<Vector> values, double target, bool positive) {
  if (values.size() < 1) throw Error(Errc::MissingInput, "continuous scaling needs at least one row");
  ScalingEntry entry;
  const double n = static_cast<double>(values.size());
  const double pre = values.mean();
  entry.pre = {pre};
  entry.target = {target};
  const double tol = 1e-12 * std::max(std::abs(target), values.cwiseAbs().mean());

  if (std::abs(pre - target) > tol) {
    values.array() += target - pre;
    entry.iterations = 1;
  }

  if (positive && (values.array() < 0.0).any()) {
    entry.floored = true;
    for (int pass = 0; pass < kFlooringPasses; ++pass) {
      values = values.cwiseMax(0.0);
      const double deficit = target * n - values.sum();
      const auto free_rows = (values.array() > 0.0).count();
      if (std::abs(deficit) <= tol * n || free_rows == 0) break;
      const double shift = deficit / static_cast<double>(free_rows);
      for (Index i = 0; i < values.size(); ++i) {
        if (values(i) > 0.0) values(i) += shift;
      }
      ++entry.iterations;
      if (!(values.array() < 0.0).any()) break;
    }
    values = values.cwiseMax(0.0);
  }

  const double post = values.mean();
  entry.post = {post};
  entry.deviation = relative_deviation(post, target);
  if (entry.floored && !entry.passed()) entry.note = "flooring could not reach the target mean";
  return entry;
}

ScalingReport verify_consistency(const SyntheticPopulation& pop, const CoarseTable& table,
                                 const FeatureSchema& schema) {
  ScalingReport report;
  const auto variables = schema.variables();
  std::vector<std::vector<int>> classes(schema.groups().size());
  std::vector<bool> group_present(schema.groups().size(), false);
  for (std::size_t g = 0; g < schema.groups().size(); ++g) {
    const auto& group = schema.groups()[g];
    group_present[g] = std::all_of(group.columns.begin(), group.columns.end(), [&](Index c) {
      return pop.find_column(schema.feature(c).name).has_value();
    });
    if (group_present[g]) classes[g] = realized_classes(pop, schema, group);
  }

  for (const auto& unit : pop.units()) {
    const auto m = table.find_unit(unit.unit_id);
    if (!m) continue;
    const long n_target = table.sizes()[static_cast<std::size_t>(*m)];
    if (unit.size != n_target) {
      ScalingEntry e;
      e.unit_id = unit.unit_id;
      e.variable = "n";
      e.categorical = true;
      e.pre = e.post = {static_cast<double>(unit.size)};
      e.target = {static_cast<double>(n_target)};
      e.deviation = std::abs(static_cast<double>(unit.size - n_target));
      report.entries.push_back(std::move(e));
    }
    for (const auto& var : variables) {
      ScalingEntry e;
      e.unit_id = unit.unit_id;
      e.variable = var.name;
      e.categorical = var.categorical;
      if (!var.categorical) {
        const double target = table.values()(*m, var.index);
        e.target = {target};
        const auto col = pop.find_column(var.name);
        if (!col) {
          e.deviation = std::numeric_limits<double>::infinity();
          e.note = "column missing from population";
        } else {
          const double mean = unit.size > 0 ? pop.values().col(*col).segment(unit.offset, unit.size).mean() : 0.0;
          e.pre = e.post = {mean};
          e.deviation = relative_deviation(mean, target);
        }
        report.entries.push_back(std::move(e));
        continue;
      }
      const auto g = static_cast<std::size_t>(var.index);
      const auto& group = schema.groups()[g];
      std::vector<double> shares;
      if (group.binary) {
        const double x = table.values()(*m, group.columns[0]);
        shares = {x, 1.0 - x};
      } else {
        for (Index c : group.columns) shares.push_back(table.values()(*m, c));
      }
      const auto targets = target_counts(shares, unit.size);
      e.target = as_doubles(targets);
      if (!group_present[g]) {
        e.deviation = std::numeric_limits<double>::infinity();
        e.note = "group columns missing from population";
        report.entries.push_back(std::move(e));
        continue;
      }
      std::vector<int> unit_classes(classes[g].begin() + unit.offset,
                                    classes[g].begin() + unit.offset + unit.size);
      const auto counts = count_classes(unit_classes, group.num_classes());
      e.pre = e.post = as_doubles(counts);
      double dev = static_cast<double>(std::count(unit_classes.begin(), unit_classes.end(), -1));
      for (std::size_t c = 0; c < counts.size(); ++c) dev += static_cast<double>(std::abs(counts[c] - targets[c]));
      e.deviation = dev;
      if (dev > 0.0 && std::count(unit_classes.begin(), unit_classes.end(), -1) > 0) {
        e.note = "rows without a valid one-hot class";
      }
      report.entries.push_back(std::move(e));
    }
  }
  return report;
}

ScaledPopulation scale_population(const SyntheticPopulation& pop, const CoarseTable& table,
                                  const FeatureSchema& schema, std::uint64_t seed, int threads) {
  SyntheticPopulation out = pop;
  const auto& units = pop.units();
  std::vector<Index> unit_rows(units.size());
  for (std::size_t u = 0; u < units.size(); ++u) {
    const auto m = table.find_unit(units[u].unit_id);
    if (!m) throw Error(Errc::UnknownUnit, "unit '" + units[u].unit_id + "' is not in the coarse table");
    unit_rows[u] = *m;
  }
  for (const auto& group : schema.groups()) {
    if (!pop.probabilities().count(group.name)) {
      throw Error(Errc::MissingInput, "no probability sidecar for group '" + group.name + "'");
    }
  }

  std::vector<std::vector<int>> classes;
  for (const auto& group : schema.groups()) classes.push_back(realized_classes(pop, schema, group));

  std::vector<std::vector<ScalingEntry>> per_unit(units.size());
  parallel_for(units.size(), threads, [&](std::size_t u) {
    const auto& unit = units[u];
    const Index m = unit_rows[u];
    auto& entries = per_unit[u];
    for (std::size_t g = 0; g < schema.groups().size(); ++g) {
      const auto& group = schema.groups()[g];
      const Matrix probs = pop.probabilities().at(group.name).middleRows(unit.offset, unit.size);
      std::vector<int> cls(classes[g].begin() + unit.offset, classes[g].begin() + unit.offset + unit.size);
      if (group.role == Role::Batch) {
        RandomStream rng(unit_seed(seed, "draw:" + group.name, unit.unit_id));
        for (Index i = 0; i < unit.size; ++i) {
          const double v = rng.uniform();
          double cum = 0.0;
          int chosen = static_cast<int>(probs.cols()) - 1;
          for (Index c = 0; c < probs.cols(); ++c) {
            cum += probs(i, c);
            if (v < cum) {
              chosen = static_cast<int>(c);
              break;
            }
          }
          cls[static_cast<std::size_t>(i)] = chosen;
        }
      }
      std::vector<double> shares;
      if (group.binary) {
        const double x = table.values()(m, group.columns[0]);
        shares = {x, 1.0 - x};
      } else {
        for (Index c : group.columns) shares.push_back(table.values()(m, c));
      }
      auto result = scale_categorical(std::move(cls), probs, shares,
                                      unit_seed(seed, "scale:" + group.name, unit.unit_id));
      assign_classes(out, schema, group, unit.offset, result.classes);
      result.entry.unit_id = unit.unit_id;
      result.entry.variable = group.name;
      entries.push_back(std::move(result.entry));
    }
    for (Index d = 0; d < schema.size(); ++d) {
      const auto& f = schema.feature(d);
      if (!f.continuous()) continue;
      const Index col = out.column(f.name);
      Vector values = out.values().col(col).segment(unit.offset, unit.size);
      ScalingEntry e = scale_continuous(values, table.values()(m, d), f.kind == FeatureKind::ContinuousPositive);
      out.values().col(col).segment(unit.offset, unit.size) = values;
      e.unit_id = unit.unit_id;
      e.variable = f.name;
      entries.push_back(std::move(e));
    }
  });

  ScaledPopulation result{std::move(out), {}};
  for (auto& entries : per_unit) {
    for (auto& e : entries) result.report.entries.push_back(std::move(e));
  }
  if (pop.num_rows() > 1 && pop.num_columns() > 1) {
    const Matrix before = pearson_correlation(pop.values());
    const Matrix after = pearson_correlation(result.population.values());
    result.report.correlation_drift = (after - before).cwiseAbs().maxCoeff();
  }
  result.population.set_provenance(Provenance::PostScaling);
  return result;
}

}  // namespace popsynth
