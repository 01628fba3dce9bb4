#include "popsynth/matching.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "popsynth/numeric.hpp"

namespace popsynth {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto pos = s.find(sep, start);
    const auto end = pos == std::string_view::npos ? s.size() : pos;
    std::string item = trim(s.substr(start, end - start));
    if (!item.empty()) out.push_back(std::move(item));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

// Where a key's population value lives: unit id, a continuous column or a group.
struct Accessor {
  enum Kind { UnitId, Continuous, Categorical } kind = UnitId;
  Index variable = 0;  // column of variable_matrix
};

Accessor resolve(const std::vector<Variable>& vars, const std::string& name) {
  if (name == "unit_id") return {};
  for (std::size_t v = 0; v < vars.size(); ++v) {
    if (vars[v].name == name) {
      return {vars[v].categorical ? Accessor::Categorical : Accessor::Continuous, static_cast<Index>(v)};
    }
  }
  throw Error(Errc::UnknownAttribute, "'" + name + "' is not a population variable");
}

std::size_t external_column(const StringTable& external, const std::string& name) {
  const auto col = external.find_column(name);
  if (!col) throw Error(Errc::MissingColumn, "external table has no column '" + name + "'");
  return *col;
}

double external_number(const StringTable& external, std::size_t row, std::size_t col) {
  const std::string& text = external.rows[row][col];
  try {
    return parse_double(text);
  } catch (const Error&) {
    throw Error(Errc::NonNumeric, "external row " + std::to_string(row + 1) + ", column '" +
                                      external.header[col] + "': '" + text + "' is not a number");
  }
}

}  // namespace

const char* to_string(Aggregation mode) noexcept {
  return mode == Aggregation::BestMatch ? "best" : "vote";
}

Aggregation parse_aggregation(std::string_view text) {
  if (text == "best" || text == "best-match") return Aggregation::BestMatch;
  if (text == "vote" || text == "average-vote") return Aggregation::AverageVote;
  throw Error(Errc::ConfigInvalid, "unknown match mode '" + std::string(text) + "' (expected best or vote)");
}

void MatchConfig::validate() const {
  if (exact.empty() && fuzzy.empty()) {
    throw Error(Errc::ConfigInvalid, "matching needs at least one exact or fuzzy key");
  }
  for (const auto& f : fuzzy) {
    if (!(f.cap >= 0.0) || !std::isfinite(f.cap)) {
      throw Error(Errc::ConfigInvalid, "fuzzy cap for '" + f.variable + "' must be a finite value >= 0");
    }
  }
}

std::vector<ExactKey> parse_exact_keys(std::string_view spec) {
  std::vector<ExactKey> keys;
  for (const auto& item : split(spec, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) {
      keys.push_back({item, item});
    } else {
      keys.push_back({trim(std::string_view(item).substr(0, eq)), trim(std::string_view(item).substr(eq + 1))});
    }
    if (keys.back().external.empty() || keys.back().variable.empty()) {
      throw Error(Errc::ConfigInvalid, "malformed exact key '" + item + "'");
    }
  }
  return keys;
}

std::vector<FuzzyKey> parse_fuzzy_keys(std::string_view spec) {
  std::vector<FuzzyKey> keys;
  for (const auto& item : split(spec, ',')) {
    const auto eq = item.rfind('=');
    if (eq == std::string::npos) throw Error(Errc::ConfigInvalid, "fuzzy key '" + item + "' needs =cap");
    const std::string lhs = trim(std::string_view(item).substr(0, eq));
    FuzzyKey key;
    const auto colon = lhs.find(':');
    key.external = trim(std::string_view(lhs).substr(0, colon));
    key.variable = colon == std::string::npos ? key.external : trim(std::string_view(lhs).substr(colon + 1));
    try {
      key.cap = parse_double(trim(std::string_view(item).substr(eq + 1)));
    } catch (const Error&) {
      throw Error(Errc::ConfigInvalid, "fuzzy key '" + item + "' has a non-numeric cap");
    }
    if (key.external.empty() || key.variable.empty()) {
      throw Error(Errc::ConfigInvalid, "malformed fuzzy key '" + item + "'");
    }
    keys.push_back(std::move(key));
  }
  return keys;
}

const std::string* MatchResult::attribute(std::string_view name) const {
  for (const auto& [k, v] : attributes) {
    if (k == name) return &v;
  }
  return nullptr;
}

std::vector<MatchResult> match_records(const StringTable& external, const SyntheticPopulation& pop,
                                       const FeatureSchema& schema, const MatchConfig& config,
                                       int threads) {
  config.validate();
  const auto vars = schema.variables();
  const Matrix table = variable_matrix(pop, schema);

  std::vector<std::string> row_unit(static_cast<std::size_t>(pop.num_rows()));
  std::vector<Index> row_k(static_cast<std::size_t>(pop.num_rows()));
  for (const auto& unit : pop.units()) {
    for (Index k = 0; k < unit.size; ++k) {
      row_unit[static_cast<std::size_t>(unit.offset + k)] = unit.unit_id;
      row_k[static_cast<std::size_t>(unit.offset + k)] = k;
    }
  }

  std::vector<Accessor> exact_acc;
  std::vector<std::size_t> exact_col;
  for (const auto& key : config.exact) {
    exact_acc.push_back(resolve(vars, key.variable));
    exact_col.push_back(external_column(external, key.external));
  }
  std::vector<Index> fuzzy_var;
  std::vector<std::size_t> fuzzy_col;
  for (const auto& key : config.fuzzy) {
    const Accessor acc = resolve(vars, key.variable);
    if (acc.kind != Accessor::Continuous) {
      throw Error(Errc::ConfigInvalid, "fuzzy key '" + key.variable + "' must be a continuous feature");
    }
    fuzzy_var.push_back(acc.variable);
    fuzzy_col.push_back(external_column(external, key.external));
  }

  // Population rows bucketed by their exact-key tuple.
  auto pop_key = [&](Index row) {
    std::string key;
    for (const auto& acc : exact_acc) {
      if (acc.kind == Accessor::UnitId) {
        key += row_unit[static_cast<std::size_t>(row)];
      } else {
        key += variable_text(schema, vars[static_cast<std::size_t>(acc.variable)], table(row, acc.variable));
      }
      key += '\x1f';
    }
    return key;
  };
  std::unordered_map<std::string, std::vector<Index>> buckets;
  for (Index r = 0; r < pop.num_rows(); ++r) buckets[pop_key(r)].push_back(r);

  std::vector<MatchResult> results(external.rows.size());
  parallel_for(external.rows.size(), threads, [&](std::size_t i) {
    MatchResult& res = results[i];
    res.external_row = i;
    const auto& row = external.rows[i];

    std::string key;
    for (std::size_t e = 0; e < exact_acc.size(); ++e) {
      const std::string cell = trim(row.at(exact_col[e]));
      if (exact_acc[e].kind == Accessor::Continuous) {
        key += format_double(external_number(external, i, exact_col[e]));
      } else {
        key += cell;
      }
      key += '\x1f';
    }
    std::vector<double> target(fuzzy_var.size());
    for (std::size_t f = 0; f < fuzzy_var.size(); ++f) target[f] = external_number(external, i, fuzzy_col[f]);

    const auto it = buckets.find(key);
    if (it != buckets.end()) {
      for (Index r : it->second) {
        double distance = 0.0;
        bool within = true;
        for (std::size_t f = 0; f < fuzzy_var.size() && within; ++f) {
          const double gap = std::abs(table(r, fuzzy_var[f]) - target[f]);
          const double cap = config.fuzzy[f].cap;
          if (!(gap <= cap)) {
            within = false;
          } else if (cap > 0.0) {
            distance += gap / cap;
          }
        }
        if (within) res.candidates.push_back({r, row_unit[static_cast<std::size_t>(r)], row_k[static_cast<std::size_t>(r)], distance});
      }
    }
    std::stable_sort(res.candidates.begin(), res.candidates.end(),
                     [](const Candidate& a, const Candidate& b) { return a.distance < b.distance; });
    if (res.candidates.empty()) return;

    const double keys = fuzzy_var.empty() ? 1.0 : static_cast<double>(fuzzy_var.size());
    if (config.mode == Aggregation::BestMatch) {
      const Candidate& best = res.candidates.front();
      res.quality = 1.0 - best.distance / keys;
      res.attributes.emplace_back("unit_id", best.unit_id);
      res.attributes.emplace_back("k", std::to_string(best.k));
      for (std::size_t v = 0; v < vars.size(); ++v) {
        res.attributes.emplace_back(vars[v].name, variable_text(schema, vars[v], table(best.row, static_cast<Index>(v))));
      }
      return;
    }

    const double n = static_cast<double>(res.candidates.size());
    double total_distance = 0.0;
    for (const auto& c : res.candidates) total_distance += c.distance;
    res.quality = 1.0 - total_distance / (n * keys);

    std::vector<std::pair<std::string, long>> unit_votes;
    for (const auto& c : res.candidates) {
      auto u = std::find_if(unit_votes.begin(), unit_votes.end(), [&](const auto& p) { return p.first == c.unit_id; });
      if (u == unit_votes.end()) {
        unit_votes.emplace_back(c.unit_id, 1);
      } else {
        ++u->second;
      }
    }
    const auto top_unit = std::max_element(unit_votes.begin(), unit_votes.end(),
                                           [](const auto& a, const auto& b) { return a.second < b.second; });
    res.attributes.emplace_back("unit_id", top_unit->first);

    for (std::size_t v = 0; v < vars.size(); ++v) {
      const auto col = static_cast<Index>(v);
      if (!vars[v].categorical) {
        double sum = 0.0;
        for (const auto& c : res.candidates) sum += table(c.row, col);
        res.attributes.emplace_back(vars[v].name, format_double(sum / n));
        continue;
      }
      const auto& group = schema.groups()[static_cast<std::size_t>(vars[v].index)];
      std::vector<long> counts(static_cast<std::size_t>(group.num_classes()), 0);
      for (const auto& c : res.candidates) {
        const double cls = table(c.row, col);
        if (cls >= 0) ++counts[static_cast<std::size_t>(cls)];
      }
      const auto top = std::max_element(counts.begin(), counts.end());
      std::vector<VoteShare> shares;
      for (std::size_t c = 0; c < counts.size(); ++c) {
        shares.push_back({group.class_label(static_cast<Index>(c), schema.features()), static_cast<double>(counts[c]) / n});
      }
      res.attributes.emplace_back(vars[v].name, *top > 0 ? variable_text(schema, vars[v], static_cast<double>(top - counts.begin()))
                                                         : std::string(kNullToken));
      res.votes.emplace_back(vars[v].name, std::move(shares));
    }
  });
  return results;
}

StringTable augment_table(const StringTable& external, const std::vector<MatchResult>& matches,
                          const FeatureSchema& schema, const std::vector<std::string>& attributes) {
  const auto vars = schema.variables();
  for (const auto& name : attributes) {
    if (name == "unit_id" || name == "k") continue;
    resolve(vars, name);
  }
  if (matches.size() != external.rows.size()) {
    throw Error(Errc::DimensionMismatch, "match results do not correspond to the external rows");
  }
  const bool voting = std::any_of(matches.begin(), matches.end(), [](const auto& m) { return !m.votes.empty(); });

  auto column_name = [&](const std::string& name) {
    return external.find_column(name) ? "syn_" + name : name;
  };
  StringTable out = external;
  for (const auto& name : attributes) {
    out.header.push_back(column_name(name));
    const bool categorical = std::any_of(vars.begin(), vars.end(), [&](const auto& v) { return v.name == name && v.categorical; });
    if (voting && categorical) out.header.push_back(column_name(name + "_vote_share"));
  }
  for (std::size_t i = 0; i < out.rows.size(); ++i) {
    const MatchResult& m = matches[i];
    auto& row = out.rows[i];
    for (const auto& name : attributes) {
      const std::string* value = m.attribute(name);
      row.push_back(value ? *value : std::string(kNullToken));
      const bool categorical = std::any_of(vars.begin(), vars.end(), [&](const auto& v) { return v.name == name && v.categorical; });
      if (!(voting && categorical)) continue;
      std::string share(kNullToken);
      for (const auto& [var, shares] : m.votes) {
        if (var != name || !value) continue;
        for (const auto& s : shares) {
          if (s.label == *value) share = format_double(s.share);
        }
      }
      row.push_back(share);
    }
  }
  return out;
}

}  // namespace popsynth
