#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "popsynth/data_model.hpp"

namespace popsynth {

inline constexpr const char* kNullToken = "NA";

/// An external column compared against a population variable. `variable` is
/// "unit_id", a continuous feature name or a categorical group name.
struct ExactKey {
  std::string external;
  std::string variable;
};

struct FuzzyKey {
  std::string external;
  std::string variable;
  double cap = 0.0;
};

enum class Aggregation { BestMatch, AverageVote };

const char* to_string(Aggregation mode) noexcept;
Aggregation parse_aggregation(std::string_view text);

struct MatchConfig {
  std::vector<ExactKey> exact;
  std::vector<FuzzyKey> fuzzy;
  Aggregation mode = Aggregation::BestMatch;

  void validate() const;
};

/// Parses "a,b" or "ext=var,..." into exact keys.
std::vector<ExactKey> parse_exact_keys(std::string_view spec);
/// Parses "age=5" or "ext:var=5,..." into fuzzy keys.
std::vector<FuzzyKey> parse_fuzzy_keys(std::string_view spec);

struct Candidate {
  Index row = 0;  // population row
  std::string unit_id;
  Index k = 0;
  double distance = 0.0;
};

struct VoteShare {
  std::string label;
  double share = 0.0;
};

struct MatchResult {
  std::size_t external_row = 0;
  /// Every synthetic row passing the exact keys and fuzzy caps, by ascending
  /// distance then row.
  std::vector<Candidate> candidates;
  /// Transferred values: "unit_id", "k" (best-match only) and every population
  /// variable in variable order.
  std::vector<std::pair<std::string, std::string>> attributes;
  /// Average-vote mode: class shares among candidates per categorical variable.
  std::vector<std::pair<std::string, std::vector<VoteShare>>> votes;
  /// 1 minus the mean normalized fuzzy distance of the match (or of all
  /// candidates when voting); 0 without candidates.
  double quality = 0.0;

  bool matched() const noexcept { return !candidates.empty(); }
  const std::string* attribute(std::string_view name) const;
};

std::vector<MatchResult> match_records(const StringTable& external, const SyntheticPopulation& pop,
                                       const FeatureSchema& schema, const MatchConfig& config,
                                       int threads = 1);

/// Appends the listed attributes (population variables, "unit_id" or "k") to the
/// external rows; unmatched rows get kNullToken. In average-vote mode each
/// categorical attribute also gets a `<name>_vote_share` column holding the
/// winning class's share. A name already used by the external table is prefixed
/// with "syn_".
StringTable augment_table(const StringTable& external, const std::vector<MatchResult>& matches,
                          const FeatureSchema& schema, const std::vector<std::string>& attributes);

}  // namespace popsynth
