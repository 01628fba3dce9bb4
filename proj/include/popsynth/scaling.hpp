#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "popsynth/data_model.hpp"

namespace popsynth {

inline constexpr double kContinuousTolerance = 1e-9;
inline constexpr int kCategoricalIterationCap = 1000;
inline constexpr int kFlooringPasses = 10;

/// One (unit, variable) line of a scaling or consistency report. Continuous
/// variables carry one-element mean vectors; categorical variables carry class
/// counts.
struct ScalingEntry {
  std::string unit_id;
  std::string variable;
  bool categorical = false;
  std::vector<double> pre;
  std::vector<double> target;
  std::vector<double> post;
  int iterations = 0;
  long resampled = 0;
  /// Continuous: relative deviation of the post mean (absolute when target is 0).
  /// Categorical: total absolute count deviation plus rows without a valid class.
  double deviation = 0.0;
  bool floored = false;
  bool uniform_fallback = false;
  std::string note;

  bool passed() const;
  nlohmann::json to_json() const;
};

struct ScalingReport {
  std::vector<ScalingEntry> entries;
  /// Largest absolute change of any pooled pairwise correlation caused by the
  /// adjustment (0 for pure consistency reports).
  double correlation_drift = 0.0;

  bool passed() const;
  std::vector<const ScalingEntry*> failures() const;
  nlohmann::json to_json() const;
};

/// Class counts that exactly sum to n, apportioned from shares.
std::vector<long> target_counts(const std::vector<double>& shares, long n);

struct CategoricalScaleResult {
  std::vector<int> classes;
  ScalingEntry entry;
};

/// Moves individuals between classes until counts equal the largest-remainder
/// targets. Each pass removes uniformly chosen surplus members of over-sampled
/// classes and redraws their class from their own probability vector restricted
/// to the under-sampled classes (uniform over those if all restricted
/// probabilities vanish).
CategoricalScaleResult scale_categorical(std::vector<int> classes, const Matrix& probabilities,
                                         const std::vector<double>& target_shares, std::uint64_t seed,
                                         int max_iterations = kCategoricalIterationCap);

/// Shifts values so their mean equals the target. For positive features values
/// pushed below zero are floored and the remaining rows re-shifted, up to
/// kFlooringPasses times.
ScalingEntry scale_continuous(Eigen::Ref<Vector> values, double target, bool positive);

/// Per-unit aggregate comparison of a population against the coarse table.
ScalingReport verify_consistency(const SyntheticPopulation& pop, const CoarseTable& table,
                                 const FeatureSchema& schema);

struct ScaledPopulation {
  SyntheticPopulation population;
  ScalingReport report;
};

/// Marginal scaling of a whole population: every categorical group (schema
/// order), then every continuous feature, unit by unit. Batch groups first draw
/// each individual's class from its probability vector; core groups keep the
/// classes drawn at synthesis.
ScaledPopulation scale_population(const SyntheticPopulation& pop, const CoarseTable& table,
                                  const FeatureSchema& schema, std::uint64_t seed, int threads = 1);

}  // namespace popsynth
