#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "popsynth/data_model.hpp"
#include "popsynth/evaluation.hpp"

namespace popsynth::testkit {

/// One world feature. Each unit draws its location uniformly from
/// [location_lo, location_hi]:
///   continuous-real:      x = location + spread * w
///   continuous-positive:  x = location * exp(spread * w)   (location is the median)
///   share:                x = 1 if Phi(w) < location else 0
/// where w is the individual's standard-normal latent for this feature.
struct WorldFeature {
  std::string name;
  FeatureKind kind = FeatureKind::ContinuousReal;
  double location_lo = 0.0;
  double location_hi = 0.0;
  double spread = 1.0;
  std::string batch;  // empty for core
};

/// Latents are w = (h * delta_m + z) / sqrt(1 + h^2) with delta_m per unit and z
/// per individual, both N(0, correlation). h = `heterogeneity` carries the
/// dependency into the unit averages.
struct WorldSpec {
  std::vector<WorldFeature> features;
  Matrix correlation;  // empty means identity
  std::vector<long> sizes;
  double heterogeneity = 0.0;
  std::string unit_prefix = "U";
};

struct GroundTruthWorld {
  FeatureSchema schema;
  SyntheticPopulation individuals;
  CoarseTable coarse;
};

/// Unit averages of individual rows, the mean computed as sum / n.
CoarseTable aggregate(const SyntheticPopulation& individuals, const FeatureSchema& schema);

GroundTruthWorld generate_world(const WorldSpec& spec, std::uint64_t seed);

/// Exhaustive optimum over all injective row-to-column maps (at most 7 rows).
/// The total is summed in row order; ties keep the lexicographically first map.
Assignment brute_force_assignment(const Matrix& weights);

}  // namespace popsynth::testkit
