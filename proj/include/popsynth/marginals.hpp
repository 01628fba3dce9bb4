#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "popsynth/data_model.hpp"

namespace popsynth {

enum class MarginalFamily { Lognormal, Beta, Normal, PointMass };

/// How the individual-level standard deviation is derived from the cross-unit
/// standard deviation s of a feature's coarse values.
///   SqrtN:        sigma_m = s * sqrt(n_m)
///   PaperLiteral: sigma_m = s * sqrt(M) * sqrt(n_m)
enum class SigmaMode { SqrtN, PaperLiteral };

const char* to_string(MarginalFamily f) noexcept;
const char* to_string(SigmaMode m) noexcept;
SigmaMode parse_sigma_mode(std::string_view text);

/// Moment-matched marginal for one feature in one unit.
struct MarginalSpec {
  MarginalFamily family = MarginalFamily::PointMass;
  std::string unit_id;
  std::string feature;
  double mu = 0.0;     // target mean
  double sigma = 0.0;  // target standard deviation (after any clamp)
  double location = 0.0;  // lognormal: mean of log; normal: mean
  double scale = 0.0;     // lognormal: sd of log; normal: sd
  double alpha = 0.0;
  double beta = 0.0;
  bool clamped = false;  // beta variance exceeded mu(1-mu) and sigma was reduced
};

/// Cross-unit sample standard deviation of a coarse column.
double estimate_feature_sigma(const CoarseTable& table, std::string_view feature);

double individual_sigma(double s, long n, SigmaMode mode, long num_units = 0);

/// Fits lognormal (continuous-positive), normal (continuous-real) or beta
/// (share) parameters to the given mean and standard deviation.
MarginalSpec fit_marginal(FeatureKind kind, double mu, double sigma);

double inverse_cdf(const MarginalSpec& spec, double u);
double cdf(const MarginalSpec& spec, double x);

/// Marginals for every listed feature of one unit.
std::vector<MarginalSpec> fit_unit_marginals(const CoarseTable& table, const FeatureSchema& schema,
                                             Index unit, const std::vector<std::string>& features,
                                             SigmaMode mode);

}  // namespace popsynth
