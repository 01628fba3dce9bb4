#include "popsynth/marginals.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <boost/math/special_functions/beta.hpp>

#include "popsynth/numeric.hpp"

namespace popsynth {

const char* to_string(MarginalFamily f) noexcept {
  switch (f) {
    case MarginalFamily::Lognormal: return "lognormal";
    case MarginalFamily::Beta: return "beta";
    case MarginalFamily::Normal: return "normal";
    case MarginalFamily::PointMass: return "point-mass";
  }
  return "?";
}

const char* to_string(SigmaMode m) noexcept {
  return m == SigmaMode::SqrtN ? "sqrt-n" : "paper-literal";
}

SigmaMode parse_sigma_mode(std::string_view text) {
  if (text == "sqrt-n") return SigmaMode::SqrtN;
  if (text == "paper-literal") return SigmaMode::PaperLiteral;
  throw Error(Errc::ConfigInvalid, "unknown sigma mode '" + std::string(text) + "'");
}

double estimate_feature_sigma(const CoarseTable& table, std::string_view feature) {
  if (table.num_units() < 2) {
    throw Error(Errc::TooFewUnits, "variance estimation needs at least 2 units");
  }
  return sample_sd(table.values().col(table.column(feature)));
}

double individual_sigma(double s, long n, SigmaMode mode, long num_units) {
  if (s <= 0.0) return 0.0;
  const double base = s * std::sqrt(static_cast<double>(n));
  if (mode == SigmaMode::PaperLiteral) return base * std::sqrt(static_cast<double>(num_units));
  return base;
}

MarginalSpec fit_marginal(FeatureKind kind, double mu, double sigma) {
  if (!std::isfinite(mu) || !std::isfinite(sigma) || sigma < 0.0) {
    throw Error(Errc::DomainViolation, "marginal needs finite mu and sigma >= 0");
  }
  MarginalSpec spec;
  spec.mu = mu;
  spec.sigma = sigma;
  switch (kind) {
    case FeatureKind::ContinuousPositive: {
      if (mu <= 0.0) {
        throw Error(Errc::DomainViolation, "lognormal marginal needs mu > 0, got " + format_double(mu));
      }
      const double ratio = (sigma / mu) * (sigma / mu);
      spec.family = MarginalFamily::Lognormal;
      spec.scale = std::sqrt(std::log1p(ratio));
      // ln(mu^2 / sqrt(mu^2 + sigma^2)) = ln(mu) - ln(1 + ratio) / 2
      spec.location = std::log(mu) - 0.5 * std::log1p(ratio);
      return spec;
    }
    case FeatureKind::ContinuousReal:
      spec.family = sigma > 0.0 ? MarginalFamily::Normal : MarginalFamily::PointMass;
      spec.location = mu;
      spec.scale = sigma;
      return spec;
    case FeatureKind::Share: {
      if (!(mu >= 0.0 && mu <= 1.0)) {
        throw Error(Errc::DomainViolation, "beta marginal needs 0 <= mu <= 1, got " + format_double(mu));
      }
      const double bernoulli_var = mu * (1.0 - mu);
      if (mu == 0.0 || mu == 1.0 || sigma == 0.0) {
        spec.family = MarginalFamily::PointMass;
        spec.sigma = 0.0;
        return spec;
      }
      double var = sigma * sigma;
      if (var >= bernoulli_var) {
        spec.sigma = 0.99 * std::sqrt(bernoulli_var);
        spec.clamped = true;
        var = spec.sigma * spec.sigma;
      }
      const double common = bernoulli_var / var - 1.0;
      spec.family = MarginalFamily::Beta;
      spec.alpha = mu * common;
      spec.beta = (1.0 - mu) * common;
      return spec;
    }
  }
  return spec;
}

double inverse_cdf(const MarginalSpec& spec, double u) {
  if (!(u > 0.0 && u < 1.0)) {
    throw Error(Errc::OutOfRange, "inverse CDF needs u in (0, 1), got " + format_double(u));
  }
  switch (spec.family) {
    case MarginalFamily::PointMass: return spec.mu;
    case MarginalFamily::Normal: return spec.location + spec.scale * normal_quantile(u);
    case MarginalFamily::Lognormal:
      if (spec.scale == 0.0) return spec.mu;
      return std::exp(spec.location + spec.scale * normal_quantile(u));
    case MarginalFamily::Beta: {
      const double x = boost::math::ibeta_inv(spec.alpha, spec.beta, u);
      // Strongly U-shaped fits can round to the boundary; stay in the open interval.
      return std::clamp(x, std::numeric_limits<double>::denorm_min(), std::nextafter(1.0, 0.0));
    }
  }
  return spec.mu;
}

double cdf(const MarginalSpec& spec, double x) {
  switch (spec.family) {
    case MarginalFamily::PointMass: return x < spec.mu ? 0.0 : 1.0;
    case MarginalFamily::Normal: return normal_cdf((x - spec.location) / spec.scale);
    case MarginalFamily::Lognormal:
      if (spec.scale == 0.0) return x < spec.mu ? 0.0 : 1.0;
      if (x <= 0.0) return 0.0;
      return normal_cdf((std::log(x) - spec.location) / spec.scale);
    case MarginalFamily::Beta:
      if (x <= 0.0) return 0.0;
      if (x >= 1.0) return 1.0;
      return boost::math::ibeta(spec.alpha, spec.beta, x);
  }
  return 0.0;
}

std::vector<MarginalSpec> fit_unit_marginals(const CoarseTable& table, const FeatureSchema& schema,
                                             Index unit, const std::vector<std::string>& features,
                                             SigmaMode mode) {
  std::vector<MarginalSpec> specs;
  specs.reserve(features.size());
  const long n = table.sizes().at(static_cast<std::size_t>(unit));
  for (const auto& name : features) {
    const Index col = table.column(name);
    const double s = sample_sd(table.values().col(col));
    const double sigma = individual_sigma(s, n, mode, static_cast<long>(table.num_units()));
    MarginalSpec spec = fit_marginal(schema.feature(schema.index_of(name)).kind,
                                     table.values()(unit, col), sigma);
    spec.unit_id = table.unit_ids()[static_cast<std::size_t>(unit)];
    spec.feature = name;
    specs.push_back(std::move(spec));
  }
  return specs;
}

}  // namespace popsynth
