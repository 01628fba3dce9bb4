#include "popsynth/outlier.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <boost/math/distributions/chi_squared.hpp>

#include "popsynth/numeric.hpp"

namespace popsynth {

namespace {

constexpr double kMadToSd = 1.4826;

OutlierReport threshold_report(const std::string& detector, double threshold, Vector scores,
                               const CoarseTable& table, const std::string& reason) {
  OutlierReport report;
  report.detector = detector;
  report.threshold = threshold;
  report.scores.assign(scores.data(), scores.data() + scores.size());
  for (Index m = 0; m < table.num_units(); ++m) {
    if (scores(m) > threshold) {
      report.flagged_units.push_back({table.unit_ids()[static_cast<std::size_t>(m)], scores(m), reason});
    }
  }
  return report;
}

void require_units(const CoarseTable& table) {
  if (table.num_units() < 3) {
    throw Error(Errc::TooFewUnits, "outlier detection needs at least 3 units");
  }
}

}  // namespace

nlohmann::json OutlierReport::to_json() const {
  nlohmann::json flagged = nlohmann::json::array();
  for (const auto& f : flagged_units) {
    flagged.push_back({{"unit_id", f.unit_id}, {"score", f.score}, {"reason", f.reason}});
  }
  nlohmann::json doc{{"detector", detector},
                     {"threshold", threshold},
                     {"flagged_units", std::move(flagged)},
                     {"scores", scores}};
  if (!fallback.empty()) doc["fallback"] = fallback;
  return doc;
}

Vector RobustZDetector::scores(const Matrix& values) {
  Vector out = Vector::Zero(values.rows());
  for (Index d = 0; d < values.cols(); ++d) {
    const Vector col = values.col(d);
    const double med = median(col);
    const Vector dev = (col.array() - med).abs().matrix();
    const double mad = median(dev);
    if (!(mad > 0.0)) continue;
    out = out.cwiseMax(dev / (kMadToSd * mad));
  }
  return out;
}

OutlierReport RobustZDetector::detect(const CoarseTable& table) const {
  require_units(table);
  return threshold_report(name(), threshold_, scores(table.values()), table, name());
}

OutlierReport MahalanobisDetector::detect(const CoarseTable& table) const {
  require_units(table);
  // Within a complete categorical group the last share is implied by the others,
  // so it is left out to keep the covariance non-singular by construction.
  std::vector<Index> cols;
  std::set<Index> implied;
  if (schema_ != nullptr) {
    for (const auto& g : schema_->groups()) {
      if (!g.binary) implied.insert(g.columns.back());
    }
  }
  for (Index d = 0; d < table.num_features(); ++d) {
    if (!implied.count(d)) cols.push_back(d);
  }
  const auto dim = static_cast<Index>(cols.size());
  Matrix data(table.num_units(), dim);
  for (Index j = 0; j < dim; ++j) data.col(j) = table.values().col(cols[static_cast<std::size_t>(j)]);

  const Matrix centered = data.rowwise() - data.colwise().mean();
  const Matrix cov = centered.transpose() * centered / static_cast<double>(table.num_units() - 1);
  const double limit = threshold_ > 0.0 ? threshold_ : chi_square_quantile(0.999, static_cast<double>(dim));

  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov, Eigen::EigenvaluesOnly);
  const double max_eig = eig.eigenvalues().maxCoeff();
  const bool singular = dim == 0 || !(max_eig > 0.0) || eig.eigenvalues().minCoeff() <= 1e-12 * max_eig;
  if (singular) {
    RobustZDetector fallback;
    OutlierReport report = threshold_report(name(), fallback.threshold(),
                                            RobustZDetector::scores(table.values()), table,
                                            "robust-z (fallback)");
    report.fallback = "singular covariance; used robust-z with threshold " +
                      format_double(fallback.threshold());
    return report;
  }

  Eigen::LDLT<Matrix> ldlt(cov);
  Vector scores(table.num_units());
  for (Index m = 0; m < table.num_units(); ++m) {
    const Vector diff = centered.row(m).transpose();
    scores(m) = diff.dot(ldlt.solve(diff));
  }
  return threshold_report(name(), limit, std::move(scores), table, name());
}

double chi_square_quantile(double p, double dof) {
  boost::math::chi_squared dist(dof);
  return boost::math::quantile(dist, p);
}

DetectorKind parse_detector_kind(std::string_view text) {
  if (text == "robust-z") return DetectorKind::RobustZ;
  if (text == "mahalanobis") return DetectorKind::Mahalanobis;
  if (text == "none") return DetectorKind::None;
  throw Error(Errc::ConfigInvalid, "unknown outlier detector '" + std::string(text) + "'");
}

const char* to_string(DetectorKind kind) noexcept {
  switch (kind) {
    case DetectorKind::RobustZ: return "robust-z";
    case DetectorKind::Mahalanobis: return "mahalanobis";
    case DetectorKind::None: return "none";
  }
  return "?";
}

std::unique_ptr<OutlierDetector> make_detector(DetectorKind kind, double threshold,
                                               const FeatureSchema* schema) {
  switch (kind) {
    case DetectorKind::RobustZ:
      return std::make_unique<RobustZDetector>(threshold > 0.0 ? threshold
                                                               : RobustZDetector::kDefaultThreshold);
    case DetectorKind::Mahalanobis: return std::make_unique<MahalanobisDetector>(threshold, schema);
    case DetectorKind::None: return nullptr;
  }
  return nullptr;
}

OutlierReport detect_outliers(const CoarseTable& table, const OutlierDetector& detector) {
  return detector.detect(table);
}

CoarseTable remove_outliers(const CoarseTable& table, const OutlierReport& report) {
  std::set<std::string> flagged;
  for (const auto& f : report.flagged_units) {
    if (!table.find_unit(f.unit_id)) {
      throw Error(Errc::UnknownUnit, "report flags unit '" + f.unit_id + "' not in the table");
    }
    flagged.insert(f.unit_id);
  }
  const Index remaining = table.num_units() - static_cast<Index>(flagged.size());
  if (remaining < 2) {
    throw Error(Errc::TooFewUnits, "removing " + std::to_string(flagged.size()) +
                                       " outlier units would leave " + std::to_string(remaining));
  }
  std::vector<Index> keep;
  for (Index m = 0; m < table.num_units(); ++m) {
    if (!flagged.count(table.unit_ids()[static_cast<std::size_t>(m)])) keep.push_back(m);
  }
  return table.select_units(keep);
}

}  // namespace popsynth
