#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "popsynth/data_model.hpp"

namespace popsynth {

struct FlaggedUnit {
  std::string unit_id;
  double score = 0.0;
  std::string reason;
};

struct OutlierReport {
  std::string detector;
  double threshold = 0.0;
  std::vector<FlaggedUnit> flagged_units;
  /// Every unit's score, in table order.
  std::vector<double> scores;
  /// Set when the requested detector could not run and a fallback was used.
  std::string fallback;

  nlohmann::json to_json() const;
};

/// Scores aggregation units; larger is more anomalous.
class OutlierDetector {
 public:
  virtual ~OutlierDetector() = default;
  virtual std::string name() const = 0;
  virtual double threshold() const = 0;
  virtual OutlierReport detect(const CoarseTable& table) const = 0;
};

/// Maximum over features of |x - median| / (1.4826 * MAD). Columns with zero MAD
/// contribute nothing.
class RobustZDetector final : public OutlierDetector {
 public:
  static constexpr double kDefaultThreshold = 3.5;
  explicit RobustZDetector(double threshold = kDefaultThreshold) : threshold_(threshold) {}

  std::string name() const override { return "robust-z"; }
  double threshold() const override { return threshold_; }
  OutlierReport detect(const CoarseTable& table) const override;

  /// Per-unit scores without thresholding.
  static Vector scores(const Matrix& values);

 private:
  double threshold_;
};

/// Squared Mahalanobis distance to the column means under the pooled sample
/// covariance; threshold defaults to the chi-square 0.999 quantile with one
/// degree of freedom per column used. Falls back to robust z-scores when the
/// covariance is singular.
class MahalanobisDetector final : public OutlierDetector {
 public:
  /// `threshold` <= 0 selects the chi-square default.
  explicit MahalanobisDetector(double threshold = 0.0, const FeatureSchema* schema = nullptr)
      : threshold_(threshold), schema_(schema) {}

  std::string name() const override { return "mahalanobis"; }
  double threshold() const override { return threshold_; }
  OutlierReport detect(const CoarseTable& table) const override;

 private:
  double threshold_;
  const FeatureSchema* schema_;
};

double chi_square_quantile(double p, double dof);

enum class DetectorKind { RobustZ, Mahalanobis, None };
DetectorKind parse_detector_kind(std::string_view text);
const char* to_string(DetectorKind kind) noexcept;

/// Factory; returns nullptr for DetectorKind::None. A non-positive threshold
/// selects the detector's default.
std::unique_ptr<OutlierDetector> make_detector(DetectorKind kind, double threshold,
                                               const FeatureSchema* schema = nullptr);

OutlierReport detect_outliers(const CoarseTable& table, const OutlierDetector& detector);
CoarseTable remove_outliers(const CoarseTable& table, const OutlierReport& report);

}  // namespace popsynth
