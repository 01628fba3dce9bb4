#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "popsynth/copula.hpp"
#include "popsynth/data_model.hpp"
#include "popsynth/marginals.hpp"
#include "popsynth/random.hpp"

namespace popsynth {

struct SynthesisOptions {
  SigmaMode sigma_mode = SigmaMode::SqrtN;
  int threads = 1;
};

/// Gaussian-copula sampling of a feature subset. Rows per unit are given
/// explicitly; categorical groups are realized by drawing one class per row from
/// the normalized share draws, which are kept as the population's probability
/// sidecar. If `model_out` is non-null it receives the correlation model used.
SyntheticPopulation sample_features(const CoarseTable& table, const FeatureSchema& schema,
                                    const std::vector<std::string>& features,
                                    const std::vector<long>& rows_per_unit, std::uint64_t seed,
                                    std::string_view purpose, const SynthesisOptions& options,
                                    CorrelationModel* model_out = nullptr);

/// Initial population over the schema's core features, n_m rows per unit.
SyntheticPopulation synthesize_core(const CoarseTable& table, const FeatureSchema& schema,
                                    std::uint64_t seed, const SynthesisOptions& options = {},
                                    CorrelationModel* model_out = nullptr);

enum class ModelKind { Knn, Linear };
enum class PredictMode { Argmax, Sample };

const char* to_string(ModelKind kind) noexcept;
ModelKind parse_model_kind(std::string_view text);

struct BatchModelConfig {
  ModelKind kind = ModelKind::Knn;
  int k = 5;
};

/// One batch of non-core features in plan order.
struct BatchEntry {
  std::string label;
  std::vector<std::string> features;
  ModelKind model = ModelKind::Knn;
};

struct BatchPlan {
  std::vector<BatchEntry> batches;
};

BatchPlan make_batch_plan(const FeatureSchema& schema, const BatchModelConfig& config);

/// Training rows for a batch block: min(50 * (|S| + |T|), 200000).
long training_rows(std::size_t core_features, std::size_t batch_features);

/// Conditional model of a batch's features given the core features.
///
/// k-NN: inputs are standardized by the training block's column standard
/// deviations; the k closest rows (ties broken by lower row index) vote with
/// weights 1/distance, or uniformly among exact hits. Continuous outputs are the
/// weighted mean, categorical outputs the weighted mean of class-probability
/// vectors.
///
/// Linear: least squares per continuous output and one softmax head per
/// categorical group, fitted on standardized inputs.
///
/// When no core column varies in the block the model predicts the block's
/// marginal for every query (marginal_only()).
class PredictiveModel {
 public:
  struct GroupOutput {
    std::string name;
    std::vector<std::string> columns;
    bool binary = false;
    Index num_classes() const noexcept { return binary ? 2 : static_cast<Index>(columns.size()); }
  };

  ModelKind kind() const noexcept { return kind_; }
  const std::vector<std::string>& inputs() const noexcept { return inputs_; }
  /// Batch feature names in schema order.
  const std::vector<std::string>& outputs() const noexcept { return outputs_; }
  const std::vector<std::string>& continuous_outputs() const noexcept { return continuous_; }
  const std::vector<GroupOutput>& group_outputs() const noexcept { return groups_; }
  bool marginal_only() const noexcept { return marginal_only_; }
  int k() const noexcept { return k_; }

  /// Conditional means and class-probability vectors for one query.
  void predict_distribution(const Eigen::Ref<const Vector>& core, Eigen::Ref<Vector> means,
                            std::vector<Vector>& probabilities) const;

  /// Draws continuous outputs from the conditional distribution: a k-NN model
  /// returns one neighbor's outputs chosen by vote weight, a linear model adds
  /// Gaussian residual noise to the mean.
  void sample_continuous(const Eigen::Ref<const Vector>& core, RandomStream& rng,
                         Eigen::Ref<Vector> out) const;

  friend PredictiveModel fit_batch_model(const SyntheticPopulation& block, const FeatureSchema& schema,
                                         const std::vector<std::string>& batch_features,
                                         const BatchModelConfig& config);

 private:
  Vector standardize(const Eigen::Ref<const Vector>& core) const;
  void neighbors(const Vector& x, std::vector<Index>& ids, std::vector<double>& weights) const;

  ModelKind kind_ = ModelKind::Knn;
  int k_ = 5;
  bool marginal_only_ = false;
  std::vector<std::string> inputs_;
  std::vector<std::string> outputs_;
  std::vector<std::string> continuous_;
  std::vector<GroupOutput> groups_;

  Vector input_mean_;
  Vector input_scale_;  // 0 marks an inactive (constant) input
  Matrix train_inputs_;
  Matrix train_continuous_;
  std::vector<Matrix> train_probabilities_;

  Matrix linear_coef_;  // (1 + inputs) x continuous outputs
  Vector residual_sd_;
  std::vector<Matrix> softmax_coef_;  // (1 + inputs) x classes per group

  Vector marginal_means_;
  std::vector<Vector> marginal_probabilities_;
};

/// Fits the conditional model of `batch_features` given the schema's core
/// features present in `block`. Categorical targets come from the block's
/// probability sidecar when present, otherwise from realized one-hot values.
PredictiveModel fit_batch_model(const SyntheticPopulation& block, const FeatureSchema& schema,
                                const std::vector<std::string>& batch_features,
                                const BatchModelConfig& config);

/// Predicted batch values for every individual, keyed by the population's unit
/// layout. Columns are the batch features in schema order.
struct BatchValues {
  std::vector<UnitBlock> units;
  std::vector<std::string> columns;
  Matrix values;
  std::map<std::string, Matrix> probabilities;
};

/// Argmax mode: continuous outputs are conditional means and each group takes its
/// most probable class (lowest index on ties). Sample mode draws both from the
/// predicted distribution with per-unit seeded streams.
BatchValues predict_batch(const PredictiveModel& model, const SyntheticPopulation& core_rows,
                          PredictMode mode, std::uint64_t seed, int threads = 1);

/// Joins batch values onto the population by (unit_id, k). Columns end up in
/// schema order; existing columns are untouched.
SyntheticPopulation extend_population(const SyntheticPopulation& pop, const BatchValues& batch,
                                      const FeatureSchema& schema);

struct BatchDiagnostics {
  std::string label;
  long training_rows = 0;
  bool correlation_repaired = false;
  bool marginal_only = false;
};

/// Extends a core population through every batch of the plan.
SyntheticPopulation run_batches(const SyntheticPopulation& core, const CoarseTable& table,
                                const FeatureSchema& schema, const BatchPlan& plan,
                                std::uint64_t seed, const SynthesisOptions& options,
                                const BatchModelConfig& config,
                                std::vector<BatchDiagnostics>* diagnostics = nullptr);

}  // namespace popsynth
