#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "popsynth/types.hpp"

namespace popsynth {

enum class FeatureKind { ContinuousPositive, ContinuousReal, Share };
enum class Role { Core, Batch };

const char* to_string(FeatureKind kind) noexcept;
FeatureKind parse_feature_kind(std::string_view text);

struct FeatureDef {
  std::string name;
  FeatureKind kind = FeatureKind::ContinuousReal;
  std::optional<std::string> group;
  Role role = Role::Core;
  std::string batch;  // empty for core features

  bool continuous() const noexcept { return kind != FeatureKind::Share; }
};

/// A categorical variable. Grouped share columns form one class each; an
/// ungrouped share column is binary with an implicit complement class
/// (class 0 = indicator set, class 1 = not set).
struct CategoricalGroup {
  std::string name;
  std::vector<Index> columns;  // schema feature indices
  bool binary = false;
  Role role = Role::Core;
  std::string batch;

  Index num_classes() const noexcept { return binary ? 2 : static_cast<Index>(columns.size()); }
  /// Human-readable class label ("1"/"0" for binary indicators, otherwise the
  /// column name with a leading "<group>_" prefix removed).
  std::string class_label(Index cls, const std::vector<FeatureDef>& features) const;
};

/// An evaluation/matching variable: a continuous feature or a categorical group.
struct Variable {
  std::string name;
  bool categorical = false;
  Index index = 0;  // feature index when continuous, group index when categorical
};

class FeatureSchema {
 public:
  FeatureSchema() = default;
  explicit FeatureSchema(std::vector<FeatureDef> features);

  static FeatureSchema from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;

  Index size() const noexcept { return static_cast<Index>(features_.size()); }
  const std::vector<FeatureDef>& features() const noexcept { return features_; }
  const FeatureDef& feature(Index i) const { return features_.at(static_cast<std::size_t>(i)); }
  std::vector<std::string> names() const;

  std::optional<Index> find(std::string_view name) const;
  Index index_of(std::string_view name) const;

  const std::vector<std::string>& core_set() const noexcept { return core_; }
  const std::vector<std::string>& batch_labels() const noexcept { return batch_labels_; }
  /// Non-core feature names per batch, in batch order then schema order.
  const std::vector<std::vector<std::string>>& batches() const noexcept { return batches_; }

  const std::vector<CategoricalGroup>& groups() const noexcept { return groups_; }
  /// Group containing a share feature, if any.
  std::optional<Index> group_of(Index feature) const;
  std::optional<Index> find_group(std::string_view name) const;

  std::vector<Variable> variables() const;

  /// Orders a subset of feature names by schema position.
  std::vector<std::string> in_schema_order(const std::vector<std::string>& names) const;

 private:
  std::vector<FeatureDef> features_;
  std::vector<std::string> core_;
  std::vector<std::string> batch_labels_;
  std::vector<std::vector<std::string>> batches_;
  std::vector<CategoricalGroup> groups_;
  std::vector<std::optional<Index>> group_index_;
};

FeatureSchema load_schema(const std::filesystem::path& path);

/// Per-unit coarse observations: unit averages for continuous features and
/// shares for share columns.
class CoarseTable {
 public:
  CoarseTable() = default;
  CoarseTable(std::vector<std::string> unit_ids, std::vector<long> sizes, Matrix values,
              std::vector<std::string> columns);

  Index num_units() const noexcept { return static_cast<Index>(unit_ids_.size()); }
  Index num_features() const noexcept { return values_.cols(); }
  const std::vector<std::string>& unit_ids() const noexcept { return unit_ids_; }
  const std::vector<long>& sizes() const noexcept { return sizes_; }
  const Matrix& values() const noexcept { return values_; }
  const std::vector<std::string>& columns() const noexcept { return columns_; }

  Index column(std::string_view name) const;
  std::optional<Index> find_unit(std::string_view unit_id) const;
  long total_size() const;

  /// Table restricted to the given unit rows (in the given order).
  CoarseTable select_units(const std::vector<Index>& rows) const;

 private:
  std::vector<std::string> unit_ids_;
  std::vector<long> sizes_;
  Matrix values_;
  std::vector<std::string> columns_;
};

/// Checks a table against a schema: column order, share range, group sums,
/// unit sizes and M >= 2.
void validate_coarse(const CoarseTable& table, const FeatureSchema& schema);

CoarseTable parse_coarse_csv(std::string_view text, const FeatureSchema& schema);
CoarseTable load_coarse_table(const std::filesystem::path& path, const FeatureSchema& schema);
void write_coarse_table(const CoarseTable& table, const std::filesystem::path& path);

enum class Provenance { PostCopula, PostBatch, PostScaling };
const char* to_string(Provenance p) noexcept;
Provenance parse_provenance(std::string_view text);

struct UnitBlock {
  std::string unit_id;
  Index offset = 0;
  Index size = 0;
};

/// Individual-level records grouped by aggregation unit. Rows are stored unit by
/// unit; the row of individual k in unit m is units()[m].offset + k. Columns are
/// feature names in schema order.
class SyntheticPopulation {
 public:
  SyntheticPopulation() = default;
  SyntheticPopulation(std::vector<UnitBlock> units, std::vector<std::string> columns, Matrix values,
                      Provenance provenance);

  Index num_rows() const noexcept { return values_.rows(); }
  Index num_columns() const noexcept { return values_.cols(); }
  const std::vector<UnitBlock>& units() const noexcept { return units_; }
  const std::vector<std::string>& columns() const noexcept { return columns_; }
  const Matrix& values() const noexcept { return values_; }
  Matrix& values() noexcept { return values_; }
  Provenance provenance() const noexcept { return provenance_; }
  void set_provenance(Provenance p) noexcept { provenance_ = p; }

  std::optional<Index> find_column(std::string_view name) const;
  Index column(std::string_view name) const;
  std::optional<Index> find_unit(std::string_view unit_id) const;

  /// Class-probability vectors per categorical group (rows x classes), kept
  /// alongside realized values for marginal scaling.
  const std::map<std::string, Matrix>& probabilities() const noexcept { return probabilities_; }
  std::map<std::string, Matrix>& probabilities() noexcept { return probabilities_; }

  /// Builds consecutive unit blocks from (unit id, size) pairs.
  static std::vector<UnitBlock> layout(const std::vector<std::string>& ids,
                                       const std::vector<long>& sizes);

 private:
  std::vector<UnitBlock> units_;
  std::vector<std::string> columns_;
  Matrix values_;
  Provenance provenance_ = Provenance::PostCopula;
  std::map<std::string, Matrix> probabilities_;
};

/// Shortest decimal text that reads back to exactly the same double.
std::string format_double(double v);
double parse_double(std::string_view text);

std::string population_to_csv(const SyntheticPopulation& pop);
SyntheticPopulation parse_population_csv(std::string_view text);

/// Writes the population CSV and a `<path>.meta.json` sidecar holding the
/// provenance tag and layout summary.
void write_population(const SyntheticPopulation& pop, const std::filesystem::path& path);
SyntheticPopulation read_population(const std::filesystem::path& path);
std::filesystem::path metadata_path(const std::filesystem::path& population_path);
nlohmann::json population_metadata(const SyntheticPopulation& pop);

/// Categorical view of a population: realized class per row for one group.
/// Returns -1 for rows whose share columns are not a valid one-hot encoding.
std::vector<int> realized_classes(const SyntheticPopulation& pop, const FeatureSchema& schema,
                                  const CategoricalGroup& group);
/// Writes one-hot (or binary indicator) values for class labels into the rows
/// starting at `offset`.
void assign_classes(SyntheticPopulation& pop, const FeatureSchema& schema,
                    const CategoricalGroup& group, Index offset, const std::vector<int>& classes);

/// Rows x schema variables: continuous values, and realized class indices for
/// categorical groups (-1 where the encoding is invalid).
Matrix variable_matrix(const SyntheticPopulation& pop, const FeatureSchema& schema);

/// Text form of one variable value: shortest round-trip decimal or class label
/// ("NA" for an invalid class).
std::string variable_text(const FeatureSchema& schema, const Variable& var, double value);

// Generic delimited text, used for external record tables and survey inputs.
struct StringTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::optional<std::size_t> find_column(std::string_view name) const;
};

StringTable parse_csv(std::string_view text);
StringTable read_csv(const std::filesystem::path& path);
std::string to_csv(const StringTable& table);
void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

}  // namespace popsynth
