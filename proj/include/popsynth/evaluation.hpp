#pragma once

#include <cmath>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "popsynth/data_model.hpp"

namespace popsynth {

inline constexpr Index kExactAssignmentLimit = 64;

enum class SimilarityMode {
  Assignment,  // indicator for categorical, 1 - min(1, |x-y|/|x|) for continuous
  Indicator,   // exact equality for every variable
};

struct SimilarityOptions {
  SimilarityMode mode = SimilarityMode::Assignment;
  /// Categorical classes score 1 - |rank gap| / (classes - 1) instead of the
  /// indicator.
  bool ordinal = false;
};

/// Mean per-variable similarity of two rows of variable values (see
/// variable_matrix). Invalid classes (-1) never match.
double pairwise_similarity(const Eigen::Ref<const Vector>& survey, const Eigen::Ref<const Vector>& synthetic,
                           const FeatureSchema& schema, const SimilarityOptions& options = {});

struct Assignment {
  std::vector<Index> columns;  // column chosen for each row
  double total = 0.0;          // summed in row order
};

/// Maximum-weight assignment of every row to a distinct column (rows <= cols),
/// Hungarian method with potentials, O(n^2 m).
template <typename Derived>
Assignment solve_assignment(const Eigen::MatrixBase<Derived>& weights) {
  using Scalar = typename Derived::Scalar;
  const Index n = weights.rows();
  const Index m = weights.cols();
  if (n > m) throw Error(Errc::DimensionMismatch, "assignment needs rows <= columns");
  Assignment result;
  if (n == 0) return result;

  const Scalar inf = std::numeric_limits<Scalar>::infinity();
  // 1-based arrays; column 0 is the virtual start.
  VectorX<Scalar> u = VectorX<Scalar>::Zero(n + 1);
  VectorX<Scalar> v = VectorX<Scalar>::Zero(m + 1);
  std::vector<Index> owner(static_cast<std::size_t>(m + 1), 0);
  std::vector<Index> way(static_cast<std::size_t>(m + 1), 0);
  for (Index i = 1; i <= n; ++i) {
    owner[0] = i;
    Index j0 = 0;
    VectorX<Scalar> minv = VectorX<Scalar>::Constant(m + 1, inf);
    std::vector<char> used(static_cast<std::size_t>(m + 1), 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const Index i0 = owner[static_cast<std::size_t>(j0)];
      Scalar delta = inf;
      Index j1 = 0;
      for (Index j = 1; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const Scalar cur = -weights(i0 - 1, j - 1) - u(i0) - v(j);
        if (cur < minv(j)) {
          minv(j) = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv(j) < delta) {
          delta = minv(j);
          j1 = j;
        }
      }
      for (Index j = 0; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u(owner[static_cast<std::size_t>(j)]) += delta;
          v(j) -= delta;
        } else {
          minv(j) -= delta;
        }
      }
      j0 = j1;
    } while (owner[static_cast<std::size_t>(j0)] != 0);
    do {
      const Index j1 = way[static_cast<std::size_t>(j0)];
      owner[static_cast<std::size_t>(j0)] = owner[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }

  result.columns.assign(static_cast<std::size_t>(n), -1);
  for (Index j = 1; j <= m; ++j) {
    if (owner[static_cast<std::size_t>(j)] > 0) result.columns[static_cast<std::size_t>(owner[static_cast<std::size_t>(j)] - 1)] = j - 1;
  }
  for (Index i = 0; i < n; ++i) result.total += static_cast<double>(weights(i, result.columns[static_cast<std::size_t>(i)]));
  return result;
}

/// Best-first greedy assignment: repeatedly takes the largest remaining entry
/// (ties by lower row, then lower column).
template <typename Derived>
Assignment greedy_assignment(const Eigen::MatrixBase<Derived>& weights) {
  const Index n = weights.rows();
  const Index m = weights.cols();
  if (n > m) throw Error(Errc::DimensionMismatch, "assignment needs rows <= columns");
  struct Cell {
    double w;
    Index i;
    Index j;
  };
  std::vector<Cell> cells;
  cells.reserve(static_cast<std::size_t>(n * m));
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < m; ++j) cells.push_back({static_cast<double>(weights(i, j)), i, j});
  }
  std::stable_sort(cells.begin(), cells.end(), [](const Cell& a, const Cell& b) { return a.w > b.w; });
  Assignment result;
  result.columns.assign(static_cast<std::size_t>(n), -1);
  std::vector<char> col_used(static_cast<std::size_t>(m), 0);
  Index assigned = 0;
  for (const auto& c : cells) {
    if (assigned == n) break;
    if (result.columns[static_cast<std::size_t>(c.i)] >= 0 || col_used[static_cast<std::size_t>(c.j)]) continue;
    result.columns[static_cast<std::size_t>(c.i)] = c.j;
    col_used[static_cast<std::size_t>(c.j)] = 1;
    ++assigned;
  }
  for (Index i = 0; i < n; ++i) result.total += static_cast<double>(weights(i, result.columns[static_cast<std::size_t>(i)]));
  return result;
}

struct UnitScore {
  std::string unit_id;
  Index surveyed = 0;
  double score = 0.0;
  bool greedy = false;
};

struct EvalResult {
  /// Mean over units of the mean per-person indicator score.
  double metric = 0.0;
  std::vector<UnitScore> units;
  /// Population row assigned to each survey row (survey row order).
  std::vector<Index> assignment;
  bool greedy_used = false;

  nlohmann::json to_json() const;
};

/// Survey rows in the population layout (unit_id plus schema columns; an
/// optional `k` column is ignored). Rows of a unit need not be contiguous; units
/// keep first-appearance order and rows keep file order within a unit.
struct SurveySet {
  SyntheticPopulation rows;
  /// Original file row of each stored row.
  std::vector<Index> source_rows;
};

SurveySet parse_survey_csv(std::string_view text, const FeatureSchema& schema);
SurveySet read_survey(const std::filesystem::path& path, const FeatureSchema& schema);
SurveySet make_survey(const SyntheticPopulation& rows);

/// Per unit, assigns surveyed people to distinct synthetic individuals by
/// maximizing the summed assignment similarity (exact for up to
/// kExactAssignmentLimit surveyed people, greedy beyond), then scores the chosen
/// pairs with the indicator similarity. Rows are put in a canonical order before
/// solving so the result does not depend on input row order.
EvalResult assign_and_score(const SurveySet& survey, const SyntheticPopulation& pop,
                            const FeatureSchema& schema, bool ordinal = false, int threads = 1);

}  // namespace popsynth
