#include "popsynth/testkit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Cholesky>

#include "popsynth/numeric.hpp"
#include "popsynth/random.hpp"

namespace popsynth::testkit {

CoarseTable aggregate(const SyntheticPopulation& individuals, const FeatureSchema& schema) {
  const auto names = schema.names();
  std::vector<Index> cols;
  for (const auto& name : names) cols.push_back(individuals.column(name));
  std::vector<std::string> ids;
  std::vector<long> sizes;
  Matrix values(static_cast<Index>(individuals.units().size()), static_cast<Index>(names.size()));
  for (std::size_t u = 0; u < individuals.units().size(); ++u) {
    const auto& unit = individuals.units()[u];
    ids.push_back(unit.unit_id);
    sizes.push_back(static_cast<long>(unit.size));
    for (std::size_t d = 0; d < cols.size(); ++d) {
      values(static_cast<Index>(u), static_cast<Index>(d)) =
          individuals.values().col(cols[d]).segment(unit.offset, unit.size).sum() / static_cast<double>(unit.size);
    }
  }
  return CoarseTable(std::move(ids), std::move(sizes), std::move(values), names);
}

GroundTruthWorld generate_world(const WorldSpec& spec, std::uint64_t seed) {
  const auto d = static_cast<Index>(spec.features.size());
  if (d == 0) throw Error(Errc::ConfigInvalid, "world needs at least one feature");
  if (spec.sizes.size() < 2) throw Error(Errc::ConfigInvalid, "world needs at least two units");
  for (long n : spec.sizes) {
    if (n < 1) throw Error(Errc::ConfigInvalid, "unit sizes must be positive");
  }
  for (const auto& f : spec.features) {
    if (!(f.location_lo <= f.location_hi) || !(f.spread >= 0.0)) {
      throw Error(Errc::ConfigInvalid, "feature '" + f.name + "' has an empty location range or negative spread");
    }
    if (f.kind == FeatureKind::ContinuousPositive && f.location_lo <= 0.0) {
      throw Error(Errc::ConfigInvalid, "feature '" + f.name + "' needs a positive median");
    }
    if (f.kind == FeatureKind::Share && (f.location_lo < 0.0 || f.location_hi > 1.0)) {
      throw Error(Errc::ConfigInvalid, "feature '" + f.name + "' share range leaves [0, 1]");
    }
  }
  const Matrix corr = spec.correlation.size() == 0 ? Matrix::Identity(d, d) : spec.correlation;
  if (corr.rows() != d || corr.cols() != d) throw Error(Errc::ConfigInvalid, "correlation has the wrong dimension");
  Eigen::LLT<Matrix> llt(corr);
  if (llt.info() != Eigen::Success) throw Error(Errc::ConfigInvalid, "world correlation is not positive definite");
  const Matrix chol = llt.matrixL();

  std::vector<FeatureDef> defs;
  for (const auto& f : spec.features) {
    FeatureDef def{f.name, f.kind, std::nullopt, f.batch.empty() ? Role::Core : Role::Batch, f.batch};
    defs.push_back(std::move(def));
  }
  FeatureSchema schema(std::move(defs));

  std::vector<std::string> ids;
  for (std::size_t m = 0; m < spec.sizes.size(); ++m) ids.push_back(spec.unit_prefix + std::to_string(m + 1));
  auto units = SyntheticPopulation::layout(ids, spec.sizes);
  const long total = std::accumulate(spec.sizes.begin(), spec.sizes.end(), 0L);
  Matrix values(total, d);

  const double h = spec.heterogeneity;
  const double norm = std::sqrt(1.0 + h * h);
  auto correlated = [&](RandomStream& rng) {
    Vector g(d);
    for (Index j = 0; j < d; ++j) g(j) = rng.standard_normal();
    return Vector(chol * g);
  };
  for (const auto& unit : units) {
    RandomStream rng(derive_seed(seed, "world", unit.unit_id));
    Vector location(d);
    for (Index j = 0; j < d; ++j) {
      const auto& f = spec.features[static_cast<std::size_t>(j)];
      location(j) = f.location_lo + (f.location_hi - f.location_lo) * rng.uniform();
    }
    const Vector delta = correlated(rng);
    for (Index k = 0; k < unit.size; ++k) {
      const Vector w = (h * delta + correlated(rng)) / norm;
      for (Index j = 0; j < d; ++j) {
        const auto& f = spec.features[static_cast<std::size_t>(j)];
        double x = 0.0;
        switch (f.kind) {
          case FeatureKind::ContinuousReal:
            x = location(j) + f.spread * w(j);
            break;
          case FeatureKind::ContinuousPositive:
            x = location(j) * std::exp(f.spread * w(j));
            break;
          case FeatureKind::Share:
            x = normal_cdf(w(j)) < location(j) ? 1.0 : 0.0;
            break;
        }
        values(unit.offset + k, j) = x;
      }
    }
  }

  SyntheticPopulation individuals(std::move(units), schema.names(), std::move(values), Provenance::PostScaling);
  CoarseTable coarse = aggregate(individuals, schema);
  return {std::move(schema), std::move(individuals), std::move(coarse)};
}

Assignment brute_force_assignment(const Matrix& weights) {
  const Index n = weights.rows();
  const Index m = weights.cols();
  if (n > 7) throw Error(Errc::TooLarge, "brute force is limited to 7 rows");
  if (n > m) throw Error(Errc::DimensionMismatch, "assignment needs rows <= columns");
  Assignment best;
  best.total = -std::numeric_limits<double>::infinity();
  std::vector<Index> current(static_cast<std::size_t>(n));
  std::vector<char> used(static_cast<std::size_t>(m), 0);
  auto search = [&](auto&& self, Index row) -> void {
    if (row == n) {
      double total = 0.0;
      for (Index i = 0; i < n; ++i) total += weights(i, current[static_cast<std::size_t>(i)]);
      if (total > best.total) {
        best.total = total;
        best.columns = current;
      }
      return;
    }
    for (Index j = 0; j < m; ++j) {
      if (used[static_cast<std::size_t>(j)]) continue;
      used[static_cast<std::size_t>(j)] = 1;
      current[static_cast<std::size_t>(row)] = j;
      self(self, row + 1);
      used[static_cast<std::size_t>(j)] = 0;
    }
  };
  search(search, 0);
  if (n == 0) best.total = 0.0;
  return best;
}

}  // namespace popsynth::testkit
