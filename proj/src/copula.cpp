#include "popsynth/copula.hpp"

#include <algorithm>
#include <limits>

#include "popsynth/numeric.hpp"
#include "popsynth/random.hpp"

namespace popsynth {

CorrelationModel make_correlation_model(const Matrix& gamma, std::vector<std::string> features) {
  if (gamma.rows() != static_cast<Index>(features.size())) {
    throw Error(Errc::DimensionMismatch, "correlation matrix and feature list differ in size");
  }
  auto pd = nearest_pd(gamma);
  CorrelationModel model;
  model.features = std::move(features);
  model.repaired = pd.repaired;
  model.gamma = std::move(pd.matrix);
  Eigen::LLT<Matrix> llt(model.gamma);
  if (llt.info() != Eigen::Success) {
    throw Error(Errc::DomainViolation, "correlation matrix has no Cholesky factor after repair");
  }
  model.cholesky = llt.matrixL();
  return model;
}

CorrelationModel estimate_correlation(const CoarseTable& table, const std::vector<std::string>& features) {
  if (features.size() < 2) {
    throw Error(Errc::DimensionMismatch, "copula needs at least 2 features");
  }
  if (table.num_units() < 3) {
    throw Error(Errc::TooFewUnits, "correlation estimation needs at least 3 units");
  }
  Matrix data(table.num_units(), static_cast<Index>(features.size()));
  for (std::size_t j = 0; j < features.size(); ++j) {
    data.col(static_cast<Index>(j)) = table.values().col(table.column(features[j]));
  }
  return make_correlation_model(pearson_correlation(data), features);
}

CopulaSampleBlock sample_unit(const CorrelationModel& model, std::span<const MarginalSpec> specs,
                              Index n, std::uint64_t seed) {
  const Index dim = model.dimension();
  if (static_cast<Index>(specs.size()) != dim) {
    throw Error(Errc::DimensionMismatch, "got " + std::to_string(specs.size()) +
                                             " marginals for a " + std::to_string(dim) +
                                             "-dimensional copula");
  }
  CopulaSampleBlock block;
  block.unit_id = specs.empty() ? std::string() : specs.front().unit_id;
  block.u.resize(n, dim);
  block.realized.resize(n, dim);

  constexpr double lo = std::numeric_limits<double>::denorm_min();
  const double hi = std::nextafter(1.0, 0.0);
  RandomStream rng(seed);
  Vector g(dim);
  for (Index row = 0; row < n; ++row) {
    for (Index d = 0; d < dim; ++d) g(d) = rng.standard_normal();
    const Vector z = model.cholesky.triangularView<Eigen::Lower>() * g;
    for (Index d = 0; d < dim; ++d) {
      const double u = std::clamp(normal_cdf(z(d)), lo, hi);
      block.u(row, d) = u;
      block.realized(row, d) = inverse_cdf(specs[static_cast<std::size_t>(d)], u);
    }
  }
  return block;
}

double gaussian_copula_density(const CorrelationModel& model, const Eigen::Ref<const Vector>& u) {
  const Index dim = model.dimension();
  if (u.size() != dim) throw Error(Errc::DimensionMismatch, "density point has wrong dimension");
  Vector v(dim);
  for (Index d = 0; d < dim; ++d) {
    if (!(u(d) > 0.0 && u(d) < 1.0)) {
      throw Error(Errc::OutOfRange, "copula density needs u strictly inside (0, 1)");
    }
    v(d) = normal_quantile(u(d));
  }
  const auto L = model.cholesky.triangularView<Eigen::Lower>();
  // v' R^-1 v through the factor: solve L w = v, then |w|^2.
  const Vector w = L.solve(v);
  const double quad = w.squaredNorm() - v.squaredNorm();
  const double log_det = 2.0 * model.cholesky.diagonal().array().log().sum();
  return std::exp(-0.5 * log_det - 0.5 * quad);
}

std::uint64_t unit_seed(std::uint64_t global_seed, std::string_view purpose, std::string_view unit_id) {
  return derive_seed(global_seed, purpose, unit_id);
}

}  // namespace popsynth
