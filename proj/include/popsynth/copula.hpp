#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "popsynth/data_model.hpp"
#include "popsynth/marginals.hpp"

namespace popsynth {

inline constexpr double kEigenvalueFloor = 1e-8;

template <typename Scalar>
struct NearestPdResult {
  MatrixX<Scalar> matrix;
  bool repaired = false;
  int iterations = 0;
};

/// Projects a symmetric matrix onto a positive definite correlation matrix by
/// repeated eigenvalue clipping (floor 1e-8) and unit-diagonal renormalization.
/// Inputs that are already positive definite with smallest eigenvalue >= 1e-8 are
/// returned unchanged.
template <typename Derived>
NearestPdResult<typename Derived::Scalar> nearest_pd(const Eigen::MatrixBase<Derived>& input,
                                                     int max_iterations = 100) {
  using Scalar = typename Derived::Scalar;
  using Mat = MatrixX<Scalar>;
  if (input.rows() != input.cols()) {
    throw Error(Errc::NotSymmetric, "correlation matrix must be square");
  }
  const Scalar scale = std::max<Scalar>(Scalar(1), input.cwiseAbs().maxCoeff());
  if (((input - input.transpose()).cwiseAbs().maxCoeff()) > Scalar(1e-12) * scale) {
    throw Error(Errc::NotSymmetric, "correlation matrix is not symmetric");
  }

  NearestPdResult<Scalar> result;
  Mat current = input;
  const Scalar floor = Scalar(kEigenvalueFloor);
  {
    Eigen::SelfAdjointEigenSolver<Mat> eig(current, Eigen::EigenvaluesOnly);
    if (eig.eigenvalues().minCoeff() >= floor) {
      result.matrix = std::move(current);
      return result;
    }
  }

  result.repaired = true;
  for (int it = 0; it < max_iterations; ++it) {
    Eigen::SelfAdjointEigenSolver<Mat> eig(current);
    const auto clipped = eig.eigenvalues().cwiseMax(floor);
    Mat next = eig.eigenvectors() * clipped.asDiagonal() * eig.eigenvectors().transpose();
    const VectorX<Scalar> inv_sqrt = next.diagonal().cwiseSqrt().cwiseInverse();
    next = inv_sqrt.asDiagonal() * next * inv_sqrt.asDiagonal();
    next = (next + next.transpose()) / Scalar(2);
    next.diagonal().setOnes();
    const Scalar change = (next - current).norm();
    current = std::move(next);
    result.iterations = it + 1;
    if (change < Scalar(1e-12)) break;
  }
  result.matrix = std::move(current);
  return result;
}

/// Feature dependency for the Gaussian copula: a repaired correlation matrix and
/// its lower Cholesky factor.
struct CorrelationModel {
  Matrix gamma;
  Matrix cholesky;
  bool repaired = false;
  std::vector<std::string> features;

  Index dimension() const noexcept { return gamma.rows(); }
};

/// Repairs (if needed) and factors a correlation matrix.
CorrelationModel make_correlation_model(const Matrix& gamma, std::vector<std::string> features);

/// Pearson correlation of the listed coarse columns across units.
CorrelationModel estimate_correlation(const CoarseTable& table, const std::vector<std::string>& features);

/// One unit's copula draws: the uniforms and the values after the marginal
/// inverse CDFs.
struct CopulaSampleBlock {
  std::string unit_id;
  Matrix u;
  Matrix realized;
};

/// Draws n rows: z = L g with g standard normal, u = Phi(z), y = F^-1(u).
CopulaSampleBlock sample_unit(const CorrelationModel& model, std::span<const MarginalSpec> specs,
                              Index n, std::uint64_t seed);

/// Gaussian copula density c(u) = det(R)^-1/2 exp(-v'(R^-1 - I)v / 2), v = Phi^-1(u).
double gaussian_copula_density(const CorrelationModel& model, const Eigen::Ref<const Vector>& u);

/// Seed for one unit's stream of a given purpose ("core", "batch:<label>", ...).
std::uint64_t unit_seed(std::uint64_t global_seed, std::string_view purpose, std::string_view unit_id);

}  // namespace popsynth
