#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "popsynth/types.hpp"

namespace popsynth {

/// Standard normal CDF.
double normal_cdf(double z);
/// Standard normal quantile; accurate to ~1e-15 over (0, 1).
double normal_quantile(double p);

/// Unbiased sample standard deviation (denominator n - 1). Returns 0 for n < 2.
template <typename Derived>
double sample_sd(const Eigen::DenseBase<Derived>& x) {
  const Index n = x.size();
  if (n < 2) return 0.0;
  const double mean = x.derived().mean();
  const double ss = (x.derived().array() - mean).square().sum();
  return std::sqrt(ss / static_cast<double>(n - 1));
}

template <typename Derived>
double median(const Eigen::DenseBase<Derived>& x) {
  std::vector<double> v(x.derived().data(), x.derived().data() + x.size());
  if (v.empty()) return 0.0;
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) {
    m = 0.5 * (m + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid)));
  }
  return m;
}

/// Pearson correlation between the columns of `data` (rows are observations).
/// Columns with zero variance are uncorrelated with everything else and keep 1 on
/// the diagonal.
template <typename Derived>
MatrixX<typename Derived::Scalar> pearson_correlation(const Eigen::MatrixBase<Derived>& data) {
  using Scalar = typename Derived::Scalar;
  const Index cols = data.cols();
  MatrixX<Scalar> centered = data.rowwise() - data.colwise().mean();
  VectorX<Scalar> norms = centered.colwise().norm().transpose();
  MatrixX<Scalar> corr = MatrixX<Scalar>::Identity(cols, cols);
  for (Index i = 0; i < cols; ++i) {
    for (Index j = i + 1; j < cols; ++j) {
      Scalar r = 0;
      if (norms(i) > 0 && norms(j) > 0) {
        r = centered.col(i).dot(centered.col(j)) / (norms(i) * norms(j));
        r = std::clamp(r, Scalar(-1), Scalar(1));
      }
      corr(i, j) = r;
      corr(j, i) = r;
    }
  }
  return corr;
}

/// Average ranks (1-based, ties share the mean rank).
template <typename Derived>
Vector ranks(const Eigen::DenseBase<Derived>& x) {
  const Index n = x.size();
  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return x.derived()(a) < x.derived()(b); });
  Vector r(n);
  Index i = 0;
  while (i < n) {
    Index j = i;
    while (j + 1 < n && x.derived()(order[static_cast<std::size_t>(j + 1)]) ==
                            x.derived()(order[static_cast<std::size_t>(i)])) {
      ++j;
    }
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (Index t = i; t <= j; ++t) r(order[static_cast<std::size_t>(t)]) = avg;
    i = j + 1;
  }
  return r;
}

/// Spearman rank correlation between the columns of `data`.
template <typename Derived>
Matrix spearman_correlation(const Eigen::MatrixBase<Derived>& data) {
  Matrix ranked(data.rows(), data.cols());
  for (Index c = 0; c < data.cols(); ++c) ranked.col(c) = ranks(data.col(c));
  return pearson_correlation(ranked);
}

/// Integer apportionment of `total` proportional to non-negative `weights`
/// (largest remainder; ties go to the lower index). The result sums to `total`.
std::vector<long> largest_remainder(const std::vector<double>& weights, long total);

/// Run fn(i) for i in [0, n) on up to `threads` worker threads. Work items must be
/// independent; results are written by index so output order never depends on
/// scheduling.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace popsynth
