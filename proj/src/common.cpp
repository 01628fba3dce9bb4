#include <algorithm>
#include <atomic>
#include <mutex>
#include <numeric>
#include <cmath>
#include <thread>
#include <vector>

#include <boost/math/special_functions/erf.hpp>

#include "popsynth/numeric.hpp"
#include "popsynth/random.hpp"
#include "popsynth/types.hpp"

namespace popsynth {

const char* errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::MissingHeader: return "MissingHeader";
    case Errc::MissingColumn: return "MissingColumn";
    case Errc::NonNumeric: return "NonNumeric";
    case Errc::ShareOutOfRange: return "ShareOutOfRange";
    case Errc::InvalidUnitSize: return "InvalidUnitSize";
    case Errc::RowLength: return "RowLength";
    case Errc::GroupSumMismatch: return "GroupSumMismatch";
    case Errc::SchemaInvalid: return "SchemaInvalid";
    case Errc::TooFewUnits: return "TooFewUnits";
    case Errc::DomainViolation: return "DomainViolation";
    case Errc::OutOfRange: return "OutOfRange";
    case Errc::NotSymmetric: return "NotSymmetric";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::InfeasibleTarget: return "InfeasibleTarget";
    case Errc::NotConverged: return "NotConverged";
    case Errc::KeyMismatch: return "KeyMismatch";
    case Errc::MissingInput: return "MissingInput";
    case Errc::UnknownAttribute: return "UnknownAttribute";
    case Errc::UnknownUnit: return "UnknownUnit";
    case Errc::ConfigInvalid: return "ConfigInvalid";
    case Errc::UnknownKey: return "UnknownKey";
    case Errc::TooLarge: return "TooLarge";
    case Errc::Io: return "Io";
  }
  return "Unknown";
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
  return splitmix64(splitmix64(seed) ^ fnv1a(tag));
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, std::string_view sub) {
  return derive_seed(derive_seed(seed, tag), sub);
}

double RandomStream::uniform() {
  // 53 random mantissa bits, offset by half an ulp so 0 and 1 are unreachable.
  const std::uint64_t bits = engine_() >> 11;
  return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

double RandomStream::standard_normal() { return normal_quantile(uniform()); }

std::uint64_t RandomStream::below(std::uint64_t n) {
  if (n <= 1) return 0;
  // Rejection sampling keeps the draw exactly uniform.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x = engine_();
  while (x >= limit) x = engine_();
  return x % n;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z * M_SQRT1_2); }

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    if (p == 0.0) return -std::numeric_limits<double>::infinity();
    if (p == 1.0) return std::numeric_limits<double>::infinity();
    throw Error(Errc::OutOfRange, "normal quantile needs p in [0, 1]");
  }
  // erfc_inv keeps full relative precision in both tails.
  return -M_SQRT2 * boost::math::erfc_inv(2.0 * p);
}

std::vector<long> largest_remainder(const std::vector<double>& weights, long total) {
  std::vector<long> out(weights.size(), 0);
  if (weights.empty() || total <= 0) return out;
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw Error(Errc::DomainViolation, "apportionment weights must be finite and non-negative");
    }
    sum += w;
  }
  if (!(sum > 0.0)) throw Error(Errc::DomainViolation, "apportionment weights sum to zero");
  std::vector<double> remainder(weights.size());
  long assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = static_cast<double>(total) * weights[i] / sum;
    out[i] = static_cast<long>(std::floor(exact));
    remainder[i] = exact - static_cast<double>(out[i]);
    assigned += out[i];
  }
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t i = 0; assigned < total; i = (i + 1) % order.size()) {
    ++out[order[i]];
    ++assigned;
  }
  // Floating error can overshoot by one in pathological inputs.
  for (std::size_t i = order.size(); assigned > total && i-- > 0;) {
    if (out[order[i]] > 0) {
      --out[order[i]];
      --assigned;
    }
  }
  return out;
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers =
      std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, threads)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace popsynth
