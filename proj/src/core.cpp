#include "canf/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace canf {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig: return "ConfigError";
    case ErrorKind::kStrategyUnfit: return "StrategyUnfit";
    case ErrorKind::kIncompatibleBundles: return "IncompatibleBundles";
    case ErrorKind::kWindowLengthMismatch: return "WindowLengthMismatch";
    case ErrorKind::kEmptyData: return "EmptyData";
    case ErrorKind::kNonFiniteInput: return "NonFiniteInput";
    case ErrorKind::kDimensionMismatch: return "DimensionMismatch";
    case ErrorKind::kShapeMismatch: return "ShapeMismatch";
    case ErrorKind::kTapeMismatch: return "TapeMismatch";
    case ErrorKind::kTooFewPoints: return "TooFewPoints";
    case ErrorKind::kParse: return "ParseError";
    case ErrorKind::kNonHourlyCadence: return "NonHourlyCadence";
    case ErrorKind::kNegativeLoad: return "NegativeLoad";
    case ErrorKind::kTooShort: return "TooShort";
    case ErrorKind::kSegmentTooShort: return "SegmentTooShort";
    case ErrorKind::kZeroVariance: return "ZeroVariance";
    case ErrorKind::kZeroOptimalUtility: return "ZeroOptimalUtility";
    case ErrorKind::kNotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorKind::kDegenerateComponent: return "DegenerateComponent";
    case ErrorKind::kAllWeightsVanish: return "AllWeightsVanish";
    case ErrorKind::kNonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::kNonFiniteLogDensity: return "NonFiniteLogDensity";
  }
  return "Unknown";
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig:
    case ErrorKind::kStrategyUnfit:
    case ErrorKind::kIncompatibleBundles:
    case ErrorKind::kWindowLengthMismatch:
      return 2;
    case ErrorKind::kNotPositiveDefinite:
    case ErrorKind::kDegenerateComponent:
    case ErrorKind::kAllWeightsVanish:
    case ErrorKind::kNonFiniteLoss:
    case ErrorKind::kNonFiniteLogDensity:
      return 4;
    default:
      return 3;
  }
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::size_t Rng::categorical(std::span<const double> weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  double u = uniform() * total;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    last_positive = i;
    if (u < weights[i]) return i;
    u -= weights[i];
  }
  return last_positive;
}

Matrix Rng::normal_matrix(Eigen::Index rows, Eigen::Index cols) {
  Matrix z(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) z(i, j) = normal();
  return z;
}

double log_sum_exp(std::span<const double> v) {
  double hi = -std::numeric_limits<double>::infinity();
  for (double x : v) hi = std::max(hi, x);
  if (!std::isfinite(hi)) return hi;
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - hi);
  return hi + std::log(acc);
}

double lower_quantile(std::span<double> values, double q) {
  if (values.empty()) throw Error(ErrorKind::kEmptyData, "quantile of empty set");
  auto idx = static_cast<std::size_t>(
      std::floor(q * static_cast<double>(values.size() - 1)));
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(idx),
                   values.end());
  return values[idx];
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace canf
