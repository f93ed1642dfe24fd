#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace canf {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Diagonal regularization added to fitted covariances (standardized units).
inline constexpr double kJitter = 1e-6;
/// Jitter is escalated x10 per attempt up to this value before giving up.
inline constexpr double kMaxJitter = 1e-2;

enum class ErrorKind {
  // configuration / usage
  kConfig,
  kStrategyUnfit,
  kIncompatibleBundles,
  kWindowLengthMismatch,
  // data
  kEmptyData,
  kNonFiniteInput,
  kDimensionMismatch,
  kShapeMismatch,
  kTapeMismatch,
  kTooFewPoints,
  kParse,
  kNonHourlyCadence,
  kNegativeLoad,
  kTooShort,
  kSegmentTooShort,
  kZeroVariance,
  kZeroOptimalUtility,
  // numeric
  kNotPositiveDefinite,
  kDegenerateComponent,
  kAllWeightsVanish,
  kNonFiniteLoss,
  kNonFiniteLogDensity,
};

const char* to_string(ErrorKind kind);

/// Process exit code for an error class: 2 config, 3 data, 4 numeric.
int exit_code(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// splitmix64 finalizer; derives independent per-unit seeds from a base seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  /// Uniform on [0, 1).
  double uniform() { return uniform_(engine_); }
  std::size_t uniform_index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }
  /// Draws an index with probability proportional to `weights`.
  std::size_t categorical(std::span<const double> weights);

  /// rows x cols matrix of independent standard normals, filled row by row.
  Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

/// log(sum(exp(v))) with max subtraction; -inf for an all -inf input.
double log_sum_exp(std::span<const double> v);

/// Empirical quantile with the lower-interpolation convention: the order
/// statistic at index floor(q * (n - 1)). Reorders `values`.
double lower_quantile(std::span<double> values, double q);

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

bool all_finite(const Matrix& m);

}  // namespace canf
