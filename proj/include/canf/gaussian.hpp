#pragma once

#include "canf/core.hpp"

#include <nlohmann/json.hpp>

namespace canf {

enum class JitterPolicy {
  /// Raise every eigenvalue below kJitter up to kJitter, then factorize,
  /// escalating if that still fails.
  kFloor,
  /// Factorize as given; start adding jitter only if that fails.
  kAsIs,
};

/// Dense multivariate normal with a cached lower Cholesky factor.
///
/// Instances are immutable once built. Every covariance that reaches this
/// class passes through the jitter ladder kJitter, 10*kJitter, ... kMaxJitter,
/// each multiplied by `jitter_unit`; if none of those makes it positive
/// definite, construction throws NotPositiveDefinite.
class MultivariateGaussian {
 public:
  MultivariateGaussian(Vector mean, Matrix covariance,
                       JitterPolicy policy = JitterPolicy::kAsIs, double jitter_unit = 1.0);

  /// Maximum-likelihood fit: column mean and the biased 1/n scatter, with
  /// its eigenvalues floored at kJitter times the mean coordinate variance
  /// (kJitter itself when the data have no spread). This is the likelihood
  /// maximizer over covariances whose eigenvalues respect that floor, so a
  /// well-conditioned scatter is returned unchanged and constant data give
  /// kJitter * I. The fit commutes with rescaling the data.
  static MultivariateGaussian fit(const Matrix& data);

  Eigen::Index dim() const { return mean_.size(); }
  const Vector& mean() const { return mean_; }
  const Matrix& covariance() const { return covariance_; }
  const Matrix& cholesky_factor() const { return chol_; }
  /// Diagonal jitter added by the escalation ladder (the eigenvalue floor
  /// is not counted).
  double jitter_applied() const { return jitter_; }
  double log_det() const { return log_det_; }

  double log_pdf(std::span<const double> x) const;
  double log_pdf(const Vector& x) const;
  /// Row-wise log densities of an n x d matrix.
  Vector log_pdf_rows(const Matrix& points) const;

  /// count x d matrix of draws, mean + L z.
  Matrix sample(Eigen::Index count, std::uint64_t seed) const;
  Matrix sample(Eigen::Index count, Rng& rng) const;

  /// Posterior over coordinates [split, d) given the first `split`
  /// coordinates equal `observed` (Schur complement of the observed block).
  MultivariateGaussian condition(std::span<const double> observed,
                                 Eigen::Index split) const;

  /// Log density of the leading `split` coordinates' marginal at `observed`.
  double marginal_log_pdf(std::span<const double> observed,
                          Eigen::Index split) const;

 private:
  Vector mean_;
  Matrix covariance_;
  Matrix chol_;
  double jitter_ = 0.0;
  double log_det_ = 0.0;
};

void to_json(nlohmann::json& j, const MultivariateGaussian& g);
MultivariateGaussian gaussian_from_json(const nlohmann::json& j);

nlohmann::json vector_to_json(const Vector& v);
Vector vector_from_json(const nlohmann::json& j);
nlohmann::json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& j);

}  // namespace canf
