#pragma once

#include "canf/gaussian.hpp"

#include <optional>

namespace canf {

class GaussianMixture {
 public:
  /// Weights are renormalized; they must be non-negative with a positive sum.
  GaussianMixture(std::vector<double> weights, std::vector<MultivariateGaussian> components);
  explicit GaussianMixture(MultivariateGaussian single);

  std::size_t size() const { return components_.size(); }
  Eigen::Index dim() const { return components_.front().dim(); }
  const std::vector<double>& weights() const { return weights_; }
  const std::vector<MultivariateGaussian>& components() const { return components_; }

  double log_pdf(std::span<const double> x) const;
  double log_pdf(const Vector& x) const;
  Vector log_pdf_rows(const Matrix& points) const;

  /// Ancestral sampling: component by weight, then a Gaussian draw.
  Matrix sample(Eigen::Index count, std::uint64_t seed) const;
  Matrix sample(Eigen::Index count, Rng& rng) const;

  /// Mixture over coordinates [split, d) given the leading block. Each
  /// component is conditioned separately; weights are re-scored by the
  /// components' marginal likelihood of the observed block.
  GaussianMixture condition(std::span<const double> observed, Eigen::Index split) const;

  Vector mean() const;

 private:
  std::vector<double> weights_;
  std::vector<MultivariateGaussian> components_;
};

struct EmOptions {
  int max_iter = 500;
  /// Stop when the mean log-likelihood improves by less than this.
  double tol = 1e-6;
};

struct EmResult {
  GaussianMixture model;
  /// Mean training log-likelihood before each M-step (iteration 0 = init).
  std::vector<double> log_likelihood_trace;
  int reseeds = 0;
  bool converged = false;
};

/// Expectation-maximization with k-means++ mean seeding, the global covariance
/// as every component's starting covariance and uniform starting weights.
/// Component covariances get the same eigenvalue floor as
/// MultivariateGaussian::fit, which keeps each M-step exact on the floored
/// set and the likelihood trace non-decreasing. Needs at least d+1 points
/// per component.
EmResult em_fit(const Matrix& data, int k, std::uint64_t seed, const EmOptions& options = {});

struct SelectKResult {
  int k = 0;
  GaussianMixture model;
  /// (k, mean validation NLL) for every candidate that fit.
  std::vector<std::pair<int, double>> validation_nll;
};

/// Fits every candidate with em_fit and keeps the lowest validation NLL.
SelectKResult select_k(const Matrix& train, const Matrix& validation,
                       std::span<const int> candidates, std::uint64_t seed,
                       const EmOptions& options = {});

void to_json(nlohmann::json& j, const GaussianMixture& m);
GaussianMixture mixture_from_json(const nlohmann::json& j);
void to_json(nlohmann::json& j, const EmOptions& o);
/// Missing keys keep the values already in `o`.
void from_json(const nlohmann::json& j, EmOptions& o);

}  // namespace canf
