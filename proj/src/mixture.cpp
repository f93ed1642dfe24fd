#include "canf/mixture.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace canf {

namespace {

constexpr double kDegenerateMass = 1e-8;

// Row-wise log-sum-exp of an n x k matrix.
Vector row_log_sum_exp(const Matrix& logp) {
  const Vector hi = logp.rowwise().maxCoeff();
  Vector out(logp.rows());
  for (Eigen::Index i = 0; i < logp.rows(); ++i) {
    if (!std::isfinite(hi(i))) {
      out(i) = hi(i);
      continue;
    }
    out(i) = hi(i) + std::log((logp.row(i).array() - hi(i)).exp().sum());
  }
  return out;
}

Matrix component_log_joint(const Matrix& data, const std::vector<double>& weights,
                           const std::vector<MultivariateGaussian>& components) {
  Matrix logp(data.rows(), static_cast<Eigen::Index>(components.size()));
  for (std::size_t j = 0; j < components.size(); ++j) {
    const double lw = weights[j] > 0.0 ? std::log(weights[j])
                                       : -std::numeric_limits<double>::infinity();
    logp.col(static_cast<Eigen::Index>(j)) = components[j].log_pdf_rows(data).array() + lw;
  }
  return logp;
}

Vector kmeans_plus_plus_point(const Matrix& data, const std::vector<Vector>& chosen,
                              Rng& rng) {
  if (chosen.empty()) return data.row(static_cast<Eigen::Index>(rng.uniform_index(
                                          static_cast<std::size_t>(data.rows()))))
                                 .transpose();
  std::vector<double> d2(static_cast<std::size_t>(data.rows()));
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& c : chosen) best = std::min(best, (data.row(i).transpose() - c).squaredNorm());
    d2[static_cast<std::size_t>(i)] = best;
  }
  double total = 0.0;
  for (double v : d2) total += v;
  if (total <= 0.0)
    return data.row(static_cast<Eigen::Index>(rng.uniform_index(d2.size()))).transpose();
  return data.row(static_cast<Eigen::Index>(rng.categorical(d2))).transpose();
}

}  // namespace

GaussianMixture::GaussianMixture(std::vector<double> weights,
                                 std::vector<MultivariateGaussian> components)
    : weights_(std::move(weights)), components_(std::move(components)) {
  if (components_.empty()) throw Error(ErrorKind::kEmptyData, "mixture with no components");
  if (weights_.size() != components_.size())
    throw Error(ErrorKind::kDimensionMismatch, "mixture weight/component count mismatch");
  double total = 0.0;
  for (double w : weights_) {
    if (!(w >= 0.0) || !std::isfinite(w))
      throw Error(ErrorKind::kNonFiniteInput, "mixture weights must be finite and >= 0");
    total += w;
  }
  if (total <= 0.0) throw Error(ErrorKind::kAllWeightsVanish, "mixture weights sum to 0");
  for (double& w : weights_) w /= total;
  for (const auto& c : components_)
    if (c.dim() != components_.front().dim())
      throw Error(ErrorKind::kDimensionMismatch, "mixture components differ in dimension");
}

GaussianMixture::GaussianMixture(MultivariateGaussian single)
    : GaussianMixture({1.0}, {std::move(single)}) {}

double GaussianMixture::log_pdf(std::span<const double> x) const {
  std::vector<double> terms(components_.size());
  for (std::size_t j = 0; j < components_.size(); ++j) {
    terms[j] = weights_[j] > 0.0 ? std::log(weights_[j]) + components_[j].log_pdf(x)
                                 : -std::numeric_limits<double>::infinity();
  }
  return log_sum_exp(terms);
}

double GaussianMixture::log_pdf(const Vector& x) const {
  return log_pdf(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())));
}

Vector GaussianMixture::log_pdf_rows(const Matrix& points) const {
  return row_log_sum_exp(component_log_joint(points, weights_, components_));
}

Matrix GaussianMixture::sample(Eigen::Index count, std::uint64_t seed) const {
  Rng rng(seed);
  return sample(count, rng);
}

Matrix GaussianMixture::sample(Eigen::Index count, Rng& rng) const {
  const Eigen::Index d = dim();
  Matrix out(count, d);
  Vector z(d);
  for (Eigen::Index i = 0; i < count; ++i) {
    const auto& c = components_[rng.categorical(weights_)];
    for (Eigen::Index k = 0; k < d; ++k) z(k) = rng.normal();
    out.row(i) = (c.mean() + c.cholesky_factor().triangularView<Eigen::Lower>() * z).transpose();
  }
  return out;
}

GaussianMixture GaussianMixture::condition(std::span<const double> observed,
                                           Eigen::Index split) const {
  std::vector<double> log_w(components_.size());
  std::vector<MultivariateGaussian> posterior;
  posterior.reserve(components_.size());
  for (std::size_t j = 0; j < components_.size(); ++j) {
    log_w[j] = weights_[j] > 0.0
                   ? std::log(weights_[j]) + components_[j].marginal_log_pdf(observed, split)
                   : -std::numeric_limits<double>::infinity();
    posterior.push_back(components_[j].condition(observed, split));
  }
  const double norm = log_sum_exp(log_w);
  if (!std::isfinite(norm))
    throw Error(ErrorKind::kAllWeightsVanish,
                "every component assigns zero likelihood to the observed block");
  std::vector<double> w(log_w.size());
  for (std::size_t j = 0; j < w.size(); ++j) w[j] = std::exp(log_w[j] - norm);
  return GaussianMixture(std::move(w), std::move(posterior));
}

Vector GaussianMixture::mean() const {
  Vector m = Vector::Zero(dim());
  for (std::size_t j = 0; j < components_.size(); ++j) m += weights_[j] * components_[j].mean();
  return m;
}

EmResult em_fit(const Matrix& data, int k, std::uint64_t seed, const EmOptions& options) {
  if (k < 1) throw Error(ErrorKind::kConfig, "em_fit needs k >= 1");
  const Eigen::Index n = data.rows();
  if (n < k)
    throw Error(ErrorKind::kTooFewPoints, "em_fit with " + std::to_string(n) +
                                              " points cannot fit " + std::to_string(k) +
                                              " components");
  if (!data.allFinite()) throw Error(ErrorKind::kNonFiniteInput, "em_fit data not finite");
  const Eigen::Index d = data.cols();
  if (n < static_cast<Eigen::Index>(k) * (d + 1))
    throw Error(ErrorKind::kDegenerateComponent,
                std::to_string(n) + " points leave fewer than d+1 = " + std::to_string(d + 1) +
                    " per component for " + std::to_string(k) + " components");

  Rng rng(seed);
  const auto global = MultivariateGaussian::fit(data);
  const double spread = (data.rowwise() - data.colwise().mean()).array().square().mean();
  const double jitter_unit = spread > 0.0 ? spread : 1.0;
  const auto ku = static_cast<std::size_t>(k);

  std::vector<Vector> means;
  for (std::size_t j = 0; j < ku; ++j) means.push_back(kmeans_plus_plus_point(data, means, rng));
  std::vector<MultivariateGaussian> components;
  for (auto& m : means)
    components.emplace_back(std::move(m), global.covariance(), JitterPolicy::kAsIs);
  std::vector<double> weights(ku, 1.0 / static_cast<double>(k));

  EmResult result{GaussianMixture(weights, components), {}, 0, false};
  std::vector<bool> reseeded(ku, false);
  const double dn = static_cast<double>(n);
  bool reseeded_last_step = false;

  for (int iter = 0;; ++iter) {
    const Matrix logp = component_log_joint(data, weights, components);
    const Vector ll = row_log_sum_exp(logp);
    if (!ll.allFinite())
      throw Error(ErrorKind::kNonFiniteLoss, "em_fit log-likelihood became non-finite");
    const double mean_ll = ll.mean();
    // A reseed restarts the ascent, so the step right after it is not compared.
    const bool improved_little = !result.log_likelihood_trace.empty() && !reseeded_last_step &&
                                 mean_ll - result.log_likelihood_trace.back() < options.tol;
    result.log_likelihood_trace.push_back(mean_ll);
    result.model = GaussianMixture(weights, components);
    if (improved_little) {
      result.converged = true;
      break;
    }
    if (iter >= options.max_iter) break;

    const Matrix resp = (logp.colwise() - ll).array().exp();
    const Vector mass = resp.colwise().sum().transpose();
    std::vector<MultivariateGaussian> next;
    next.reserve(ku);
    reseeded_last_step = false;
    for (std::size_t j = 0; j < ku; ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      if (mass(jj) < kDegenerateMass) {
        if (reseeded[j])
          throw Error(ErrorKind::kDegenerateComponent,
                      "component " + std::to_string(j) + " collapsed again after reseeding");
        reseeded[j] = true;
        ++result.reseeds;
        reseeded_last_step = true;
        next.emplace_back(
            data.row(static_cast<Eigen::Index>(rng.uniform_index(static_cast<std::size_t>(n))))
                .transpose(),
            global.covariance(), JitterPolicy::kAsIs);
        weights[j] = 1.0 / static_cast<double>(k);
        continue;
      }
      Vector mu = (resp.col(jj).transpose() * data).transpose() / mass(jj);
      const Matrix centered = data.rowwise() - mu.transpose();
      const Matrix scaled = centered.array().colwise() * resp.col(jj).array().sqrt();
      Matrix cov = Matrix::Zero(data.cols(), data.cols());
      cov.selfadjointView<Eigen::Lower>().rankUpdate(scaled.transpose(), 1.0 / mass(jj));
      cov.triangularView<Eigen::StrictlyUpper>() = cov.transpose();
      next.emplace_back(std::move(mu), std::move(cov), JitterPolicy::kFloor, jitter_unit);
      weights[j] = mass(jj) / dn;
    }
    components = std::move(next);
    double total = 0.0;
    for (double w : weights) total += w;
    for (double& w : weights) w /= total;
  }
  return result;
}

SelectKResult select_k(const Matrix& train, const Matrix& validation,
                       std::span<const int> candidates, std::uint64_t seed,
                       const EmOptions& options) {
  if (candidates.empty()) throw Error(ErrorKind::kConfig, "select_k needs candidates");
  std::vector<int> ks(candidates.begin(), candidates.end());
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());

  std::optional<SelectKResult> best;
  double best_nll = std::numeric_limits<double>::infinity();
  std::vector<std::pair<int, double>> scores;
  std::optional<Error> last_error;
  for (int k : ks) {
    try {
      auto fit = em_fit(train, k, mix_seed(seed, static_cast<std::uint64_t>(k)), options);
      const double nll = -fit.model.log_pdf_rows(validation).mean();
      scores.emplace_back(k, nll);
      if (!best || nll < best_nll) {
        best = SelectKResult{k, std::move(fit.model), {}};
        best_nll = nll;
      }
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kDegenerateComponent && e.kind() != ErrorKind::kTooFewPoints)
        throw;
      last_error = e;
    }
  }
  if (!best) throw *last_error;
  best->validation_nll = std::move(scores);
  return std::move(*best);
}

void to_json(nlohmann::json& j, const GaussianMixture& m) {
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& c : m.components()) comps.push_back(c);
  j = nlohmann::json{{"weights", m.weights()}, {"components", std::move(comps)}};
}

GaussianMixture mixture_from_json(const nlohmann::json& j) {
  std::vector<MultivariateGaussian> comps;
  for (const auto& c : j.at("components")) comps.push_back(gaussian_from_json(c));
  return GaussianMixture(j.at("weights").get<std::vector<double>>(), std::move(comps));
}

void to_json(nlohmann::json& j, const EmOptions& o) {
  j = nlohmann::json{{"max_iter", o.max_iter}, {"tol", o.tol}};
}

void from_json(const nlohmann::json& j, EmOptions& o) {
  o.max_iter = j.value("max_iter", o.max_iter);
  o.tol = j.value("tol", o.tol);
}

}  // namespace canf
