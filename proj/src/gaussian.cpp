#include "canf/gaussian.hpp"

#include <cmath>
#include <sstream>

namespace canf {

namespace {

void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite())
    throw Error(ErrorKind::kNonFiniteInput, std::string(what) + " has non-finite entries");
}

}  // namespace

MultivariateGaussian::MultivariateGaussian(Vector mean, Matrix covariance,
                                           JitterPolicy policy, double jitter_unit)
    : mean_(std::move(mean)) {
  const Eigen::Index d = mean_.size();
  if (d < 1) throw Error(ErrorKind::kEmptyData, "gaussian of dimension 0");
  if (covariance.rows() != d || covariance.cols() != d) {
    std::ostringstream os;
    os << "covariance is " << covariance.rows() << "x" << covariance.cols()
       << " but mean has length " << d;
    throw Error(ErrorKind::kDimensionMismatch, os.str());
  }
  require_finite(mean_, "mean");
  require_finite(covariance, "covariance");
  if (!(jitter_unit > 0.0) || !std::isfinite(jitter_unit))
    throw Error(ErrorKind::kConfig, "jitter unit must be positive");
  Matrix symmetric = 0.5 * (covariance + covariance.transpose());

  const double first = kJitter * jitter_unit;
  if (policy == JitterPolicy::kFloor) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetric);
    if (eig.info() != Eigen::Success)
      throw Error(ErrorKind::kNotPositiveDefinite, "covariance eigendecomposition failed");
    if (eig.eigenvalues().minCoeff() < first) {
      const Vector floored = eig.eigenvalues().cwiseMax(first);
      symmetric = eig.eigenvectors() * floored.asDiagonal() * eig.eigenvectors().transpose();
      symmetric = 0.5 * (symmetric + symmetric.transpose()).eval();
    }
  }
  double jitter = 0.0;
  while (true) {
    Matrix candidate = symmetric;
    candidate.diagonal().array() += jitter;
    Eigen::LLT<Matrix> llt(candidate);
    if (llt.info() == Eigen::Success && llt.matrixLLT().diagonal().minCoeff() > 0.0) {
      covariance_ = std::move(candidate);
      chol_ = llt.matrixL();
      jitter_ = jitter;
      break;
    }
    if (jitter >= kMaxJitter * jitter_unit * (1.0 - 1e-9))
      throw Error(ErrorKind::kNotPositiveDefinite,
                  "covariance not positive definite after jitter " + std::to_string(jitter));
    jitter = jitter == 0.0 ? first : jitter * 10.0;
  }
  log_det_ = 2.0 * chol_.diagonal().array().log().sum();
}

MultivariateGaussian MultivariateGaussian::fit(const Matrix& data) {
  if (data.rows() < 2)
    throw Error(ErrorKind::kEmptyData, "gaussian fit needs at least 2 rows");
  if (data.cols() < 1) throw Error(ErrorKind::kEmptyData, "gaussian fit needs d >= 1");
  require_finite(data, "training data");
  const double n = static_cast<double>(data.rows());
  Vector mean = data.colwise().mean().transpose();
  const Matrix centered = data.rowwise() - mean.transpose();
  Matrix cov = (centered.transpose() * centered) / n;
  const double scale = cov.diagonal().mean();
  return MultivariateGaussian(std::move(mean), std::move(cov), JitterPolicy::kFloor,
                              scale > 0.0 ? scale : 1.0);
}

double MultivariateGaussian::log_pdf(std::span<const double> x) const {
  if (static_cast<Eigen::Index>(x.size()) != dim())
    throw Error(ErrorKind::kDimensionMismatch,
                "log_pdf input length " + std::to_string(x.size()) + " != " +
                    std::to_string(dim()));
  const Vector diff = Eigen::Map<const Vector>(x.data(), dim()) - mean_;
  const Vector r = chol_.triangularView<Eigen::Lower>().solve(diff);
  return -0.5 * (r.squaredNorm() + log_det_ + static_cast<double>(dim()) * kLog2Pi);
}

double MultivariateGaussian::log_pdf(const Vector& x) const {
  return log_pdf(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())));
}

Vector MultivariateGaussian::log_pdf_rows(const Matrix& points) const {
  if (points.cols() != dim())
    throw Error(ErrorKind::kDimensionMismatch, "log_pdf_rows column count mismatch");
  Matrix r = points.rowwise() - mean_.transpose();
  chol_.triangularView<Eigen::Lower>().transpose().solveInPlace<Eigen::OnTheRight>(r);
  const double c = log_det_ + static_cast<double>(dim()) * kLog2Pi;
  return -0.5 * (r.rowwise().squaredNorm().array() + c);
}

Matrix MultivariateGaussian::sample(Eigen::Index count, std::uint64_t seed) const {
  Rng rng(seed);
  return sample(count, rng);
}

Matrix MultivariateGaussian::sample(Eigen::Index count, Rng& rng) const {
  const Matrix z = rng.normal_matrix(count, dim());
  Matrix out = z * chol_.transpose();
  out.rowwise() += mean_.transpose();
  return out;
}

MultivariateGaussian MultivariateGaussian::condition(std::span<const double> observed,
                                                     Eigen::Index split) const {
  const Eigen::Index d = dim();
  if (split <= 0 || split >= d)
    throw Error(ErrorKind::kDimensionMismatch,
                "condition split " + std::to_string(split) + " outside (0, " +
                    std::to_string(d) + ")");
  if (static_cast<Eigen::Index>(observed.size()) != split)
    throw Error(ErrorKind::kDimensionMismatch,
                "observed block length " + std::to_string(observed.size()) +
                    " != split " + std::to_string(split));
  const Eigen::Index rest = d - split;
  // The leading block of the full factor is the factor of the observed block.
  const auto l_aa = chol_.topLeftCorner(split, split).triangularView<Eigen::Lower>();
  const Matrix w = l_aa.solve(covariance_.topRightCorner(split, rest));
  const Vector diff = Eigen::Map<const Vector>(observed.data(), split) - mean_.head(split);
  Vector mean = mean_.tail(rest) + w.transpose() * l_aa.solve(diff);
  Matrix cov = covariance_.bottomRightCorner(rest, rest) - w.transpose() * w;
  return MultivariateGaussian(std::move(mean), std::move(cov), JitterPolicy::kAsIs);
}

double MultivariateGaussian::marginal_log_pdf(std::span<const double> observed,
                                              Eigen::Index split) const {
  if (split <= 0 || split > dim() || static_cast<Eigen::Index>(observed.size()) != split)
    throw Error(ErrorKind::kDimensionMismatch, "marginal_log_pdf block mismatch");
  const auto l_aa = chol_.topLeftCorner(split, split).triangularView<Eigen::Lower>();
  const Vector diff = Eigen::Map<const Vector>(observed.data(), split) - mean_.head(split);
  const Vector r = l_aa.solve(diff);
  const double log_det = 2.0 * chol_.diagonal().head(split).array().log().sum();
  return -0.5 * (r.squaredNorm() + log_det + static_cast<double>(split) * kLog2Pi);
}

nlohmann::json vector_to_json(const Vector& v) {
  return nlohmann::json(std::vector<double>(v.data(), v.data() + v.size()));
}

Vector vector_from_json(const nlohmann::json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index k = 0; k < m.cols(); ++k) row[static_cast<std::size_t>(k)] = m(i, k);
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const nlohmann::json& j) {
  const auto rows = j.get<std::vector<std::vector<double>>>();
  if (rows.empty()) return Matrix(0, 0);
  Matrix m(static_cast<Eigen::Index>(rows.size()),
           static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows.front().size())
      throw Error(ErrorKind::kParse, "ragged matrix in JSON");
    for (std::size_t k = 0; k < rows[i].size(); ++k)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
  }
  return m;
}

void to_json(nlohmann::json& j, const MultivariateGaussian& g) {
  j = nlohmann::json{{"mean", vector_to_json(g.mean())},
                     {"covariance", matrix_to_json(g.covariance())}};
}

MultivariateGaussian gaussian_from_json(const nlohmann::json& j) {
  return MultivariateGaussian(vector_from_json(j.at("mean")),
                              matrix_from_json(j.at("covariance")), JitterPolicy::kAsIs);
}

}  // namespace canf
