#include "canf/evaluation.hpp"

#include <algorithm>
#include <limits>
#include <cmath>
#include <numeric>

namespace canf {

namespace {

// Streams are keyed by each window's origin so results do not depend on the
// order of the test sequences.
std::uint64_t sequence_key(const SequenceDataset& test, Eigen::Index i) {
  const auto ui = static_cast<std::size_t>(i);
  return ui < test.origins.size() ? static_cast<std::uint64_t>(test.origins[ui]) : ui;
}
std::uint64_t metrics_stream(std::uint64_t key) { return 2 * key; }
std::uint64_t decision_stream(std::uint64_t key) { return 2 * key + 1; }

void check_test_set(const Forecaster& f, const SequenceDataset& test) {
  if (test.L != f.L() || test.K != f.K())
    throw Error(ErrorKind::kDimensionMismatch, "test windows do not match the forecaster's L and K");
  if (test.size() == 0) throw Error(ErrorKind::kEmptyData, "empty test set");
}

// Advances `idx` to the next D-combination of {0..K-1} in lexicographic order.
bool next_combination(std::vector<int>& idx, int K) {
  const int D = static_cast<int>(idx.size());
  int i = D - 1;
  while (i >= 0 && idx[static_cast<std::size_t>(i)] == K - D + i) --i;
  if (i < 0) return false;
  ++idx[static_cast<std::size_t>(i)];
  for (int j = i + 1; j < D; ++j) idx[static_cast<std::size_t>(j)] = idx[static_cast<std::size_t>(j - 1)] + 1;
  return true;
}

struct MetricAccumulator {
  double abs_pct = 0.0;
  double sq = 0.0;
  Vector sq_per_index;
  double ll = 0.0;
  bool analytic = true;
  long clamped = 0;
  long sequences = 0;
};

void accumulate_metrics(MetricAccumulator& acc, const ForecastDistribution& fd,
                        const Vector& truth_std, const Standardization& stats, Eigen::Index m,
                        std::uint64_t seed) {
  const Matrix samples = fd.sample(m, seed);
  const Eigen::Index K = truth_std.size();
  for (Eigen::Index t = 0; t < K; ++t) {
    const double y = stats.invert(truth_std(t));
    double denom = std::abs(y);
    if (denom < kWapeEpsilon) {
      denom = kWapeEpsilon;
      acc.clamped += m;
    }
    double col_sq = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) {
      const double err = y - stats.invert(samples(j, t));
      acc.abs_pct += std::abs(err) / denom;
      col_sq += err * err;
    }
    acc.sq += col_sq;
    acc.sq_per_index(t) += col_sq;
  }
  if (fd.is_analytic()) {
    acc.ll += fd.mixture().log_pdf(truth_std) - static_cast<double>(K) * std::log(stats.std);
  } else {
    acc.analytic = false;
  }
  ++acc.sequences;
}

MetricsReport finish_metrics(const MetricAccumulator& acc, Eigen::Index m, int K) {
  MetricsReport r;
  const double terms = static_cast<double>(acc.sequences) * static_cast<double>(m) * K;
  r.wape = acc.abs_pct / terms;
  r.rwse = std::sqrt(acc.sq / terms);
  r.per_index_rwse =
      (acc.sq_per_index.array() / (static_cast<double>(acc.sequences) * static_cast<double>(m))).sqrt();
  if (acc.analytic) r.mean_ll = acc.ll / static_cast<double>(acc.sequences);
  r.n_sequences = acc.sequences;
  r.m_samples = static_cast<long>(m);
  r.clamped_terms = acc.clamped;
  return r;
}

Vector raw_truth(const SequenceDataset& test, Eigen::Index i) {
  Vector t = test.windows.row(i).tail(test.K).transpose();
  return t.unaryExpr([&](double v) { return test.stats.invert(v); });
}

}  // namespace

MetricsReport eval_metrics(const Forecaster& forecaster, const SequenceDataset& test,
                           Eigen::Index m, std::uint64_t seed) {
  if (m < 1) throw Error(ErrorKind::kConfig, "m must be at least 1");
  check_test_set(forecaster, test);
  MetricAccumulator acc;
  acc.sq_per_index = Vector::Zero(test.K);
  for (Eigen::Index i = 0; i < test.size(); ++i) {
    const Vector input = test.windows.row(i).head(test.L + 1).transpose();
    const Vector truth = test.windows.row(i).tail(test.K).transpose();
    const auto fd = forecaster.forecast(input);
    accumulate_metrics(acc, fd, truth, test.stats, m,
                       mix_seed(seed, metrics_stream(sequence_key(test, i))));
  }
  return finish_metrics(acc, m, test.K);
}

KlEstimate mc_kl(const LogDensityFn& log_p_data, const SamplerFn& sample_data,
                 const LogDensityFn& log_p_model, Eigen::Index n, std::uint64_t seed) {
  if (n < 1000) throw Error(ErrorKind::kConfig, "mc_kl needs at least 1000 samples");
  const Matrix x = sample_data(n, seed);
  const Vector diff = log_p_data(x) - log_p_model(x);
  long bad = 0;
  for (Eigen::Index i = 0; i < diff.size(); ++i)
    if (!std::isfinite(diff(i))) ++bad;
  if (bad > 0)
    throw Error(ErrorKind::kNonFiniteLogDensity,
                std::to_string(bad) + " of " + std::to_string(n) +
                    " points have a non-finite log-density");
  const double mean = diff.mean();
  const double var = (diff.array() - mean).square().sum() / static_cast<double>(n - 1);
  return {mean, std::sqrt(var / static_cast<double>(n))};
}

ScheduleAction select_action_from_samples(const Matrix& samples, int D, double alpha,
                                          std::vector<SubsetScore>* table) {
  const int K = static_cast<int>(samples.cols());
  if (D < 1 || D > K) throw Error(ErrorKind::kConfig, "D must lie in [1, K]");
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorKind::kConfig, "alpha must lie in (0, 1)");
  const Eigen::Index m = samples.rows();
  if (m < 1) throw Error(ErrorKind::kConfig, "need at least one sample");

  std::vector<int> idx(static_cast<std::size_t>(D));
  std::iota(idx.begin(), idx.end(), 0);
  const auto q_index = static_cast<Eigen::Index>(std::floor(alpha * static_cast<double>(m - 1)));
  Vector utility(m);
  std::vector<double> scratch(static_cast<std::size_t>(m));
  std::vector<int> best;
  double best_var = -std::numeric_limits<double>::infinity();
  if (table) table->clear();
  do {
    utility = -samples.col(idx[0]);
    for (std::size_t i = 1; i < idx.size(); ++i) utility -= samples.col(idx[i]);
    // The quantile exceeds best_var only if at most q_index utilities are
    // at or below it; counting is much cheaper than selection.
    if (!table && !best.empty() && (utility.array() <= best_var).count() > q_index) continue;
    std::copy(utility.data(), utility.data() + m, scratch.begin());
    const double var = lower_quantile(scratch, alpha);
    if (best.empty() || var > best_var) {
      best_var = var;
      best = idx;
    }
    if (table) {
      SubsetScore s{idx, var};
      for (int& v : s.indices) ++v;
      table->push_back(std::move(s));
    }
  } while (next_combination(idx, K));
  ScheduleAction action{std::move(best)};
  for (int& v : action.indices) ++v;
  return action;
}

ScheduleAction select_action(const ForecastDistribution& fd, int D, double alpha, Eigen::Index m,
                             std::uint64_t seed, std::vector<SubsetScore>* table) {
  if (m < 1) throw Error(ErrorKind::kConfig, "m must be at least 1");
  return select_action_from_samples(fd.sample(m, seed), D, alpha, table);
}

double proportional_regret(std::span<const double> truth, const ScheduleAction& action, int D) {
  const int K = static_cast<int>(truth.size());
  if (static_cast<int>(action.indices.size()) != D)
    throw Error(ErrorKind::kConfig, "action does not have D indices");
  for (std::size_t i = 0; i < action.indices.size(); ++i) {
    const int a = action.indices[i];
    if (a < 1 || a > K || (i > 0 && a <= action.indices[i - 1]))
      throw Error(ErrorKind::kConfig, "action indices must be sorted, distinct and in 1..K");
  }
  std::vector<double> sorted(truth.begin(), truth.end());
  std::sort(sorted.begin(), sorted.end());
  const double best_utility = -std::accumulate(sorted.begin(), sorted.begin() + D, 0.0);
  if (best_utility == 0.0)
    throw Error(ErrorKind::kZeroOptimalUtility, "hindsight-optimal utility is zero");
  std::vector<double> picked;
  for (int a : action.indices) picked.push_back(truth[static_cast<std::size_t>(a - 1)]);
  std::sort(picked.begin(), picked.end());
  const double chosen = std::accumulate(picked.begin(), picked.end(), 0.0);
  return (-chosen - best_utility) / best_utility;
}

DecisionReport decision_score(const Forecaster& forecaster, const SequenceDataset& test, int D,
                              double alpha, Eigen::Index m, double quantile, std::uint64_t seed) {
  EvaluationOptions opts{m, D, alpha, quantile, seed};
  check_test_set(forecaster, test);
  DecisionReport report;
  for (Eigen::Index i = 0; i < test.size(); ++i) {
    const Vector input = test.windows.row(i).head(test.L + 1).transpose();
    const auto fd = forecaster.forecast(input);
    const auto action = select_action(fd, opts.D, opts.alpha, opts.m,
                                      mix_seed(seed, decision_stream(sequence_key(test, i))));
    const Vector truth = raw_truth(test, i);
    try {
      report.regrets.push_back(proportional_regret(
          std::span<const double>(truth.data(), static_cast<std::size_t>(truth.size())), action, D));
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kZeroOptimalUtility) throw;
      report.excluded.push_back(static_cast<std::size_t>(i));
    }
  }
  std::vector<double> scratch = report.regrets;
  report.decision_score = lower_quantile(scratch, quantile);
  return report;
}

EvaluationReport evaluate(const Forecaster& forecaster, const SequenceDataset& test,
                          const EvaluationOptions& options) {
  if (options.m < 1) throw Error(ErrorKind::kConfig, "m must be at least 1");
  check_test_set(forecaster, test);
  EvaluationReport report;
  MetricAccumulator acc;
  acc.sq_per_index = Vector::Zero(test.K);
  for (Eigen::Index i = 0; i < test.size(); ++i) {
    const auto ui = static_cast<std::size_t>(i);
    const Vector input = test.windows.row(i).head(test.L + 1).transpose();
    const Vector truth_std = test.windows.row(i).tail(test.K).transpose();
    const auto fd = forecaster.forecast(input);
    SequenceRecord rec;
    rec.origin = ui < test.origins.size() ? test.origins[ui] : ui;
    const double ll_before = acc.ll;
    accumulate_metrics(acc, fd, truth_std, test.stats, options.m, mix_seed(options.seed, metrics_stream(sequence_key(test, i))));
    if (fd.is_analytic()) rec.log_likelihood = acc.ll - ll_before;
    rec.action = select_action(fd, options.D, options.alpha, options.m,
                               mix_seed(options.seed, decision_stream(sequence_key(test, i))));
    const Vector truth = raw_truth(test, i);
    try {
      rec.regret = proportional_regret(
          std::span<const double>(truth.data(), static_cast<std::size_t>(truth.size())), rec.action,
          options.D);
      report.decision.regrets.push_back(rec.regret);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kZeroOptimalUtility) throw;
      rec.regret_valid = false;
      report.decision.excluded.push_back(ui);
    }
    report.sequences.push_back(std::move(rec));
  }
  report.metrics = finish_metrics(acc, options.m, test.K);
  std::vector<double> scratch = report.decision.regrets;
  report.decision.decision_score = lower_quantile(scratch, options.quantile);
  return report;
}

nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json j{{"wape", r.wape},
                   {"rwse", r.rwse},
                   {"per_index_rwse", vector_to_json(r.per_index_rwse)},
                   {"n_sequences", r.n_sequences},
                   {"m_samples", r.m_samples},
                   {"clamped_terms", r.clamped_terms}};
  j["mean_ll"] = r.mean_ll ? nlohmann::json(*r.mean_ll) : nlohmann::json(nullptr);
  return j;
}

nlohmann::json to_json(const DecisionReport& r) {
  return {{"decision_score", r.decision_score},
          {"n_regrets", r.regrets.size()},
          {"excluded", r.excluded}};
}

}  // namespace canf
