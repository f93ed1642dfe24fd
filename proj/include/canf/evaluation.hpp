#pragma once

#include "canf/forecasters.hpp"

namespace canf {

/// Denominator floor for WAPE terms whose true load is (near) zero, raw units.
inline constexpr double kWapeEpsilon = 1e-6;

struct MetricsReport {
  double wape = 0.0;
  double rwse = 0.0;
  Vector per_index_rwse;
  std::optional<double> mean_ll;  // nats, raw units; analytic forecasts only
  long n_sequences = 0;
  long m_samples = 0;
  long clamped_terms = 0;
};

/// Ordered set of D distinct 1-based horizon indices.
struct ScheduleAction {
  std::vector<int> indices;
};

struct DecisionReport {
  double decision_score = 0.0;
  std::vector<double> regrets;       // one per scored test sequence
  std::vector<std::size_t> excluded; // sequences with zero optimal utility
};

/// Per-sequence values kept for dumps.
struct SequenceRecord {
  std::size_t origin = 0;
  std::optional<double> log_likelihood;  // raw units
  double regret = 0.0;
  bool regret_valid = true;
  ScheduleAction action;
};

struct EvaluationOptions {
  Eigen::Index m = 1000;
  int D = 4;
  double alpha = 0.2;
  double quantile = 0.8;
  std::uint64_t seed = 0;
};

struct EvaluationReport {
  MetricsReport metrics;
  DecisionReport decision;
  std::vector<SequenceRecord> sequences;
};

/// WAPE, RWSE, per-index RWSE and mean LL of the true continuations, over m
/// predictive trajectories per test sequence. `test` must be standardized
/// with the forecaster's statistics; errors are reported in raw units.
MetricsReport eval_metrics(const Forecaster& forecaster, const SequenceDataset& test,
                           Eigen::Index m, std::uint64_t seed);

using LogDensityFn = std::function<Vector(const Matrix& points)>;
using SamplerFn = std::function<Matrix(Eigen::Index count, std::uint64_t seed)>;

struct KlEstimate {
  double mean = 0.0;
  double std_error = 0.0;
};

/// Monte-Carlo D_KL(p_data || p_model) from N draws of p_data.
KlEstimate mc_kl(const LogDensityFn& log_p_data, const SamplerFn& sample_data,
                 const LogDensityFn& log_p_model, Eigen::Index n, std::uint64_t seed);

/// Subset scores from a VaR scan, for reporting.
struct SubsetScore {
  std::vector<int> indices;
  double value_at_risk = 0.0;
};

/// Among all D-subsets of the K horizon indices, the one maximizing the
/// alpha-quantile of utility -sum(s[a]) over the rows of `samples`. Ties go
/// to the lexicographically smallest index tuple.
ScheduleAction select_action_from_samples(const Matrix& samples, int D, double alpha,
                                          std::vector<SubsetScore>* table = nullptr);

ScheduleAction select_action(const ForecastDistribution& fd, int D, double alpha,
                             Eigen::Index m, std::uint64_t seed,
                             std::vector<SubsetScore>* table = nullptr);

/// (U(y, a) - U(y, a*)) / U(y, a*) against the D smallest true loads.
double proportional_regret(std::span<const double> truth, const ScheduleAction& action, int D);

DecisionReport decision_score(const Forecaster& forecaster, const SequenceDataset& test, int D,
                              double alpha, Eigen::Index m, double quantile, std::uint64_t seed);

/// Metrics and decisions together, forecasting each sequence once.
EvaluationReport evaluate(const Forecaster& forecaster, const SequenceDataset& test,
                          const EvaluationOptions& options);

nlohmann::json to_json(const MetricsReport& r);
nlohmann::json to_json(const DecisionReport& r);

}  // namespace canf
