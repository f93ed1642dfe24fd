#pragma once

#include "canf/dataset.hpp"
#include "canf/flow.hpp"

#include <functional>
#include <optional>
#include <variant>

namespace canf {

enum class Strategy { kCg, kCgmm, kCanf, kJfnn, kArma, kIfnn };

std::string to_string(Strategy s);
Strategy strategy_from_string(const std::string& s);
/// ARMA and IFNN forecast one step and roll out iteratively.
bool is_iterative(Strategy s);

struct ForecasterConfig {
  Strategy strategy = Strategy::kCg;
  int L = 7;
  int K = 12;
  // CGMM
  std::vector<int> k_candidates{5};
  EmOptions em;
  // CANF
  FlowTrainConfig flow{10, {32, 32}, 200, 128, 1e-3, 20, 5.0};
  int anf_samples = 1000000;
  int anf_components = 25;
  EmOptions anf_em{100, 1e-6};
  /// Components of the direct GMM a CANF fit keeps for likelihood
  /// diagnostics; 0 disables it.
  int diagnostic_gmm_components = 5;
  // JFNN / IFNN
  MdnTrainConfig jfnn{{40, 40, 40}, Activation::kRelu, 2, 2, 200, 128, 1e-3, 20};
  MdnTrainConfig ifnn{{40, 40, 40}, Activation::kRelu, 3, 0, 200, 128, 1e-3, 20};
};

void to_json(nlohmann::json& j, const ForecasterConfig& c);
void from_json(const nlohmann::json& j, ForecasterConfig& c);

/// Predictive distribution over the K future values: either a closed-form
/// mixture or a seeded sampler of m x K trajectories.
class ForecastDistribution {
 public:
  using Sampler = std::function<Matrix(Eigen::Index count, std::uint64_t seed)>;

  static ForecastDistribution analytic(GaussianMixture mixture);
  static ForecastDistribution sample_only(int horizon, Sampler sampler);

  bool is_analytic() const { return mixture_.has_value(); }
  int horizon() const { return horizon_; }
  const GaussianMixture& mixture() const;
  Matrix sample(Eigen::Index count, std::uint64_t seed) const;

 private:
  ForecastDistribution() = default;
  int horizon_ = 0;
  std::optional<GaussianMixture> mixture_;
  Sampler sampler_;
};

struct CgState {
  MultivariateGaussian joint;
};

struct CgmmState {
  GaussianMixture joint;
  std::vector<std::pair<int, double>> validation_nll;
};

struct CanfState {
  RealNvpFlow flow;
  GaussianMixture approximation;
  std::optional<GaussianMixture> reference_gmm;
  TrainingCurves curves;
};

struct MdnState {
  MdnModel model;
  TrainingCurves curves;
};

/// One-step linear-Gaussian model: next = intercept + coefficients . window
/// + N(0, variance); derived from a joint Gaussian over L+2 values.
struct ArmaState {
  MultivariateGaussian joint;
  Vector coefficients;
  double intercept = 0.0;
  double variance = 1.0;

  explicit ArmaState(MultivariateGaussian joint);
};

/// A forecasting strategy plus its fitted state. Inputs and outputs are in
/// the standardized units recorded in `stats`. Fitted forecasters are
/// immutable; forecast() is pure given its seed.
class Forecaster {
 public:
  using State = std::variant<std::monostate, CgState, CgmmState, CanfState, MdnState, ArmaState>;

  explicit Forecaster(ForecasterConfig config, Standardization stats = {});

  const ForecasterConfig& config() const { return config_; }
  Strategy strategy() const { return config_.strategy; }
  int L() const { return config_.L; }
  int K() const { return config_.K; }
  const Standardization& stats() const { return stats_; }
  bool fitted() const { return !std::holds_alternative<std::monostate>(state_); }
  const State& state() const { return state_; }
  void set_state(State s) { state_ = std::move(s); }

  /// `input` holds the L+1 most recent standardized values.
  ForecastDistribution forecast(const Vector& input) const;

  /// One-step draws for each row of `windows` (m x (L+1)); iterative
  /// strategies only.
  Vector sample_next(const Matrix& windows, Rng& rng) const;

  /// Log density of full standardized windows under the joint model where
  /// one exists (CG, CGMM, CANF's approximation).
  std::optional<double> joint_log_pdf(const Vector& window) const;

 private:
  ForecasterConfig config_;
  Standardization stats_;
  State state_;
};

Forecaster fit_cg(const SequenceDataset& train);
Forecaster fit_cgmm(const SequenceDataset& train, const SequenceDataset& val,
                    std::span<const int> k_candidates, std::uint64_t seed,
                    const EmOptions& em = {});
Forecaster fit_canf(const SequenceDataset& train, const SequenceDataset& val,
                    const FlowTrainConfig& flow, int anf_samples, int anf_components,
                    std::uint64_t seed, const EmOptions& em = {},
                    int diagnostic_gmm_components = 0);
Forecaster fit_jfnn(const SequenceDataset& train, const SequenceDataset& val,
                    const MdnTrainConfig& config, std::uint64_t seed);
Forecaster fit_arma(const SequenceDataset& train);
Forecaster fit_ifnn(const SequenceDataset& train, const SequenceDataset& val,
                    const MdnTrainConfig& config, std::uint64_t seed);

/// Dispatches on config.strategy.
Forecaster fit_forecaster(const ForecasterConfig& config, const SequenceDataset& train,
                          const SequenceDataset& val, std::uint64_t seed);

/// m x K trajectories from repeatedly sampling one step ahead, appending the
/// draw and dropping the oldest value of the window.
Matrix iterative_rollout(const Forecaster& single_step, const Vector& input, int K,
                         Eigen::Index m, std::uint64_t seed);

/// Writes config.json plus one JSON artifact per fitted model into `dir`.
/// `extra` is merged into config.json (e.g. the dataset description).
void save_bundle(const Forecaster& f, const std::string& dir,
                 const nlohmann::json& extra = nlohmann::json::object());
Forecaster load_bundle(const std::string& dir, nlohmann::json* config_out = nullptr);

}  // namespace canf
