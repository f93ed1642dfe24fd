#pragma once

#include "canf/forecasters.hpp"

#include <optional>

namespace canf {

struct DataConfig {
  std::string csv;  // empty: synthetic series
  std::string value_column = "load_kwh";
  std::string timestamp_column = "timestamp";
  int synth_weeks = 52;
  SynthParams synth;
  double test_fraction = 0.25;
  double validation_fraction = 0.2;
  int stride = 1;
};

struct ToyConfig {
  int train_points = 1000;
  int validation_points = 200;
  std::vector<int> k_candidates{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15};
  EmOptions em;
  FlowTrainConfig flow{4, {12, 12}, 3000, 128, 1e-3, 20, 5.0, 10};
  int anf_samples = 10000;
  int anf_components = 40;
  EmOptions anf_em;
  int kl_samples = 100000;
  int grid_points = 101;  // per axis, for density dumps
};

/// Everything a command needs, after defaults, file contents and flags have
/// been merged. validate() runs before any computation.
struct RunConfig {
  std::string experiment = "load";
  DataConfig data;
  int L = 7;
  int K = 12;
  int D = 4;
  double alpha = 0.2;
  long m = 1000;
  double quantile = 0.8;
  std::vector<ForecasterConfig> strategies = default_strategies();
  std::vector<std::uint64_t> seeds{0};
  std::string out = "run";
  ToyConfig toy;

  /// The default strategy list: CG, CGMM, CANF and ARMA.
  static std::vector<ForecasterConfig> default_strategies();

  /// Throws Error(kConfig) naming the first offending field.
  void validate() const;

  /// Settings for one strategy, with the run-level L and K applied.
  ForecasterConfig strategy_config(Strategy s) const;
};

void to_json(nlohmann::json& j, const DataConfig& c);
void from_json(const nlohmann::json& j, DataConfig& c);
void to_json(nlohmann::json& j, const ToyConfig& c);
void from_json(const nlohmann::json& j, ToyConfig& c);
void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

RunConfig load_run_config(const std::string& path);

/// Command-line values that take precedence over the config file.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> strategy;
  std::optional<int> L, K, D;
  std::optional<double> alpha;
  std::optional<long> m;
  std::optional<std::string> csv;
  std::optional<std::string> value_column;
  std::optional<std::string> timestamp_column;
};

void apply_overrides(RunConfig& config, const Overrides& o);

}  // namespace canf
