#pragma once

#include "canf/config.hpp"
#include "canf/evaluation.hpp"

#include <filesystem>

namespace canf {

/// Fixed output layout under RunConfig::out.
struct OutputLayout {
  std::filesystem::path root;
  std::filesystem::path models() const { return root / "models"; }
  std::filesystem::path reports() const { return root / "reports"; }
  std::filesystem::path dumps() const { return root / "dumps"; }

  /// Creates the directories and writes run.json.
  static OutputLayout create(const RunConfig& config, const std::string& command);
};

/// Train / validation / test windows for one seed, standardized with the
/// training statistics, plus a description precise enough to rebuild them.
struct PreparedData {
  SequenceDataset train;
  SequenceDataset validation;
  SequenceDataset test;
  nlohmann::json description;
};

PreparedData prepare_load_data(const RunConfig& config, std::uint64_t seed);
PreparedData prepare_load_data(const nlohmann::json& description);

/// Raw values of an input window CSV: the named column, or the only column.
std::vector<double> read_window_csv(const std::string& path, const std::string& value_column);

/// Seed streams used by the commands.
std::uint64_t strategy_seed(std::uint64_t seed, Strategy s);
std::uint64_t evaluation_seed(std::uint64_t seed);

int cmd_toy(const RunConfig& config);
int cmd_fit(const RunConfig& config);
/// With no bundles, fits every configured strategy for every seed first.
int cmd_evaluate(const RunConfig& config, const std::vector<std::string>& bundles);
int cmd_forecast(const RunConfig& config, const std::string& bundle, const std::string& window_csv);
int cmd_schedule(const RunConfig& config, const std::string& bundle, const std::string& window_csv);
int cmd_synth(const RunConfig& config);

}  // namespace canf
