#include "canf/commands.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

struct Options {
  std::string config;
  canf::Overrides overrides;
  std::vector<std::string> bundles;
  std::string window;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "JSON run configuration");
  cmd->add_option("--seed", o.overrides.seed, "Replace the configured seed list with one seed");
  cmd->add_option("--out", o.overrides.out, "Output directory");
  cmd->add_option("--strategy", o.overrides.strategy, "cg, cgmm, canf, jfnn, arma or ifnn");
  cmd->add_option("--L", o.overrides.L, "Input lags (window input is L+1 values)");
  cmd->add_option("--K", o.overrides.K, "Forecast horizon");
  cmd->add_option("--D", o.overrides.D, "Number of scheduled indices");
  cmd->add_option("--alpha", o.overrides.alpha, "Value-at-risk level");
  cmd->add_option("--m", o.overrides.m, "Samples per forecast");
  cmd->add_option("--csv", o.overrides.csv, "Hourly load CSV (default: synthetic series)");
  cmd->add_option("--value-column", o.overrides.value_column, "Load column name");
  cmd->add_option("--timestamp-column", o.overrides.timestamp_column, "Timestamp column name");
}

canf::RunConfig resolve(const Options& o, const std::string& experiment) {
  canf::RunConfig c;
  c.experiment = experiment;
  if (!o.config.empty()) c = canf::load_run_config(o.config);
  c.experiment = experiment;
  canf::apply_overrides(c, o.overrides);
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-step probabilistic load forecasting and value-at-risk scheduling"};
  app.require_subcommand(1);
  Options o;

  auto* toy = app.add_subcommand("toy", "Uniform-square density estimation experiment");
  auto* fit = app.add_subcommand("fit", "Fit forecasters and write model bundles");
  auto* forecast = app.add_subcommand("forecast", "Sample a forecast from a bundle");
  auto* evaluate = app.add_subcommand("evaluate", "Compare forecasters on the test split");
  auto* schedule = app.add_subcommand("schedule", "Choose D indices by value-at-risk");
  auto* synth = app.add_subcommand("synth", "Write a synthetic hourly load CSV");
  for (auto* cmd : {toy, fit, forecast, evaluate, schedule, synth}) add_common(cmd, o);
  evaluate->add_option("--bundle", o.bundles, "Bundle directories (repeatable); fits afresh if absent");
  for (auto* cmd : {forecast, schedule}) {
    cmd->add_option("--bundle", o.bundles, "Bundle directory")->required()->expected(1);
    cmd->add_option("--window", o.window, "CSV with the L+1 most recent loads")->required();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (toy->parsed()) return canf::cmd_toy(resolve(o, "toy"));
    if (fit->parsed()) return canf::cmd_fit(resolve(o, "load"));
    if (evaluate->parsed()) return canf::cmd_evaluate(resolve(o, "load"), o.bundles);
    if (forecast->parsed()) return canf::cmd_forecast(resolve(o, "load"), o.bundles.front(), o.window);
    if (schedule->parsed()) return canf::cmd_schedule(resolve(o, "load"), o.bundles.front(), o.window);
    if (synth->parsed()) return canf::cmd_synth(resolve(o, "load"));
  } catch (const canf::Error& e) {
    std::cerr << "error [" << canf::to_string(e.kind()) << "]: " << e.what() << '\n';
    return canf::exit_code(e.kind());
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error [ConfigError]: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  }
  return 0;
}
