#include "canf/config.hpp"

#include <fstream>
#include <set>

namespace canf {

namespace {

[[noreturn]] void bad(const std::string& what) { throw Error(ErrorKind::kConfig, what); }

void check_em(const EmOptions& em, const std::string& where) {
  if (em.max_iter < 1) bad(where + ".max_iter must be at least 1");
  if (!(em.tol > 0.0)) bad(where + ".tol must be positive");
}

void check_flow(const FlowTrainConfig& f, const std::string& where) {
  if (f.layers < 1) bad(where + ".layers must be at least 1");
  if (f.hidden.empty()) bad(where + ".hidden must list at least one width");
  for (int h : f.hidden)
    if (h < 1) bad(where + ".hidden widths must be positive");
  if (f.epochs < 0) bad(where + ".epochs must be non-negative");
  if (f.batch < 1) bad(where + ".batch must be at least 1");
  if (!(f.learning_rate > 0.0)) bad(where + ".learning_rate must be positive");
  if (f.patience < 1) bad(where + ".patience must be at least 1");
  if (!(f.s_max > 0.0)) bad(where + ".s_max must be positive");
  if (f.validation_interval < 1) bad(where + ".validation_interval must be at least 1");
}

void check_mdn(const MdnTrainConfig& c, const std::string& where) {
  for (int h : c.hidden)
    if (h < 1) bad(where + ".hidden widths must be positive");
  if (c.components < 1) bad(where + ".components must be at least 1");
  if (c.rank < 0) bad(where + ".rank must be non-negative");
  if (c.epochs < 0) bad(where + ".epochs must be non-negative");
  if (c.batch < 1) bad(where + ".batch must be at least 1");
  if (!(c.learning_rate > 0.0)) bad(where + ".learning_rate must be positive");
  if (c.patience < 1) bad(where + ".patience must be at least 1");
}

void check_candidates(const std::vector<int>& ks, const std::string& where) {
  if (ks.empty()) bad(where + " must list at least one component count");
  for (int k : ks)
    if (k < 1) bad(where + " entries must be positive");
}

void check_strategy(const ForecasterConfig& c) {
  const std::string where = "strategies[" + to_string(c.strategy) + "]";
  switch (c.strategy) {
    case Strategy::kCg:
    case Strategy::kArma:
      break;
    case Strategy::kCgmm:
      check_candidates(c.k_candidates, where + ".k_candidates");
      check_em(c.em, where + ".em");
      break;
    case Strategy::kCanf:
      check_flow(c.flow, where + ".flow");
      check_em(c.anf_em, where + ".anf_em");
      if (c.anf_components < 1) bad(where + ".anf_components must be at least 1");
      if (c.anf_samples < c.anf_components)
        bad(where + ".anf_samples must be at least anf_components");
      if (c.diagnostic_gmm_components < 0)
        bad(where + ".diagnostic_gmm_components must be non-negative");
      break;
    case Strategy::kJfnn:
      check_mdn(c.jfnn, where + ".jfnn");
      break;
    case Strategy::kIfnn:
      check_mdn(c.ifnn, where + ".ifnn");
      break;
  }
}

}  // namespace

std::vector<ForecasterConfig> RunConfig::default_strategies() {
  std::vector<ForecasterConfig> out;
  for (Strategy s : {Strategy::kCg, Strategy::kCgmm, Strategy::kCanf, Strategy::kArma}) {
    ForecasterConfig c;
    c.strategy = s;
    out.push_back(c);
  }
  return out;
}

ForecasterConfig RunConfig::strategy_config(Strategy s) const {
  ForecasterConfig c;
  c.strategy = s;
  for (const auto& candidate : strategies)
    if (candidate.strategy == s) c = candidate;
  c.L = L;
  c.K = K;
  return c;
}

void RunConfig::validate() const {
  if (experiment != "toy" && experiment != "load")
    bad("experiment must be \"toy\" or \"load\", got \"" + experiment + "\"");
  if (L < 1) bad("L must be at least 1");
  if (K < 1) bad("K must be at least 1");
  if (D < 1 || D > K) bad("D must lie in [1, K]");
  if (!(alpha > 0.0 && alpha < 1.0)) bad("alpha must lie in (0, 1)");
  if (m < 1) bad("m must be at least 1");
  if (!(quantile > 0.0 && quantile <= 1.0)) bad("quantile must lie in (0, 1]");
  if (seeds.empty()) bad("seeds must not be empty");
  if (out.empty()) bad("out must name a directory");

  if (!(data.test_fraction > 0.0 && data.test_fraction < 1.0))
    bad("data.test_fraction must lie in (0, 1)");
  if (!(data.validation_fraction > 0.0 && data.validation_fraction < 1.0))
    bad("data.validation_fraction must lie in (0, 1)");
  if (data.stride < 1) bad("data.stride must be at least 1");
  if (data.csv.empty() && data.synth_weeks < 8) bad("data.synth_weeks must be at least 8");
  if (data.value_column.empty() || data.timestamp_column.empty())
    bad("data column names must not be empty");

  if (strategies.empty()) bad("strategies must not be empty");
  std::set<Strategy> seen;
  for (const auto& s : strategies) {
    if (!seen.insert(s.strategy).second) bad("strategy " + to_string(s.strategy) + " listed twice");
    check_strategy(s);
  }

  if (toy.train_points < 2) bad("toy.train_points must be at least 2");
  if (toy.validation_points < 1) bad("toy.validation_points must be at least 1");
  check_candidates(toy.k_candidates, "toy.k_candidates");
  check_em(toy.em, "toy.em");
  check_flow(toy.flow, "toy.flow");
  check_em(toy.anf_em, "toy.anf_em");
  if (toy.anf_components < 1 || toy.anf_samples < toy.anf_components)
    bad("toy.anf_samples must be at least toy.anf_components >= 1");
  if (toy.kl_samples < 1000) bad("toy.kl_samples must be at least 1000");
  if (toy.grid_points < 2) bad("toy.grid_points must be at least 2");
}

void to_json(nlohmann::json& j, const DataConfig& c) {
  j = nlohmann::json{{"csv", c.csv},
                     {"value_column", c.value_column},
                     {"timestamp_column", c.timestamp_column},
                     {"synth_weeks", c.synth_weeks},
                     {"synth", c.synth},
                     {"test_fraction", c.test_fraction},
                     {"validation_fraction", c.validation_fraction},
                     {"stride", c.stride}};
}

void from_json(const nlohmann::json& j, DataConfig& c) {
  c.csv = j.value("csv", c.csv);
  c.value_column = j.value("value_column", c.value_column);
  c.timestamp_column = j.value("timestamp_column", c.timestamp_column);
  c.synth_weeks = j.value("synth_weeks", c.synth_weeks);
  if (j.contains("synth")) j.at("synth").get_to(c.synth);
  c.test_fraction = j.value("test_fraction", c.test_fraction);
  c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
  c.stride = j.value("stride", c.stride);
}

void to_json(nlohmann::json& j, const ToyConfig& c) {
  j = nlohmann::json{{"train_points", c.train_points},
                     {"validation_points", c.validation_points},
                     {"k_candidates", c.k_candidates},
                     {"em", c.em},
                     {"flow", c.flow},
                     {"anf_samples", c.anf_samples},
                     {"anf_components", c.anf_components},
                     {"anf_em", c.anf_em},
                     {"kl_samples", c.kl_samples},
                     {"grid_points", c.grid_points}};
}

void from_json(const nlohmann::json& j, ToyConfig& c) {
  c.train_points = j.value("train_points", c.train_points);
  c.validation_points = j.value("validation_points", c.validation_points);
  c.k_candidates = j.value("k_candidates", c.k_candidates);
  if (j.contains("em")) j.at("em").get_to(c.em);
  if (j.contains("flow")) j.at("flow").get_to(c.flow);
  c.anf_samples = j.value("anf_samples", c.anf_samples);
  c.anf_components = j.value("anf_components", c.anf_components);
  if (j.contains("anf_em")) j.at("anf_em").get_to(c.anf_em);
  c.kl_samples = j.value("kl_samples", c.kl_samples);
  c.grid_points = j.value("grid_points", c.grid_points);
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{{"experiment", c.experiment},
                     {"data", c.data},
                     {"L", c.L},
                     {"K", c.K},
                     {"D", c.D},
                     {"alpha", c.alpha},
                     {"m", c.m},
                     {"quantile", c.quantile},
                     {"strategies", c.strategies},
                     {"seeds", c.seeds},
                     {"out", c.out},
                     {"toy", c.toy}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  c.experiment = j.value("experiment", c.experiment);
  if (j.contains("data")) j.at("data").get_to(c.data);
  c.L = j.value("L", c.L);
  c.K = j.value("K", c.K);
  c.D = j.value("D", c.D);
  c.alpha = j.value("alpha", c.alpha);
  c.m = j.value("m", c.m);
  c.quantile = j.value("quantile", c.quantile);
  if (j.contains("strategies")) {
    c.strategies.clear();
    for (const auto& s : j.at("strategies")) {
      // A bare tag selects that strategy's defaults.
      if (s.is_string()) {
        ForecasterConfig f;
        f.strategy = strategy_from_string(s.get<std::string>());
        c.strategies.push_back(f);
      } else {
        c.strategies.push_back(s.get<ForecasterConfig>());
      }
    }
  }
  c.seeds = j.value("seeds", c.seeds);
  c.out = j.value("out", c.out);
  if (j.contains("toy")) j.at("toy").get_to(c.toy);
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) bad("cannot open config file " + path);
  RunConfig c;
  try {
    nlohmann::json j = nlohmann::json::parse(in);
    if (!j.is_object()) bad(path + ": top level must be an object");
    j.get_to(c);
  } catch (const nlohmann::json::exception& e) {
    bad(path + ": " + e.what());
  }
  return c;
}

void apply_overrides(RunConfig& c, const Overrides& o) {
  if (o.seed) c.seeds = {*o.seed};
  if (o.out) c.out = *o.out;
  if (o.L) c.L = *o.L;
  if (o.K) c.K = *o.K;
  if (o.D) c.D = *o.D;
  if (o.alpha) c.alpha = *o.alpha;
  if (o.m) c.m = *o.m;
  if (o.csv) c.data.csv = *o.csv;
  if (o.value_column) c.data.value_column = *o.value_column;
  if (o.timestamp_column) c.data.timestamp_column = *o.timestamp_column;
  if (o.strategy) c.strategies = {c.strategy_config(strategy_from_string(*o.strategy))};
  for (auto& s : c.strategies) {
    s.L = c.L;
    s.K = c.K;
  }
}

}  // namespace canf
