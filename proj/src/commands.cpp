#include "canf/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace canf {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

std::string elapsed(Clock::time_point t) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1) << seconds_since(t) << 's';
  return os.str();
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kConfig, "cannot write " + path.string());
  out << j.dump(1) << '\n';
}

class CsvWriter {
 public:
  explicit CsvWriter(const fs::path& path) {
    fs::create_directories(path.parent_path());
    out_.open(path);
    if (!out_) throw Error(ErrorKind::kConfig, "cannot write " + path.string());
    out_ << std::setprecision(17);
  }

  template <typename... Ts>
  void row(const Ts&... cells) {
    bool first = true;
    ((out_ << (first ? "" : ",") << cells, first = false), ...);
    out_ << '\n';
  }

  std::ostream& stream() { return out_; }

 private:
  std::ofstream out_;
};

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::string seed_dir(std::uint64_t seed) { return "seed_" + std::to_string(seed); }

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double mu = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - mu) * (x - mu);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

// ---------------------------------------------------------------- toy

Matrix uniform_square(Eigen::Index n, Rng& rng) {
  Matrix x(n, 2);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index k = 0; k < 2; ++k) x(i, k) = rng.uniform();
  return x;
}

struct ToyModels {
  SelectKResult gmm;
  Standardization stats;
  FlowFit flow;
  EmResult anf;
};

struct ToyDensities {
  const ToyModels& m;

  Matrix standardized(const Matrix& x) const {
    return x.unaryExpr([&](double v) { return m.stats.apply(v); });
  }
  double log_jacobian() const { return -2.0 * std::log(m.stats.std); }

  Vector gmm(const Matrix& x) const { return m.gmm.model.log_pdf_rows(x); }
  Vector flow(const Matrix& x) const {
    return m.flow.flow.log_pdf_rows(standardized(x)).array() + log_jacobian();
  }
  Vector anf(const Matrix& x) const {
    return m.anf.model.log_pdf_rows(standardized(x)).array() + log_jacobian();
  }
};

ToyModels fit_toy_models(const ToyConfig& tc, std::uint64_t seed) {
  Rng data_rng(mix_seed(seed, 0));
  const Matrix train = uniform_square(tc.train_points, data_rng);
  const Matrix val = uniform_square(tc.validation_points, data_rng);

  auto gmm = select_k(train, val, tc.k_candidates, mix_seed(seed, 1), tc.em);

  Standardization stats{train.mean(), 0.0};
  stats.std = std::sqrt((train.array() - stats.mean).square().mean());
  auto stdz = [&](const Matrix& x) { return Matrix(x.unaryExpr([&](double v) { return stats.apply(v); })); };
  auto flow = train_flow(stdz(train), stdz(val), tc.flow, mix_seed(seed, 2));
  const Matrix draws = flow.flow.sample(tc.anf_samples, mix_seed(seed, 3));
  auto anf = em_fit(draws, tc.anf_components, mix_seed(seed, 4), tc.anf_em);
  return {std::move(gmm), stats, std::move(flow), std::move(anf)};
}

nlohmann::json kl_json(const KlEstimate& k) { return {{"kl", k.mean}, {"std_error", k.std_error}}; }

void dump_toy_grid(const fs::path& path, const ToyDensities& d, int points) {
  const double lo = -0.25, hi = 1.25;
  Matrix grid(static_cast<Eigen::Index>(points) * points, 2);
  for (int i = 0; i < points; ++i)
    for (int j = 0; j < points; ++j) {
      grid(static_cast<Eigen::Index>(i) * points + j, 0) = lo + (hi - lo) * i / (points - 1);
      grid(static_cast<Eigen::Index>(i) * points + j, 1) = lo + (hi - lo) * j / (points - 1);
    }
  const Vector g = d.gmm(grid), f = d.flow(grid), a = d.anf(grid);
  CsvWriter csv(path);
  csv.row("x", "y", "gmm_log_pdf", "flow_log_pdf", "anf_log_pdf");
  for (Eigen::Index r = 0; r < grid.rows(); ++r) csv.row(grid(r, 0), grid(r, 1), g(r), f(r), a(r));
}

// ------------------------------------------------------------ evaluation

struct NamedModel {
  std::string label;
  std::string source;  // bundle path, or empty when fitted in this run
  Forecaster forecaster;
};

SequenceDataset restandardize(const SequenceDataset& test, const Standardization& stats) {
  return standardize(test.standardized ? destandardize(test) : test, stats);
}

void dump_trajectory_ll(const fs::path& path, const Forecaster& f, const SequenceDataset& test) {
  const double jac = -static_cast<double>(test.width()) * std::log(f.stats().std);
  CsvWriter csv(path);
  if (const auto* canf = std::get_if<CanfState>(&f.state())) {
    const Vector flow = canf->flow.log_pdf_rows(test.windows);
    const Vector anf = canf->approximation.log_pdf_rows(test.windows);
    Vector gmm;
    if (canf->reference_gmm) gmm = canf->reference_gmm->log_pdf_rows(test.windows);
    csv.row("origin", "flow_ll", "anf_ll", "gmm_ll");
    for (Eigen::Index i = 0; i < test.size(); ++i) {
      csv.stream() << test.origins[static_cast<std::size_t>(i)] << ',' << flow(i) + jac << ','
                   << anf(i) + jac << ',';
      if (gmm.size() > 0) csv.stream() << gmm(i) + jac;
      csv.stream() << '\n';
    }
    return;
  }
  csv.row("origin", "joint_ll");
  for (Eigen::Index i = 0; i < test.size(); ++i) {
    const auto ll = f.joint_log_pdf(test.windows.row(i).transpose());
    if (!ll) return;
    csv.row(test.origins[static_cast<std::size_t>(i)], *ll + jac);
  }
}

bool has_joint_density(const Forecaster& f) {
  switch (f.strategy()) {
    case Strategy::kCg:
    case Strategy::kCgmm:
    case Strategy::kCanf:
      return true;
    default:
      return false;
  }
}

/// Evaluates every model on the shared raw test windows and writes the
/// comparison table plus per-model reports and dumps.
nlohmann::json evaluate_models(const std::vector<NamedModel>& models, const SequenceDataset& test,
                               const RunConfig& config, std::uint64_t eval_seed,
                               const fs::path& reports, const fs::path& dumps) {
  nlohmann::json rows = nlohmann::json::array();
  std::vector<Vector> per_index;
  const EvaluationOptions opts{config.m, config.D, config.alpha, config.quantile, eval_seed};
  for (const auto& nm : models) {
    const auto t0 = Clock::now();
    const SequenceDataset local = restandardize(test, nm.forecaster.stats());
    const auto report = evaluate(nm.forecaster, local, opts);
    std::clog << "[evaluate] " << nm.label << ": " << elapsed(t0) << '\n';

    const auto& mr = report.metrics;
    nlohmann::json row{{"label", nm.label},
                       {"strategy", to_string(nm.forecaster.strategy())},
                       {"bundle", nm.source},
                       {"wape", mr.wape},
                       {"rwse", mr.rwse},
                       {"mean_ll", optional_json(mr.mean_ll)},
                       {"decision_score", report.decision.decision_score},
                       {"per_index_rwse", vector_to_json(mr.per_index_rwse)},
                       {"n_sequences", mr.n_sequences},
                       {"m_samples", mr.m_samples},
                       {"clamped_terms", mr.clamped_terms},
                       {"n_regrets", report.decision.regrets.size()},
                       {"excluded_sequences", report.decision.excluded.size()}};
    rows.push_back(row);
    per_index.push_back(mr.per_index_rwse);

    CsvWriter flat(reports / (nm.label + "_metrics.csv"));
    flat.row("kind", "name", "value");
    flat.row("metric", "wape", mr.wape);
    flat.row("metric", "rwse", mr.rwse);
    if (mr.mean_ll) flat.row("metric", "mean_ll", *mr.mean_ll);
    flat.row("metric", "decision_score", report.decision.decision_score);
    for (Eigen::Index t = 0; t < mr.per_index_rwse.size(); ++t)
      flat.row("per_index_rwse", t + 1, mr.per_index_rwse(t));
    for (const auto& rec : report.sequences)
      if (rec.regret_valid) flat.row("regret", rec.origin, rec.regret);

    CsvWriter seqs(dumps / (nm.label + "_sequences.csv"));
    seqs.row("origin", "log_likelihood", "regret", "action");
    for (const auto& rec : report.sequences) {
      std::ostringstream action;
      for (std::size_t i = 0; i < rec.action.indices.size(); ++i)
        action << (i ? " " : "") << rec.action.indices[i];
      seqs.stream() << rec.origin << ',';
      if (rec.log_likelihood) seqs.stream() << *rec.log_likelihood;
      seqs.stream() << ',';
      if (rec.regret_valid) seqs.stream() << rec.regret;
      seqs.stream() << ',' << action.str() << '\n';
    }
    if (has_joint_density(nm.forecaster))
      dump_trajectory_ll(dumps / ("trajectory_ll_" + nm.label + ".csv"), nm.forecaster, local);
  }

  CsvWriter table(reports / "comparison.csv");
  table.row("label", "strategy", "wape", "rwse", "mean_ll", "decision_score");
  for (const auto& r : rows) {
    table.stream() << r["label"].get<std::string>() << ',' << r["strategy"].get<std::string>()
                   << ',' << r["wape"].get<double>() << ',' << r["rwse"].get<double>() << ',';
    if (!r["mean_ll"].is_null()) table.stream() << r["mean_ll"].get<double>();
    table.stream() << ',' << r["decision_score"].get<double>() << '\n';
  }
  write_json(reports / "comparison.json", rows);

  CsvWriter pi(dumps / "per_index_rwse.csv");
  pi.stream() << "index";
  for (const auto& nm : models) pi.stream() << ',' << nm.label;
  pi.stream() << '\n';
  for (int t = 0; t < test.K; ++t) {
    pi.stream() << t + 1;
    for (const auto& v : per_index) pi.stream() << ',' << v(t);
    pi.stream() << '\n';
  }
  return rows;
}

std::vector<std::string> unique_labels(const std::vector<std::string>& names) {
  std::vector<std::string> out;
  for (const auto& n : names) {
    std::string label = n;
    for (int k = 2; std::find(out.begin(), out.end(), label) != out.end(); ++k)
      label = n + "_" + std::to_string(k);
    out.push_back(label);
  }
  return out;
}

nlohmann::json fit_summary(const Forecaster& f) {
  nlohmann::json j{{"strategy", to_string(f.strategy())}};
  auto curves = [](const TrainingCurves& c) {
    nlohmann::json out{{"initial_validation_loss", c.initial_validation_loss},
                       {"best_epoch", c.best_epoch},
                       {"epochs_run", c.train_loss.size()}};
    if (!c.validation_loss.empty())
      out["best_validation_loss"] =
          *std::min_element(c.validation_loss.begin(), c.validation_loss.end());
    return out;
  };
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, CgmmState>) {
          j["components"] = s.joint.size();
          nlohmann::json sel = nlohmann::json::array();
          for (const auto& [k, nll] : s.validation_nll) sel.push_back({{"k", k}, {"validation_nll", nll}});
          j["selection"] = sel;
        } else if constexpr (std::is_same_v<T, CanfState>) {
          j["components"] = s.approximation.size();
          j["flow"] = curves(s.curves);
        } else if constexpr (std::is_same_v<T, MdnState>) {
          j["training"] = curves(s.curves);
        }
      },
      f.state());
  return j;
}

nlohmann::json data_summary(const PreparedData& d) {
  return {{"n_train", d.train.size()},
          {"n_validation", d.validation.size()},
          {"n_test", d.test.size()},
          {"standardization", {{"mean", d.train.stats.mean}, {"std", d.train.stats.std}}},
          {"test_weeks", d.description.value("test_weeks", nlohmann::json::array())}};
}

Forecaster fit_logged(const ForecasterConfig& fc, const PreparedData& data, std::uint64_t seed) {
  const auto t0 = Clock::now();
  auto f = fit_forecaster(fc, data.train, data.validation, strategy_seed(seed, fc.strategy));
  std::clog << "[fit] seed " << seed << " " << to_string(fc.strategy) << ": " << elapsed(t0) << '\n';
  return f;
}

nlohmann::json bundle_extra(const PreparedData& d, std::uint64_t seed) {
  return {{"data", d.description}, {"seed", seed}};
}

Forecaster load_checked_bundle(const std::string& path, nlohmann::json* cfg) {
  if (!fs::is_directory(path)) throw Error(ErrorKind::kConfig, "bundle directory " + path + " not found");
  return load_bundle(path, cfg);
}

Vector input_window(const Forecaster& f, const std::string& window_csv, const RunConfig& config) {
  const auto raw = read_window_csv(window_csv, config.data.value_column);
  if (static_cast<int>(raw.size()) != f.L() + 1)
    throw Error(ErrorKind::kWindowLengthMismatch,
                window_csv + " holds " + std::to_string(raw.size()) + " values; the bundle needs L+1 = " +
                    std::to_string(f.L() + 1));
  Vector x(f.L() + 1);
  for (int i = 0; i <= f.L(); ++i) x(i) = f.stats().apply(raw[static_cast<std::size_t>(i)]);
  return x;
}

nlohmann::json mixture_summary(const GaussianMixture& m, const Standardization& stats) {
  nlohmann::json comps = nlohmann::json::array();
  for (std::size_t j = 0; j < m.size(); ++j) {
    const auto& c = m.components()[j];
    const Vector mean = c.mean().unaryExpr([&](double v) { return stats.invert(v); });
    const Vector sd = c.covariance().diagonal().array().sqrt() * stats.std;
    comps.push_back({{"weight", m.weights()[j]}, {"mean", vector_to_json(mean)}, {"sd", vector_to_json(sd)}});
  }
  return comps;
}

nlohmann::json sample_summary(const Matrix& raw) {
  nlohmann::json out = nlohmann::json::array();
  for (Eigen::Index t = 0; t < raw.cols(); ++t) {
    std::vector<double> col(raw.col(t).data(), raw.col(t).data() + raw.rows());
    const double mean = mean_of(col);
    const double sd = sample_std(col);
    std::vector<double> q = col;
    const double q05 = lower_quantile(q, 0.05);
    const double q50 = lower_quantile(q, 0.5);
    const double q95 = lower_quantile(q, 0.95);
    out.push_back({{"index", t + 1}, {"mean", mean}, {"sd", sd}, {"q05", q05}, {"q50", q50}, {"q95", q95}});
  }
  return out;
}

Matrix raw_samples(const ForecastDistribution& fd, const Standardization& stats, Eigen::Index m,
                   std::uint64_t seed) {
  return fd.sample(m, seed).unaryExpr([&](double v) { return stats.invert(v); });
}

}  // namespace

// ------------------------------------------------------------------ public

OutputLayout OutputLayout::create(const RunConfig& config, const std::string& command) {
  OutputLayout l{fs::path(config.out)};
  std::error_code ec;
  for (const auto& p : {l.root, l.models(), l.reports(), l.dumps()}) {
    fs::create_directories(p, ec);
    if (ec) throw Error(ErrorKind::kConfig, "cannot create " + p.string() + ": " + ec.message());
  }
  nlohmann::json run = config;
  run["command"] = command;
  write_json(l.root / "run.json", run);
  return l;
}

std::uint64_t strategy_seed(std::uint64_t seed, Strategy s) {
  return mix_seed(seed, 100 + static_cast<std::uint64_t>(s));
}

std::uint64_t evaluation_seed(std::uint64_t seed) { return mix_seed(seed, 12); }

PreparedData prepare_load_data(const RunConfig& config, std::uint64_t seed) {
  nlohmann::json d{{"seed", seed},
                   {"L", config.L},
                   {"K", config.K},
                   {"test_fraction", config.data.test_fraction},
                   {"validation_fraction", config.data.validation_fraction},
                   {"stride", config.data.stride}};
  if (config.data.csv.empty()) {
    d["source"] = "synthetic";
    d["synth_weeks"] = config.data.synth_weeks;
    d["synth"] = config.data.synth;
  } else {
    d["source"] = "csv";
    d["csv"] = config.data.csv;
    d["value_column"] = config.data.value_column;
    d["timestamp_column"] = config.data.timestamp_column;
  }
  return prepare_load_data(d);
}

PreparedData prepare_load_data(const nlohmann::json& d) {
  const auto seed = d.at("seed").get<std::uint64_t>();
  const int L = d.at("L").get<int>(), K = d.at("K").get<int>();
  const int stride = d.value("stride", 1);
  LoadSeries series;
  if (d.at("source").get<std::string>() == "synthetic") {
    series = synth_load(d.at("synth_weeks").get<int>(), d.at("synth").get<SynthParams>(),
                        mix_seed(seed, 10));
  } else {
    series = load_csv(d.at("csv").get<std::string>(), d.at("value_column").get<std::string>(),
                      d.at("timestamp_column").get<std::string>());
  }
  const auto split = week_split(series, d.at("test_fraction").get<double>(), mix_seed(seed, 11));
  const auto train_all = standardize(rolling_windows(split.train, L, K, stride));
  auto [train, val] = split_tail(train_all, d.at("validation_fraction").get<double>());
  PreparedData out{std::move(train), std::move(val),
                   standardize(rolling_windows(split.test, L, K, stride), train_all.stats), d};
  out.description["test_weeks"] = split.test_weeks;
  return out;
}

std::vector<double> read_window_csv(const std::string& path, const std::string& value_column) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kParse, "cannot open window file " + path);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  if (lines.empty()) throw Error(ErrorKind::kEmptyData, path + " is empty");
  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    return cells;
  };
  auto number = [&](const std::string& cell, std::size_t line_no, double& v) {
    try {
      std::size_t used = 0;
      v = std::stod(cell, &used);
      return used == cell.size();
    } catch (const std::exception&) {
      (void)line_no;
      return false;
    }
  };
  std::size_t column = 0;
  std::size_t first = 0;
  const auto header = split(lines[0]);
  double probe = 0.0;
  if (!number(header.empty() ? "" : header[0], 1, probe) || header.size() > 1) {
    const auto it = std::find(header.begin(), header.end(), value_column);
    if (it != header.end()) {
      column = static_cast<std::size_t>(it - header.begin());
    } else if (header.size() != 1) {
      throw Error(ErrorKind::kParse, path + " has no column named '" + value_column + "'");
    }
    first = 1;
  }
  std::vector<double> values;
  for (std::size_t i = first; i < lines.size(); ++i) {
    const auto cells = split(lines[i]);
    double v = 0.0;
    if (column >= cells.size() || !number(cells[column], i + 1, v) || !std::isfinite(v))
      throw Error(ErrorKind::kParse, path + ":" + std::to_string(i + 1) + ": not a finite number");
    values.push_back(v);
  }
  return values;
}

int cmd_synth(const RunConfig& config) {
  config.validate();
  const auto layout = OutputLayout::create(config, "synth");
  for (std::uint64_t seed : config.seeds) {
    const auto series = synth_load(config.data.synth_weeks, config.data.synth, mix_seed(seed, 10));
    const auto name = config.seeds.size() == 1 ? std::string("synthetic_load.csv")
                                               : "synthetic_load_" + seed_dir(seed) + ".csv";
    write_csv(series, (layout.dumps() / name).string(), config.data.value_column,
              config.data.timestamp_column);
    std::clog << "[synth] wrote " << (layout.dumps() / name).string() << " (" << series.values.size()
              << " hours)\n";
  }
  return 0;
}

int cmd_toy(const RunConfig& config) {
  config.validate();
  const auto layout = OutputLayout::create(config, "toy");
  const auto& tc = config.toy;
  std::vector<double> kl_gmm, kl_flow, kl_anf;
  std::vector<int> ks;
  nlohmann::json per_seed = nlohmann::json::array();
  int first_failure = 0;

  for (std::uint64_t seed : config.seeds) {
    const auto t0 = Clock::now();
    nlohmann::json rec{{"seed", seed}};
    try {
      const auto models = fit_toy_models(tc, seed);
      const ToyDensities dens{models};
      auto log_p_data = [](const Matrix& x) { return Vector(Vector::Zero(x.rows())); };
      auto sample_data = [](Eigen::Index n, std::uint64_t s) {
        Rng rng(s);
        return uniform_square(n, rng);
      };
      const auto kl_seed = mix_seed(seed, 5);
      const auto kg = mc_kl(log_p_data, sample_data, [&](const Matrix& x) { return dens.gmm(x); },
                            tc.kl_samples, kl_seed);
      const auto kf = mc_kl(log_p_data, sample_data, [&](const Matrix& x) { return dens.flow(x); },
                            tc.kl_samples, kl_seed);
      const auto ka = mc_kl(log_p_data, sample_data, [&](const Matrix& x) { return dens.anf(x); },
                            tc.kl_samples, kl_seed);

      nlohmann::json selection = nlohmann::json::array();
      for (const auto& [k, nll] : models.gmm.validation_nll)
        selection.push_back({{"k", k}, {"validation_nll", nll}});
      rec["status"] = "ok";
      rec["gmm"] = kl_json(kg);
      rec["gmm"]["k"] = models.gmm.k;
      rec["gmm"]["selection"] = selection;
      rec["flow"] = kl_json(kf);
      rec["flow"]["best_epoch"] = models.flow.curves.best_epoch;
      rec["flow"]["epochs_run"] = models.flow.curves.train_loss.size();
      rec["anf"] = kl_json(ka);
      rec["anf"]["em_iterations"] = models.anf.log_likelihood_trace.size() - 1;
      rec["anf"]["converged"] = models.anf.converged;

      const auto mdir = layout.models() / ("toy_" + seed_dir(seed));
      write_json(mdir / "gmm.json", models.gmm.model);
      write_json(mdir / "flow.json", models.flow.flow);
      write_json(mdir / "anf.json", models.anf.model);
      write_json(mdir / "standardization.json", {{"mean", models.stats.mean}, {"std", models.stats.std}});
      dump_toy_grid(layout.dumps() / ("toy_grid_" + seed_dir(seed) + ".csv"), dens, tc.grid_points);

      kl_gmm.push_back(kg.mean);
      kl_flow.push_back(kf.mean);
      kl_anf.push_back(ka.mean);
      ks.push_back(models.gmm.k);
      std::clog << "[toy] seed " << seed << ": gmm(k=" << models.gmm.k << ") " << kg.mean << ", flow "
                << kf.mean << ", anf " << ka.mean << " (" << elapsed(t0) << ")\n";
    } catch (const Error& e) {
      rec["status"] = "error";
      rec["error"] = to_string(e.kind());
      rec["message"] = e.what();
      if (!first_failure) first_failure = exit_code(e.kind());
      std::clog << "[toy] seed " << seed << " failed: " << e.what() << '\n';
    }
    write_json(layout.reports() / ("toy_" + seed_dir(seed) + ".json"), rec);
    per_seed.push_back(rec);
  }

  auto agg = [](const std::vector<double>& v) {
    return nlohmann::json{{"mean", mean_of(v)},
                          {"std", sample_std(v)},
                          {"std_error", v.empty() ? 0.0 : sample_std(v) / std::sqrt(static_cast<double>(v.size()))},
                          {"n", v.size()}};
  };
  nlohmann::json summary{{"seeds", config.seeds},
                         {"succeeded", kl_gmm.size()},
                         {"gmm", agg(kl_gmm)},
                         {"flow", agg(kl_flow)},
                         {"anf", agg(kl_anf)},
                         {"selected_k", ks}};
  summary["ordering_flow_anf_gmm"] =
      !kl_gmm.empty() && mean_of(kl_flow) < mean_of(kl_anf) && mean_of(kl_anf) < mean_of(kl_gmm);
  write_json(layout.reports() / "toy_summary.json", summary);
  CsvWriter csv(layout.reports() / "toy_summary.csv");
  csv.row("model", "mean_kl", "std_kl", "std_error", "n");
  for (const char* name : {"gmm", "flow", "anf"})
    csv.row(name, summary[name]["mean"].get<double>(), summary[name]["std"].get<double>(),
            summary[name]["std_error"].get<double>(), summary[name]["n"].get<std::size_t>());
  return first_failure;
}

int cmd_fit(const RunConfig& config) {
  config.validate();
  if (config.experiment != "load") throw Error(ErrorKind::kConfig, "fit needs experiment \"load\"");
  const auto layout = OutputLayout::create(config, "fit");
  for (std::uint64_t seed : config.seeds) {
    const auto data = prepare_load_data(config, seed);
    nlohmann::json report{{"seed", seed}, {"data", data_summary(data)}};
    nlohmann::json fits = nlohmann::json::array();
    for (const auto& s : config.strategies) {
      const auto fc = config.strategy_config(s.strategy);
      const auto f = fit_logged(fc, data, seed);
      save_bundle(f, (layout.models() / seed_dir(seed) / to_string(fc.strategy)).string(),
                  bundle_extra(data, seed));
      fits.push_back(fit_summary(f));
    }
    report["fits"] = fits;
    write_json(layout.reports() / seed_dir(seed) / "fit.json", report);
  }
  return 0;
}

int cmd_evaluate(const RunConfig& config, const std::vector<std::string>& bundles) {
  config.validate();
  if (config.experiment != "load") throw Error(ErrorKind::kConfig, "evaluate needs experiment \"load\"");

  if (!bundles.empty()) {
    // Validate every bundle before any evaluation work.
    std::vector<NamedModel> models;
    std::optional<nlohmann::json> data_desc;
    std::vector<std::string> names;
    for (const auto& path : bundles) {
      nlohmann::json cfg;
      auto f = load_checked_bundle(path, &cfg);
      if (!cfg.contains("data"))
        throw Error(ErrorKind::kIncompatibleBundles, path + " does not record its dataset");
      if (!data_desc) {
        data_desc = cfg.at("data");
      } else if (cfg.at("data") != *data_desc) {
        throw Error(ErrorKind::kIncompatibleBundles,
                    path + " was fitted on a different dataset than " + bundles.front());
      }
      if (!models.empty() && (f.L() != models.front().forecaster.L() || f.K() != models.front().forecaster.K()))
        throw Error(ErrorKind::kIncompatibleBundles, path + " has a different L or K");
      names.push_back(to_string(f.strategy()));
      models.push_back(NamedModel{"", path, std::move(f)});
    }
    const auto labels = unique_labels(names);
    for (std::size_t i = 0; i < models.size(); ++i) models[i].label = labels[i];
    if (config.D > models.front().forecaster.K())
      throw Error(ErrorKind::kConfig, "D exceeds the bundles' horizon K");
    const auto layout = OutputLayout::create(config, "evaluate");
    const auto data = prepare_load_data(*data_desc);
    const auto seed = config.seeds.front();
    evaluate_models(models, data.test, config, evaluation_seed(seed), layout.reports(), layout.dumps());
    return 0;
  }

  const auto layout = OutputLayout::create(config, "evaluate");
  CsvWriter summary(layout.reports() / "summary.csv");
  summary.row("seed", "label", "strategy", "wape", "rwse", "mean_ll", "decision_score",
              "rwse_last_index");
  for (std::uint64_t seed : config.seeds) {
    const auto data = prepare_load_data(config, seed);
    std::vector<NamedModel> models;
    nlohmann::json fits = nlohmann::json::array();
    for (const auto& s : config.strategies) {
      const auto fc = config.strategy_config(s.strategy);
      auto f = fit_logged(fc, data, seed);
      const auto dir = layout.models() / seed_dir(seed) / to_string(fc.strategy);
      save_bundle(f, dir.string(), bundle_extra(data, seed));
      fits.push_back(fit_summary(f));
      models.push_back(NamedModel{to_string(fc.strategy), "", std::move(f)});
    }
    const auto rdir = layout.reports() / seed_dir(seed);
    write_json(rdir / "fit.json", {{"seed", seed}, {"data", data_summary(data)}, {"fits", fits}});
    const auto rows = evaluate_models(models, data.test, config, evaluation_seed(seed), rdir,
                                      layout.dumps() / seed_dir(seed));
    for (const auto& r : rows) {
      summary.stream() << seed << ',' << r["label"].get<std::string>() << ','
                       << r["strategy"].get<std::string>() << ',' << r["wape"].get<double>() << ','
                       << r["rwse"].get<double>() << ',';
      if (!r["mean_ll"].is_null()) summary.stream() << r["mean_ll"].get<double>();
      summary.stream() << ',' << r["decision_score"].get<double>() << ','
                       << r["per_index_rwse"].back().get<double>() << '\n';
    }
    summary.stream().flush();
  }
  return 0;
}

int cmd_forecast(const RunConfig& config, const std::string& bundle, const std::string& window_csv) {
  config.validate();
  nlohmann::json cfg;
  const auto f = load_checked_bundle(bundle, &cfg);
  const Vector x = input_window(f, window_csv, config);
  const auto layout = OutputLayout::create(config, "forecast");
  const auto seed = config.seeds.front();
  const auto fd = f.forecast(x);
  const Matrix raw = raw_samples(fd, f.stats(), config.m, mix_seed(seed, 13));

  nlohmann::json report{{"bundle", bundle},
                        {"strategy", to_string(f.strategy())},
                        {"analytic", fd.is_analytic()},
                        {"m", config.m},
                        {"seed", seed},
                        {"steps", sample_summary(raw)}};
  if (fd.is_analytic()) report["mixture"] = mixture_summary(fd.mixture(), f.stats());
  write_json(layout.reports() / "forecast.json", report);

  CsvWriter csv(layout.dumps() / "forecast_samples.csv");
  for (int t = 0; t < raw.cols(); ++t) csv.stream() << (t ? "," : "") << "step_" << t + 1;
  csv.stream() << '\n';
  for (Eigen::Index i = 0; i < raw.rows(); ++i) {
    for (Eigen::Index t = 0; t < raw.cols(); ++t) csv.stream() << (t ? "," : "") << raw(i, t);
    csv.stream() << '\n';
  }
  std::cout << report["steps"].dump(1) << '\n';
  return 0;
}

int cmd_schedule(const RunConfig& config, const std::string& bundle, const std::string& window_csv) {
  config.validate();
  nlohmann::json cfg;
  const auto f = load_checked_bundle(bundle, &cfg);
  if (config.D > f.K()) throw Error(ErrorKind::kConfig, "D exceeds the bundle's horizon K");
  const Vector x = input_window(f, window_csv, config);
  const auto layout = OutputLayout::create(config, "schedule");
  const auto seed = config.seeds.front();
  const auto fd = f.forecast(x);
  const Matrix raw = raw_samples(fd, f.stats(), config.m, mix_seed(seed, 14));
  std::vector<SubsetScore> table;
  const auto action = select_action_from_samples(raw, config.D, config.alpha, &table);
  std::stable_sort(table.begin(), table.end(), [](const SubsetScore& a, const SubsetScore& b) {
    return a.value_at_risk > b.value_at_risk;
  });
  nlohmann::json top = nlohmann::json::array();
  for (std::size_t i = 0; i < std::min<std::size_t>(10, table.size()); ++i)
    top.push_back({{"indices", table[i].indices}, {"value_at_risk", table[i].value_at_risk}});

  nlohmann::json out{{"bundle", bundle},
                     {"strategy", to_string(f.strategy())},
                     {"D", config.D},
                     {"alpha", config.alpha},
                     {"m", config.m},
                     {"seed", seed},
                     {"indices", action.indices},
                     {"value_at_risk", table.empty() ? 0.0 : table.front().value_at_risk},
                     {"top_subsets", top},
                     {"forecast", sample_summary(raw)}};
  if (fd.is_analytic()) out["mixture"] = mixture_summary(fd.mixture(), f.stats());
  write_json(layout.reports() / "schedule.json", out);
  std::cout << nlohmann::json{{"indices", action.indices},
                              {"value_at_risk", out["value_at_risk"]},
                              {"top_subsets", top}}
                   .dump(1)
            << '\n';
  return 0;
}

}  // namespace canf
