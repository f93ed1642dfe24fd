#include "canf/forecasters.hpp"

#include <filesystem>
#include <fstream>

namespace canf {

namespace fs = std::filesystem;

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::kCg: return "cg";
    case Strategy::kCgmm: return "cgmm";
    case Strategy::kCanf: return "canf";
    case Strategy::kJfnn: return "jfnn";
    case Strategy::kArma: return "arma";
    case Strategy::kIfnn: return "ifnn";
  }
  return "cg";
}

Strategy strategy_from_string(const std::string& s) {
  for (auto v : {Strategy::kCg, Strategy::kCgmm, Strategy::kCanf, Strategy::kJfnn, Strategy::kArma,
                 Strategy::kIfnn})
    if (to_string(v) == s) return v;
  throw Error(ErrorKind::kConfig,
              "unknown strategy '" + s + "' (expected cg, cgmm, canf, jfnn, arma or ifnn)");
}

bool is_iterative(Strategy s) { return s == Strategy::kArma || s == Strategy::kIfnn; }

namespace {

nlohmann::json mdn_config_json(const MdnTrainConfig& c) {
  return {{"hidden", c.hidden},         {"activation", to_string(c.activation)},
          {"components", c.components}, {"rank", c.rank},
          {"epochs", c.epochs},         {"batch", c.batch},
          {"learning_rate", c.learning_rate}, {"patience", c.patience}};
}

MdnTrainConfig mdn_config_from(const nlohmann::json& j, MdnTrainConfig c) {
  c.hidden = j.value("hidden", c.hidden);
  if (j.contains("activation")) c.activation = activation_from_string(j.at("activation").get<std::string>());
  c.components = j.value("components", c.components);
  c.rank = j.value("rank", c.rank);
  c.epochs = j.value("epochs", c.epochs);
  c.batch = j.value("batch", c.batch);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.patience = j.value("patience", c.patience);
  return c;
}

}  // namespace

void to_json(nlohmann::json& j, const ForecasterConfig& c) {
  j = nlohmann::json{
      {"strategy", to_string(c.strategy)},
      {"L", c.L},
      {"K", c.K},
      {"k_candidates", c.k_candidates},
      {"em", c.em},
      {"flow", c.flow},
      {"anf_samples", c.anf_samples},
      {"anf_components", c.anf_components},
      {"anf_em", c.anf_em},
      {"diagnostic_gmm_components", c.diagnostic_gmm_components},
      {"jfnn", mdn_config_json(c.jfnn)},
      {"ifnn", mdn_config_json(c.ifnn)},
  };
}

void from_json(const nlohmann::json& j, ForecasterConfig& c) {
  ForecasterConfig d;
  c = d;
  if (j.contains("strategy")) c.strategy = strategy_from_string(j.at("strategy").get<std::string>());
  c.L = j.value("L", d.L);
  c.K = j.value("K", d.K);
  c.k_candidates = j.value("k_candidates", d.k_candidates);
  if (j.contains("em")) j.at("em").get_to(c.em);
  if (j.contains("flow")) j.at("flow").get_to(c.flow);
  c.anf_samples = j.value("anf_samples", d.anf_samples);
  c.anf_components = j.value("anf_components", d.anf_components);
  if (j.contains("anf_em")) j.at("anf_em").get_to(c.anf_em);
  c.diagnostic_gmm_components = j.value("diagnostic_gmm_components", d.diagnostic_gmm_components);
  if (j.contains("jfnn")) c.jfnn = mdn_config_from(j.at("jfnn"), d.jfnn);
  if (j.contains("ifnn")) c.ifnn = mdn_config_from(j.at("ifnn"), d.ifnn);
  if (c.L < 1 || c.K < 1) throw Error(ErrorKind::kConfig, "forecaster needs L >= 1 and K >= 1");
}

ForecastDistribution ForecastDistribution::analytic(GaussianMixture mixture) {
  ForecastDistribution fd;
  fd.horizon_ = static_cast<int>(mixture.dim());
  fd.mixture_.emplace(std::move(mixture));
  return fd;
}

ForecastDistribution ForecastDistribution::sample_only(int horizon, Sampler sampler) {
  ForecastDistribution fd;
  fd.horizon_ = horizon;
  fd.sampler_ = std::move(sampler);
  return fd;
}

const GaussianMixture& ForecastDistribution::mixture() const {
  if (!mixture_) throw Error(ErrorKind::kConfig, "sample-only forecast has no closed form");
  return *mixture_;
}

Matrix ForecastDistribution::sample(Eigen::Index count, std::uint64_t seed) const {
  if (mixture_) return mixture_->sample(count, seed);
  return sampler_(count, seed);
}

ArmaState::ArmaState(MultivariateGaussian g) : joint(std::move(g)) {
  const Eigen::Index a = joint.dim() - 1;
  if (a < 1) throw Error(ErrorKind::kDimensionMismatch, "one-step model needs at least one lag");
  const auto l_aa = joint.cholesky_factor().topLeftCorner(a, a).triangularView<Eigen::Lower>();
  const Vector w = l_aa.solve(joint.covariance().topRightCorner(a, 1));
  coefficients = l_aa.transpose().solve(w);
  intercept = joint.mean()(a) - coefficients.dot(joint.mean().head(a));
  variance = joint.covariance()(a, a) - w.squaredNorm();
}

Forecaster::Forecaster(ForecasterConfig config, Standardization stats)
    : config_(std::move(config)), stats_(stats) {}

ForecastDistribution Forecaster::forecast(const Vector& input) const {
  if (!fitted())
    throw Error(ErrorKind::kStrategyUnfit, to_string(strategy()) + " forecaster is not fitted");
  if (input.size() != L() + 1)
    throw Error(ErrorKind::kWindowLengthMismatch,
                "input window has " + std::to_string(input.size()) + " values, expected " +
                    std::to_string(L() + 1));
  if (!input.allFinite()) throw Error(ErrorKind::kNonFiniteInput, "input window not finite");
  const std::span<const double> obs(input.data(), static_cast<std::size_t>(input.size()));
  const Eigen::Index split = L() + 1;
  return std::visit(
      [&](const auto& s) -> ForecastDistribution {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, CgState>) {
          return ForecastDistribution::analytic(GaussianMixture(s.joint.condition(obs, split)));
        } else if constexpr (std::is_same_v<T, CgmmState>) {
          return ForecastDistribution::analytic(s.joint.condition(obs, split));
        } else if constexpr (std::is_same_v<T, CanfState>) {
          return ForecastDistribution::analytic(s.approximation.condition(obs, split));
        } else if constexpr (std::is_same_v<T, MdnState>) {
          if (strategy() == Strategy::kJfnn)
            return ForecastDistribution::analytic(s.model.predict(input));
          return ForecastDistribution::sample_only(
              K(), [this, input](Eigen::Index m, std::uint64_t seed) {
                return iterative_rollout(*this, input, K(), m, seed);
              });
        } else if constexpr (std::is_same_v<T, ArmaState>) {
          return ForecastDistribution::sample_only(
              K(), [this, input](Eigen::Index m, std::uint64_t seed) {
                return iterative_rollout(*this, input, K(), m, seed);
              });
        } else {
          throw Error(ErrorKind::kStrategyUnfit, "forecaster is not fitted");
        }
      },
      state_);
}

Vector Forecaster::sample_next(const Matrix& windows, Rng& rng) const {
  if (!is_iterative(strategy()))
    throw Error(ErrorKind::kConfig, to_string(strategy()) + " is not a one-step strategy");
  if (windows.cols() != L() + 1)
    throw Error(ErrorKind::kWindowLengthMismatch, "one-step input width mismatch");
  const Eigen::Index m = windows.rows();
  Vector out(m);
  if (const auto* arma = std::get_if<ArmaState>(&state_)) {
    const Vector mean = (windows * arma->coefficients).array() + arma->intercept;
    const double sd = std::sqrt(std::max(arma->variance, 0.0));
    for (Eigen::Index i = 0; i < m; ++i) out(i) = mean(i) + sd * rng.normal();
    return out;
  }
  if (const auto* mdn = std::get_if<MdnState>(&state_)) {
    const auto& head = mdn->model.head;
    const Matrix raw = mlp_forward(mdn->model.net, Matrix(windows.transpose()));
    std::vector<double> logits(static_cast<std::size_t>(head.components));
    std::vector<double> weights(logits.size());
    for (Eigen::Index i = 0; i < m; ++i) {
      const double* r = raw.col(i).data();
      for (int c = 0; c < head.components; ++c) logits[static_cast<std::size_t>(c)] = r[c * head.block_width()];
      const double norm = log_sum_exp(logits);
      for (std::size_t c = 0; c < logits.size(); ++c) weights[c] = std::exp(logits[c] - norm);
      const auto c = static_cast<int>(rng.categorical(weights));
      const double* b = r + c * head.block_width();
      double var = std::exp(b[2]);
      for (int q = 0; q < head.rank; ++q) var += b[3 + q] * b[3 + q];
      out(i) = b[1] + std::sqrt(var) * rng.normal();
    }
    return out;
  }
  throw Error(ErrorKind::kStrategyUnfit, to_string(strategy()) + " forecaster is not fitted");
}

std::optional<double> Forecaster::joint_log_pdf(const Vector& window) const {
  if (const auto* s = std::get_if<CgState>(&state_)) return s->joint.log_pdf(window);
  if (const auto* s = std::get_if<CgmmState>(&state_)) return s->joint.log_pdf(window);
  if (const auto* s = std::get_if<CanfState>(&state_)) return s->approximation.log_pdf(window);
  return std::nullopt;
}

Matrix iterative_rollout(const Forecaster& single_step, const Vector& input, int K,
                         Eigen::Index m, std::uint64_t seed) {
  if (m < 1) throw Error(ErrorKind::kConfig, "rollout needs at least one trajectory");
  const Eigen::Index w = input.size();
  Matrix windows = input.transpose().replicate(m, 1);
  Matrix out(m, K);
  Rng rng(seed);
  for (int k = 0; k < K; ++k) {
    const Vector next = single_step.sample_next(windows, rng);
    out.col(k) = next;
    if (w > 1) windows.leftCols(w - 1) = windows.rightCols(w - 1).eval();
    windows.col(w - 1) = next;
  }
  return out;
}

namespace {

void require_compatible(const SequenceDataset& train, const SequenceDataset& val) {
  if (train.size() == 0) throw Error(ErrorKind::kEmptyData, "training set is empty");
  if (val.size() > 0 && (val.L != train.L || val.K != train.K))
    throw Error(ErrorKind::kDimensionMismatch, "train and validation windows differ in L or K");
}

ForecasterConfig base_config(Strategy s, const SequenceDataset& train) {
  ForecasterConfig c;
  c.strategy = s;
  c.L = train.L;
  c.K = train.K;
  return c;
}

}  // namespace

Forecaster fit_cg(const SequenceDataset& train) {
  require_compatible(train, train);
  Forecaster f(base_config(Strategy::kCg, train), train.stats);
  f.set_state(CgState{MultivariateGaussian::fit(train.windows)});
  return f;
}

Forecaster fit_cgmm(const SequenceDataset& train, const SequenceDataset& val,
                    std::span<const int> k_candidates, std::uint64_t seed, const EmOptions& em) {
  require_compatible(train, val);
  auto cfg = base_config(Strategy::kCgmm, train);
  cfg.k_candidates.assign(k_candidates.begin(), k_candidates.end());
  cfg.em = em;
  Forecaster f(cfg, train.stats);
  const Matrix& v = val.size() > 0 ? val.windows : train.windows;
  auto sel = select_k(train.windows, v, k_candidates, seed, em);
  f.set_state(CgmmState{std::move(sel.model), std::move(sel.validation_nll)});
  return f;
}

Forecaster fit_canf(const SequenceDataset& train, const SequenceDataset& val,
                    const FlowTrainConfig& flow, int anf_samples, int anf_components,
                    std::uint64_t seed, const EmOptions& em, int diagnostic_gmm_components) {
  require_compatible(train, val);
  if (anf_samples < 1 || anf_components < 1)
    throw Error(ErrorKind::kConfig, "CANF needs positive sample and component counts");
  auto cfg = base_config(Strategy::kCanf, train);
  cfg.flow = flow;
  cfg.anf_samples = anf_samples;
  cfg.anf_components = anf_components;
  cfg.anf_em = em;
  cfg.diagnostic_gmm_components = diagnostic_gmm_components;
  Forecaster f(cfg, train.stats);

  auto flow_fit = train_flow(train.windows, val.windows, flow, mix_seed(seed, 1));
  const Matrix samples = flow_fit.flow.sample(anf_samples, mix_seed(seed, 2));
  if (!samples.allFinite())
    throw Error(ErrorKind::kNonFiniteInput, "flow produced non-finite samples");
  auto approx = em_fit(samples, anf_components, mix_seed(seed, 3), em);
  std::optional<GaussianMixture> reference;
  if (diagnostic_gmm_components > 0)
    reference = em_fit(train.windows, diagnostic_gmm_components, mix_seed(seed, 4)).model;
  f.set_state(CanfState{std::move(flow_fit.flow), std::move(approx.model), std::move(reference),
                        std::move(flow_fit.curves)});
  return f;
}

Forecaster fit_jfnn(const SequenceDataset& train, const SequenceDataset& val,
                    const MdnTrainConfig& config, std::uint64_t seed) {
  require_compatible(train, val);
  auto cfg = base_config(Strategy::kJfnn, train);
  cfg.jfnn = config;
  Forecaster f(cfg, train.stats);
  auto fit = train_mdn(train.inputs(), train.targets(), val.inputs(), val.targets(), config, seed);
  f.set_state(MdnState{std::move(fit.model), std::move(fit.curves)});
  return f;
}

Forecaster fit_arma(const SequenceDataset& train) {
  require_compatible(train, train);
  Forecaster f(base_config(Strategy::kArma, train), train.stats);
  f.set_state(ArmaState(MultivariateGaussian::fit(train.windows.leftCols(train.L + 2))));
  return f;
}

Forecaster fit_ifnn(const SequenceDataset& train, const SequenceDataset& val,
                    const MdnTrainConfig& config, std::uint64_t seed) {
  require_compatible(train, val);
  auto cfg = base_config(Strategy::kIfnn, train);
  cfg.ifnn = config;
  Forecaster f(cfg, train.stats);
  const int L = train.L;
  auto fit = train_mdn(train.windows.leftCols(L + 1), train.windows.col(L + 1),
                       val.windows.leftCols(L + 1), val.windows.col(L + 1), config, seed);
  f.set_state(MdnState{std::move(fit.model), std::move(fit.curves)});
  return f;
}

Forecaster fit_forecaster(const ForecasterConfig& config, const SequenceDataset& train,
                          const SequenceDataset& val, std::uint64_t seed) {
  if (train.L != config.L || train.K != config.K)
    throw Error(ErrorKind::kConfig, "dataset windows do not match the configured L and K");
  Forecaster f = [&] {
    switch (config.strategy) {
      case Strategy::kCg: return fit_cg(train);
      case Strategy::kCgmm: return fit_cgmm(train, val, config.k_candidates, seed, config.em);
      case Strategy::kCanf:
        return fit_canf(train, val, config.flow, config.anf_samples, config.anf_components, seed,
                        config.anf_em, config.diagnostic_gmm_components);
      case Strategy::kJfnn: return fit_jfnn(train, val, config.jfnn, seed);
      case Strategy::kArma: return fit_arma(train);
      case Strategy::kIfnn: return fit_ifnn(train, val, config.ifnn, seed);
    }
    throw Error(ErrorKind::kConfig, "unknown strategy");
  }();
  Forecaster out(config, f.stats());
  out.set_state(f.state());
  return out;
}

namespace {

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kConfig, "cannot write " + path.string());
  out << j.dump(1) << '\n';
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kConfig, "cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kParse, path.string() + ": " + e.what());
  }
}

void write_curves(const fs::path& path, const TrainingCurves& c) {
  std::ofstream out(path);
  out << "epoch,train_loss,validation_loss\n";
  out.precision(17);
  out << "-1,," << c.initial_validation_loss << '\n';
  std::size_t v = 0;
  for (std::size_t e = 0; e < c.train_loss.size(); ++e) {
    out << e << ',' << c.train_loss[e] << ',';
    if (v < c.validation_epochs.size() && c.validation_epochs[v] == static_cast<int>(e))
      out << c.validation_loss[v++];
    out << '\n';
  }
}

}  // namespace

void save_bundle(const Forecaster& f, const std::string& dir, const nlohmann::json& extra) {
  if (!f.fitted()) throw Error(ErrorKind::kStrategyUnfit, "cannot save an unfitted forecaster");
  const fs::path root(dir);
  fs::create_directories(root);
  nlohmann::json cfg = extra;
  cfg["format"] = "canf-bundle/1";
  cfg["forecaster"] = f.config();
  cfg["standardization"] = {{"mean", f.stats().mean}, {"std", f.stats().std}};
  write_json(root / "config.json", cfg);

  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, CgState>) {
          write_json(root / "gaussian.json", s.joint);
        } else if constexpr (std::is_same_v<T, ArmaState>) {
          write_json(root / "gaussian.json", s.joint);
        } else if constexpr (std::is_same_v<T, CgmmState>) {
          nlohmann::json scores = nlohmann::json::array();
          for (const auto& [k, nll] : s.validation_nll) scores.push_back({{"k", k}, {"validation_nll", nll}});
          write_json(root / "mixture.json", s.joint);
          write_json(root / "selection.json", scores);
        } else if constexpr (std::is_same_v<T, CanfState>) {
          write_json(root / "flow.json", s.flow);
          write_json(root / "mixture.json", s.approximation);
          if (s.reference_gmm) write_json(root / "reference_gmm.json", *s.reference_gmm);
          write_curves(root / "curves.csv", s.curves);
        } else if constexpr (std::is_same_v<T, MdnState>) {
          write_json(root / "mdn.json", s.model);
          write_curves(root / "curves.csv", s.curves);
        }
      },
      f.state());
}

Forecaster load_bundle(const std::string& dir, nlohmann::json* config_out) {
  const fs::path root(dir);
  const auto cfg = read_json(root / "config.json");
  if (cfg.value("format", "") != "canf-bundle/1")
    throw Error(ErrorKind::kConfig, dir + " is not a forecaster bundle");
  const auto fc = cfg.at("forecaster").get<ForecasterConfig>();
  const Standardization stats{cfg.at("standardization").at("mean").get<double>(),
                              cfg.at("standardization").at("std").get<double>()};
  Forecaster f(fc, stats);
  switch (fc.strategy) {
    case Strategy::kCg:
      f.set_state(CgState{gaussian_from_json(read_json(root / "gaussian.json"))});
      break;
    case Strategy::kArma:
      f.set_state(ArmaState(gaussian_from_json(read_json(root / "gaussian.json"))));
      break;
    case Strategy::kCgmm: {
      CgmmState s{mixture_from_json(read_json(root / "mixture.json")), {}};
      if (fs::exists(root / "selection.json"))
        for (const auto& e : read_json(root / "selection.json"))
          s.validation_nll.emplace_back(e.at("k").get<int>(), e.at("validation_nll").get<double>());
      f.set_state(std::move(s));
      break;
    }
    case Strategy::kCanf: {
      std::optional<GaussianMixture> ref;
      if (fs::exists(root / "reference_gmm.json"))
        ref = mixture_from_json(read_json(root / "reference_gmm.json"));
      f.set_state(CanfState{flow_from_json(read_json(root / "flow.json")),
                            mixture_from_json(read_json(root / "mixture.json")), std::move(ref),
                            {}});
      break;
    }
    case Strategy::kJfnn:
    case Strategy::kIfnn:
      f.set_state(MdnState{mdn_model_from_json(read_json(root / "mdn.json")), {}});
      break;
  }
  if (config_out) *config_out = cfg;
  return f;
}

}  // namespace canf
