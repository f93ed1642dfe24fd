#include "canf/forecasters.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>

using namespace canf;

namespace {

SequenceDataset windows_of(const std::vector<double>& series, int L, int K) {
  const std::vector<Segment> seg{Segment{0, series}};
  return rolling_windows(seg, L, K);
}

std::vector<double> ar1(std::size_t n, double phi, double sd, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> y(n);
  double v = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    v = phi * v + sd * rng.normal();
    y[i] = v;
  }
  return y;
}

std::vector<double> sinusoid(std::size_t n, double period, double phase) {
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = 2.0 * std::sin(2.0 * M_PI * static_cast<double>(i) / period + phase);
  return y;
}

SequenceDataset small_load(int weeks, std::uint64_t seed, int L = 7, int K = 12) {
  return standardize(windows_of(synth_load(weeks, SynthParams{}, seed).values, L, K));
}

}  // namespace

TEST_CASE("CG: deterministic sinusoid continuation") {
  const auto ds = windows_of(sinusoid(2000, 24.0, 0.3), 7, 12);
  const auto f = fit_cg(ds);
  for (Eigen::Index i : {0, 500, 1500}) {
    const Vector x = ds.windows.row(i).head(8).transpose();
    const auto fd = f.forecast(x);
    REQUIRE(fd.is_analytic());
    CHECK(fd.mixture().size() == 1);
    CHECK((fd.mixture().mean() - ds.windows.row(i).tail(12).transpose()).cwiseAbs().maxCoeff() < 1e-3);
  }
}

TEST_CASE("CG: white noise forecasts the marginal") {
  Rng rng(3);
  std::vector<double> y(20000);
  for (double& v : y) v = rng.normal();
  const auto f = fit_cg(windows_of(y, 3, 2));
  const auto post = f.forecast(Vector{{2.0, -1.0, 0.5, 1.5}}).mixture().components()[0];
  CHECK(post.mean().cwiseAbs().maxCoeff() < 0.05);
  CHECK((post.covariance() - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff() < 0.1);
}

TEST_CASE("CG: conditional mean equals per-index least squares") {
  const auto y = ar1(3000, 0.6, 1.0, 4);
  const auto ds = windows_of(y, 3, 2);
  const auto f = fit_cg(ds);
  Matrix design(ds.size(), 5);
  design.col(0).setOnes();
  design.rightCols(4) = ds.inputs();
  const Vector x{{0.3, -0.2, 1.1, 0.4}};
  const Vector mean = f.forecast(x).mixture().mean();
  for (int k = 0; k < 2; ++k) {
    const Vector beta = design.colPivHouseholderQr().solve(ds.targets().col(k));
    const double ols = beta(0) + beta.tail(4).dot(x);
    CHECK(std::abs(ols - mean(k)) < 1e-6);
  }
}

TEST_CASE("CG: affine equivariance under standardization") {
  std::vector<double> y = ar1(4000, 0.7, 1.0, 5);
  for (double& v : y) v = 3.0 + 1.5 * v;
  const auto raw = windows_of(y, 3, 2);
  const auto z = standardize(raw);
  const auto f_raw = fit_cg(raw);
  const auto f_std = fit_cg(z);
  const Vector x{{2.0, 3.5, 4.0, 2.5}};
  Vector xs = x;
  for (auto& v : xs) v = z.stats.apply(v);
  const Vector m_raw = f_raw.forecast(x).mixture().mean();
  Vector m_std = f_std.forecast(xs).mixture().mean();
  for (auto& v : m_std) v = z.stats.invert(v);
  CHECK((m_raw - m_std).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("CGMM: single candidate reproduces CG; bimodal routing; load config") {
  const auto ds = small_load(6, 1);
  const auto [tr, va] = split_tail(ds, 0.2);
  const std::vector<int> one{1};
  const auto cgmm = fit_cgmm(tr, va, one, 3);
  const auto cg = fit_cg(tr);
  const Vector x = va.windows.row(5).head(8).transpose();
  const auto a = cgmm.forecast(x).mixture();
  const auto b = cg.forecast(x).mixture();
  CHECK((a.mean() - b.mean()).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((a.components()[0].covariance() - b.components()[0].covariance()).cwiseAbs().maxCoeff() < 1e-8);

  // Two phase-shifted regimes; an input from one regime should route the
  // posterior weight to it.
  auto s1 = sinusoid(3000, 24.0, 0.0), s2 = sinusoid(3000, 24.0, M_PI);
  Rng rng(7);
  for (double& v : s1) v += 0.05 * rng.normal();
  for (double& v : s2) v += 0.05 * rng.normal();
  const std::vector<Segment> segs{Segment{0, s1}, Segment{10000, s2}};
  const auto both = rolling_windows(segs, 3, 2);
  const std::vector<int> two{2};
  const auto bi = fit_cgmm(both, both, two, 1);
  const Vector x1 = both.windows.row(100).head(4).transpose();
  const auto post = bi.forecast(x1).mixture();
  const double best_w = std::max(post.weights()[0], post.weights()[1]);
  CHECK(best_w >= 0.9);
  CHECK((post.mean() - both.windows.row(100).tail(2).transpose()).cwiseAbs().maxCoeff() < 0.5);

  const std::vector<int> five{5};
  const auto five_fit = fit_cgmm(tr, va, five, 2);
  const auto fd = five_fit.forecast(x);
  CHECK(fd.is_analytic());
  CHECK(fd.mixture().size() == 5);
  CHECK(fd.horizon() == 12);
}

TEST_CASE("ARMA: coefficient recovery, constant series, input-independent variance") {
  const auto ds = windows_of(ar1(20000, 0.8, 1.0, 8), 1, 1);
  const auto f = fit_arma(ds);
  const auto& st = std::get<ArmaState>(f.state());
  CHECK(std::abs(st.coefficients(1) - 0.8) < 0.05);
  CHECK(std::abs(st.coefficients(0)) < 0.05);

  const auto c = fit_arma(windows_of(std::vector<double>(300, 4.0), 2, 3));
  const auto& cs = std::get<ArmaState>(c.state());
  const Vector w = Vector::Constant(3, 4.0);
  CHECK(std::abs(cs.intercept + cs.coefficients.dot(w) - 4.0) < 1e-3);

  const Matrix paths1 = f.forecast(Vector{{0.0, 0.0}}).sample(20000, 1);
  const Matrix paths2 = f.forecast(Vector{{3.0, -3.0}}).sample(20000, 1);
  const double v1 = (paths1.col(0).array() - paths1.col(0).mean()).square().mean();
  const double v2 = (paths2.col(0).array() - paths2.col(0).mean()).square().mean();
  CHECK(v1 == doctest::Approx(v2).epsilon(1e-9));
}

TEST_CASE("iterative rollout: K=1, zero variance, AR(1) variance growth") {
  const auto ds = windows_of(ar1(20000, 0.8, 1.0, 9), 1, 12);
  const auto f = fit_arma(ds);
  const auto& st = std::get<ArmaState>(f.state());
  const Vector x{{0.5, 1.0}};

  const Matrix one = iterative_rollout(f, x, 1, 50000, 4);
  const double mean1 = st.intercept + st.coefficients.dot(x);
  CHECK(std::abs(one.mean() - mean1) < 3 * std::sqrt(st.variance / 50000.0));
  CHECK(std::abs((one.array() - one.mean()).square().mean() / st.variance - 1.0) < 0.03);

  Forecaster det = f;
  ArmaState flat = st;
  flat.variance = 0.0;
  det.set_state(flat);
  const Matrix same = iterative_rollout(det, x, 12, 20, 5);
  for (Eigen::Index r = 1; r < same.rows(); ++r) CHECK(same.row(r) == same.row(0));

  const Matrix paths = f.forecast(x).sample(10000, 6);
  const double phi = 0.8;
  for (int k = 1; k <= 12; ++k) {
    const double analytic = (1.0 - std::pow(phi, 2 * k)) / (1.0 - phi * phi);
    const auto col = paths.col(k - 1).array();
    const double v = (col - col.mean()).square().mean();
    CHECK(std::abs(v / analytic - 1.0) < 0.1);
  }
}

TEST_CASE("forecast dispatch: kinds, determinism and unfit errors") {
  const auto ds = small_load(6, 2);
  const auto [tr, va] = split_tail(ds, 0.2);
  const Vector x = va.windows.row(3).head(8).transpose();

  const auto cg = fit_cg(tr);
  CHECK(cg.forecast(x).is_analytic());
  CHECK(cg.forecast(x).mixture().size() == 1);

  MdnTrainConfig small{{16, 16}, Activation::kRelu, 3, 0, 3, 128, 1e-3, 20};
  const auto ifnn = fit_ifnn(tr, va, small, 4);
  const auto fd = ifnn.forecast(x);
  CHECK(!fd.is_analytic());
  CHECK(fd.sample(30, 7) == fd.sample(30, 7));
  CHECK(fd.sample(30, 7).cols() == 12);

  MdnTrainConfig jcfg{{16, 16}, Activation::kRelu, 2, 2, 3, 128, 1e-3, 20};
  const auto jfnn = fit_jfnn(tr, va, jcfg, 4);
  CHECK(jfnn.forecast(x).is_analytic());
  CHECK(jfnn.forecast(x).mixture().size() == 2);

  ForecasterConfig cfg;
  const Forecaster unfit(cfg);
  try {
    unfit.forecast(x);
    FAIL("expected StrategyUnfit");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kStrategyUnfit);
  }
  CHECK_THROWS_AS(cg.forecast(Vector::Zero(5)), Error);
}

TEST_CASE("analytic forecasts: sample means within 3 standard errors") {
  const auto ds = small_load(6, 3);
  const auto [tr, va] = split_tail(ds, 0.2);
  const std::vector<int> three{3};
  for (const auto& f : {fit_cg(tr), fit_cgmm(tr, va, three, 1)}) {
    const auto fd = f.forecast(va.windows.row(0).head(8).transpose());
    const Matrix s = fd.sample(10000, 11);
    const Vector mean = fd.mixture().mean();
    for (int k = 0; k < 12; ++k) {
      const auto col = s.col(k).array();
      const double se = std::sqrt((col - col.mean()).square().mean() / 10000.0);
      CHECK(std::abs(col.mean() - mean(k)) < 3 * se + 1e-12);
    }
  }
}

TEST_CASE("CANF: component counts, single component, self-consistency") {
  const auto ds = small_load(8, 4);
  const auto [tr, va] = split_tail(ds, 0.2);
  const FlowTrainConfig flow{4, {16, 16}, 10, 128, 1e-3, 20, 5.0, 1};
  const Vector x = va.windows.row(2).head(8).transpose();

  const auto f = fit_canf(tr, va, flow, 5000, 6, 1);
  const auto fd = f.forecast(x);
  REQUIRE(fd.is_analytic());
  CHECK(fd.mixture().size() == 6);
  double wsum = 0.0;
  for (double w : fd.mixture().weights()) wsum += w;
  CHECK(std::abs(wsum - 1.0) < 1e-10);

  const auto single = fit_canf(tr, va, flow, 2000, 1, 2);
  CHECK(single.forecast(x).mixture().size() == 1);

  // Held-out flow samples: the approximating mixture's mean log-likelihood
  // stays within one nat of the flow's own.
  const auto big = fit_canf(tr, va, flow, 20000, 25, 3);
  const auto& st = std::get<CanfState>(big.state());
  const Matrix held = st.flow.sample(5000, 999);
  const double ll_flow = st.flow.log_pdf_rows(held).mean();
  const double ll_anf = st.approximation.log_pdf_rows(held).mean();
  MESSAGE("held-out flow LL " << ll_flow << ", ANF " << ll_anf);
  CHECK(std::abs(ll_flow - ll_anf) < 1.0);
}

TEST_CASE("CANF: too few samples per component starves EM") {
  const auto ds = small_load(8, 5);
  const auto [tr, va] = split_tail(ds, 0.2);
  const FlowTrainConfig flow{4, {16, 16}, 2, 128, 1e-3, 20, 5.0, 1};
  bool degenerate = false;
  try {
    fit_canf(tr, va, flow, 100, 40, 6);
  } catch (const Error& e) {
    degenerate = e.kind() == ErrorKind::kDegenerateComponent;
  }
  CHECK(degenerate);
}

TEST_CASE("bundles round trip") {
  const auto ds = small_load(6, 6);
  const auto [tr, va] = split_tail(ds, 0.2);
  const Vector x = va.windows.row(1).head(8).transpose();
  const auto dir = std::filesystem::temp_directory_path() / "canf_unit_bundle";
  std::filesystem::remove_all(dir);
  const std::vector<int> two{2};
  for (const auto& f : {fit_cg(tr), fit_cgmm(tr, va, two, 1), fit_arma(tr)}) {
    const auto sub = (dir / to_string(f.strategy())).string();
    save_bundle(f, sub, {{"note", "x"}});
    nlohmann::json cfg;
    const auto back = load_bundle(sub, &cfg);
    CHECK(cfg.value("note", "") == "x");
    CHECK(back.strategy() == f.strategy());
    CHECK(back.stats().mean == f.stats().mean);
    CHECK(back.forecast(x).sample(5, 3) == f.forecast(x).sample(5, 3));
  }
  CHECK(std::filesystem::exists(dir / "cg" / "gaussian.json"));
}
