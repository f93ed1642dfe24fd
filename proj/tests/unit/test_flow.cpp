#include "canf/dataset.hpp"
#include "canf/flow.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <cmath>

using namespace canf;

namespace {

RealNvpFlow random_flow(int dim, int layers, std::vector<int> hidden, std::uint64_t seed,
                        double scale = 0.4) {
  Rng rng(seed);
  RealNvpFlow flow = RealNvpFlow::create(dim, layers, hidden, rng);
  for (auto p : flow.parameters())
    for (double& v : p) v = scale * rng.normal();
  return flow;
}

double standard_normal_log_pdf(const Vector& y) {
  return -0.5 * (y.squaredNorm() + static_cast<double>(y.size()) * std::log(2.0 * M_PI));
}

Matrix jacobian_fd(const RealNvpFlow& flow, const Vector& y, double h = 1e-5) {
  const auto d = y.size();
  Matrix J(d, d);
  for (Eigen::Index j = 0; j < d; ++j) {
    Vector up = y, down = y;
    up(j) += h;
    down(j) -= h;
    J.col(j) = (flow.forward(up).z - flow.forward(down).z) / (2 * h);
  }
  return J;
}

Matrix uniform_square(int n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u;
  Matrix m(n, 2);
  for (int i = 0; i < n; ++i) m.row(i) << u(gen), u(gen);
  return m;
}

}  // namespace

TEST_CASE("zero-initialized flow is the identity") {
  Rng rng(1);
  const std::vector<int> hidden{8, 8};
  const RealNvpFlow flow = RealNvpFlow::create(5, 4, hidden, rng);
  const Vector y{{0.1, -2.0, 3.0, 0.5, 7.0}};
  const auto f = flow.forward(y);
  CHECK(f.z == y);
  CHECK(f.log_det == 0.0);
  CHECK(flow.inverse(y) == y);
  CHECK(flow.log_pdf(y) == doctest::Approx(standard_normal_log_pdf(y)).epsilon(1e-14));
}

TEST_CASE("single coupling with constant log 2 scale doubles one coordinate") {
  Rng rng(2);
  const std::vector<int> hidden{4};
  RealNvpFlow flow = RealNvpFlow::create(2, 1, hidden, rng);
  auto& layer = flow.layers()[0];
  const double target = std::log(2.0);
  layer.scale.layers().back().bias.setConstant(layer.s_max * std::atanh(target / layer.s_max));
  layer.translate.layers().back().bias.setConstant(0.5);
  const auto t = layer.transform_indices();
  const auto p = layer.pass_indices();
  REQUIRE(t.size() == 1);
  REQUIRE(p.size() == 1);
  const Vector y{{1.25, -0.75}};
  const auto f = flow.forward(y);
  CHECK(f.z(t[0]) == doctest::Approx(2.0 * y(t[0]) + 0.5).epsilon(1e-12));
  CHECK(f.z(p[0]) == y(p[0]));
  CHECK(f.log_det == doctest::Approx(target).epsilon(1e-12));
}

TEST_CASE("round trip, inverse log-det and batch forms") {
  const RealNvpFlow flow = random_flow(6, 6, {16, 16}, 3);
  Rng rng(4);
  const Matrix pts = 10.0 * (Matrix::Random(6, 1000));
  double worst = 0.0, worst_ld = 0.0;
  for (Eigen::Index i = 0; i < pts.cols(); ++i) {
    const Vector y = pts.col(i);
    const auto f = flow.forward(y);
    worst = std::max(worst, (flow.inverse(f.z) - y).cwiseAbs().maxCoeff());
    const auto inv = flow.inverse_with_log_det(f.z);
    worst_ld = std::max(worst_ld, std::abs(inv.log_det + f.log_det));
    const Vector z = pts.col(i) / 10.0;
    worst = std::max(worst, (flow.forward(flow.inverse(z)).z - z).cwiseAbs().maxCoeff());
  }
  CHECK(worst < 1e-8);
  CHECK(worst_ld < 1e-8);

  Vector ld;
  const Matrix z = flow.forward_batch(pts, &ld);
  for (int i = 0; i < 5; ++i) {
    const auto f = flow.forward(pts.col(i));
    CHECK((z.col(i) - f.z).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(std::abs(ld(i) - f.log_det) < 1e-12);
  }
  const Vector rows = flow.log_pdf_rows(pts.transpose());
  for (int i = 0; i < 5; ++i) {
    const auto f = flow.forward(pts.col(i));
    CHECK(rows(i) == doctest::Approx(standard_normal_log_pdf(f.z) + f.log_det).epsilon(1e-12));
  }
}

TEST_CASE("log-det agrees with the finite-difference Jacobian determinant") {
  const RealNvpFlow flow = random_flow(4, 4, {12, 12}, 5);
  Rng rng(6);
  for (int i = 0; i < 20; ++i) {
    Vector y(4);
    for (int j = 0; j < 4; ++j) y(j) = 2.0 * rng.normal();
    const double det_fd = std::abs(jacobian_fd(flow, y).determinant());
    const double det = std::exp(flow.forward(y).log_det);
    CHECK(std::abs(det_fd - det) / det < 1e-3);
  }
}

TEST_CASE("sampling: standard normal at init, determinism, latent recovery") {
  Rng rng(7);
  const std::vector<int> hidden{8};
  const RealNvpFlow id = RealNvpFlow::create(3, 2, hidden, rng);
  const Matrix s = id.sample(10000, 8);
  for (int c = 0; c < 3; ++c) {
    std::vector<double> col(s.col(c).data(), s.col(c).data() + s.rows());
    CHECK(oracle::ks_normal_pvalue(col) > 0.01);
  }
  const RealNvpFlow flow = random_flow(3, 4, {8, 8}, 9);
  CHECK(flow.sample(4, 3) == flow.sample(4, 3));
  const Matrix y = flow.sample(200, 3);
  const Matrix z = flow.forward_batch(y.transpose(), nullptr);
  // The sampler draws z row by row from the seeded stream.
  Rng again(3);
  const Matrix drawn = again.normal_matrix(200, 3);
  CHECK((z.transpose() - drawn).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("training gradient matches finite differences on a tiny flow") {
  RealNvpFlow flow = random_flow(2, 1, {4}, 10, 0.7);
  Rng rng(11);
  const Matrix batch = rng.normal_matrix(2, 16);
  std::vector<MlpGradients> grads;
  flow_nll_and_gradient(flow, batch, &grads);
  std::vector<std::span<const double>> analytic;
  for (const auto& g : grads)
    for (auto s : g.spans()) analytic.push_back(s);
  auto params = flow.parameters();
  REQUIRE(params.size() == analytic.size());
  const double h = 1e-6;
  double worst = 0.0;
  for (std::size_t b = 0; b < params.size(); ++b) {
    for (std::size_t i = 0; i < params[b].size(); ++i) {
      const double keep = params[b][i];
      params[b][i] = keep + h;
      const double up = flow_nll_and_gradient(flow, batch, nullptr);
      params[b][i] = keep - h;
      const double down = flow_nll_and_gradient(flow, batch, nullptr);
      params[b][i] = keep;
      const double fd = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(fd - analytic[b][i]) / std::max(1e-3, std::abs(fd) + std::abs(analytic[b][i])));
    }
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("train_flow: zero epochs returns the identity flow") {
  const Matrix data = uniform_square(200, 1);
  FlowTrainConfig cfg;
  cfg.epochs = 0;
  const auto fit = train_flow(data.topRows(150), data.bottomRows(50), cfg, 3);
  const Vector y{{0.3, 0.9}};
  CHECK(fit.flow.forward(y).z == y);
  CHECK(fit.flow.forward(y).log_det == 0.0);
}

TEST_CASE("train_flow: toy configuration beats the standard normal on the uniform square") {
  const Matrix train_raw = uniform_square(1000, 21);
  const Matrix val_raw = uniform_square(200, 22);
  const double mean = train_raw.mean();
  const double sd = std::sqrt((train_raw.array() - mean).square().mean());
  const Matrix train = (train_raw.array() - mean) / sd;
  const Matrix val = (val_raw.array() - mean) / sd;
  FlowTrainConfig cfg{4, {12, 12}, 1500, 128, 1e-3, 20, 5.0, 10};
  const auto fit = train_flow(train, val, cfg, 5);
  // Raw-unit NLL of the raw validation points (change of variables adds
  // 2 log sd), against the standard normal's NLL of the same points.
  const double val_nll = -fit.flow.log_pdf_rows(val).mean() + 2.0 * std::log(sd);
  const double sn = 0.5 * val_raw.array().square().rowwise().sum().mean() + std::log(2.0 * M_PI);
  MESSAGE("flow validation NLL " << val_nll << " nats, standard normal " << sn);
  CHECK(val_nll < 0.0);
  CHECK(val_nll < sn);

  // Density of the raw-space model integrates to about one over the square's
  // neighbourhood.
  const int n = 161;
  const double lo = -0.5, hi = 1.5, h = (hi - lo) / (n - 1);
  Matrix grid(n * n, 2);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) grid.row(i * n + j) << (lo + i * h - mean) / sd, (lo + j * h - mean) / sd;
  const double mass = (fit.flow.log_pdf_rows(grid).array() - 2.0 * std::log(sd)).exp().sum() * h * h;
  CHECK(std::abs(mass - 1.0) < 2e-2);
}

TEST_CASE("train_flow: load configuration improves on 20-dimensional windows") {
  int improved = 0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const LoadSeries series = synth_load(10, SynthParams{}, mix_seed(s, 40));
    const std::vector<Segment> seg{Segment{0, series.values}};
    const auto windows = standardize(rolling_windows(seg, 7, 12));
    const auto [tr, va] = split_tail(windows, 0.2);
    FlowTrainConfig cfg{10, {32, 32}, 3, 128, 1e-3, 20, 5.0, 1};
    const auto fit = train_flow(tr.windows, va.windows, cfg, s);
    const double best = *std::min_element(fit.curves.validation_loss.begin(), fit.curves.validation_loss.end());
    improved += best < fit.curves.initial_validation_loss;
  }
  CHECK(improved >= 9);
}

TEST_CASE("json round trip") {
  const RealNvpFlow flow = random_flow(3, 3, {5}, 12);
  const nlohmann::json j = flow;
  const RealNvpFlow back = flow_from_json(nlohmann::json::parse(j.dump()));
  const Vector y{{0.2, -0.4, 1.0}};
  CHECK(back.forward(y).z == flow.forward(y).z);
  CHECK(back.log_pdf(y) == flow.log_pdf(y));
}
