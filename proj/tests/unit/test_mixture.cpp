#include "canf/mixture.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

using namespace canf;

namespace {

Matrix clustered_data(int n, int d, unsigned seed) {
  std::mt19937 gen(seed);
  std::normal_distribution<double> nd;
  Matrix m(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) m(i, j) = nd(gen) + (i % 3) * 2.0 * (j == 0);
  return m;
}

GaussianMixture random_mixture(int k, int d, std::mt19937& gen) {
  std::uniform_real_distribution<double> u(0.2, 1.0);
  std::normal_distribution<double> nd;
  std::vector<double> w;
  std::vector<MultivariateGaussian> comps;
  for (int i = 0; i < k; ++i) {
    w.push_back(u(gen));
    Vector mu(d);
    for (int j = 0; j < d; ++j) mu(j) = 2.0 * nd(gen);
    comps.emplace_back(mu, oracle::random_spd(d, gen));
  }
  return GaussianMixture(w, comps);
}

}  // namespace

TEST_CASE("em_fit: k=1 equals the single Gaussian fit") {
  const Matrix data = clustered_data(300, 3, 1);
  const auto r = em_fit(data, 1, 5);
  REQUIRE(r.model.size() == 1);
  CHECK(r.model.weights()[0] == doctest::Approx(1.0));
  const auto g = MultivariateGaussian::fit(data);
  CHECK((r.model.components()[0].mean() - g.mean()).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((r.model.components()[0].covariance() - g.covariance()).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("em_fit: separates two clusters") {
  std::mt19937 gen(2);
  std::normal_distribution<double> nd;
  Matrix data(1000, 2);
  for (int i = 0; i < 1000; ++i) {
    data(i, 0) = (i < 500 ? -5.0 : 5.0) + nd(gen);
    data(i, 1) = nd(gen);
  }
  const auto r = em_fit(data, 2, 3);
  std::vector<int> order{0, 1};
  if (r.model.components()[0].mean()(0) > r.model.components()[1].mean()(0)) std::swap(order[0], order[1]);
  const auto& lo = r.model.components()[order[0]];
  const auto& hi = r.model.components()[order[1]];
  CHECK(std::abs(lo.mean()(0) + 5) < 0.2);
  CHECK(std::abs(lo.mean()(1)) < 0.2);
  CHECK(std::abs(hi.mean()(0) - 5) < 0.2);
  CHECK(std::abs(hi.mean()(1)) < 0.2);
  for (double w : r.model.weights()) CHECK(std::abs(w - 0.5) < 0.05);
}

TEST_CASE("em_fit: trace is non-decreasing and the fit is bit-reproducible") {
  for (unsigned s = 0; s < 10; ++s) {
    const Matrix data = clustered_data(200, 2, 100 + s);
    const auto r = em_fit(data, 3, s);
    for (std::size_t i = 1; i < r.log_likelihood_trace.size(); ++i)
      CHECK(r.log_likelihood_trace[i] >= r.log_likelihood_trace[i - 1] - 1e-9);
    const auto again = em_fit(data, 3, s);
    CHECK(nlohmann::json(again.model).dump() == nlohmann::json(r.model).dump());
  }
}

TEST_CASE("em_fit: errors") {
  try {
    em_fit(clustered_data(30, 4, 0), 10, 0);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kDegenerateComponent);
  }
  CHECK_THROWS_AS(em_fit(clustered_data(3, 2, 0), 5, 0), Error);
  try {
    em_fit(clustered_data(3, 2, 0), 5, 0);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kTooFewPoints);
  }
}

TEST_CASE("log_pdf: single, duplicated and naive-summation oracles") {
  std::mt19937 gen(8);
  const auto one = random_mixture(1, 2, gen);
  const Vector x{{0.3, -0.7}};
  CHECK(one.log_pdf(x) == doctest::Approx(one.components()[0].log_pdf(x)).epsilon(1e-14));

  const GaussianMixture dup({1.0, 1.0}, {one.components()[0], one.components()[0]});
  CHECK(dup.log_pdf(x) == doctest::Approx(one.log_pdf(x)).epsilon(1e-14));

  const auto mix = random_mixture(3, 2, gen);
  std::normal_distribution<double> nd;
  Matrix probes(10, 2);
  for (int p = 0; p < 10; ++p) {
    const Vector y{{2 * nd(gen), 2 * nd(gen)}};
    probes.row(p) = y.transpose();
    double sum = 0.0;
    for (std::size_t i = 0; i < mix.size(); ++i)
      sum += mix.weights()[i] *
             oracle::normal_pdf(y, mix.components()[i].mean(), mix.components()[i].covariance());
    CHECK(std::abs(std::exp(mix.log_pdf(y)) - sum) < 1e-10);
  }
  const Vector rows = mix.log_pdf_rows(probes);
  for (int p = 0; p < 10; ++p) CHECK(rows(p) == doctest::Approx(mix.log_pdf(Vector(probes.row(p).transpose()))).epsilon(1e-12));
}

TEST_CASE("sample: weights, occupancy and determinism") {
  const MultivariateGaussian a(Vector{{-10.0, 0.0}}, Matrix::Identity(2, 2));
  const MultivariateGaussian b(Vector{{10.0, 0.0}}, Matrix::Identity(2, 2));
  const GaussianMixture only_a({1.0, 0.0}, {a, b});
  CHECK((only_a.sample(2000, 4).col(0).array() < 0).all());

  const GaussianMixture mix({0.3, 0.7}, {a, b});
  const Matrix s = mix.sample(100000, 9);
  const double frac_a = (s.col(0).array() < 0).cast<double>().mean();
  CHECK(std::abs(frac_a - 0.3) < 0.01);
  CHECK(mix.sample(5, 1) == mix.sample(5, 1));

  const GaussianMixture single(a);
  const Matrix t = single.sample(50000, 2);
  CHECK(std::abs(t.col(0).mean() + 10) < 0.03);
  CHECK(std::abs((t.col(1).array() - t.col(1).mean()).square().mean() - 1.0) < 0.03);
}

TEST_CASE("condition: k=1 and symmetric marginals") {
  std::mt19937 gen(3);
  const auto one = random_mixture(1, 3, gen);
  const std::vector<double> obs{0.4};
  const auto post = one.condition(obs, 1);
  const auto g = one.components()[0].condition(obs, 1);
  REQUIRE(post.size() == 1);
  CHECK(post.weights()[0] == doctest::Approx(1.0));
  CHECK((post.components()[0].mean() - g.mean()).cwiseAbs().maxCoeff() < 1e-14);

  Matrix c1 = Matrix::Identity(2, 2), c2 = Matrix::Identity(2, 2);
  c1(0, 1) = c1(1, 0) = 0.5;
  c2(0, 1) = c2(1, 0) = -0.5;
  const GaussianMixture sym({0.25, 0.75}, {MultivariateGaussian(Vector::Zero(2), c1),
                                           MultivariateGaussian(Vector::Zero(2), c2)});
  const auto ps = sym.condition(std::vector<double>{1.3}, 1);
  CHECK(ps.weights()[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(ps.weights()[1] == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("condition: matches grid slice-and-normalize and integrates to one") {
  std::mt19937 gen(12);
  for (int rep = 0; rep < 5; ++rep) {
    const auto mix = random_mixture(3, 2, gen);
    const double x0 = std::normal_distribution<double>(0, 1.5)(gen);
    const auto post = mix.condition(std::vector<double>{x0}, 1);
    double w_sum = 0;
    for (double w : post.weights()) w_sum += w;
    CHECK(std::abs(w_sum - 1.0) < 1e-10);

    const int n = 1000;
    const double lo = -25, hi = 25, h = (hi - lo) / (n - 1);
    std::vector<double> joint(n);
    double z = 0;
    for (int i = 0; i < n; ++i) {
      joint[i] = std::exp(mix.log_pdf(Vector{{x0, lo + i * h}}));
      z += joint[i] * h;
    }
    double mass = 0;
    for (int i = 0; i < n; i += 37) {
      const double got = std::exp(post.log_pdf(Vector{{lo + i * h}}));
      CHECK(std::abs(got - joint[i] / z) < 1e-6);
    }
    for (int i = 0; i < n; ++i) mass += std::exp(post.log_pdf(Vector{{lo + i * h}})) * h;
    CHECK(std::abs(mass - 1.0) < 1e-3);
  }
}

TEST_CASE("condition: two-dimensional remainder integrates to one") {
  std::mt19937 gen(21);
  const auto mix = random_mixture(3, 3, gen);
  const auto post = mix.condition(std::vector<double>{0.5}, 1);
  const int n = 241;
  const double lo = -15, hi = 15, h = (hi - lo) / (n - 1);
  double mass = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) mass += std::exp(post.log_pdf(Vector{{lo + i * h, lo + j * h}})) * h * h;
  CHECK(std::abs(mass - 1.0) < 1e-3);
}

TEST_CASE("condition: infinite observation makes every weight vanish") {
  std::mt19937 gen(5);
  const auto mix = random_mixture(2, 2, gen);
  try {
    mix.condition(std::vector<double>{std::numeric_limits<double>::infinity()}, 1);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK((e.kind() == ErrorKind::kAllWeightsVanish || e.kind() == ErrorKind::kNonFiniteInput));
  }
}

TEST_CASE("select_k: single Gaussian data prefers k=1") {
  int ones = 0;
  for (unsigned s = 0; s < 10; ++s) {
    const MultivariateGaussian g(Vector::Zero(4), Matrix::Identity(4, 4));
    const Matrix train = g.sample(400, 1000 + s);
    const Matrix val = g.sample(200, 2000 + s);
    const std::vector<int> cands{1, 2, 4};
    const auto r = select_k(train, val, cands, s);
    ones += r.k == 1;
    CHECK(r.validation_nll.size() == 3);
  }
  CHECK(ones >= 8);
}

TEST_CASE("select_k: a single candidate is returned unconditionally") {
  const MultivariateGaussian g(Vector::Zero(2), Matrix::Identity(2, 2));
  const std::vector<int> cands{3};
  const auto r = select_k(g.sample(300, 1), g.sample(100, 2), cands, 0);
  CHECK(r.k == 3);
  CHECK(r.model.size() == 3);
}

TEST_CASE("select_k: uniform square selects about nine components") {
  std::vector<int> ks;
  std::vector<int> cands;
  for (int k = 1; k <= 15; ++k) cands.push_back(k);
  for (unsigned s = 0; s < 10; ++s) {
    std::mt19937_64 gen(mix_seed(s, 77));
    std::uniform_real_distribution<double> u;
    Matrix train(1000, 2), val(200, 2);
    for (int i = 0; i < 1000; ++i) train.row(i) << u(gen), u(gen);
    for (int i = 0; i < 200; ++i) val.row(i) << u(gen), u(gen);
    ks.push_back(select_k(train, val, cands, s).k);
  }
  std::sort(ks.begin(), ks.end());
  const double median = 0.5 * (ks[4] + ks[5]);
  MESSAGE("selected k (sorted): " << nlohmann::json(ks).dump());
  CHECK(median >= 6);
  CHECK(median <= 12);
}

TEST_CASE("json round trip") {
  std::mt19937 gen(1);
  const auto mix = random_mixture(2, 3, gen);
  const nlohmann::json j = mix;
  CHECK(j.contains("weights"));
  CHECK(j.contains("components"));
  const auto back = mixture_from_json(nlohmann::json::parse(j.dump()));
  const Vector x{{0.1, 0.2, 0.3}};
  CHECK(back.log_pdf(x) == mix.log_pdf(x));
}
