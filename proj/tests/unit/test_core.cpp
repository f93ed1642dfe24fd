#include "canf/core.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace canf;

TEST_CASE("mix_seed separates streams and is deterministic") {
  CHECK(mix_seed(7, 0) == mix_seed(7, 0));
  CHECK(mix_seed(7, 0) != mix_seed(7, 1));
  CHECK(mix_seed(7, 1) != mix_seed(8, 1));
}

TEST_CASE("log_sum_exp matches direct evaluation and handles -inf") {
  const std::vector<double> v{-1.0, 0.5, 2.0};
  CHECK(log_sum_exp(v) == doctest::Approx(std::log(std::exp(-1.0) + std::exp(0.5) + std::exp(2.0))).epsilon(1e-14));
  const std::vector<double> big{1000.0, 1000.0};
  CHECK(log_sum_exp(big) == doctest::Approx(1000.0 + std::log(2.0)));
  const double ninf = -std::numeric_limits<double>::infinity();
  const std::vector<double> none{ninf, ninf};
  CHECK(log_sum_exp(none) == ninf);
}

TEST_CASE("lower_quantile takes the floor order statistic") {
  std::vector<double> v{10, 9, 8, 7, 6, 5, 4, 3, 2, 1};
  CHECK(lower_quantile(v, 0.8) == 8.0);  // floor(0.8 * 9) = 7 -> 8th smallest
  std::vector<double> one{3.5};
  CHECK(lower_quantile(one, 0.8) == 3.5);
  std::vector<double> w{4, 1, 3, 2};
  CHECK(lower_quantile(w, 0.2) == 1.0);
  std::vector<double> x{4, 1, 3, 2};
  CHECK(lower_quantile(x, 1.0) == 4.0);
}

TEST_CASE("error classes map to exit codes") {
  CHECK(exit_code(ErrorKind::kConfig) == 2);
  CHECK(exit_code(ErrorKind::kIncompatibleBundles) == 2);
  CHECK(exit_code(ErrorKind::kParse) == 3);
  CHECK(exit_code(ErrorKind::kNonHourlyCadence) == 3);
  CHECK(exit_code(ErrorKind::kNotPositiveDefinite) == 4);
  CHECK(exit_code(ErrorKind::kNonFiniteLoss) == 4);
}

TEST_CASE("categorical draws follow the weights") {
  Rng rng(3);
  const std::vector<double> w{0.2, 0.0, 0.8};
  int counts[3] = {0, 0, 0};
  for (int i = 0; i < 20000; ++i) ++counts[rng.categorical(w)];
  CHECK(counts[1] == 0);
  CHECK(counts[0] / 20000.0 == doctest::Approx(0.2).epsilon(0.05));
}
