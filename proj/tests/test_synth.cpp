#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <filesystem>
#include <vector>

#include "nbscreen/special.hpp"
#include "nbscreen/synth.hpp"

using namespace nbscreen;

TEST_SUITE_BEGIN("synth");

TEST_CASE("prior draws hit the documented moments") {
  const Priors priors;
  RngStream rng(101, 0);
  const int n = 100000;
  double spike = 0.0;
  double mu_sum = 0.0, mu_sum2 = 0.0;
  double alpha_sum = 0.0, alpha_sum2 = 0.0;
  double expo_sum = 0.0;
  std::int64_t expo_count = 0;
  std::vector<std::int64_t> n1_hist(9, 0);
  for (int i = 0; i < n; ++i) {
    const auto [theta, design] = sample_theta(priors, rng);
    spike += theta.beta == 0.0;
    mu_sum += theta.mu;
    mu_sum2 += theta.mu * theta.mu;
    const double alpha = theta.alpha();
    alpha_sum += alpha;
    alpha_sum2 += alpha * alpha;
    for (double l : design.exposures) {
      expo_sum += l;
      ++expo_count;
    }
    n1_hist[static_cast<std::size_t>(design.n1 - 2)]++;
    REQUIRE(design.n1 >= 2);
    REQUIRE(design.n1 <= 10);
    REQUIRE(design.n2 >= 2);
    REQUIRE(design.n2 <= 10);
  }
  // beta spike fraction 0.70 +- 0.01
  CHECK(std::fabs(spike / n - 0.70) < 0.01);
  // mean exposure 1e4 within 1%
  CHECK(std::fabs(expo_sum / static_cast<double>(expo_count) - 1e4) < 100.0);
  // mu ~ N(-1, 2), alpha ~ N(-2, 1) within 5 SE
  const double mu_mean = mu_sum / n;
  const double mu_var = mu_sum2 / n - mu_mean * mu_mean;
  CHECK(std::fabs(mu_mean - (-1.0)) < 5.0 * std::sqrt(2.0 / n));
  CHECK(std::fabs(mu_var - 2.0) < 5.0 * 2.0 * std::sqrt(2.0 / n));
  const double alpha_mean = alpha_sum / n;
  const double alpha_var = alpha_sum2 / n - alpha_mean * alpha_mean;
  CHECK(std::fabs(alpha_mean - (-2.0)) < 5.0 * std::sqrt(1.0 / n));
  CHECK(std::fabs(alpha_var - 1.0) < 5.0 * std::sqrt(2.0 / n));

  // n1 uniform on {2..10}: chi-squared goodness of fit, p > 0.001
  double chi2 = 0.0;
  const double expected = n / 9.0;
  for (std::int64_t c : n1_hist) {
    const double d = static_cast<double>(c) - expected;
    chi2 += d * d / expected;
  }
  const double p = gamma_q(4.0, chi2 / 2.0);  // chi2(8) survival
  CHECK(p > 0.001);
}

TEST_CASE("generated problems follow the model expectation") {
  RngStream rng(2020, 0);
  // phi -> 0, mu = log 5, beta = 0, l = 1: group means approach 5
  const Theta t{std::log(5.0), 0.0, 1e-12};
  Design d;
  d.n1 = 3;
  d.n2 = 3;
  d.exposures = {1, 1, 1, 1, 1, 1};
  double sum = 0.0;
  std::int64_t count = 0;
  for (int rep = 0; rep < 20000; ++rep) {
    const Problem p = generate_problem(t, d, rng);
    for (auto y : p.counts) {
      sum += static_cast<double>(y);
      ++count;
    }
  }
  const double mean = sum / static_cast<double>(count);
  CHECK(std::fabs(mean - 5.0) < 5.0 * std::sqrt(5.0 / static_cast<double>(count)));
}

TEST_CASE("beta = log 2 doubles the exposure-normalized treatment mean") {
  RngStream rng(2021, 0);
  const Theta t{std::log(5.0), std::log(2.0), 0.3};
  Design d;
  d.n1 = 3;
  d.n2 = 3;
  d.exposures = {1.0, 2.0, 1.5, 1.0, 2.0, 1.5};
  double norm1 = 0.0, norm2 = 0.0;
  std::int64_t c1 = 0, c2 = 0;
  for (int rep = 0; rep < 10000; ++rep) {
    const Problem p = generate_problem(t, d, rng);
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (p.labels[i] == 0) {
        norm1 += p.counts[i] / p.exposures[i];
        ++c1;
      } else {
        norm2 += p.counts[i] / p.exposures[i];
        ++c2;
      }
    }
  }
  const double ratio = (norm2 / c2) / (norm1 / c1);
  CHECK(std::fabs(ratio - 2.0) < 0.04);
}

TEST_CASE("problem generation is bit-reproducible and labeled in order") {
  const Theta t{0.0, 0.5, 0.2};
  Design d;
  d.n1 = 2;
  d.n2 = 3;
  d.exposures = {1, 2, 3, 4, 5};
  RngStream a(5, 9);
  RngStream b(5, 9);
  const Problem p1 = generate_problem(t, d, a);
  const Problem p2 = generate_problem(t, d, b);
  CHECK(p1.counts == p2.counts);
  CHECK(p1.labels == std::vector<int>{0, 0, 1, 1, 1});
  CHECK(p1.exposures == d.exposures);
}

TEST_CASE("fixed designs") {
  const Priors priors;
  RngStream rng(1, 0);
  const Design c = fixed_design(3, 3, ExposureMode::Constant, priors, rng);
  CHECK(c.total() == 6);
  for (double l : c.exposures) {
    CHECK(l == 1e4);
  }
  RngStream r2(1, 0);
  const Design c2 = fixed_design(3, 3, ExposureMode::Constant, priors, r2);
  CHECK(c.exposures == c2.exposures);

  const Design pr = fixed_design(9, 9, ExposureMode::Prior, priors, rng);
  CHECK(pr.total() == 18);
  for (double l : pr.exposures) {
    CHECK(l > 0.0);
  }
  CHECK_THROWS_AS(fixed_design(1, 3, ExposureMode::Constant, priors, rng),
                  std::invalid_argument);
  CHECK_THROWS_AS(fixed_design(3, 11, ExposureMode::Constant, priors, rng),
                  std::invalid_argument);
}

TEST_CASE("priors serialize with field-named keys") {
  Priors p;
  p.mu_mean = -0.5;
  p.n_max = 8;
  const std::string text = priors_to_json(p);
  CHECK(text.find("\"mu_mean\"") != std::string::npos);
  CHECK(text.find("\"exposure_log_var\"") != std::string::npos);
  const Priors q = priors_from_json(text);
  CHECK(q.mu_mean == p.mu_mean);
  CHECK(q.n_max == 8);
  CHECK(q.alpha_var == p.alpha_var);

  const auto path = std::filesystem::temp_directory_path() / "nbscreen_priors_test.json";
  save_priors(p, path.string());
  const Priors r = load_priors(path.string());
  CHECK(r.mu_mean == p.mu_mean);
  std::filesystem::remove(path);

  Priors bad;
  bad.delta_prob = 1.5;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_SUITE_END();
