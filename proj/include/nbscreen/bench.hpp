#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "nbscreen/estimators.hpp"
#include "nbscreen/set_transformer.hpp"
#include "nbscreen/synth.hpp"

namespace nbscreen::bench {

// "3v3" <-> {3, 3}
std::pair<int, int> parse_design(const std::string& text);
std::string design_name(const std::pair<int, int>& d);

// Uniform batch contract for every estimator; adding a method means adding
// one runner, the sweeps themselves never change.
struct MethodRunner {
  Method id;
  std::string name;
  std::function<std::vector<Estimate>(const std::vector<Problem>&)> run;
};

// Transformer runner requires weights; throws std::invalid_argument without.
std::vector<MethodRunner> make_runners(const std::vector<Method>& methods,
                                       const tf::TransformerWeights* weights);

struct AccuracyRow {
  std::int64_t problem_id = 0;
  Method method = Method::MoM;
  double mu_true = 0, beta_true = 0, alpha_true = 0;
  double mu_hat = 0, beta_hat = 0, alpha_hat = 0;
  bool converged = true;
  std::int64_t runtime_ns = 0;
};

struct CalibrationRow {
  Method method = Method::MoM;
  std::int64_t rank = 0;
  double p_value = 0;
  double expected_quantile = 0;
};

struct PowerRow {
  Method method = Method::MoM;
  std::string design;
  double beta = 0;
  std::int64_t n_sims = 0;
  std::int64_t n_reject = 0;
  double power = 0;
};

struct AccuracyAggregate {
  Method method = Method::MoM;
  double rmse_mu = 0, rmse_beta = 0, rmse_alpha = 0;
  double mae_mu = 0, mae_beta = 0, mae_alpha = 0;
  double mean_runtime_ns = 0;
  std::int64_t n_nonconverged = 0;
};

struct BenchReport {
  std::string experiment;
  std::uint64_t seed = 0;
  Priors priors;
  std::vector<std::string> methods;
  std::vector<AccuracyRow> accuracy_rows;
  std::vector<CalibrationRow> calibration_rows;
  std::vector<PowerRow> power_rows;
  std::vector<AccuracyAggregate> accuracy_aggregates;
  std::map<std::string, double> rejection_rates;  // calibration, at p < 0.05
  std::int64_t degenerate_redraws = 0;
  // echoed into the manifest so a run can be replayed bit-exactly
  nlohmann::ordered_json run_config = nlohmann::ordered_json::object();
};

struct AccuracyOptions {
  std::int64_t n_problems = 10000;
  std::pair<int, int> design{3, 3};
  std::vector<Method> methods{Method::MoM, Method::MLE};
  std::uint64_t seed = 1;
  int threads = 0;
  double alpha_floor = 1e-6;  // phi_hat = 0 maps to log(alpha_floor)
};

struct CalibrationOptions {
  std::int64_t n_sims = 1000;
  std::pair<int, int> design{3, 3};
  std::vector<Method> methods{Method::MoM, Method::MLE};
  std::uint64_t seed = 1;
  int threads = 0;
};

struct PowerOptions {
  std::vector<double> beta_grid;  // empty: 10 equally spaced on [0, 2.5]
  std::vector<std::pair<int, int>> designs{{3, 3}, {5, 5}, {7, 7}, {9, 9}};
  std::int64_t n_sims = 1000;
  std::vector<Method> methods{Method::MoM, Method::MLE};
  std::uint64_t seed = 1;
  int threads = 0;
};

std::vector<double> default_beta_grid();

BenchReport bench_accuracy(const AccuracyOptions& opts, const Priors& priors,
                           const tf::TransformerWeights* weights);
BenchReport bench_calibration(const CalibrationOptions& opts,
                              const Priors& priors,
                              const tf::TransformerWeights* weights);
BenchReport bench_power(const PowerOptions& opts, const Priors& priors,
                        const tf::TransformerWeights* weights);

// Writes <experiment>.csv plus manifest.json into the directory.
// Returns the paths written.
std::vector<std::string> write_report(const BenchReport& report,
                                      const std::string& out_dir);

}  // namespace nbscreen::bench
