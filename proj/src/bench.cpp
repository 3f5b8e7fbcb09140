#include "nbscreen/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>

#include "nbscreen/inference.hpp"
#include "nbscreen/parallel.hpp"
#include "nbscreen/version.hpp"

namespace nbscreen::bench {

namespace {

using Clock = std::chrono::steady_clock;

std::int64_t ns_since(Clock::time_point t0) {
  const auto dt =
      std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - t0);
  return std::max<std::int64_t>(1, dt.count());
}

std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

}  // namespace

std::pair<int, int> parse_design(const std::string& text) {
  const auto pos = text.find('v');
  if (pos == std::string::npos || pos == 0 || pos + 1 >= text.size()) {
    throw std::invalid_argument("design: expected <n1>v<n2>, got '" + text + "'");
  }
  const int n1 = std::stoi(text.substr(0, pos));
  const int n2 = std::stoi(text.substr(pos + 1));
  if (n1 < 2 || n1 > 10 || n2 < 2 || n2 > 10) {
    throw std::invalid_argument("design: sizes must lie in [2, 10]");
  }
  return {n1, n2};
}

std::string design_name(const std::pair<int, int>& d) {
  return std::to_string(d.first) + "v" + std::to_string(d.second);
}

std::vector<double> default_beta_grid() {
  std::vector<double> grid(10);
  for (int i = 0; i < 10; ++i) {
    grid[static_cast<std::size_t>(i)] = 2.5 * i / 9.0;
  }
  return grid;
}

std::vector<MethodRunner> make_runners(const std::vector<Method>& methods,
                                       const tf::TransformerWeights* weights) {
  if (methods.empty()) {
    throw std::invalid_argument("methods: need at least one estimator");
  }
  std::vector<MethodRunner> runners;
  std::shared_ptr<tf::BatchedForward> engine;
  for (Method m : methods) {
    MethodRunner r;
    r.id = m;
    r.name = method_name(m);
    switch (m) {
      case Method::MoM:
        r.run = [](const std::vector<Problem>& problems) {
          std::vector<Estimate> out;
          out.reserve(problems.size());
          for (const Problem& p : problems) {
            out.push_back(estimate_mom(p));
          }
          return out;
        };
        break;
      case Method::MLE:
        r.run = [](const std::vector<Problem>& problems) {
          std::vector<Estimate> out;
          out.reserve(problems.size());
          for (const Problem& p : problems) {
            out.push_back(estimate_mle(p));
          }
          return out;
        };
        break;
      case Method::Transformer: {
        if (weights == nullptr) {
          throw std::invalid_argument(
              "methods: transformer requires loaded weights");
        }
        if (!engine) {
          engine = std::make_shared<tf::BatchedForward>(*weights);
        }
        r.run = [engine](const std::vector<Problem>& problems) {
          const auto t0 = Clock::now();
          const auto preds = engine->run(problems);
          const std::int64_t total = ns_since(t0);
          const std::int64_t per_problem = std::max<std::int64_t>(
              1, total / static_cast<std::int64_t>(
                             std::max<std::size_t>(1, problems.size())));
          std::vector<Estimate> out(problems.size());
          for (std::size_t i = 0; i < problems.size(); ++i) {
            Estimate e;
            e.theta_hat = Theta::from_alpha(preds[i].mu, preds[i].beta,
                                            preds[i].alpha);
            e.converged = true;
            e.iterations = 0;
            e.method = Method::Transformer;
            e.runtime = std::chrono::nanoseconds{per_problem};
            out[i] = e;
          }
          return out;
        };
        break;
      }
    }
    runners.push_back(std::move(r));
  }
  return runners;
}

namespace {

struct SimProblem {
  Theta theta;
  Problem problem;
  int redraws = 0;
};

bool has_all_zero_group(const Problem& p) {
  std::int64_t sum[2] = {0, 0};
  for (std::size_t i = 0; i < p.size(); ++i) {
    sum[p.labels[i]] += p.counts[i];
  }
  return sum[0] == 0 || sum[1] == 0;
}

// Streams per attempt r: theta + design from substream(2r), counts from
// substream(2r + 1). Problems with an all-zero group (a hard error for the
// closed-form estimators) are redrawn and counted.
SimProblem draw_sim_problem(const Priors& priors, const RngStream& stream,
                            std::pair<int, int> design,
                            std::optional<double> forced_beta) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    auto theta_rng = stream.substream(2 * static_cast<std::uint64_t>(attempt));
    auto data_rng =
        stream.substream(2 * static_cast<std::uint64_t>(attempt) + 1);
    Theta theta = sample_theta_only(priors, theta_rng);
    if (forced_beta.has_value()) {
      theta.beta = *forced_beta;
    }
    const Design d = fixed_design(design.first, design.second,
                                  ExposureMode::Prior, priors, theta_rng);
    Problem p = generate_problem(theta, d, data_rng);
    if (!has_all_zero_group(p)) {
      return SimProblem{theta, std::move(p), attempt};
    }
  }
  throw EstimationError("simulation: could not draw a non-degenerate problem");
}

std::vector<SimProblem> draw_batch(const Priors& priors, std::uint64_t seed,
                                   std::int64_t n, std::pair<int, int> design,
                                   std::optional<double> forced_beta,
                                   int threads, std::uint64_t index_offset = 0) {
  const RngStream base(seed, 0);
  std::vector<SimProblem> out(static_cast<std::size_t>(n));
  parallel_for(n, threads, [&](std::int64_t i) {
    out[static_cast<std::size_t>(i)] = draw_sim_problem(
        priors, base.substream(index_offset + static_cast<std::uint64_t>(i)),
        design, forced_beta);
  });
  return out;
}

double alpha_metric(double phi, double floor_value) {
  return std::log(std::max(phi, floor_value));
}

}  // namespace

BenchReport bench_accuracy(const AccuracyOptions& opts, const Priors& priors,
                           const tf::TransformerWeights* weights) {
  if (opts.n_problems < 1) {
    throw std::invalid_argument("n_problems: must be positive");
  }
  auto runners = make_runners(opts.methods, weights);
  BenchReport report;
  report.experiment = "accuracy";
  report.seed = opts.seed;
  report.priors = priors;
  for (const auto& r : runners) {
    report.methods.push_back(r.name);
  }

  const auto sims = draw_batch(priors, opts.seed, opts.n_problems, opts.design,
                               std::nullopt, opts.threads);
  std::vector<Problem> problems;
  problems.reserve(sims.size());
  for (const auto& s : sims) {
    problems.push_back(s.problem);
    report.degenerate_redraws += s.redraws;
  }

  struct Acc {
    double se_mu = 0, se_beta = 0, se_alpha = 0;
    double ae_mu = 0, ae_beta = 0, ae_alpha = 0;
    double runtime = 0;
    std::int64_t nonconverged = 0;
  };

  for (const auto& runner : runners) {
    const auto ests = runner.run(problems);
    Acc acc;
    for (std::size_t i = 0; i < ests.size(); ++i) {
      const Theta& truth = sims[i].theta;
      const Estimate& e = ests[i];
      AccuracyRow row;
      row.problem_id = static_cast<std::int64_t>(i);
      row.method = runner.id;
      row.mu_true = truth.mu;
      row.beta_true = truth.beta;
      row.alpha_true = truth.alpha();
      row.mu_hat = e.theta_hat.mu;
      row.beta_hat = e.theta_hat.beta;
      row.alpha_hat = alpha_metric(e.theta_hat.phi, opts.alpha_floor);
      row.converged = e.converged;
      row.runtime_ns = e.runtime.count();
      report.accuracy_rows.push_back(row);

      const double dmu = row.mu_hat - row.mu_true;
      const double dbeta = row.beta_hat - row.beta_true;
      const double dalpha = row.alpha_hat - row.alpha_true;
      acc.se_mu += dmu * dmu;
      acc.se_beta += dbeta * dbeta;
      acc.se_alpha += dalpha * dalpha;
      acc.ae_mu += std::fabs(dmu);
      acc.ae_beta += std::fabs(dbeta);
      acc.ae_alpha += std::fabs(dalpha);
      acc.runtime += static_cast<double>(row.runtime_ns);
      acc.nonconverged += e.converged ? 0 : 1;
    }
    const double n = static_cast<double>(ests.size());
    AccuracyAggregate agg;
    agg.method = runner.id;
    agg.rmse_mu = std::sqrt(acc.se_mu / n);
    agg.rmse_beta = std::sqrt(acc.se_beta / n);
    agg.rmse_alpha = std::sqrt(acc.se_alpha / n);
    agg.mae_mu = acc.ae_mu / n;
    agg.mae_beta = acc.ae_beta / n;
    agg.mae_alpha = acc.ae_alpha / n;
    agg.mean_runtime_ns = acc.runtime / n;
    agg.n_nonconverged = acc.nonconverged;
    report.accuracy_aggregates.push_back(agg);
  }

  // rows ordered by (problem, method) for readability
  std::stable_sort(report.accuracy_rows.begin(), report.accuracy_rows.end(),
                   [](const AccuracyRow& a, const AccuracyRow& b) {
                     return a.problem_id < b.problem_id;
                   });
  return report;
}

namespace {

std::vector<double> p_values_for(const MethodRunner& runner,
                                 const std::vector<SimProblem>& sims,
                                 const std::vector<Problem>& problems) {
  const auto ests = runner.run(problems);
  std::vector<double> pvals(ests.size());
  for (std::size_t i = 0; i < ests.size(); ++i) {
    const double se = se_beta(problems[i], ests[i].theta_hat);
    pvals[i] = wald_test(ests[i].theta_hat.beta, se).p;
  }
  static_cast<void>(sims);
  return pvals;
}

}  // namespace

BenchReport bench_calibration(const CalibrationOptions& opts,
                              const Priors& priors,
                              const tf::TransformerWeights* weights) {
  if (opts.n_sims < 1) {
    throw std::invalid_argument("n_sims: must be positive");
  }
  auto runners = make_runners(opts.methods, weights);
  BenchReport report;
  report.experiment = "calibration";
  report.seed = opts.seed;
  report.priors = priors;
  for (const auto& r : runners) {
    report.methods.push_back(r.name);
  }

  const auto sims = draw_batch(priors, opts.seed, opts.n_sims, opts.design,
                               0.0, opts.threads);
  std::vector<Problem> problems;
  problems.reserve(sims.size());
  for (const auto& s : sims) {
    problems.push_back(s.problem);
    report.degenerate_redraws += s.redraws;
  }

  for (const auto& runner : runners) {
    auto pvals = p_values_for(runner, sims, problems);
    std::int64_t n_reject = 0;
    for (double p : pvals) {
      n_reject += p < 0.05;
    }
    report.rejection_rates[runner.name] =
        static_cast<double>(n_reject) / static_cast<double>(pvals.size());
    std::sort(pvals.begin(), pvals.end());
    for (std::size_t i = 0; i < pvals.size(); ++i) {
      CalibrationRow row;
      row.method = runner.id;
      row.rank = static_cast<std::int64_t>(i + 1);
      row.p_value = pvals[i];
      row.expected_quantile =
          (static_cast<double>(i) + 0.5) / static_cast<double>(pvals.size());
      report.calibration_rows.push_back(row);
    }
  }
  return report;
}

BenchReport bench_power(const PowerOptions& opts, const Priors& priors,
                        const tf::TransformerWeights* weights) {
  if (opts.n_sims < 1) {
    throw std::invalid_argument("n_sims: must be positive");
  }
  if (opts.designs.empty()) {
    throw std::invalid_argument("designs: need at least one");
  }
  auto runners = make_runners(opts.methods, weights);
  const std::vector<double> grid =
      opts.beta_grid.empty() ? default_beta_grid() : opts.beta_grid;

  BenchReport report;
  report.experiment = "power";
  report.seed = opts.seed;
  report.priors = priors;
  for (const auto& r : runners) {
    report.methods.push_back(r.name);
  }

  // cell stream offset (b * n_designs + d) * n_sims keeps the beta = 0 cell
  // of the first design identical to a calibration run at the same seed
  for (std::size_t bi = 0; bi < grid.size(); ++bi) {
    for (std::size_t di = 0; di < opts.designs.size(); ++di) {
      const std::uint64_t offset =
          (static_cast<std::uint64_t>(bi) * opts.designs.size() + di) *
          static_cast<std::uint64_t>(opts.n_sims);
      const auto sims =
          draw_batch(priors, opts.seed, opts.n_sims, opts.designs[di],
                     grid[bi], opts.threads, offset);
      std::vector<Problem> problems;
      problems.reserve(sims.size());
      for (const auto& s : sims) {
        problems.push_back(s.problem);
        report.degenerate_redraws += s.redraws;
      }
      for (const auto& runner : runners) {
        const auto pvals = p_values_for(runner, sims, problems);
        std::int64_t n_reject = 0;
        for (double p : pvals) {
          n_reject += p < 0.05;
        }
        PowerRow row;
        row.method = runner.id;
        row.design = design_name(opts.designs[di]);
        row.beta = grid[bi];
        row.n_sims = opts.n_sims;
        row.n_reject = n_reject;
        row.power =
            static_cast<double>(n_reject) / static_cast<double>(opts.n_sims);
        report.power_rows.push_back(row);
      }
    }
  }
  return report;
}

std::vector<std::string> write_report(const BenchReport& report,
                                      const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::vector<std::string> written;

  const std::string csv_path =
      (fs::path(out_dir) / (report.experiment + ".csv")).string();
  std::ofstream csv(csv_path, std::ios::trunc);
  if (!csv) {
    throw std::runtime_error("report: cannot write " + csv_path);
  }
  if (report.experiment == "accuracy") {
    csv << "problem_id,method,mu_true,beta_true,alpha_true,mu_hat,beta_hat,"
           "alpha_hat,converged,runtime_ns\n";
    for (const auto& r : report.accuracy_rows) {
      csv << r.problem_id << ',' << method_name(r.method) << ','
          << format_double(r.mu_true) << ',' << format_double(r.beta_true)
          << ',' << format_double(r.alpha_true) << ','
          << format_double(r.mu_hat) << ',' << format_double(r.beta_hat) << ','
          << format_double(r.alpha_hat) << ',' << (r.converged ? 1 : 0) << ','
          << r.runtime_ns << '\n';
    }
  } else if (report.experiment == "calibration") {
    csv << "method,rank,p_value,expected_quantile\n";
    for (const auto& r : report.calibration_rows) {
      csv << method_name(r.method) << ',' << r.rank << ','
          << format_double(r.p_value) << ','
          << format_double(r.expected_quantile) << '\n';
    }
  } else if (report.experiment == "power") {
    csv << "method,design,beta,n_sims,n_reject,power\n";
    for (const auto& r : report.power_rows) {
      csv << method_name(r.method) << ',' << r.design << ','
          << format_double(r.beta) << ',' << r.n_sims << ',' << r.n_reject
          << ',' << format_double(r.power) << '\n';
    }
  } else {
    throw std::runtime_error("report: unknown experiment " + report.experiment);
  }
  csv.close();
  written.push_back(csv_path);

  nlohmann::ordered_json manifest;
  manifest["experiment"] = report.experiment;
  manifest["tool_version"] = kVersion;
  manifest["seed"] = report.seed;
  manifest["methods"] = report.methods;
  manifest["priors"] = nlohmann::ordered_json::parse(priors_to_json(report.priors));
  manifest["run_config"] = report.run_config;
  manifest["degenerate_redraws"] = report.degenerate_redraws;
  if (!report.rejection_rates.empty()) {
    nlohmann::ordered_json rr;
    for (const auto& [name, rate] : report.rejection_rates) {
      rr[name] = rate;
    }
    manifest["rejection_rate_at_0p05"] = rr;
  }
  if (!report.accuracy_aggregates.empty()) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& a : report.accuracy_aggregates) {
      nlohmann::ordered_json ja;
      ja["method"] = method_name(a.method);
      ja["rmse_mu"] = a.rmse_mu;
      ja["rmse_beta"] = a.rmse_beta;
      ja["rmse_alpha"] = a.rmse_alpha;
      ja["mae_mu"] = a.mae_mu;
      ja["mae_beta"] = a.mae_beta;
      ja["mae_alpha"] = a.mae_alpha;
      ja["mean_runtime_ns"] = a.mean_runtime_ns;
      ja["n_nonconverged"] = a.n_nonconverged;
      arr.push_back(ja);
    }
    manifest["aggregates"] = arr;
  }
  const std::string manifest_path =
      (fs::path(out_dir) / "manifest.json").string();
  std::ofstream mf(manifest_path, std::ios::trunc);
  if (!mf) {
    throw std::runtime_error("report: cannot write " + manifest_path);
  }
  mf << manifest.dump(2) << "\n";
  mf.close();
  written.push_back(manifest_path);
  return written;
}

}  // namespace nbscreen::bench
