// nbscreen: negative binomial two-group estimation, benchmarks and plots.
#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "nbscreen/bench.hpp"
#include "nbscreen/estimators.hpp"
#include "nbscreen/inference.hpp"
#include "nbscreen/plot.hpp"
#include "nbscreen/set_transformer.hpp"
#include "nbscreen/synth.hpp"
#include "nbscreen/version.hpp"

namespace {

using nbscreen::Method;
using nbscreen::Priors;
using nbscreen::Problem;

struct GlobalOpts {
  std::optional<std::uint64_t> seed;
  int threads = 0;
  std::string priors_path;
  std::string out_dir = ".";
};

std::uint64_t resolve_seed(const GlobalOpts& g) {
  if (g.seed.has_value()) {
    return *g.seed;
  }
  if (const char* env = std::getenv("NBSCREEN_SEED")) {
    return std::strtoull(env, nullptr, 10);
  }
  std::random_device rd;
  return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

Priors resolve_priors(const GlobalOpts& g) {
  if (!g.priors_path.empty()) {
    return nbscreen::load_priors(g.priors_path);
  }
  return Priors{};
}

std::vector<Method> parse_methods(const std::string& text) {
  std::vector<Method> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto m = nbscreen::method_from_name(item);
    if (!m.has_value()) {
      throw CLI::ValidationError("--methods", "unknown method '" + item + "'");
    }
    out.push_back(*m);
  }
  if (out.empty()) {
    throw CLI::ValidationError("--methods", "no methods given");
  }
  return out;
}

Problem read_problem_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("input: cannot open " + path);
  }
  std::string line;
  if (!std::getline(in, line)) {
    throw std::runtime_error("input: empty file " + path);
  }
  if (!line.empty() && line.back() == '\r') {
    line.pop_back();
  }
  if (line != "y,l,x") {
    throw std::runtime_error("input: expected header 'y,l,x', got '" + line + "'");
  }
  Problem p;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    if (line.empty()) {
      continue;
    }
    std::stringstream ss(line);
    std::string fy, fl, fx;
    if (!std::getline(ss, fy, ',') || !std::getline(ss, fl, ',') ||
        !std::getline(ss, fx, ',')) {
      throw std::runtime_error("input: malformed row at line " +
                               std::to_string(line_no));
    }
    try {
      p.counts.push_back(std::stoll(fy));
      p.exposures.push_back(std::stod(fl));
      p.labels.push_back(std::stoi(fx));
    } catch (const std::exception&) {
      throw std::runtime_error("input: unparsable value at line " +
                               std::to_string(line_no));
    }
  }
  p.validate();
  return p;
}

std::string format_g(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

int cmd_estimate(const GlobalOpts& g, const std::string& method_name,
                 const std::string& weights_path, const std::string& input) {
  static_cast<void>(g);
  const auto m = nbscreen::method_from_name(method_name);
  if (!m.has_value()) {
    throw std::runtime_error("method: unknown method '" + method_name + "'");
  }
  const Problem p = read_problem_csv(input);

  nbscreen::Estimate est;
  if (*m == Method::Transformer) {
    if (weights_path.empty()) {
      throw std::runtime_error("weights: --weights is required for method=transformer");
    }
    const auto w = nbscreen::tf::load_weights(weights_path);
    const nbscreen::tf::BatchedForward engine(w);
    const auto pred = engine.run_one(p);
    est.theta_hat = nbscreen::Theta::from_alpha(pred.mu, pred.beta, pred.alpha);
    est.converged = true;
    est.method = Method::Transformer;
  } else if (*m == Method::MoM) {
    est = nbscreen::estimate_mom(p);
  } else {
    est = nbscreen::estimate_mle(p);
  }

  const double se = nbscreen::se_beta(p, est.theta_hat);
  const auto wald = nbscreen::wald_test(est.theta_hat.beta, se);
  std::printf(
      "method=%s mu_hat=%s beta_hat=%s phi_hat=%s se_beta=%s z=%s p=%s "
      "converged=%s\n",
      nbscreen::method_name(est.method), format_g(est.theta_hat.mu).c_str(),
      format_g(est.theta_hat.beta).c_str(), format_g(est.theta_hat.phi).c_str(),
      format_g(se).c_str(), format_g(wald.z).c_str(), format_g(wald.p).c_str(),
      est.converged ? "true" : "false");
  return 0;
}

const nbscreen::tf::TransformerWeights* maybe_load_weights(
    const std::string& path, std::optional<nbscreen::tf::TransformerWeights>& store) {
  if (path.empty()) {
    return nullptr;
  }
  store = nbscreen::tf::load_weights(path);
  return &*store;
}

void print_bench_summary(const nbscreen::bench::BenchReport& report) {
  std::printf("experiment=%s seed=%" PRIu64 " redraws=%" PRId64 "\n",
              report.experiment.c_str(), report.seed,
              report.degenerate_redraws);
  for (const auto& a : report.accuracy_aggregates) {
    std::printf(
        "  %-12s rmse_mu=%.4f rmse_beta=%.4f rmse_alpha=%.4f "
        "mean_runtime_ns=%.0f nonconverged=%" PRId64 "\n",
        nbscreen::method_name(a.method), a.rmse_mu, a.rmse_beta, a.rmse_alpha,
        a.mean_runtime_ns, a.n_nonconverged);
  }
  for (const auto& [name, rate] : report.rejection_rates) {
    std::printf("  %-12s rejection_rate_at_0.05=%.4f\n", name.c_str(), rate);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"negative binomial regression estimation and benchmarks"};
  app.set_version_flag("--version", nbscreen::kVersion);
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOpts globals;
  std::uint64_t seed_arg = 0;
  auto* seed_opt = app.add_option("--seed", seed_arg, "RNG seed (default: env NBSCREEN_SEED or random)");
  app.add_option("--threads", globals.threads, "worker threads (0 = all cores)");
  app.add_option("--priors", globals.priors_path, "priors JSON file");
  app.add_option("--out", globals.out_dir, "output directory")->capture_default_str();

  // estimate
  auto* est_cmd = app.add_subcommand("estimate", "estimate one problem from a y,l,x CSV");
  std::string est_method = "mom";
  std::string est_weights;
  std::string est_input;
  est_cmd->add_option("--method", est_method, "mom|mle|transformer")->capture_default_str();
  est_cmd->add_option("--weights", est_weights, "NBTF weights (transformer)");
  est_cmd->add_option("--input", est_input, "problem CSV with header y,l,x")->required();

  // bench
  auto* bench_cmd = app.add_subcommand("bench", "run a benchmark experiment");
  bench_cmd->require_subcommand(1);
  bench_cmd->fallthrough();
  struct BenchArgs {
    std::int64_t n = -1;
    std::string design = "3v3";
    std::string designs = "3v3,5v5,7v7,9v9";
    std::string betas;
    std::string methods;
    std::string weights;
    std::string replay;
  } ba;
  auto add_common = [&](CLI::App* sub, bool with_design, bool with_power_flags) {
    sub->fallthrough();
    sub->add_option("--n", ba.n, "simulation count");
    if (with_design) {
      sub->add_option("--design", ba.design, "group sizes, e.g. 3v3")->capture_default_str();
    }
    if (with_power_flags) {
      sub->add_option("--designs", ba.designs, "comma list of designs")->capture_default_str();
      sub->add_option("--betas", ba.betas, "comma list of effect sizes (default: 10 on [0,2.5])");
    }
    sub->add_option("--methods", ba.methods, "comma list: mom,mle,transformer");
    sub->add_option("--weights", ba.weights, "NBTF weights for the transformer");
    sub->add_option("--replay", ba.replay, "replay a manifest.json from an earlier run");
  };
  auto* acc_cmd = bench_cmd->add_subcommand("accuracy", "accuracy/runtime sweep");
  add_common(acc_cmd, true, false);
  auto* cal_cmd = bench_cmd->add_subcommand("calibration", "null p-value calibration");
  add_common(cal_cmd, true, false);
  auto* pow_cmd = bench_cmd->add_subcommand("power", "power over effect sizes and designs");
  add_common(pow_cmd, false, true);

  // train
  auto* train_cmd = app.add_subcommand("train", "train the set transformer on synthetic data");
  std::string train_config;
  std::string train_out;
  std::string train_log;
  train_cmd->add_option("--config", train_config, "JSON with model/train/priors sections");
  train_cmd->add_option("--out", train_out, "output NBTF weights path")->required();
  train_cmd->add_option("--log", train_log, "training log CSV (default <out>.log.csv)");

  // plot
  auto* plot_cmd = app.add_subcommand("plot", "render a benchmark CSV as SVG");
  std::string plot_experiment;
  std::string plot_in;
  std::string plot_out;
  plot_cmd->add_option("--experiment", plot_experiment, "accuracy|calibration|power")->required();
  plot_cmd->add_option("--in", plot_in, "input CSV")->required();
  plot_cmd->add_option("--out", plot_out, "output SVG")->required();

  CLI11_PARSE(app, argc, argv);
  if (seed_opt->count() > 0) {
    globals.seed = seed_arg;
  }

  try {
    if (est_cmd->parsed()) {
      return cmd_estimate(globals, est_method, est_weights, est_input);
    }

    if (bench_cmd->parsed()) {
      Priors priors = resolve_priors(globals);
      std::uint64_t seed = resolve_seed(globals);
      std::optional<nbscreen::tf::TransformerWeights> weights_store;

      // manifest replay overrides the command line
      nlohmann::json replay;
      if (!ba.replay.empty()) {
        std::ifstream in(ba.replay);
        if (!in) {
          throw std::runtime_error("replay: cannot open " + ba.replay);
        }
        in >> replay;
        seed = replay.at("seed").get<std::uint64_t>();
        priors = nbscreen::priors_from_json(replay.at("priors").dump());
      }
      auto replay_cfg = [&](const char* key) -> std::optional<nlohmann::json> {
        if (replay.is_null() || !replay.contains("run_config")) {
          return std::nullopt;
        }
        const auto& rc = replay.at("run_config");
        if (!rc.contains(key)) {
          return std::nullopt;
        }
        return rc.at(key);
      };

      auto methods_or_default = [&]() {
        if (auto rv = replay_cfg("methods")) {
          std::vector<Method> ms;
          for (const auto& name : *rv) {
            ms.push_back(*nbscreen::method_from_name(name.get<std::string>()));
          }
          return ms;
        }
        if (!ba.methods.empty()) {
          return parse_methods(ba.methods);
        }
        std::vector<Method> ms{Method::MoM, Method::MLE};
        if (!ba.weights.empty()) {
          ms.push_back(Method::Transformer);
        }
        return ms;
      };
      if (auto rv = replay_cfg("weights"); rv && rv->is_string()) {
        ba.weights = rv->get<std::string>();
      }
      if (auto rv = replay_cfg("threads")) {
        globals.threads = rv->get<int>();
      }

      nbscreen::bench::BenchReport report;
      if (acc_cmd->parsed()) {
        nbscreen::bench::AccuracyOptions opts;
        opts.seed = seed;
        opts.threads = globals.threads;
        opts.methods = methods_or_default();
        opts.n_problems = ba.n > 0 ? ba.n : 10000;
        opts.design = nbscreen::bench::parse_design(ba.design);
        if (auto rv = replay_cfg("n")) opts.n_problems = rv->get<std::int64_t>();
        if (auto rv = replay_cfg("design"))
          opts.design = nbscreen::bench::parse_design(rv->get<std::string>());
        report = nbscreen::bench::bench_accuracy(
            opts, priors, maybe_load_weights(ba.weights, weights_store));
        report.run_config["n"] = opts.n_problems;
        report.run_config["design"] = nbscreen::bench::design_name(opts.design);
      } else if (cal_cmd->parsed()) {
        nbscreen::bench::CalibrationOptions opts;
        opts.seed = seed;
        opts.threads = globals.threads;
        opts.methods = methods_or_default();
        opts.n_sims = ba.n > 0 ? ba.n : 1000;
        opts.design = nbscreen::bench::parse_design(ba.design);
        if (auto rv = replay_cfg("n")) opts.n_sims = rv->get<std::int64_t>();
        if (auto rv = replay_cfg("design"))
          opts.design = nbscreen::bench::parse_design(rv->get<std::string>());
        report = nbscreen::bench::bench_calibration(
            opts, priors, maybe_load_weights(ba.weights, weights_store));
        report.run_config["n"] = opts.n_sims;
        report.run_config["design"] = nbscreen::bench::design_name(opts.design);
      } else {
        nbscreen::bench::PowerOptions opts;
        opts.seed = seed;
        opts.threads = globals.threads;
        opts.methods = methods_or_default();
        opts.n_sims = ba.n > 0 ? ba.n : 1000;
        opts.designs.clear();
        {
          std::stringstream ss(ba.designs);
          std::string item;
          while (std::getline(ss, item, ',')) {
            opts.designs.push_back(nbscreen::bench::parse_design(item));
          }
        }
        if (!ba.betas.empty()) {
          opts.beta_grid.clear();
          std::stringstream ss(ba.betas);
          std::string item;
          while (std::getline(ss, item, ',')) {
            opts.beta_grid.push_back(std::stod(item));
          }
        }
        if (auto rv = replay_cfg("n")) opts.n_sims = rv->get<std::int64_t>();
        if (auto rv = replay_cfg("designs")) {
          opts.designs.clear();
          for (const auto& d : *rv) {
            opts.designs.push_back(
                nbscreen::bench::parse_design(d.get<std::string>()));
          }
        }
        if (auto rv = replay_cfg("betas")) {
          opts.beta_grid = rv->get<std::vector<double>>();
        }
        report = nbscreen::bench::bench_power(
            opts, priors, maybe_load_weights(ba.weights, weights_store));
        report.run_config["n"] = opts.n_sims;
        {
          auto arr = nlohmann::ordered_json::array();
          for (const auto& d : opts.designs) {
            arr.push_back(nbscreen::bench::design_name(d));
          }
          report.run_config["designs"] = arr;
        }
        report.run_config["betas"] =
            opts.beta_grid.empty() ? nbscreen::bench::default_beta_grid()
                                   : opts.beta_grid;
      }
      report.run_config["methods"] = report.methods;
      report.run_config["threads"] = globals.threads;
      if (!ba.weights.empty()) {
        report.run_config["weights"] = ba.weights;
      }
      const auto files = nbscreen::bench::write_report(report, globals.out_dir);
      print_bench_summary(report);
      for (const auto& f : files) {
        std::printf("wrote %s\n", f.c_str());
      }
      return 0;
    }

    if (train_cmd->parsed()) {
      const std::uint64_t seed = resolve_seed(globals);
      nbscreen::tf::ModelConfig model_cfg;
      nbscreen::tf::TrainConfig train_cfg;
      Priors priors = resolve_priors(globals);
      if (!train_config.empty()) {
        std::ifstream in(train_config);
        if (!in) {
          throw std::runtime_error("config: cannot open " + train_config);
        }
        nlohmann::json j;
        in >> j;
        if (j.contains("model")) {
          const auto& m = j.at("model");
          model_cfg.d = m.value("d", model_cfg.d);
          model_cfg.h = m.value("h", model_cfg.h);
          model_cfg.L = m.value("L", model_cfg.L);
          model_cfg.dropout = m.value("dropout", model_cfg.dropout);
          model_cfg.ff_mult = m.value("ff_mult", model_cfg.ff_mult);
          model_cfg.cross_blocks = m.value("cross_blocks", model_cfg.cross_blocks);
        }
        if (j.contains("train")) {
          const auto& t = j.at("train");
          train_cfg.n_epoch_problems = t.value("n_epoch_problems", train_cfg.n_epoch_problems);
          train_cfg.batch_size = t.value("batch_size", train_cfg.batch_size);
          train_cfg.epochs = t.value("epochs", train_cfg.epochs);
          train_cfg.learning_rate = t.value("learning_rate", train_cfg.learning_rate);
          train_cfg.weight_decay = t.value("weight_decay", train_cfg.weight_decay);
          train_cfg.plateau_factor = t.value("plateau_factor", train_cfg.plateau_factor);
          train_cfg.plateau_patience = t.value("plateau_patience", train_cfg.plateau_patience);
          train_cfg.loss_weights.w_mu = t.value("w_mu", train_cfg.loss_weights.w_mu);
          train_cfg.loss_weights.w_beta = t.value("w_beta", train_cfg.loss_weights.w_beta);
          train_cfg.loss_weights.w_alpha = t.value("w_alpha", train_cfg.loss_weights.w_alpha);
          train_cfg.validation_size = t.value("validation_size", train_cfg.validation_size);
        }
        if (j.contains("priors")) {
          priors = nbscreen::priors_from_json(j.at("priors").dump());
        }
      }
      train_cfg.threads = globals.threads > 0 ? globals.threads : train_cfg.threads;

      const std::string log_path = train_log.empty() ? train_out + ".log.csv" : train_log;
      std::ofstream log(log_path, std::ios::trunc);
      if (!log) {
        throw std::runtime_error("log: cannot write " + log_path);
      }
      log << "epoch,train_loss,val_loss,lr\n";
      log.flush();

      nbscreen::RngStream rng(seed, 0);
      try {
        const auto result = nbscreen::tf::train(
            model_cfg, train_cfg, priors, rng,
            [&](const nbscreen::tf::EpochLog& row) {
              log << row.epoch << ',' << format_g(row.train_loss) << ','
                  << format_g(row.val_loss) << ',' << format_g(row.lr) << '\n';
              log.flush();
              std::printf("epoch=%d train_loss=%.6f val_loss=%.6f lr=%.2e\n",
                          row.epoch, row.train_loss, row.val_loss, row.lr);
            });
        nbscreen::tf::save_weights(result.weights, train_out);
        std::printf("best_epoch=%d weights=%s log=%s\n", result.best_epoch,
                    train_out.c_str(), log_path.c_str());
      } catch (const nbscreen::tf::TrainingDiverged& e) {
        std::fprintf(stderr, "error: %s (partial log kept at %s)\n", e.what(),
                     log_path.c_str());
        return 2;
      }

      nlohmann::ordered_json manifest;
      manifest["tool_version"] = nbscreen::kVersion;
      manifest["seed"] = seed;
      manifest["model"] = {{"d", model_cfg.d},       {"h", model_cfg.h},
                           {"L", model_cfg.L},       {"dropout", model_cfg.dropout},
                           {"ff_mult", model_cfg.ff_mult},
                           {"cross_blocks", model_cfg.cross_blocks}};
      manifest["train"] = {{"n_epoch_problems", train_cfg.n_epoch_problems},
                           {"batch_size", train_cfg.batch_size},
                           {"epochs", train_cfg.epochs},
                           {"learning_rate", train_cfg.learning_rate},
                           {"weight_decay", train_cfg.weight_decay},
                           {"plateau_factor", train_cfg.plateau_factor},
                           {"plateau_patience", train_cfg.plateau_patience},
                           {"w_mu", train_cfg.loss_weights.w_mu},
                           {"w_beta", train_cfg.loss_weights.w_beta},
                           {"w_alpha", train_cfg.loss_weights.w_alpha},
                           {"validation_size", train_cfg.validation_size},
                           {"threads", train_cfg.threads}};
      manifest["priors"] = nlohmann::ordered_json::parse(nbscreen::priors_to_json(priors));
      std::ofstream mf(train_out + ".manifest.json", std::ios::trunc);
      mf << manifest.dump(2) << "\n";
      return 0;
    }

    if (plot_cmd->parsed()) {
      if (plot_experiment == "accuracy") {
        nbscreen::plot::plot_accuracy(plot_in, plot_out);
      } else if (plot_experiment == "calibration") {
        nbscreen::plot::plot_calibration(plot_in, plot_out);
      } else if (plot_experiment == "power") {
        nbscreen::plot::plot_power(plot_in, plot_out);
      } else {
        throw std::runtime_error("experiment: must be accuracy|calibration|power");
      }
      std::printf("wrote %s\n", plot_out.c_str());
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
