#pragma once

#include <chrono>
#include <optional>
#include <stdexcept>
#include <string>

#include "nbscreen/nb_model.hpp"

namespace nbscreen {

// Estimation failed structurally (all-zero group, zero group mean, ...).
// Non-convergence of the optimizer is NOT an error; it is reported through
// Estimate::converged so benchmark sweeps can aggregate unattended.
struct EstimationError : std::runtime_error {
  explicit EstimationError(const std::string& what) : std::runtime_error(what) {}
};

enum class Method { MoM, MLE, Transformer };

const char* method_name(Method m);
std::optional<Method> method_from_name(const std::string& name);

struct Estimate {
  Theta theta_hat;
  bool converged = true;
  int iterations = 0;
  std::chrono::nanoseconds runtime{1};
  Method method = Method::MoM;
  // Max-norm of the score at theta_hat in (mu, beta, alpha) coordinates;
  // at the phi = 0 boundary only the mu/beta components enter.
  double grad_inf_norm = 0.0;
};

struct MleOptions {
  int max_iterations = 100;
  double grad_tolerance = 1e-8;
  // Empty: initialize from method of moments (phi = 0 lifted to 1e-4 for
  // the alpha coordinate).
  std::optional<Theta> init;
};

// Closed-form method of moments. Per-group dispersion moments on raw
// counts, averaged and clamped at zero. Requires >= 2 observations and a
// positive count mean in each group.
Estimate estimate_mom(const Problem& p);

// Quasi-Newton (BFGS) ascent of the log-likelihood over (mu, beta,
// alpha = log phi), with an exact Poisson-limit fallback when the optimum
// sits on the phi = 0 boundary.
Estimate estimate_mle(const Problem& p, const MleOptions& opts = {});

}  // namespace nbscreen
