#pragma once

#include <stdexcept>
#include <string>

#include "nbscreen/nb_model.hpp"

namespace nbscreen {

struct InferenceError : std::runtime_error {
  explicit InferenceError(const std::string& what) : std::runtime_error(what) {}
};

struct WaldResult {
  double se_beta = 0.0;
  double z = 0.0;
  double p = 1.0;
};

// w = m / (1 + phi * m); the Poisson weight m at phi = 0.
double observation_weight(double m, double phi);

// SE(beta) = sqrt(1/S0 + 1/S1) with S_g the group totals of the
// observation weights evaluated at t and the observed exposures/labels.
double se_beta(const Problem& p, const Theta& t);

// z = beta_hat / se; p from the chi^2(1) survival function at z^2,
// identical to the two-sided normal form.
WaldResult wald_test(double beta_hat, double se);

}  // namespace nbscreen
