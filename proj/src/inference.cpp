#include "nbscreen/inference.hpp"

#include <cmath>

#include "nbscreen/special.hpp"

namespace nbscreen {

double observation_weight(double m, double phi) {
  if (!(m > 0.0) || !std::isfinite(m)) {
    throw std::domain_error("observation_weight: m must be positive");
  }
  if (phi < 0.0 || !std::isfinite(phi)) {
    throw std::domain_error("observation_weight: phi must be non-negative");
  }
  return m / (1.0 + phi * m);
}

double se_beta(const Problem& p, const Theta& t) {
  p.validate();
  if (t.phi < 0.0 || !std::isfinite(t.phi)) {
    throw std::domain_error("se_beta: phi must be non-negative");
  }
  double s0 = 0.0;
  double s1 = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = mean_function(p.exposures[i], t.mu, t.beta, p.labels[i]);
    const double w = observation_weight(m, t.phi);
    if (p.labels[i]) {
      s1 += w;
    } else {
      s0 += w;
    }
  }
  if (!(s0 > 0.0) || !(s1 > 0.0)) {
    throw InferenceError("se_beta: a group has zero total weight");
  }
  return std::sqrt(1.0 / s0 + 1.0 / s1);
}

WaldResult wald_test(double beta_hat, double se) {
  if (!(se > 0.0) || !std::isfinite(se)) {
    throw InferenceError("wald_test: standard error must be positive");
  }
  WaldResult r;
  r.se_beta = se;
  r.z = beta_hat / se;
  r.p = chi2_1_sf(r.z * r.z);
  return r;
}

}  // namespace nbscreen
