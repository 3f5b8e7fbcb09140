#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "nbscreen/nb_model.hpp"
#include "nbscreen/rng.hpp"

namespace nbscreen {

// Sampling distributions for synthetic parameters and designs. Second
// parameters of the normal/log-normal entries are variances; the exposure
// prior's -log(1.09)/2 mean correction makes E[l] = 1e4 under that reading.
// One Priors value feeds both transformer training and the benchmarks.
struct Priors {
  double mu_mean = -1.0;
  double mu_var = 2.0;
  double alpha_mean = -2.0;
  double alpha_var = 1.0;
  double delta_prob = 0.3;
  double beta_mean = 0.0;
  double beta_var = 1.0;
  double exposure_log_mean = std::log(1e4) - std::log(1.09) / 2.0;
  double exposure_log_var = std::log(1.09);
  int n_min = 2;
  int n_max = 10;

  void validate() const;
};

// Group sizes plus one exposure per observation (first n1 are x=0).
struct Design {
  int n1 = 0;
  int n2 = 0;
  std::vector<double> exposures;

  int total() const { return n1 + n2; }
};

// Draw order (frozen for reproducibility): mu, alpha, delta, beta when
// delta = 1, n1, n2, then the n1 + n2 exposures.
std::pair<Theta, Design> sample_theta(const Priors& priors, RngStream& rng);

// Parameter draw alone, for sweeps that fix the design; same draw order as
// sample_theta up to the design fields.
Theta sample_theta_only(const Priors& priors, RngStream& rng);

// Counts from nb_sample at mean_function(l, mu, beta, x); first n1
// observations carry x = 0, the rest x = 1.
Problem generate_problem(const Theta& t, const Design& d, RngStream& rng);

enum class ExposureMode { Prior, Constant };

// Fixed benchmark design: n1 controls and n2 treatments, exposures drawn
// from the prior (mode Prior, consumes rng) or all 1e4 (mode Constant).
Design fixed_design(int n1, int n2, ExposureMode mode, const Priors& priors,
                    RngStream& rng);

// JSON round-trip with keys named exactly as the Priors fields.
Priors load_priors(const std::string& path);
void save_priors(const Priors& priors, const std::string& path);
std::string priors_to_json(const Priors& priors);
Priors priors_from_json(const std::string& text);

}  // namespace nbscreen
