#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "nbscreen/rng.hpp"

namespace nbscreen {

// Generative parameters of the two-group negative binomial model.
// mu is the log base mean, beta the log fold-change of the x=1 group,
// phi >= 0 the over-dispersion; alpha = log(phi) is the alternate
// coordinate used by the optimizer and the transformer.
struct Theta {
  double mu = 0.0;
  double beta = 0.0;
  double phi = 0.0;

  double alpha() const {
    return phi > 0.0 ? std::log(phi) : -std::numeric_limits<double>::infinity();
  }
  static Theta from_alpha(double mu, double beta, double alpha) {
    return Theta{mu, beta, std::exp(alpha)};
  }
};

// One two-group count experiment: counts y, exposures l, binary labels x,
// all of equal length n >= 2.
struct Problem {
  std::vector<std::int64_t> counts;
  std::vector<double> exposures;
  std::vector<int> labels;

  std::size_t size() const { return counts.size(); }
  // Throws std::invalid_argument naming the offending field.
  void validate() const;
};

// Problem partitioned by label: (Y1, L1) holds x=0, (Y2, L2) holds x=1.
struct GroupView {
  std::vector<std::int64_t> y1;
  std::vector<double> l1;
  std::vector<std::int64_t> y2;
  std::vector<double> l2;
};

GroupView group_view(const Problem& p);

// m = l * exp(mu + x * beta); throws std::domain_error on invalid input or
// non-finite result.
double mean_function(double l, double mu, double beta, int x);

// log P(y | m, phi) with the mean/dispersion parameterization
// (a = 1/phi, r = a/(a+m)); phi = 0 is the exact Poisson limit.
double nb_log_pmf(std::int64_t y, double m, double phi);

double log_likelihood(const Problem& p, const Theta& t);

struct GradTheta {
  double dmu = 0.0;
  double dbeta = 0.0;
  double dphi = 0.0;
};

// Exact derivatives of log_likelihood; requires phi > 0.
GradTheta grad_log_likelihood(const Problem& p, const Theta& t);

// Poisson-gamma mixture draw: gamma(shape=1/phi, scale=phi*m) rate fed to a
// Poisson; phi = 0 draws Poisson(m) directly.
std::int64_t nb_sample(double m, double phi, RngStream& rng);

// y* = log10(1e4 * y / l + 1), the transformer input transform.
double transform_input(double y, double l);

namespace detail {

// Optimizer-facing likelihood core. Shares per-problem precomputation and
// returns -inf instead of throwing when the mean overflows.
struct LikelihoodContext {
  explicit LikelihoodContext(const Problem& p);

  const Problem& problem;
  std::vector<double> lgamma_y_plus_1;
  std::size_t n1 = 0;  // observations with x = 0

  // Value of the log-likelihood at (mu, beta, alpha = log phi);
  // alpha = -inf selects the Poisson limit.
  double value(double mu, double beta, double alpha) const;

  // Value plus gradient in (mu, beta, alpha) coordinates.
  struct ValueGrad {
    double value;
    double dmu;
    double dbeta;
    double dalpha;
  };
  ValueGrad value_grad(double mu, double beta, double alpha) const;

  // Gradient of the Poisson limit in (mu, beta); used at the phi = 0
  // boundary where grad_log_likelihood is undefined.
  void poisson_grad(double mu, double beta, double* dmu, double* dbeta) const;
};

}  // namespace detail

}  // namespace nbscreen
