#include "nbscreen/nb_model.hpp"

#include <cmath>
#include <stdexcept>

#include "nbscreen/special.hpp"

namespace nbscreen {

void Problem::validate() const {
  const std::size_t n = counts.size();
  if (n < 2) {
    throw std::invalid_argument("counts: need at least 2 observations");
  }
  if (exposures.size() != n) {
    throw std::invalid_argument("exposures: length differs from counts");
  }
  if (labels.size() != n) {
    throw std::invalid_argument("labels: length differs from counts");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (counts[i] < 0) {
      throw std::invalid_argument("counts: negative value");
    }
    if (!(exposures[i] > 0.0) || !std::isfinite(exposures[i])) {
      throw std::invalid_argument("exposures: values must be positive and finite");
    }
    if (labels[i] != 0 && labels[i] != 1) {
      throw std::invalid_argument("labels: values must be 0 or 1");
    }
  }
  // group occupancy is an estimator-level requirement, not enforced here:
  // the likelihood and its gradient are well defined for one-group data
}

GroupView group_view(const Problem& p) {
  GroupView g;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p.labels[i] == 0) {
      g.y1.push_back(p.counts[i]);
      g.l1.push_back(p.exposures[i]);
    } else {
      g.y2.push_back(p.counts[i]);
      g.l2.push_back(p.exposures[i]);
    }
  }
  return g;
}

double mean_function(double l, double mu, double beta, int x) {
  if (!(l > 0.0)) {
    throw std::domain_error("mean_function: exposure must be positive");
  }
  if (!std::isfinite(mu) || !std::isfinite(beta)) {
    throw std::domain_error("mean_function: mu and beta must be finite");
  }
  const double m = l * std::exp(mu + (x ? beta : 0.0));
  if (!std::isfinite(m) || !(m > 0.0)) {
    throw std::domain_error("mean_function: result overflows");
  }
  return m;
}

namespace {

inline double poisson_log_pmf(std::int64_t y, double m) {
  const double yd = static_cast<double>(y);
  return yd * std::log(m) - m - lgamma_fn(yd + 1.0);
}

inline double nb_log_pmf_unchecked(double yd, double m, double phi,
                                   double lgamma_y1) {
  if (phi == 0.0) {
    return yd * std::log(m) - m - lgamma_y1;
  }
  const double a = 1.0 / phi;
  // a*log(r) = -a*log1p(m/a), y*log(1-r) = -y*log1p(a/m)
  double tail = -a * std::log1p(m / a);
  if (yd > 0.0) {
    tail -= yd * std::log1p(a / m);
  }
  return lgamma_diff(yd, a) - lgamma_y1 + tail;
}

}  // namespace

double nb_log_pmf(std::int64_t y, double m, double phi) {
  if (y < 0) {
    throw std::domain_error("nb_log_pmf: y must be non-negative");
  }
  if (!(m > 0.0) || !std::isfinite(m)) {
    throw std::domain_error("nb_log_pmf: m must be positive and finite");
  }
  if (phi < 0.0 || !std::isfinite(phi)) {
    throw std::domain_error("nb_log_pmf: phi must be non-negative");
  }
  const double yd = static_cast<double>(y);
  return nb_log_pmf_unchecked(yd, m, phi, lgamma_fn(yd + 1.0));
}

double log_likelihood(const Problem& p, const Theta& t) {
  p.validate();
  if (t.phi < 0.0 || !std::isfinite(t.phi)) {
    throw std::domain_error("log_likelihood: phi must be non-negative");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = mean_function(p.exposures[i], t.mu, t.beta, p.labels[i]);
    acc += nb_log_pmf(p.counts[i], m, t.phi);
  }
  return acc;
}

GradTheta grad_log_likelihood(const Problem& p, const Theta& t) {
  p.validate();
  if (!(t.phi > 0.0) || !std::isfinite(t.phi)) {
    throw std::domain_error("grad_log_likelihood: phi must be positive");
  }
  const double a = 1.0 / t.phi;
  const double e0 = std::exp(t.mu);
  const double e1 = std::exp(t.mu + t.beta);
  GradTheta g;
  double sum_da = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = p.exposures[i] * (p.labels[i] ? e1 : e0);
    const double yd = static_cast<double>(p.counts[i]);
    const double dmean = (yd - m) / (1.0 + t.phi * m);
    g.dmu += dmean;
    if (p.labels[i]) {
      g.dbeta += dmean;
    }
    // dl_i/da = psi(y+a) - psi(a) + log r + (m - y)/(a + m)
    sum_da += digamma_diff(yd, a) - std::log1p(m / a) + (m - yd) / (a + m);
  }
  g.dphi = -a * a * sum_da;
  return g;
}

std::int64_t nb_sample(double m, double phi, RngStream& rng) {
  if (!(m > 0.0) || !std::isfinite(m)) {
    throw std::domain_error("nb_sample: m must be positive and finite");
  }
  if (phi < 0.0 || !std::isfinite(phi)) {
    throw std::domain_error("nb_sample: phi must be non-negative");
  }
  if (phi == 0.0) {
    return rng.poisson(m);
  }
  const double rate = rng.gamma(1.0 / phi, phi * m);
  return rng.poisson(rate);
}

double transform_input(double y, double l) {
  if (!(l > 0.0)) {
    throw std::domain_error("transform_input: exposure must be positive");
  }
  if (y < 0.0) {
    throw std::domain_error("transform_input: count must be non-negative");
  }
  return std::log1p(1e4 * y / l) / M_LN10;
}

namespace detail {

LikelihoodContext::LikelihoodContext(const Problem& p) : problem(p) {
  p.validate();
  lgamma_y_plus_1.reserve(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    lgamma_y_plus_1.push_back(lgamma_fn(static_cast<double>(p.counts[i]) + 1.0));
    n1 += p.labels[i] == 0;
  }
}

double LikelihoodContext::value(double mu, double beta, double alpha) const {
  const double phi = std::exp(alpha);  // alpha = -inf gives phi = 0
  if (!std::isfinite(phi) && alpha > 0.0) {
    return -std::numeric_limits<double>::infinity();
  }
  const double e0 = std::exp(mu);
  const double e1 = std::exp(mu + beta);
  if (!std::isfinite(e0) || !std::isfinite(e1)) {
    return -std::numeric_limits<double>::infinity();
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < problem.size(); ++i) {
    const double m = problem.exposures[i] * (problem.labels[i] ? e1 : e0);
    if (!(m > 0.0) || !std::isfinite(m)) {
      return -std::numeric_limits<double>::infinity();
    }
    acc += nb_log_pmf_unchecked(static_cast<double>(problem.counts[i]), m, phi,
                                lgamma_y_plus_1[i]);
  }
  return std::isfinite(acc) ? acc
                            : -std::numeric_limits<double>::infinity();
}

LikelihoodContext::ValueGrad LikelihoodContext::value_grad(double mu,
                                                           double beta,
                                                           double alpha) const {
  ValueGrad out{0.0, 0.0, 0.0, 0.0};
  const double phi = std::exp(alpha);
  const double a = 1.0 / phi;
  const double e0 = std::exp(mu);
  const double e1 = std::exp(mu + beta);
  if (!std::isfinite(phi) || !std::isfinite(e0) || !std::isfinite(e1) ||
      !(phi > 0.0)) {
    out.value = -std::numeric_limits<double>::infinity();
    return out;
  }
  double sum_da = 0.0;
  for (std::size_t i = 0; i < problem.size(); ++i) {
    const double m = problem.exposures[i] * (problem.labels[i] ? e1 : e0);
    if (!(m > 0.0) || !std::isfinite(m)) {
      out.value = -std::numeric_limits<double>::infinity();
      return out;
    }
    const double yd = static_cast<double>(problem.counts[i]);
    const double log1p_m_over_a = std::log1p(m / a);
    double ll = lgamma_diff(yd, a) - lgamma_y_plus_1[i] - a * log1p_m_over_a;
    if (yd > 0.0) {
      ll -= yd * std::log1p(a / m);
    }
    out.value += ll;
    const double dmean = (yd - m) / (1.0 + phi * m);
    out.dmu += dmean;
    if (problem.labels[i]) {
      out.dbeta += dmean;
    }
    sum_da += digamma_diff(yd, a) - log1p_m_over_a + (m - yd) / (a + m);
  }
  // dl/dalpha = phi * dl/dphi = -a * sum_i dl_i/da
  out.dalpha = -a * sum_da;
  if (!std::isfinite(out.value)) {
    out.value = -std::numeric_limits<double>::infinity();
  }
  return out;
}

void LikelihoodContext::poisson_grad(double mu, double beta, double* dmu,
                                     double* dbeta) const {
  const double e0 = std::exp(mu);
  const double e1 = std::exp(mu + beta);
  *dmu = 0.0;
  *dbeta = 0.0;
  for (std::size_t i = 0; i < problem.size(); ++i) {
    const double m = problem.exposures[i] * (problem.labels[i] ? e1 : e0);
    const double d = static_cast<double>(problem.counts[i]) - m;
    *dmu += d;
    if (problem.labels[i]) {
      *dbeta += d;
    }
  }
}

}  // namespace detail

}  // namespace nbscreen
