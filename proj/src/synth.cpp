#include "nbscreen/synth.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace nbscreen {

void Priors::validate() const {
  if (!(mu_var > 0.0) || !(alpha_var > 0.0) || !(beta_var > 0.0) ||
      !(exposure_log_var > 0.0)) {
    throw std::invalid_argument("priors: variances must be positive");
  }
  if (delta_prob < 0.0 || delta_prob > 1.0) {
    throw std::invalid_argument("priors: delta_prob must lie in [0, 1]");
  }
  if (n_min < 2 || n_max < n_min || n_max > 10) {
    throw std::invalid_argument("priors: need 2 <= n_min <= n_max <= 10");
  }
}

Theta sample_theta_only(const Priors& priors, RngStream& rng) {
  priors.validate();
  Theta t;
  t.mu = rng.normal(priors.mu_mean, std::sqrt(priors.mu_var));
  const double alpha = rng.normal(priors.alpha_mean, std::sqrt(priors.alpha_var));
  t.phi = std::exp(alpha);
  const bool delta = rng.bernoulli(priors.delta_prob);
  t.beta = delta ? rng.normal(priors.beta_mean, std::sqrt(priors.beta_var)) : 0.0;
  return t;
}

std::pair<Theta, Design> sample_theta(const Priors& priors, RngStream& rng) {
  const Theta t = sample_theta_only(priors, rng);

  Design d;
  d.n1 = static_cast<int>(rng.uniform_int(priors.n_min, priors.n_max));
  d.n2 = static_cast<int>(rng.uniform_int(priors.n_min, priors.n_max));
  d.exposures.resize(static_cast<std::size_t>(d.total()));
  const double log_sd = std::sqrt(priors.exposure_log_var);
  for (double& l : d.exposures) {
    l = rng.lognormal(priors.exposure_log_mean, log_sd);
  }
  return {t, d};
}

Problem generate_problem(const Theta& t, const Design& d, RngStream& rng) {
  if (d.n1 < 1 || d.n2 < 1 ||
      d.exposures.size() != static_cast<std::size_t>(d.total())) {
    throw std::invalid_argument("design: inconsistent sizes");
  }
  Problem p;
  p.counts.resize(d.exposures.size());
  p.exposures = d.exposures;
  p.labels.resize(d.exposures.size());
  for (int i = 0; i < d.total(); ++i) {
    const int x = i < d.n1 ? 0 : 1;
    p.labels[i] = x;
    const double m = mean_function(d.exposures[i], t.mu, t.beta, x);
    p.counts[i] = nb_sample(m, t.phi, rng);
  }
  return p;
}

Design fixed_design(int n1, int n2, ExposureMode mode, const Priors& priors,
                    RngStream& rng) {
  if (n1 < priors.n_min || n1 > priors.n_max || n2 < priors.n_min ||
      n2 > priors.n_max) {
    throw std::invalid_argument("design: group sizes out of range");
  }
  Design d;
  d.n1 = n1;
  d.n2 = n2;
  d.exposures.resize(static_cast<std::size_t>(n1 + n2));
  if (mode == ExposureMode::Constant) {
    for (double& l : d.exposures) {
      l = 1e4;
    }
  } else {
    const double log_sd = std::sqrt(priors.exposure_log_var);
    for (double& l : d.exposures) {
      l = rng.lognormal(priors.exposure_log_mean, log_sd);
    }
  }
  return d;
}

std::string priors_to_json(const Priors& priors) {
  nlohmann::ordered_json j;
  j["mu_mean"] = priors.mu_mean;
  j["mu_var"] = priors.mu_var;
  j["alpha_mean"] = priors.alpha_mean;
  j["alpha_var"] = priors.alpha_var;
  j["delta_prob"] = priors.delta_prob;
  j["beta_mean"] = priors.beta_mean;
  j["beta_var"] = priors.beta_var;
  j["exposure_log_mean"] = priors.exposure_log_mean;
  j["exposure_log_var"] = priors.exposure_log_var;
  j["n_min"] = priors.n_min;
  j["n_max"] = priors.n_max;
  return j.dump(2);
}

Priors priors_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  Priors p;
  p.mu_mean = j.value("mu_mean", p.mu_mean);
  p.mu_var = j.value("mu_var", p.mu_var);
  p.alpha_mean = j.value("alpha_mean", p.alpha_mean);
  p.alpha_var = j.value("alpha_var", p.alpha_var);
  p.delta_prob = j.value("delta_prob", p.delta_prob);
  p.beta_mean = j.value("beta_mean", p.beta_mean);
  p.beta_var = j.value("beta_var", p.beta_var);
  p.exposure_log_mean = j.value("exposure_log_mean", p.exposure_log_mean);
  p.exposure_log_var = j.value("exposure_log_var", p.exposure_log_var);
  p.n_min = j.value("n_min", p.n_min);
  p.n_max = j.value("n_max", p.n_max);
  p.validate();
  return p;
}

Priors load_priors(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("priors: cannot open " + path);
  }
  std::stringstream buf;
  buf << in.rdbuf();
  return priors_from_json(buf.str());
}

void save_priors(const Priors& priors, const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("priors: cannot write " + path);
  }
  out << priors_to_json(priors) << "\n";
}

}  // namespace nbscreen
