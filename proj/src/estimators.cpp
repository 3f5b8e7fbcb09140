#include "nbscreen/estimators.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace nbscreen {

const char* method_name(Method m) {
  switch (m) {
    case Method::MoM:
      return "mom";
    case Method::MLE:
      return "mle";
    case Method::Transformer:
      return "transformer";
  }
  return "?";
}

std::optional<Method> method_from_name(const std::string& name) {
  if (name == "mom") return Method::MoM;
  if (name == "mle") return Method::MLE;
  if (name == "transformer") return Method::Transformer;
  return std::nullopt;
}

namespace {

using Clock = std::chrono::steady_clock;

std::chrono::nanoseconds elapsed_since(Clock::time_point t0) {
  const auto dt = std::chrono::duration_cast<std::chrono::nanoseconds>(
      Clock::now() - t0);
  return dt.count() > 0 ? dt : std::chrono::nanoseconds{1};
}

struct GroupMoments {
  double n = 0.0;
  double sum_y = 0.0;
  double sum_y2 = 0.0;
  double sum_l = 0.0;

  double mean_y() const { return sum_y / n; }
  double mean_l() const { return sum_l / n; }
  double var_y() const { return (sum_y2 - sum_y * sum_y / n) / (n - 1.0); }
};

struct MomCore {
  double mu = 0.0;
  double beta = 0.0;
  double phi = 0.0;
  bool phi_defined = false;  // both groups had >= 2 observations
};

// Shared by estimate_mom and the MLE initializer so both see bit-identical
// starting values.
MomCore mom_core(const Problem& p, bool require_group_pairs) {
  GroupMoments g[2];
  for (std::size_t i = 0; i < p.size(); ++i) {
    GroupMoments& m = g[p.labels[i]];
    const double yd = static_cast<double>(p.counts[i]);
    m.n += 1.0;
    m.sum_y += yd;
    m.sum_y2 += yd * yd;
    m.sum_l += p.exposures[i];
  }
  if (g[0].n == 0.0 || g[1].n == 0.0) {
    throw std::invalid_argument(
        "labels: each group needs at least one observation");
  }
  if (require_group_pairs && (g[0].n < 2.0 || g[1].n < 2.0)) {
    throw std::invalid_argument(
        "labels: method of moments needs at least 2 observations per group");
  }
  if (g[0].sum_y == 0.0) {
    throw EstimationError("counts: group x=0 has zero mean, log undefined");
  }
  if (g[1].sum_y == 0.0) {
    throw EstimationError("counts: group x=1 has zero mean, log undefined");
  }
  MomCore out;
  out.mu = std::log(g[0].mean_y() / g[0].mean_l());
  out.beta = std::log(g[1].mean_y() / g[1].mean_l()) - out.mu;
  if (g[0].n >= 2.0 && g[1].n >= 2.0) {
    const double phi1 =
        (g[0].var_y() - g[0].mean_y()) / (g[0].mean_y() * g[0].mean_y());
    const double phi2 =
        (g[1].var_y() - g[1].mean_y()) / (g[1].mean_y() * g[1].mean_y());
    out.phi = std::max(0.0, 0.5 * (phi1 + phi2));
    out.phi_defined = true;
  }
  return out;
}

}  // namespace

Estimate estimate_mom(const Problem& p) {
  const auto t0 = Clock::now();
  p.validate();
  const MomCore core = mom_core(p, /*require_group_pairs=*/true);
  Estimate est;
  est.theta_hat = Theta{core.mu, core.beta, core.phi};
  est.converged = true;
  est.iterations = 0;
  est.method = Method::MoM;
  est.grad_inf_norm = 0.0;
  est.runtime = elapsed_since(t0);
  return est;
}

namespace {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<double, 9>;

inline Vec3 mat_vec(const Mat3& m, const Vec3& v) {
  return {m[0] * v[0] + m[1] * v[1] + m[2] * v[2],
          m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
          m[6] * v[0] + m[7] * v[1] + m[8] * v[2]};
}

inline double dot(const Vec3& a, const Vec3& b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

inline double inf_norm(const Vec3& v) {
  return std::max({std::fabs(v[0]), std::fabs(v[1]), std::fabs(v[2])});
}

constexpr Mat3 kIdentity = {1, 0, 0, 0, 1, 0, 0, 0, 1};

// Inverse-Hessian BFGS update: H <- (I - r s y')H(I - r y s') + r s s'.
void bfgs_update(Mat3& h, const Vec3& s, const Vec3& y) {
  const double sy = dot(s, y);
  const double norm_s = std::sqrt(dot(s, s));
  const double norm_y = std::sqrt(dot(y, y));
  if (!(sy > 1e-12 * norm_s * norm_y)) {
    return;  // curvature too weak, keep previous H
  }
  const double rho = 1.0 / sy;
  const Vec3 hy = mat_vec(h, y);
  const double yhy = dot(y, hy);
  Mat3 next;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double v = h[3 * i + j];
      v -= rho * (s[i] * hy[j] + hy[i] * s[j]);
      v += rho * (1.0 + rho * yhy) * s[i] * s[j];
      next[3 * i + j] = v;
    }
  }
  h = next;
}

}  // namespace

Estimate estimate_mle(const Problem& p, const MleOptions& opts) {
  const auto t0 = Clock::now();
  if (opts.max_iterations < 1) {
    throw std::invalid_argument("max_iterations: must be >= 1");
  }
  if (!(opts.grad_tolerance > 0.0)) {
    throw std::invalid_argument("grad_tolerance: must be positive");
  }
  p.validate();
  const detail::LikelihoodContext ctx(p);

  // Degenerate groups are a hard error; the likelihood has no interior
  // maximum when a group mean must be driven to zero.
  const MomCore core = mom_core(p, /*require_group_pairs=*/false);

  Vec3 x;
  if (opts.init.has_value()) {
    const Theta& t = *opts.init;
    if (t.phi < 0.0 || !std::isfinite(t.mu) || !std::isfinite(t.beta)) {
      throw std::invalid_argument("init: invalid starting point");
    }
    x = {t.mu, t.beta, std::log(std::max(t.phi, 1e-4))};
  } else {
    x = {core.mu, core.beta,
         std::log(core.phi_defined ? std::max(core.phi, 1e-4) : 1e-4)};
  }

  auto eval = ctx.value_grad(x[0], x[1], x[2]);
  if (!std::isfinite(eval.value)) {
    throw EstimationError("init: log-likelihood not finite at starting point");
  }

  // Seed the inverse Hessian with curvature scales: the analytic Fisher
  // diagonal for (mu, beta) and a finite-difference second derivative for
  // alpha. Count magnitudes make the problem badly conditioned otherwise.
  auto seed_h = [&](const Vec3& at) {
    const double phi = std::exp(at[2]);
    const double e0 = std::exp(at[0]);
    const double e1 = std::exp(at[0] + at[1]);
    double f00 = 0.0;
    double f11 = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double m = p.exposures[i] * (p.labels[i] ? e1 : e0);
      const double w = m / (1.0 + phi * m);
      f00 += w;
      if (p.labels[i]) {
        f11 += w;
      }
    }
    const double ha = 1e-3;
    const auto up = ctx.value_grad(at[0], at[1], at[2] + ha);
    const auto down = ctx.value_grad(at[0], at[1], at[2] - ha);
    double f22 = -(up.dalpha - down.dalpha) / (2.0 * ha);
    if (!std::isfinite(f22) || f22 <= 0.0) {
      f22 = 1.0;
    }
    auto inv_clamped = [](double f) {
      return 1.0 / std::min(std::max(f, 1e-8), 1e12);
    };
    Mat3 seeded = {inv_clamped(f00), 0, 0, 0, inv_clamped(f11), 0,
                   0,                0, inv_clamped(f22)};
    return seeded;
  };

  Vec3 best_x = x;
  double best_ll = eval.value;

  Mat3 h = seed_h(x);
  bool converged = false;
  int iter = 0;
  int resets = 0;
  constexpr double kArmijo = 1e-4;

  // Quasi-Newton ascent until the Newton basin, then a score-equation
  // Newton finish below. The value-based line search cannot resolve
  // likelihood changes near the optimum, the gradient can.
  const double newton_gate =
      1e-3 * std::max(1.0, inf_norm({eval.dmu, eval.dbeta, eval.dalpha}));
  const int bfgs_budget = std::max(0, opts.max_iterations - 10);

  while (iter < bfgs_budget) {
    Vec3 grad = {eval.dmu, eval.dbeta, eval.dalpha};
    if (inf_norm(grad) < opts.grad_tolerance) {
      converged = true;
      break;
    }
    if (inf_norm(grad) < newton_gate) {
      break;
    }
    ++iter;

    // Minimize F = -ll; gF = -grad, direction d = -H gF = H grad.
    Vec3 dir = mat_vec(h, grad);
    double slope = -dot(grad, dir);  // gF' d, must be negative
    if (!(slope < 0.0)) {
      h = seed_h(x);
      dir = mat_vec(h, grad);
      slope = -dot(grad, dir);
      if (!(slope < 0.0)) {
        h = kIdentity;
        dir = grad;
        slope = -dot(grad, grad);
      }
    }

    double step = 1.0;
    bool accepted = false;
    decltype(eval) trial{};
    Vec3 xt{};
    for (int halving = 0; halving < 60; ++halving) {
      xt = {x[0] + step * dir[0], x[1] + step * dir[1], x[2] + step * dir[2]};
      trial = ctx.value_grad(xt[0], xt[1], xt[2]);
      if (std::isfinite(trial.value) &&
          -trial.value <= -eval.value + kArmijo * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      if (resets < 2) {
        ++resets;
        h = seed_h(x);  // curvature re-estimate, then keep iterating
        continue;
      }
      break;  // stalled; best iterate is returned below
    }

    const Vec3 s = {xt[0] - x[0], xt[1] - x[1], xt[2] - x[2]};
    const Vec3 y = {-(trial.dmu - eval.dmu), -(trial.dbeta - eval.dbeta),
                    -(trial.dalpha - eval.dalpha)};
    bfgs_update(h, s, y);
    x = xt;
    eval = trial;
    if (eval.value > best_ll) {
      best_ll = eval.value;
      best_x = x;
    }
  }

  // Newton endgame on the score equations. Close to the optimum the
  // likelihood is flat to machine precision, so a value-based line search
  // cannot steer; the gradient is still well resolved and a damped Newton
  // iteration with a finite-difference Hessian drives it below tolerance.
  {
    auto solve_newton = [](const Mat3& hess, const Vec3& g, Vec3& out) {
      // solve (-hess) d = g by Gaussian elimination with partial pivoting
      double m[3][4];
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
          m[r][c] = -hess[3 * r + c];
        }
        m[r][3] = g[static_cast<std::size_t>(r)];
      }
      for (int col = 0; col < 3; ++col) {
        int pivot = col;
        for (int r = col + 1; r < 3; ++r) {
          if (std::fabs(m[r][col]) > std::fabs(m[pivot][col])) {
            pivot = r;
          }
        }
        if (std::fabs(m[pivot][col]) < 1e-300) {
          return false;
        }
        std::swap(m[col], m[pivot]);
        for (int r = col + 1; r < 3; ++r) {
          const double f = m[r][col] / m[col][col];
          for (int c = col; c < 4; ++c) {
            m[r][c] -= f * m[col][c];
          }
        }
      }
      for (int r = 2; r >= 0; --r) {
        double acc = m[r][3];
        for (int c = r + 1; c < 3; ++c) {
          acc -= m[r][c] * out[static_cast<std::size_t>(c)];
        }
        out[static_cast<std::size_t>(r)] = acc / m[r][r];
      }
      return std::isfinite(out[0]) && std::isfinite(out[1]) &&
             std::isfinite(out[2]);
    };

    while (iter < opts.max_iterations && !converged) {
      Vec3 grad = {eval.dmu, eval.dbeta, eval.dalpha};
      const double gnorm = inf_norm(grad);
      if (gnorm < opts.grad_tolerance) {
        converged = true;
        break;
      }
      ++iter;
      Mat3 hess;
      bool ok = true;
      for (int k = 0; k < 3 && ok; ++k) {
        const double step =
            1e-5 * std::max(1.0, std::fabs(x[static_cast<std::size_t>(k)]));
        Vec3 hi = x;
        Vec3 lo = x;
        hi[static_cast<std::size_t>(k)] += step;
        lo[static_cast<std::size_t>(k)] -= step;
        const auto up = ctx.value_grad(hi[0], hi[1], hi[2]);
        const auto down = ctx.value_grad(lo[0], lo[1], lo[2]);
        ok = std::isfinite(up.value) && std::isfinite(down.value);
        hess[static_cast<std::size_t>(3 * 0 + k)] =
            (up.dmu - down.dmu) / (2.0 * step);
        hess[static_cast<std::size_t>(3 * 1 + k)] =
            (up.dbeta - down.dbeta) / (2.0 * step);
        hess[static_cast<std::size_t>(3 * 2 + k)] =
            (up.dalpha - down.dalpha) / (2.0 * step);
      }
      Vec3 delta{};
      if (!ok || !solve_newton(hess, grad, delta)) {
        break;
      }
      const double dn = inf_norm(delta);
      if (dn > 100.0) {
        const double shrink = 100.0 / dn;
        delta = {delta[0] * shrink, delta[1] * shrink, delta[2] * shrink};
      }
      bool improved = false;
      double damp = 1.0;
      for (int halving = 0; halving < 30; ++halving) {
        const Vec3 xt = {x[0] + damp * delta[0], x[1] + damp * delta[1],
                         x[2] + damp * delta[2]};
        const auto trial = ctx.value_grad(xt[0], xt[1], xt[2]);
        if (std::isfinite(trial.value) &&
            inf_norm({trial.dmu, trial.dbeta, trial.dalpha}) < gnorm) {
          x = xt;
          eval = trial;
          improved = true;
          break;
        }
        damp *= 0.5;
      }
      if (!improved) {
        break;
      }
      if (eval.value > best_ll) {
        best_ll = eval.value;
        best_x = x;
      }
    }
  }

  if (!converged) {
    converged =
        inf_norm({eval.dmu, eval.dbeta, eval.dalpha}) < opts.grad_tolerance;
  }
  // The converged point wins; otherwise fall back to the best iterate seen.
  const Vec3 final_x = converged ? x : best_x;
  const double final_ll = converged ? eval.value : best_ll;
  const double final_grad =
      converged ? inf_norm({eval.dmu, eval.dbeta, eval.dalpha})
                : [&] {
                    const auto g = ctx.value_grad(best_x[0], best_x[1], best_x[2]);
                    return inf_norm({g.dmu, g.dbeta, g.dalpha});
                  }();

  // Boundary candidate: at phi = 0 the two-group Poisson MLE is closed-form
  // and coincides with the method-of-moments mean estimates.
  const double ll_boundary =
      ctx.value(core.mu, core.beta, -std::numeric_limits<double>::infinity());

  Estimate est;
  est.method = Method::MLE;
  est.iterations = iter;
  if (ll_boundary >= final_ll) {
    est.theta_hat = Theta{core.mu, core.beta, 0.0};
    double dmu = 0.0;
    double dbeta = 0.0;
    ctx.poisson_grad(core.mu, core.beta, &dmu, &dbeta);
    est.grad_inf_norm = std::max(std::fabs(dmu), std::fabs(dbeta));
    est.converged = est.grad_inf_norm < opts.grad_tolerance;
  } else {
    est.theta_hat = Theta::from_alpha(final_x[0], final_x[1], final_x[2]);
    est.grad_inf_norm = final_grad;
    est.converged = converged;
  }
  est.runtime = elapsed_since(t0);
  return est;
}

}  // namespace nbscreen
