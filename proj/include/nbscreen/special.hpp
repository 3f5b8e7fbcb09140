#pragma once

namespace nbscreen {

// Natural log of the gamma function, x > 0. Lanczos approximation
// (g = 7, nine coefficients); relative error stays below 1e-13 on
// [1e-3, 1e8]. See docs/numerics.md for the coefficient table.
double lgamma_fn(double x);

// Digamma psi(x), x > 0. Recurrence shifts the argument above 10, then a
// seven-term asymptotic series. Absolute error < 1e-12 for x >= 1e-3.
double digamma(double x);

// lnGamma(y + a) - lnGamma(a) for integer y >= 0 and a > 0, stable for
// large a where the direct difference cancels.
double lgamma_diff(double y, double a);

// psi(y + a) - psi(a) for integer y >= 0 and a > 0, same stability notes.
double digamma_diff(double y, double a);

// Standard normal CDF / survival function, built on erfc.
double normal_cdf(double x);
double normal_sf(double x);

// Two-sided p-value 2 * (1 - Phi(|z|)).
double normal_two_sided_p(double z);

// Upper regularized incomplete gamma Q(a, x) via power series or
// continued fraction, whichever converges.
double gamma_q(double a, double x);

// Survival function of chi-squared with one degree of freedom, Q(1/2, x/2).
double chi2_1_sf(double x);

}
