#pragma once

namespace stochabs {

/// Standard normal CDF.
double normal_cdf(double x);

/// Inverse standard normal CDF (Wichura's PPND16), accurate to ~1e-15.
double normal_inv_cdf(double u);

/// Regularized incomplete beta function I_x(a, b).
double incomplete_beta(double a, double b, double x);

/// Two-sided Clopper-Pearson interval for k successes in n trials.
struct BinomialCI {
  double lower = 0.0;
  double upper = 1.0;
};
BinomialCI clopper_pearson(long k, long n, double confidence = 0.95);

}  // namespace stochabs
