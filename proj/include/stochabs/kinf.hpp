#pragma once

#include <stdexcept>
#include <string>

namespace stochabs {

/// A class-K-infinity function of power form c*s^p (c > 0, p > 0), or the
/// zero function when c == 0. The family is closed under composition and
/// inversion, which makes gain cycle conditions decidable exactly.
struct PowerFn {
  double c = 0.0;
  double p = 1.0;

  static PowerFn zero() { return {0.0, 1.0}; }
  static PowerFn identity() { return {1.0, 1.0}; }
  static PowerFn linear(double coef) { return {coef, 1.0}; }
  static PowerFn quadratic(double coef) { return {coef, 2.0}; }

  bool is_zero() const { return c == 0.0; }
  bool is_linear() const { return p == 1.0; }

  /// Evaluate at s >= 0.
  double operator()(double s) const;
};

bool operator==(const PowerFn& a, const PowerFn& b);

/// f after g: (f o g)(s) = f(g(s)). The zero function absorbs.
PowerFn compose(const PowerFn& f, const PowerFn& g);

/// Functional inverse; throws on the zero function ("non-invertible gain").
PowerFn inverse(const PowerFn& f);

enum class IdentityVerdict { below, boundary, above };

/// Decides f(s) < s for all s > 0. Exact for power forms: true only for the
/// zero function or linear coefficients below 1; a coefficient within
/// strict_tol of 1 (at p = 1) is reported as boundary rather than accepted.
IdentityVerdict less_than_identity(const PowerFn& f, double strict_tol = 1e-9);

const char* to_string(IdentityVerdict v);

/// A power-form bound valid on [0, valid_to]; exact == true means equality
/// everywhere (valid_to is then infinite).
struct EnvelopeFn {
  PowerFn fn;
  double valid_to = 0.0;
  bool exact = false;
};

/// Id + f. Exact when f is linear; otherwise a pointwise upper envelope on
/// [0, s_max].
EnvelopeFn plus_identity(const PowerFn& f, double s_max = 1.0);

/// Id + f^{-1}, same closure rules as plus_identity.
EnvelopeFn plus_identity_inverse(const PowerFn& f, double s_max = 1.0);

/// (lambda - Id)^{-1} for linear lambda with coefficient > 1.
PowerFn minus_identity_inverse(const PowerFn& lambda_bar);

/// Id - f for linear f with coefficient < 1 (result stays in K-infinity).
PowerFn identity_minus(const PowerFn& f);

}  // namespace stochabs
