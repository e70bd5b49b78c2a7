#include "stochabs/kinf.hpp"

#include <cmath>
#include <limits>

namespace stochabs {

double PowerFn::operator()(double s) const {
  if (s < 0.0) throw std::invalid_argument("PowerFn evaluated at negative argument");
  if (c == 0.0 || s == 0.0) return 0.0;
  if (p == 1.0) return c * s;
  if (p == 2.0) return c * s * s;
  return c * std::pow(s, p);
}

bool operator==(const PowerFn& a, const PowerFn& b) {
  if (a.c == 0.0 && b.c == 0.0) return true;
  return a.c == b.c && a.p == b.p;
}

PowerFn compose(const PowerFn& f, const PowerFn& g) {
  if (f.is_zero() || g.is_zero()) return PowerFn::zero();
  return {f.c * std::pow(g.c, f.p), f.p * g.p};
}

PowerFn inverse(const PowerFn& f) {
  if (f.is_zero()) throw std::invalid_argument("non-invertible gain");
  return {std::pow(1.0 / f.c, 1.0 / f.p), 1.0 / f.p};
}

IdentityVerdict less_than_identity(const PowerFn& f, double strict_tol) {
  if (f.is_zero()) return IdentityVerdict::below;
  if (std::abs(f.p - 1.0) <= strict_tol) {
    if (std::abs(f.c - 1.0) <= strict_tol) return IdentityVerdict::boundary;
    return f.c < 1.0 ? IdentityVerdict::below : IdentityVerdict::above;
  }
  // A genuine power p != 1 always crosses the identity somewhere on (0, inf).
  return IdentityVerdict::above;
}

const char* to_string(IdentityVerdict v) {
  switch (v) {
    case IdentityVerdict::below: return "below";
    case IdentityVerdict::boundary: return "boundary";
    default: return "above";
  }
}

EnvelopeFn plus_identity(const PowerFn& f, double s_max) {
  if (f.is_zero()) return {PowerFn::identity(), 0.0, true};
  if (f.p == 1.0) return {{1.0 + f.c, 1.0}, 0.0, true};
  if (s_max <= 0.0) throw std::invalid_argument("envelope interval must be positive");
  if (f.p > 1.0) {
    // c*s^p <= c*s_max^(p-1) * s on [0, s_max]
    return {{1.0 + f.c * std::pow(s_max, f.p - 1.0), 1.0}, s_max, false};
  }
  // p < 1: s <= s_max^(1-p) * s^p on [0, s_max]
  return {{f.c + std::pow(s_max, 1.0 - f.p), f.p}, s_max, false};
}

EnvelopeFn plus_identity_inverse(const PowerFn& f, double s_max) {
  return plus_identity(inverse(f), s_max);
}

PowerFn minus_identity_inverse(const PowerFn& lambda_bar) {
  if (!lambda_bar.is_linear() || lambda_bar.c <= 1.0)
    throw std::invalid_argument("lambda - Id is not a K-infinity power function");
  return {1.0 / (lambda_bar.c - 1.0), 1.0};
}

PowerFn identity_minus(const PowerFn& f) {
  if (f.is_zero()) return PowerFn::identity();
  if (!f.is_linear() || f.c >= 1.0)
    throw std::invalid_argument("Id - f is not a K-infinity power function");
  return {1.0 - f.c, 1.0};
}

}  // namespace stochabs
