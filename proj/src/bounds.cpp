#include "stochabs/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace stochabs {

ClosenessBound closeness_bound(double V0, const PowerFn& alpha, double kappa_hat, double psi_hat,
                               double epsilon, int Td) {
  if (kappa_hat <= 0.0 || kappa_hat >= 1.0) throw std::invalid_argument("kappa_hat must lie in (0,1)");
  if (epsilon <= 0.0) throw std::invalid_argument("epsilon must be positive");
  if (psi_hat < 0.0 || V0 < 0.0) throw std::invalid_argument("V0 and psi_hat must be nonnegative");
  if (Td < 0) throw std::invalid_argument("horizon must be nonnegative");

  ClosenessBound b;
  b.epsilon = epsilon;
  b.horizon_Td = Td;
  b.V0 = V0;
  b.kappa_hat = kappa_hat;
  b.psi_hat = psi_hat;

  const double level = alpha(epsilon);
  if (level <= 0.0) throw std::invalid_argument("alpha(epsilon) must be positive");

  double raw;
  if (level >= psi_hat / kappa_hat) {
    b.case_taken = 1;
    const double head = 1.0 - V0 / level;
    if (head < 0.0) {
      b.vacuous = true;
      raw = 1.0;
    } else {
      raw = 1.0 - head * std::pow(1.0 - psi_hat / level, Td);
    }
  } else {
    b.case_taken = 2;
    const double decay = std::pow(1.0 - kappa_hat, Td);
    raw = (V0 / level) * decay + (psi_hat / (kappa_hat * level)) * (1.0 - decay);
  }
  b.delta_hat = std::clamp(raw, 0.0, 1.0);
  b.clamped = raw != b.delta_hat;
  return b;
}

double assemble_psi_hat(const PowerFn& rho_ext, double nu_sup, double psi) {
  return rho_ext(nu_sup) + psi;
}

ClosenessBound transitivity(const ClosenessBound& b1, const ClosenessBound& b2) {
  if (b1.horizon_Td != b2.horizon_Td) throw std::invalid_argument("transitivity needs matching horizons");
  ClosenessBound b;
  b.epsilon = b1.epsilon + b2.epsilon;
  b.horizon_Td = b1.horizon_Td;
  const double raw = b1.delta_hat + b2.delta_hat;
  b.delta_hat = std::min(1.0, raw);
  b.clamped = raw > 1.0;
  b.case_taken = 0;
  return b;
}

}  // namespace stochabs
