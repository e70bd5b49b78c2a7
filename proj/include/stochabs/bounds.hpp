#pragma once

#include "stochabs/kinf.hpp"

namespace stochabs {

/// Probabilistic output-closeness certificate: the sup-norm output mismatch
/// over horizon_Td exceeds epsilon with probability at most delta_hat.
struct ClosenessBound {
  double epsilon = 0.0;
  int horizon_Td = 0;
  double delta_hat = 0.0;
  int case_taken = 1;
  bool vacuous = false;   // V0 already above the level set
  bool clamped = false;   // raw value fell outside [0,1]
  // inputs, kept for reporting
  double V0 = 0.0;
  double kappa_hat = 0.0;
  double psi_hat = 0.0;
};

/// Two-case level-set bound:
///   case 1 (alpha(eps) >= psi_hat/kappa_hat):
///     1 - (1 - V0/alpha(eps)) (1 - psi_hat/alpha(eps))^Td
///   case 2: (V0/alpha(eps))(1-kappa_hat)^Td
///           + (psi_hat/(kappa_hat alpha(eps)))(1-(1-kappa_hat)^Td)
/// psi_hat must already include rho_ext(|nuhat|_inf) + psi.
ClosenessBound closeness_bound(double V0, const PowerFn& alpha, double kappa_hat, double psi_hat,
                               double epsilon, int Td);

/// rho_ext(nu_sup) + psi.
double assemble_psi_hat(const PowerFn& rho_ext, double nu_sup, double psi);

/// Radii add, probabilities add (clamped); horizons must match.
ClosenessBound transitivity(const ClosenessBound& b1, const ClosenessBound& b2);

}  // namespace stochabs
