#pragma once

#include <optional>
#include <string>
#include <vector>

#include "stochabs/kinf.hpp"
#include "stochabs/spsf.hpp"

namespace stochabs {

enum class Flavor { infinite, finite };

/// Extras of the finite-interconnection gain construction. mu(a,b) is the
/// quantization radius of the internal channel from subsystem a into b; the
/// all-zero matrix (exactly aligned grids) degenerates the finite gains to
/// the infinite ones.
struct FiniteExtras {
  PowerFn delta_tilde_f = PowerFn::linear(1.0);
  PowerFn bar_lambda = PowerFn::linear(2.0);
  Matrix mu;
};

struct GainMatrix {
  int N = 0;
  std::vector<PowerFn> entries;  // row-major N x N, entry(i,j) = kappa_ij
  std::vector<PowerFn> sigmas;   // default identity
  Flavor flavor = Flavor::infinite;
  std::optional<FiniteExtras> extras;

  const PowerFn& entry(int i, int j) const { return entries[i * N + j]; }
  PowerFn& entry(int i, int j) { return entries[i * N + j]; }
  double mu_into(int i) const;  // max_{j != i} mu(j, i), 0 without extras
};

/// Gain matrix of the small-gain assumption: diagonal kappa_i; off-diagonal
/// rho_int_i o alpha_j^{-1} (infinite flavor), additionally inflated by
/// (Id+delta_f) o . o bar_lambda when the receiving row has a nonzero
/// quantization radius (finite flavor). adjacency[i] lists the subsystems
/// feeding i; empty adjacency means fully interconnected.
GainMatrix build_gains(const std::vector<QuadSPSF>& spsfs, Flavor flavor,
                       const std::optional<FiniteExtras>& extras = std::nullopt,
                       const std::vector<std::vector<int>>& adjacency = {});

struct CycleRow {
  std::vector<int> vertices;
  PowerFn composed;
  IdentityVerdict verdict = IdentityVerdict::below;
};

struct CycleReport {
  CheckVerdict verdict = CheckVerdict::satisfied;
  std::vector<int> witness;   // worst cycle
  PowerFn witness_fn;
  std::vector<CycleRow> rows; // all enumerated cycles (empty in reduction mode)
  bool used_reduction = false;
  double max_cycle_mean = 0.0;  // geometric, reduction mode only
};

/// Decides the cycle condition. Up to `cap` subsystems every simple cycle is
/// enumerated and composed exactly; beyond that, all-linear gain matrices
/// reduce to the max-algebra spectral radius (maximum geometric cycle mean,
/// Karp's algorithm), which is equivalent for linear gains.
CycleReport verify_cycle_condition(const GainMatrix& G, double strict_tol = 1e-9, int cap = 12);

struct SigmaApplication {
  GainMatrix conjugated;
  CheckVerdict max_verdict = CheckVerdict::satisfied;  // max_ij entry < Id
};

/// Conjugates the matrix to sigma_i^{-1} o kappa_ij o sigma_j and decides the
/// pointwise-max condition. Throws "max sigma^{-1} not concave" when some
/// sigma_i^{-1} is superlinear (sigma exponent < 1).
SigmaApplication apply_sigmas(const GainMatrix& G, const std::vector<PowerFn>& sigmas);

/// Log-spaced search over linear sigma coefficients for small networks when
/// identity sigmas fail the max condition.
std::optional<std::vector<PowerFn>> search_linear_sigmas(const GainMatrix& G, int steps = 13);

/// Composed network-level certificate V(x, xhat) = max_i sigma_i^{-1}(S_i).
struct NetworkSSF {
  std::vector<QuadSPSF> parts;
  std::vector<PowerFn> sigmas;
  PowerFn alpha, kappa, rho_ext;
  double psi = 0.0;
  Flavor flavor = Flavor::infinite;
  bool boundary = false;  // composed under a boundary small-gain verdict
};

/// Builds the composed certificate. Requires the cycle condition to hold;
/// a boundary verdict needs allow_boundary and is carried as a caveat.
NetworkSSF compose_ssf(const std::vector<QuadSPSF>& spsfs, const GainMatrix& G,
                       bool allow_boundary = false);

double evaluate_ssf(const NetworkSSF& ssf, const Vector& x, const Vector& x_hat);

}  // namespace stochabs
