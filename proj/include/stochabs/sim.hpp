#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "stochabs/fmdp.hpp"
#include "stochabs/model.hpp"
#include "stochabs/spsf.hpp"
#include "stochabs/synth.hpp"

namespace stochabs {

/// Infinite (reduced-order) abstraction level: one abstract subsystem per
/// concrete one, wired with the concrete topology, refined through the
/// reduced interface of its certificate.
struct ReducedLevel {
  std::vector<NonlinearSCS> subsystems;
  std::vector<QuadSPSF> spsfs;
  Vector initial;  // stacked abstract initial state
};

/// Finite abstraction level over the level below it (the reduced one when
/// present, the concrete otherwise). Policies, when given, drive the whole
/// stack; refinement happens through the finite interface.
struct FiniteLevel {
  std::vector<Grid> grids;
  std::vector<QuadSPSF> spsfs;
  std::vector<PolicyLookup> lookups;  // empty -> zero abstract input
};

struct Stack {
  const Interconnection* concrete = nullptr;
  std::optional<ReducedLevel> reduced;
  std::optional<FiniteLevel> finite;
};

struct SimOptions {
  int horizon = 0;
  int runs = 0;
  std::uint64_t seed = 0;
  int jobs = 1;
  int record_traces = 0;    // keep output traces of the first k runs
  Vector initial;           // stacked concrete initial state
  Vector safe_lower, safe_upper;  // optional box on external outputs
};

struct TrajectoryBundle {
  std::uint64_t seed = 0;
  int runs = 0;
  int horizon = 0;
  std::vector<std::string> pair_names;
  std::vector<std::vector<double>> sup_dev;  // [pair][run]
  std::vector<std::uint8_t> abstract_exited;
  std::vector<std::uint8_t> concrete_safe;   // every subsystem inside the box
  std::vector<int> safe_subsystems;          // per run, for marginal rates
  bool has_safety = false;
  double noise_checksum = 0.0;  // sum of run-0 noise draws (coupling witness)
  std::vector<std::string> level_names;
  /// Stacked output traces of the first record_traces runs, horizon+1 points
  /// each: traces[run][level][step].
  std::vector<std::vector<std::vector<Vector>>> traces;

  int pair_index(const std::string& name) const;
};

/// Steps every level under identical noise draws (one Philox stream per run,
/// addressed by step and channel), wiring internal inputs per level from that
/// level's own outputs, and records sup-norm output deviations per level pair.
TrajectoryBundle coupled_simulate(const Stack& stack, const SimOptions& opts);

struct DeviationEstimate {
  double frequency = 0.0;
  long exceed = 0;
  long runs = 0;
  double ci_lower = 0.0, ci_upper = 1.0;  // Clopper-Pearson 95%
};

/// Fraction of runs with sup deviation >= epsilon for the named level pair.
DeviationEstimate empirical_deviation_prob(const TrajectoryBundle& bundle,
                                           const std::string& pair, double epsilon);

struct SPSFValidationOptions {
  int points = 1000;
  int draws = 10000;
  std::uint64_t seed = 7;
  Vector x_lo, x_hi;      // concrete state box
  Vector xh_lo, xh_hi;    // abstract state box
  Vector nu_lo, nu_hi;    // abstract external input box
  Vector w_lo, w_hi;      // internal input box (used for both w and what)
};

struct SPSFViolationReport {
  int points = 0;
  int violations = 0;
  double worst_excess = 0.0;  // max of (observed - bound), negative when clean
  bool exact = false;
};

/// Reduced-order route: the abstract step is affine in the shared noise, so
/// the conditional expectation is evaluated in closed form (mean term plus
/// the trace of the mismatched-noise quadratic) and compared against
/// max(kappa(S), rho_int(|w - what|_inf), rho_ext(|nuhat|_inf), psi).
SPSFViolationReport validate_spsf_reduced(const NonlinearSCS& sys, const NonlinearSCS& abs_sys,
                                          const QuadSPSF& spsf,
                                          const SPSFValidationOptions& opts);

/// Finite route: Monte Carlo over shared noise draws with the quantizer
/// extended as an unbounded lattice of the grid's spacing; a point counts as
/// violated only beyond three standard errors.
SPSFViolationReport validate_spsf_finite(const NonlinearSCS& sys, const Grid& grid,
                                         const QuadSPSF& spsf,
                                         const SPSFValidationOptions& opts);

}  // namespace stochabs
