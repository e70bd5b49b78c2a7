#pragma once

#include <optional>
#include <string>
#include <vector>

#include "stochabs/bounds.hpp"
#include "stochabs/scenario.hpp"
#include "stochabs/sim.hpp"
#include "stochabs/smallgain.hpp"

namespace stochabs {

struct PipelineOptions {
  std::string out_dir = "out";
  std::vector<std::string> stages;  // empty = verify,abstract,compose,bound,synth,sim
  bool strict = false;
  std::optional<std::uint64_t> seed;
  std::optional<int> runs;
  int jobs = 1;
  bool quiet = false;
};

struct BoundRow {
  double epsilon = 0.0;
  std::optional<ClosenessBound> stage1;  // concrete vs reduced
  std::optional<ClosenessBound> stage2;  // (reduced|concrete) vs finite
  std::optional<ClosenessBound> total;   // transitivity of the two stages
};

struct PipelineData {
  // verify
  std::optional<MarginReport> reduced_margin;
  std::optional<ResidualReport> structural;
  std::optional<MarginReport> finite_margin;
  std::optional<QuadSPSF> reduced_spsf;  // per-subsystem template
  std::optional<QuadSPSF> finite_spsf;
  // abstract
  std::optional<InternalAlignment> alignment;
  std::optional<Grid> synth_internal_grid;
  std::optional<FiniteMDP> mdp;
  // compose
  std::optional<GainMatrix> gains_stage1, gains_stage2;
  std::optional<CycleReport> cycles_stage1, cycles_stage2;
  std::optional<NetworkSSF> ssf_stage1, ssf_stage2;
  // bound
  std::vector<BoundRow> bounds;
  double v0_stage1 = 0.0, v0_stage2 = 0.0;
  // synth
  std::optional<Policy> policy;
  double v0_policy = 0.0;
  // sim
  std::optional<TrajectoryBundle> bundle;
  std::optional<SPSFViolationReport> reduced_validation, finite_validation;

  int exit_code = 0;
  std::vector<std::string> warnings;
};

/// Certificate templates straight from the scenario (formula gains, or the
/// declared paper targets under pin_gains).
QuadSPSF make_reduced_spsf(const Scenario& scn);
QuadSPSF make_finite_spsf(const Scenario& scn);

/// Composed stage certificates for `copies` identical subsystems; used by the
/// pipeline and by sweeps over the network size.
NetworkSSF compose_stage1(const Scenario& scn, int copies, bool allow_boundary,
                          GainMatrix* gains_out = nullptr, CycleReport* cycles_out = nullptr);
NetworkSSF compose_stage2(const Scenario& scn, int copies, bool allow_boundary,
                          GainMatrix* gains_out = nullptr, CycleReport* cycles_out = nullptr);

/// Per-epsilon bound rows (both stages and the transitivity total).
std::vector<BoundRow> bound_table(const Scenario& scn, const NetworkSSF* ssf1,
                                  const NetworkSSF* ssf2, const std::vector<double>& epsilons,
                                  double v0_stage1, double v0_stage2);

PipelineData run_pipeline(const Scenario& scn, const PipelineOptions& opts);

enum class SweepVariable { copies, epsilon, delta };

/// delta_hat surface over the sweep variable; for sweeps over the subsystem
/// count the certificate composition is re-run per network size.
void run_sweep(const Scenario& scn, SweepVariable over, const std::vector<double>& values,
               const std::string& out_path, bool strict);

}  // namespace stochabs
