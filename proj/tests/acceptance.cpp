// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Expects the scenario directory as argv[1].

#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "case_studies.hpp"
#include "stochabs/bounds.hpp"
#include "stochabs/fmdp.hpp"
#include "stochabs/pipeline.hpp"
#include "stochabs/rng.hpp"
#include "stochabs/scenario.hpp"
#include "stochabs/sim.hpp"
#include "stochabs/smallgain.hpp"
#include "stochabs/synth.hpp"

using namespace stochabs;

namespace {

int g_failures = 0;

struct Criterion {
  int index;
  const char* name;
  double budget_s;
};

template <typename Fn>
void run_criterion(const Criterion& c, Fn&& body) {
  const auto t0 = std::chrono::steady_clock::now();
  bool pass = false;
  std::string detail;
  try {
    detail = body();
    pass = true;
  } catch (const std::exception& e) {
    detail = e.what();
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (secs > c.budget_s) {
    pass = false;
    detail += " [over runtime budget]";
  }
  std::printf("[%s] criterion %d (%s): %s (%.1f s)\n", pass ? "PASS" : "FAIL", c.index, c.name,
              detail.c_str(), secs);
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::runtime_error(msg);
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

QuadSPSF paper_stage1_spsf() {
  QuadSPSF s;
  s.M = Matrix::Identity(5, 5);
  s.P = Matrix::Constant(5, 1, 1.0);
  s.alpha = PowerFn::quadratic(0.2);
  s.kappa = PowerFn::linear(0.99);
  s.rho_int = PowerFn::quadratic(0.2);
  s.rho_ext = PowerFn::zero();
  s.psi = 0.0;
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  const std::string scen_dir = argc > 1 ? argv[1] : "scenarios";
  const int jobs = 2;

  // shared pipeline runs (criteria 4 and 9 reuse the room pipeline)
  Scenario rooms = load_scenario(scen_dir + "/rooms_desk.scn");
  Scenario network = load_scenario(scen_dir + "/network_desk.scn");

  run_criterion({1, "certificate reproduction", 1.0}, [&] {
    const auto sys = cs::network_unit(20);
    const auto abs = cs::network_reduced(20);
    const auto cert = cs::network_cert(20);
    const auto reduced_margin = check_reduced_block_inequality(sys, abs, cert.M, cert.K, cert.L1, cert.P, cert.R_tilde,
                                 cert.kappa_hat, cert.pi);
    require(reduced_margin.verdict == CheckVerdict::satisfied,
            fmt("block inequality margin %.3g not satisfied", reduced_margin.margin));
    const auto structural = check_structural(sys, abs, cert.P, cert.Q, cert.S, cert.L1, cert.L2);
    double worst = 0.0;
    for (const auto& e : structural.entries) worst = std::max(worst, e.residual);
    require(worst <= 1e-12, fmt("structural residual %.3g above machine zero", worst));
    const auto room88 = check_finite_block_inequality(cs::room_unit(), cs::scalar(1.0), cs::scalar(0.0), 0.48, 1.0);
    require(std::abs(room88.margin) <= 1e-9,
            fmt("room margin %.3g outside the 1e-9 boundary band", room88.margin));
    return fmt("margin %.3g, residuals <= %.1g, room margin %.1g", reduced_margin.margin, worst,
               room88.margin);
  });

  run_criterion({2, "gain algebra", 1.0}, [&] {
    const std::vector<QuadSPSF> spsfs(20, paper_stage1_spsf());
    const GainMatrix g = build_gains(spsfs, Flavor::infinite);
    require(g.entry(0, 0).c == 0.99 && g.entry(0, 0).p == 1.0, "diagonal gain not 0.99 s");
    require(std::abs(g.entry(0, 1).c - 1.0) <= 1e-12 && g.entry(0, 1).p == 1.0,
            fmt("cross gain (%.17g, %.17g) not the identity", g.entry(0, 1).c, g.entry(0, 1).p));

    const std::vector<QuadSPSF> three(3, paper_stage1_spsf());
    const CycleReport rep = verify_cycle_condition(build_gains(three, Flavor::infinite));
    require(rep.verdict == CheckVerdict::boundary, "cycle verdict is not boundary");
    require(rep.witness.size() == 2, "witness cycle does not have length 2");

    // sqrt/quadratic example: symbolic verdicts against a numeric oracle
    std::mt19937_64 rng(7331);
    std::uniform_real_distribution<double> mag(0.05, 2.0);
    for (int trial = 0; trial < 20; ++trial) {
      const double b1 = mag(rng), b2 = mag(rng), L = mag(rng);
      std::vector<QuadSPSF> pair(2, paper_stage1_spsf());
      pair[0].kappa = PowerFn::linear(0.5);
      pair[1].kappa = PowerFn::linear(0.5);
      GainMatrix gm = build_gains(pair, Flavor::infinite);
      gm.entry(0, 1) = PowerFn{b1, 0.5};
      gm.entry(1, 0) = PowerFn{b2 * L, 2.0};
      const CycleReport cy = verify_cycle_condition(gm);
      PowerFn cyc1_mut;
      bool found = false;
      for (const auto& row : cy.rows)
        if (row.vertices.size() == 2) {
          cyc1_mut = row.composed;
          found = true;
        }
      require(found, "two-subsystem cycle missing from the report");
      const PowerFn cyc1 = cyc1_mut;
      // the other rotation of the same cycle
      const PowerFn cyc2 = compose(gm.entry(1, 0), gm.entry(0, 1));
      require(std::abs(cyc1.c - b1 * std::sqrt(b2 * L)) <= 1e-12 * std::max(1.0, cyc1.c),
              "first cycle coefficient differs from |b1| sqrt(|b2| L)");
      require(std::abs(cyc2.c - b2 * L * b1 * b1) <= 1e-12 * std::max(1.0, cyc2.c),
              "second cycle coefficient differs from b1^2 |b2| L");
      for (const PowerFn* cyc : {&cyc1, &cyc2}) {
        const bool symbolic = less_than_identity(*cyc, 1e-12) == IdentityVerdict::below;
        bool sampled = true;
        for (int k = 1; k <= 60; ++k) {
          const double s = std::pow(10.0, -4.0 + 8.0 * k / 60.0);
          const double val = cyc == &cyc1 ? b1 * std::sqrt(b2 * L * s * s)
                                          : b2 * L * std::pow(b1 * std::sqrt(s), 2.0);
          if (val >= s) sampled = false;
        }
        require(symbolic == sampled, "symbolic cycle verdict disagrees with the sampling oracle");
      }
    }
    return std::string("boundary witness of length 2; 20 random triples matched the oracle");
  });

  run_criterion({3, "offset independence of the network size", 5.0}, [&] {
    double first_psi = -1.0;
    double first_delta = -1.0;
    for (int copies = 1; copies <= 8; ++copies) {
      const NetworkSSF ssf = compose_stage2(rooms, copies, false);
      const auto grid = rooms.finite->state_grid;
      const auto q = grid.quantize(rooms.initial);
      const QuadSPSF tpl = make_finite_spsf(rooms);
      const double v0 = evaluate_spsf(tpl, rooms.initial, *q);
      const auto bound = closeness_bound(v0, ssf.alpha, ssf.kappa.c, ssf.psi, 0.5,
                                         rooms.objective.horizon);
      if (copies == 1) {
        first_psi = ssf.psi;
        first_delta = bound.delta_hat;
      }
      require(ssf.psi == first_psi, fmt("psi changed at %g copies", copies));
      require(bound.delta_hat == first_delta, fmt("delta_hat changed at %g copies", copies));
    }
    return fmt("psi = %.6g and delta_hat = %.6g constant over 1..8 copies", first_psi,
               first_delta);
  });

  PipelineOptions room_opts;
  room_opts.out_dir = "acceptance_out/rooms_desk";
  room_opts.jobs = jobs;
  PipelineData room_data;

  run_criterion({4, "closeness bound soundness at desk scale", 120.0}, [&] {
    room_data = run_pipeline(rooms, room_opts);
    require(room_data.exit_code == 0, "pipeline reported a verification failure");
    require(room_data.bundle.has_value(), "no simulation bundle");
    std::string detail;
    for (const auto& row : room_data.bounds) {
      const auto est =
          empirical_deviation_prob(*room_data.bundle, "concrete-finite", row.epsilon);
      const double delta_hat = row.stage2->delta_hat;
      const double slack = est.ci_upper - est.frequency;
      require(est.frequency <= delta_hat + slack,
              fmt("frequency %.4g above delta_hat %.4g at eps %.3g", est.frequency, delta_hat,
                  row.epsilon));
      detail += fmt("eps %.3g: %.4g <= %.4g; ", row.epsilon, est.frequency, delta_hat);
    }
    return detail;
  });

  run_criterion({5, "two-stage transitivity at desk scale", 600.0}, [&] {
    PipelineOptions opts;
    opts.out_dir = "acceptance_out/network_desk";
    opts.jobs = jobs;
    const PipelineData data = run_pipeline(network, opts);
    require(data.exit_code == 0, "pipeline reported a verification failure");
    require(data.bundle.has_value(), "no simulation bundle");
    std::string detail;
    for (const auto& row : data.bounds) {
      require(row.total.has_value(), "missing transitivity row");
      const auto est =
          empirical_deviation_prob(*data.bundle, "concrete-finite", row.total->epsilon);
      const double combined = row.stage1->delta_hat + row.stage2->delta_hat;
      const double slack = est.ci_upper - est.frequency;
      require(est.frequency <= combined + slack,
              fmt("frequency %.4g above delta1+delta2 %.4g at eps %.3g", est.frequency, combined,
                  row.total->epsilon));
      detail += fmt("eps %.3g: %.4g <= %.4g; ", row.total->epsilon, est.frequency, combined);
    }
    return detail;
  });

  run_criterion({6, "transition kernel correctness", 60.0}, [&] {
    const auto& grid = rooms.finite->state_grid;
    const Grid input = rooms.finite->input_grid;
    const Grid internal =
        Grid::uniform(Vector::Constant(2, 19.0), Vector::Constant(2, 21.0), {3, 3});
    const FiniteMDP mdp = build_fmdp(rooms.unit, grid, input, internal, 1e-8, jobs);
    double worst_row = 0.0;
    for (long s = 0; s < mdp.n_states; ++s)
      for (long u = 0; u < mdp.n_inputs; ++u)
        for (long w = 0; w < mdp.n_internal; ++w) {
          const double* row = mdp.row(s, u, w);
          double total = 0.0;
          for (long c = 0; c <= mdp.n_states; ++c) total += row[c];
          worst_row = std::max(worst_row, std::abs(total - 1.0));
        }
    require(worst_row <= 1e-9, fmt("row sum off by %.3g", worst_row));

    // per-cell 3-sigma binomial tolerance, judged family-wise: across m
    // inspected cells roughly 0.27% may exceed 3 sigma by chance, so the
    // exceedance count is held to its own 3-sigma band, with a hard 5-sigma
    // cap per cell that any real kernel defect blows through
    const NoiseStream stream(99991, 0);
    std::mt19937_64 pick(13);
    const int samples = 100000;
    long cells_checked = 0, beyond3 = 0;
    for (int probe = 0; probe < 20; ++probe) {
      const long s = static_cast<long>(pick() % mdp.n_states);
      const long u = static_cast<long>(pick() % mdp.n_inputs);
      const long w = static_cast<long>(pick() % mdp.n_internal);
      std::vector<long> counts(mdp.n_states + 1, 0);
      for (int k = 0; k < samples; ++k) {
        const Vector zeta = Vector::Constant(
            1, stream.gaussian(static_cast<std::uint32_t>(probe), static_cast<std::uint32_t>(k)));
        const Vector next = rooms.unit.step(grid.center(s), input.center(u), internal.center(w), zeta);
        const auto cell = grid.locate(next);
        ++counts[cell ? *cell : mdp.n_states];
      }
      const double* row = mdp.row(s, u, w);
      for (long c = 0; c <= mdp.n_states; ++c) {
        const double freq = static_cast<double>(counts[c]) / samples;
        const double sigma = std::sqrt(std::max(row[c] * (1.0 - row[c]) / samples, 0.0));
        const double gap = std::abs(freq - row[c]);
        require(gap <= 5.0 * sigma + 3.0 / samples,
                fmt("cell frequency %.4g vs kernel %.4g beyond 5 sigma", freq, row[c]));
        if (gap > 3.0 * sigma + 1.0 / samples) ++beyond3;
        ++cells_checked;
      }
    }
    const double expect3 = 0.0027 * cells_checked;
    const double band = expect3 + 3.0 * std::sqrt(expect3) + 1.0;
    require(beyond3 <= band,
            fmt("%g cells beyond 3 sigma, family band allows %.1f", double(beyond3), band));
    return fmt("row sums ok; %g of %g cells beyond 3 sigma (band %.1f)", double(beyond3),
               double(cells_checked), band);
  });

  run_criterion({7, "dynamic program correctness", 10.0}, [&] {
    std::mt19937_64 rng(2025);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    FiniteMDP mdp;
    mdp.state_grid = Grid::uniform(Vector::Zero(1), Vector::Constant(1, 10.0), {10});
    mdp.input_grid = Grid::uniform(Vector::Zero(1), Vector::Constant(1, 3.0), {3});
    mdp.internal_grid = Grid::empty();
    mdp.n_states = 10;
    mdp.n_inputs = 3;
    mdp.n_internal = 1;
    mdp.probs.assign(10 * 3 * 11, 0.0);
    std::vector<std::uint8_t> safe(10, 1);
    safe[4] = 0;
    for (long s = 0; s < 10; ++s)
      for (long ui = 0; ui < 3; ++ui) {
        double* row = mdp.probs.data() + mdp.row_index(s, ui, 0) * 11;
        double total = 0.0;
        for (long sp = 0; sp <= 10; ++sp) total += row[sp] = u(rng);
        for (long sp = 0; sp <= 10; ++sp) row[sp] /= total;
      }
    const int Td = 4;
    const Policy pol = dp_safety(mdp, safe, Td);
    // independent exponential-time recursion over all branches
    std::function<double(long, int)> brute = [&](long s, int k) -> double {
      if (!safe[s]) return 0.0;
      if (k == Td) return 1.0;
      double best = 0.0;
      for (long ui = 0; ui < 3; ++ui) {
        const double* row = mdp.row(s, ui, 0);
        double v = 0.0;
        for (long sp = 0; sp < 10; ++sp)
          if (row[sp] > 0.0) v += row[sp] * brute(sp, k + 1);
        best = std::max(best, v);
      }
      return best;
    };
    double worst = 0.0;
    for (long s = 0; s < 10; ++s) {
      const double oracle = brute(s, 0);
      worst = std::max(worst, std::abs(pol.value_at(0, s) - oracle));
      require(pol.value_at(0, s) >= 0.0 && pol.value_at(0, s) <= 1.0, "value outside [0,1]");
    }
    require(worst <= 1e-12, fmt("dp deviates from the oracle by %.3g", worst));

    // robust internal aggregation never exceeds the fixed one
    const Grid internal =
        Grid::uniform(Vector::Constant(2, 19.0), Vector::Constant(2, 21.0), {3, 3});
    const Grid small_grid =
        Grid::uniform(Vector::Constant(1, 19.0), Vector::Constant(1, 21.0), {50});
    const FiniteMDP room_mdp =
        build_fmdp(rooms.unit, small_grid, rooms.finite->input_grid, internal, 1e-8, jobs);
    const auto mask =
        safe_mask_from_box(small_grid, Vector::Constant(1, 19.0), Vector::Constant(1, 21.0));
    SynthesisOptions robust;
    robust.mode = InternalMode::robust_min;
    robust.jobs = jobs;
    SynthesisOptions fixed;
    fixed.mode = InternalMode::fixed;
    fixed.fixed_internal = *internal.locate(Vector::Constant(2, 20.0));
    fixed.jobs = jobs;
    const Policy pr = dp_safety(room_mdp, mask, 10, robust);
    const Policy pf = dp_safety(room_mdp, mask, 10, fixed);
    for (int k = 0; k <= 10; ++k)
      for (long s = 0; s < room_mdp.n_states; ++s)
        require(pr.value_at(k, s) <= pf.value_at(k, s) + 1e-12,
                "robust value above the fixed-mode value");
    return fmt("oracle gap %.2g; robust <= fixed pointwise", worst);
  });

  run_criterion({8, "supermartingale validation", 120.0}, [&] {
    // exact expectation for the matched-noise reduced construction
    const auto cert = cs::network_cert(3);
    Tuning tune;
    tune.pi_tilde = 0.99;
    tune.delta_tilde = 0.1;
    const QuadSPSF reduced =
        build_reduced_spsf(cs::network_unit(3), cs::network_reduced(3), cert.M, cert.P,
                           cs::network_interface(cert), cert.kappa_hat, tune);
    SPSFValidationOptions vopts;
    vopts.points = 1000;
    vopts.x_lo = Vector::Constant(5, -2.0);
    vopts.x_hi = Vector::Constant(5, 2.0);
    vopts.xh_lo = Vector::Constant(1, -2.0);
    vopts.xh_hi = Vector::Constant(1, 2.0);
    vopts.nu_lo = Vector::Constant(1, -1.0);
    vopts.nu_hi = Vector::Constant(1, 1.0);
    vopts.w_lo = Vector::Constant(10, -2.0);
    vopts.w_hi = Vector::Constant(10, 2.0);
    const auto exact = validate_spsf_reduced(cs::network_unit(3), cs::network_reduced(3), reduced,
                                             vopts);
    require(exact.exact && exact.violations == 0,
            fmt("%g violations in the exact reduced check", double(exact.violations)));

    // Monte Carlo for the room finite abstraction
    const QuadSPSF finite = make_finite_spsf(rooms);
    SPSFValidationOptions fopts;
    fopts.points = 100;
    fopts.draws = 10000;
    fopts.x_lo = Vector::Constant(1, 19.0);
    fopts.x_hi = Vector::Constant(1, 21.0);
    fopts.xh_lo = Vector::Constant(1, 19.0);
    fopts.xh_hi = Vector::Constant(1, 21.0);
    fopts.nu_lo = Vector::Constant(1, 0.0);
    fopts.nu_hi = Vector::Constant(1, 0.6);
    fopts.w_lo = Vector::Constant(2, 19.0);
    fopts.w_hi = Vector::Constant(2, 21.0);
    const auto mc = validate_spsf_finite(rooms.unit, rooms.finite->state_grid, finite, fopts);
    require(mc.violations == 0, fmt("%g Monte Carlo violations", double(mc.violations)));

    QuadSPSF falsified = finite;
    falsified.kappa.c /= 100.0;
    const auto bad = validate_spsf_finite(rooms.unit, rooms.finite->state_grid, falsified, fopts);
    require(bad.violations >= 1, "falsified decrease gain went undetected");
    return fmt("clean on %g exact + %g MC points; falsified gain flagged %g times",
               double(exact.points), double(mc.points), double(bad.violations));
  });

  run_criterion({9, "synthesis end to end", 180.0}, [&] {
    require(room_data.bundle.has_value(), "room pipeline did not run");
    require(room_data.policy.has_value(), "no synthesized policy");
    const auto& bundle = *room_data.bundle;
    long safe = 0;
    for (auto s : bundle.concrete_safe) safe += s;
    const double freq = static_cast<double>(safe) / bundle.runs;
    const double se = std::sqrt(std::max(0.0, freq * (1.0 - freq) / bundle.runs));
    double delta_ref = 1.0;
    for (const auto& row : room_data.bounds)
      delta_ref = std::min(delta_ref, row.stage2->delta_hat);
    const double threshold = room_data.v0_policy - delta_ref - 3.0 * se;
    require(freq >= threshold,
            fmt("safety frequency %.4g below V0 - delta_hat - 3se = %.4g", freq, threshold));
    return fmt("safety %.4g >= V0 %.4g - delta_hat %.4g - 3se", freq, room_data.v0_policy,
               delta_ref);
  });

  if (g_failures) {
    std::printf("%d criterion(s) FAILED\n", g_failures);
    return 1;
  }
  std::printf("all acceptance criteria passed\n");
  return 0;
}
