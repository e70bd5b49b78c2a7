#include "stochabs/sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "stochabs/parallel.hpp"
#include "stochabs/rng.hpp"
#include "stochabs/stats.hpp"

namespace stochabs {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Vector box_sample(const NoiseStream& stream, std::uint32_t step, std::uint32_t& idx,
                  const Vector& lo, const Vector& hi) {
  Vector v(lo.size());
  for (int d = 0; d < lo.size(); ++d) v(d) = lo(d) + stream.uniform(step, idx++) * (hi(d) - lo(d));
  return v;
}

}  // namespace

int TrajectoryBundle::pair_index(const std::string& name) const {
  for (std::size_t i = 0; i < pair_names.size(); ++i)
    if (pair_names[i] == name) return static_cast<int>(i);
  throw std::invalid_argument("unknown level pair " + name);
}

TrajectoryBundle coupled_simulate(const Stack& stack, const SimOptions& opts) {
  if (!stack.concrete) throw std::invalid_argument("simulation needs a concrete network");
  const Interconnection& net = *stack.concrete;
  const int N = net.size();
  const bool has_reduced = stack.reduced.has_value();
  const bool has_finite = stack.finite.has_value();

  std::vector<int> state_offset(N + 1, 0), noise_offset(N + 1, 0), red_offset(N + 1, 0);
  for (int i = 0; i < N; ++i) {
    state_offset[i + 1] = state_offset[i] + net.subsystems[i].state_dim();
    noise_offset[i + 1] = noise_offset[i] + net.subsystems[i].noise_dim();
    if (has_reduced)
      red_offset[i + 1] = red_offset[i] + stack.reduced->subsystems[i].state_dim();
  }
  if (opts.initial.size() != state_offset[N])
    throw std::invalid_argument("initial state dimension mismatch");
  if (has_reduced) {
    if (static_cast<int>(stack.reduced->subsystems.size()) != N ||
        static_cast<int>(stack.reduced->spsfs.size()) != N)
      throw std::invalid_argument("reduced level must cover every subsystem");
    if (stack.reduced->initial.size() != red_offset[N])
      throw std::invalid_argument("reduced initial state dimension mismatch");
    for (int i = 0; i < N; ++i)
      if (stack.reduced->subsystems[i].noise_dim() != net.subsystems[i].noise_dim())
        throw std::invalid_argument("noise channels must match across levels");
  }
  if (has_finite && static_cast<int>(stack.finite->grids.size()) != N)
    throw std::invalid_argument("finite level must cover every subsystem");

  const auto& under_systems = has_reduced ? stack.reduced->subsystems : net.subsystems;

  TrajectoryBundle bundle;
  bundle.seed = opts.seed;
  bundle.runs = opts.runs;
  bundle.horizon = opts.horizon;
  if (has_reduced) bundle.pair_names.push_back("concrete-reduced");
  if (has_reduced && has_finite) bundle.pair_names.push_back("reduced-finite");
  if (has_finite) bundle.pair_names.push_back("concrete-finite");
  bundle.sup_dev.assign(bundle.pair_names.size(), std::vector<double>(opts.runs, 0.0));
  bundle.abstract_exited.assign(opts.runs, 0);
  bundle.concrete_safe.assign(opts.runs, 1);
  bundle.safe_subsystems.assign(opts.runs, N);
  bundle.level_names.push_back("concrete");
  if (has_reduced) bundle.level_names.push_back("reduced");
  if (has_finite) bundle.level_names.push_back("finite");
  bundle.traces.resize(std::min<long>(opts.record_traces, opts.runs));
  for (auto& t : bundle.traces) t.resize(bundle.level_names.size());
  bundle.has_safety = opts.safe_lower.size() > 0;
  if (bundle.has_safety && opts.safe_lower.size() != net.external_output_dim())
    throw std::invalid_argument("safe box dimension must match the external output");

  std::vector<double> checksum(opts.runs, 0.0);

  parallel_for(opts.runs, opts.jobs, [&](long run) {
    const NoiseStream stream(opts.seed, static_cast<std::uint64_t>(run));
    std::vector<Vector> xc(N), xr(N), xf(N);
    std::vector<bool> exited(N, false);
    for (int i = 0; i < N; ++i) {
      xc[i] = opts.initial.segment(state_offset[i], net.subsystems[i].state_dim());
      if (has_reduced)
        xr[i] = stack.reduced->initial.segment(red_offset[i],
                                               stack.reduced->subsystems[i].state_dim());
      if (has_finite) {
        const Vector base = has_reduced ? xr[i] : xc[i];
        xf[i] = stack.finite->grids[i].snap(base);
        if (!stack.finite->grids[i].locate(base)) exited[i] = true;
      }
    }

    std::vector<double> sup(bundle.pair_names.size(), 0.0);
    std::vector<bool> sub_safe(N, true);
    double local_checksum = 0.0;
    const bool keep_trace = run < static_cast<long>(bundle.traces.size());

    auto record = [&]() {
      std::vector<Vector> yc(N), yr(N), yf(N);
      for (int i = 0; i < N; ++i) {
        yc[i] = net.subsystems[i].output(xc[i]);
        if (has_reduced) yr[i] = stack.reduced->subsystems[i].output(xr[i]);
        if (has_finite) yf[i] = under_systems[i].output(xf[i]);
      }
      int pair = 0;
      auto dev = [&](const std::vector<Vector>& a, const std::vector<Vector>& b) {
        double d = 0.0;
        for (int i = 0; i < N; ++i) d = std::max(d, inf_norm(a[i] - b[i]));
        return d;
      };
      if (has_reduced) sup[pair] = std::max(sup[pair], dev(yc, yr)), ++pair;
      if (has_reduced && has_finite) sup[pair] = std::max(sup[pair], dev(yr, yf)), ++pair;
      if (has_finite) sup[pair] = std::max(sup[pair], dev(yc, yf)), ++pair;
      if (keep_trace) {
        auto& slots = bundle.traces[run];
        int level = 0;
        auto stack_outputs = [N](const std::vector<Vector>& ys) {
          int total = 0;
          for (int i = 0; i < N; ++i) total += static_cast<int>(ys[i].size());
          Vector out(total);
          int at = 0;
          for (int i = 0; i < N; ++i) {
            out.segment(at, ys[i].size()) = ys[i];
            at += static_cast<int>(ys[i].size());
          }
          return out;
        };
        slots[level++].push_back(stack_outputs(yc));
        if (has_reduced) slots[level++].push_back(stack_outputs(yr));
        if (has_finite) slots[level++].push_back(stack_outputs(yf));
      }
      if (bundle.has_safety) {
        const Vector y = net.external_output(xc);
        const int q = static_cast<int>(y.size()) / N;
        for (int i = 0; i < N; ++i) {
          if (!sub_safe[i]) continue;
          for (int d = i * q; d < (i + 1) * q; ++d)
            if (y(d) < opts.safe_lower(d) || y(d) > opts.safe_upper(d)) sub_safe[i] = false;
        }
      }
    };

    record();
    for (int k = 0; k < opts.horizon; ++k) {
      std::vector<Vector> yc(N), yr(N), yf(N);
      for (int i = 0; i < N; ++i) {
        yc[i] = net.subsystems[i].output(xc[i]);
        if (has_reduced) yr[i] = stack.reduced->subsystems[i].output(xr[i]);
        if (has_finite) yf[i] = under_systems[i].output(xf[i]);
      }
      std::vector<Vector> wc(N), wr(N), wf(N);
      for (int i = 0; i < N; ++i) {
        wc[i] = net.gather_internal(i, yc);
        if (has_reduced) wr[i] = net.gather_internal(i, yr);
        if (has_finite) wf[i] = net.gather_internal(i, yf);
      }
      std::vector<Vector> nuc(N), nur(N), nuf(N);
      for (int i = 0; i < N; ++i) {
        if (has_finite) {
          const auto& fl = *stack.finite;
          if (!fl.lookups.empty() && fl.lookups[i].policy)
            nuf[i] = fl.lookups[i].abstract_input(k, xf[i]);
          else
            nuf[i] = Vector::Zero(under_systems[i].input_dim());
          if (has_reduced)
            nur[i] = interface_finite(fl.spsfs[i], xr[i], xf[i], nuf[i]);
          else
            nuc[i] = interface_finite(fl.spsfs[i], xc[i], xf[i], nuf[i]);
        } else if (has_reduced) {
          nur[i] = Vector::Zero(stack.reduced->subsystems[i].input_dim());
        }
        if (has_reduced)
          nuc[i] = interface_reduced(stack.reduced->spsfs[i], xc[i], xr[i], nur[i], wr[i]);
        if (!has_reduced && !has_finite) nuc[i] = Vector::Zero(net.subsystems[i].input_dim());
      }
      for (int i = 0; i < N; ++i) {
        Vector zeta(net.subsystems[i].noise_dim());
        for (int c = 0; c < zeta.size(); ++c) {
          zeta(c) = stream.gaussian(static_cast<std::uint32_t>(k),
                                    static_cast<std::uint32_t>(noise_offset[i] + c));
          local_checksum += zeta(c);
        }
        if (has_finite) {
          const Vector raw = under_systems[i].step(xf[i], nuf[i], wf[i], zeta);
          if (!stack.finite->grids[i].locate(raw)) exited[i] = true;
          xf[i] = stack.finite->grids[i].snap(raw);
        }
        if (has_reduced) xr[i] = stack.reduced->subsystems[i].step(xr[i], nur[i], wr[i], zeta);
        xc[i] = net.subsystems[i].step(xc[i], nuc[i], wc[i], zeta);
      }
      record();
    }

    for (std::size_t p = 0; p < sup.size(); ++p) bundle.sup_dev[p][run] = sup[p];
    bundle.abstract_exited[run] =
        std::find(exited.begin(), exited.end(), true) != exited.end() ? 1 : 0;
    int safe_count = 0;
    for (int i = 0; i < N; ++i) safe_count += sub_safe[i] ? 1 : 0;
    bundle.safe_subsystems[run] = safe_count;
    bundle.concrete_safe[run] = safe_count == N ? 1 : 0;
    checksum[run] = local_checksum;
  });

  bundle.noise_checksum = opts.runs > 0 ? checksum[0] : 0.0;
  return bundle;
}

DeviationEstimate empirical_deviation_prob(const TrajectoryBundle& bundle,
                                           const std::string& pair, double epsilon) {
  const auto& devs = bundle.sup_dev[bundle.pair_index(pair)];
  DeviationEstimate est;
  est.runs = static_cast<long>(devs.size());
  for (double d : devs)
    if (d >= epsilon) ++est.exceed;
  est.frequency = est.runs ? static_cast<double>(est.exceed) / est.runs : 0.0;
  const auto ci = clopper_pearson(est.exceed, est.runs, 0.95);
  est.ci_lower = ci.lower;
  est.ci_upper = ci.upper;
  return est;
}

namespace {

double spsf_bound(const QuadSPSF& spsf, double S, double w_gap, double nu_norm) {
  double b = spsf.kappa(S);
  b = std::max(b, spsf.rho_int(w_gap));
  b = std::max(b, spsf.rho_ext(nu_norm));
  return std::max(b, spsf.psi);
}

}  // namespace

SPSFViolationReport validate_spsf_reduced(const NonlinearSCS& sys, const NonlinearSCS& abs_sys,
                                          const QuadSPSF& spsf,
                                          const SPSFValidationOptions& opts) {
  if (sys.noise_dim() != abs_sys.noise_dim())
    throw std::invalid_argument("matched-noise validation needs equal noise channels");
  const Matrix gamma = sys.noise_matrix() - spsf.P * abs_sys.noise_matrix();
  const double trace_term = (gamma.transpose() * spsf.M * gamma).trace();

  SPSFViolationReport rep;
  rep.exact = true;
  rep.points = opts.points;
  rep.worst_excess = -kInf;
  const NoiseStream stream(opts.seed, 0);
  for (int pt = 0; pt < opts.points; ++pt) {
    std::uint32_t idx = 0;
    const auto st = static_cast<std::uint32_t>(pt);
    const Vector x = box_sample(stream, st, idx, opts.x_lo, opts.x_hi);
    const Vector xh = box_sample(stream, st, idx, opts.xh_lo, opts.xh_hi);
    const Vector nuh = box_sample(stream, st, idx, opts.nu_lo, opts.nu_hi);
    const Vector w = box_sample(stream, st, idx, opts.w_lo, opts.w_hi);
    const Vector wh = box_sample(stream, st, idx, opts.w_lo, opts.w_hi);
    const Vector nu = interface_reduced(spsf, x, xh, nuh, wh);
    const Vector d = sys.deterministic_step(x, nu, w) -
                     spsf.P * abs_sys.deterministic_step(xh, nuh, wh);
    const double lhs = d.dot(spsf.M * d) + trace_term;
    const double S = evaluate_spsf(spsf, x, xh);
    const double bound = spsf_bound(spsf, S, inf_norm(w - wh), inf_norm(nuh));
    const double excess = lhs - bound;
    rep.worst_excess = std::max(rep.worst_excess, excess);
    if (lhs > bound * (1.0 + 1e-9) + 1e-12) ++rep.violations;
  }
  return rep;
}

SPSFViolationReport validate_spsf_finite(const NonlinearSCS& sys, const Grid& grid,
                                         const QuadSPSF& spsf,
                                         const SPSFValidationOptions& opts) {
  SPSFViolationReport rep;
  rep.points = opts.points;
  rep.worst_excess = -kInf;
  const NoiseStream sample_stream(opts.seed, 0);
  const int r = sys.noise_dim();
  for (int pt = 0; pt < opts.points; ++pt) {
    std::uint32_t idx = 0;
    const auto st = static_cast<std::uint32_t>(pt);
    const Vector x = box_sample(sample_stream, st, idx, opts.x_lo, opts.x_hi);
    const Vector xh = grid.snap(box_sample(sample_stream, st, idx, opts.xh_lo, opts.xh_hi));
    const Vector nuh = box_sample(sample_stream, st, idx, opts.nu_lo, opts.nu_hi);
    const Vector w = box_sample(sample_stream, st, idx, opts.w_lo, opts.w_hi);
    const Vector wh = box_sample(sample_stream, st, idx, opts.w_lo, opts.w_hi);
    const Vector nu = interface_finite(spsf, x, xh, nuh);

    const NoiseStream draw_stream(opts.seed + 1, static_cast<std::uint64_t>(pt));
    double sum = 0.0, sumsq = 0.0;
    Vector zeta(r);
    for (int dr = 0; dr < opts.draws; ++dr) {
      for (int c = 0; c < r; ++c)
        zeta(c) = draw_stream.gaussian(static_cast<std::uint32_t>(dr), static_cast<std::uint32_t>(c));
      const Vector next_c = sys.step(x, nu, w, zeta);
      const Vector next_a = grid.snap(sys.step(xh, nuh, wh, zeta));
      const Vector e = next_c - next_a;
      const double s = e.dot(spsf.M * e);
      sum += s;
      sumsq += s * s;
    }
    const double mean = sum / opts.draws;
    const double var = std::max(0.0, sumsq / opts.draws - mean * mean);
    const double se = std::sqrt(var / opts.draws);
    const double S = evaluate_spsf(spsf, x, xh);
    const double bound = spsf_bound(spsf, S, inf_norm(w - wh), inf_norm(nuh));
    const double excess = mean - bound;
    rep.worst_excess = std::max(rep.worst_excess, excess);
    if (mean > bound + 3.0 * se + 1e-12) ++rep.violations;
  }
  return rep;
}

}  // namespace stochabs
