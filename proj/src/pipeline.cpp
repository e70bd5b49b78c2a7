#include "stochabs/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace stochabs {

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string num6(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

bool stage_enabled(const PipelineOptions& opts, const std::string& stage) {
  if (opts.stages.empty()) return true;
  return std::find(opts.stages.begin(), opts.stages.end(), stage) != opts.stages.end();
}

std::ofstream open_out(const PipelineOptions& opts, const std::string& name) {
  std::filesystem::create_directories(opts.out_dir);
  std::ofstream os(std::filesystem::path(opts.out_dir) / name);
  if (!os) throw std::runtime_error("cannot write " + name + " under " + opts.out_dir);
  return os;
}

void apply_pins(QuadSPSF& s, const CertificateSpec& cert, double delta) {
  const auto& t = cert.targets;
  if (!cert.pin_gains) return;
  if (t.kappa_coef) s.kappa = PowerFn::linear(*t.kappa_coef);
  if (t.rho_int_coef) s.rho_int = *t.rho_int_coef == 0.0 ? PowerFn::zero()
                                                         : PowerFn::quadratic(*t.rho_int_coef);
  if (t.rho_ext_coef) s.rho_ext = *t.rho_ext_coef == 0.0 ? PowerFn::zero()
                                                         : PowerFn::quadratic(*t.rho_ext_coef);
  if (t.psi) s.psi = *t.psi;
  if (t.psi_per_delta2) s.psi = *t.psi_per_delta2 * delta * delta;
}

std::string fn_str(const PowerFn& f) {
  if (f.is_zero()) return "0";
  return num6(f.c) + "*s^" + num6(f.p);
}

void report_targets(std::ostream& os, const char* stage, const QuadSPSF& s,
                    const GainTargets& t, double delta) {
  os << stage << " gains: kappa=" << fn_str(s.kappa) << " rho_int=" << fn_str(s.rho_int)
     << " rho_ext=" << fn_str(s.rho_ext) << " psi=" << num6(s.psi)
     << " alpha=" << fn_str(s.alpha) << "\n";
  auto dev = [&os](const char* name, double got, double want) {
    os << "  target " << name << ": reported " << num6(want) << ", formula " << num6(got)
       << ", deviation " << num6(got - want) << "\n";
  };
  if (t.kappa_coef) dev("kappa", s.kappa.c, *t.kappa_coef);
  if (t.rho_int_coef) dev("rho_int", s.rho_int.c, *t.rho_int_coef);
  if (t.rho_ext_coef) dev("rho_ext", s.rho_ext.c, *t.rho_ext_coef);
  if (t.psi) dev("psi", s.psi, *t.psi);
  if (t.psi_per_delta2) dev("psi", s.psi, *t.psi_per_delta2 * delta * delta);
}

double auto_kappa_hat(const NetworkSSF& ssf, std::vector<std::string>* warnings) {
  if (!ssf.kappa.is_linear())
    throw std::runtime_error("composed kappa is not linear; provide kappa_hat explicitly");
  double k = ssf.kappa.c;
  if (k >= 1.0) {
    if (warnings)
      warnings->push_back("composed kappa sits on the identity; using kappa_hat = 1 - 1e-9");
    k = 1.0 - 1e-9;
  }
  return k;
}

double input_sup(const Grid& input_grid) {
  double s = 0.0;
  for (long u = 0; u < input_grid.total(); ++u) s = std::max(s, inf_norm(input_grid.center(u)));
  return s;
}

}  // namespace

QuadSPSF make_reduced_spsf(const Scenario& scn) {
  if (!scn.reduced) throw std::runtime_error("scenario has no reduced stage");
  const auto& st = *scn.reduced;
  InterfaceMatrices iface;
  iface.K = st.cert.K;
  iface.Q = st.cert.Q;
  iface.S = st.cert.S;
  iface.L1 = st.cert.L1;
  iface.L2 = st.cert.L2;
  iface.R_tilde = st.cert.R_tilde;
  if (!st.cert.P) throw std::runtime_error("reduced certificate needs the lifting matrix P");
  QuadSPSF s = build_reduced_spsf(scn.unit, st.subsystem, st.cert.M, *st.cert.P, iface,
                                  st.cert.kappa_hat, st.cert.tuning);
  apply_pins(s, st.cert, 0.0);
  return s;
}

QuadSPSF make_finite_spsf(const Scenario& scn) {
  if (!scn.finite) throw std::runtime_error("scenario has no finite stage");
  const auto& st = *scn.finite;
  const double delta = st.state_grid.delta();
  QuadSPSF s = build_finite_spsf(scn.gridded_unit(), st.cert.M, st.cert.K, st.cert.kappa_hat,
                                 st.cert.tuning, delta);
  apply_pins(s, st.cert, delta);
  return s;
}

NetworkSSF compose_stage1(const Scenario& scn, int copies, bool allow_boundary,
                          GainMatrix* gains_out, CycleReport* cycles_out) {
  const QuadSPSF tpl = make_reduced_spsf(scn);
  const std::vector<QuadSPSF> spsfs(copies, tpl);
  const GainMatrix gains = build_gains(spsfs, Flavor::infinite, std::nullopt,
                                       topology_sources(scn.topology, copies));
  if (gains_out) *gains_out = gains;
  if (cycles_out) *cycles_out = verify_cycle_condition(gains);
  return compose_ssf(spsfs, gains, allow_boundary);
}

NetworkSSF compose_stage2(const Scenario& scn, int copies, bool allow_boundary,
                          GainMatrix* gains_out, CycleReport* cycles_out) {
  const QuadSPSF tpl = make_finite_spsf(scn);
  const std::vector<QuadSPSF> spsfs(copies, tpl);
  FiniteExtras extras;
  extras.delta_tilde_f = PowerFn::linear(scn.finite->delta_tilde_f);
  extras.bar_lambda = PowerFn::linear(scn.finite->bar_lambda);
  extras.mu = Matrix::Zero(copies, copies);  // aligned grids; see align_internal_grids
  const GainMatrix gains = build_gains(spsfs, Flavor::finite, extras,
                                       topology_sources(scn.topology, copies));
  if (gains_out) *gains_out = gains;
  if (cycles_out) *cycles_out = verify_cycle_condition(gains);
  return compose_ssf(spsfs, gains, allow_boundary);
}

std::vector<BoundRow> bound_table(const Scenario& scn, const NetworkSSF* ssf1,
                                  const NetworkSSF* ssf2, const std::vector<double>& epsilons,
                                  double v0_stage1, double v0_stage2) {
  std::vector<BoundRow> rows;
  const int Td = scn.objective.horizon;
  const bool two_stage = ssf1 && ssf2;
  for (double eps : epsilons) {
    BoundRow row;
    row.epsilon = eps;
    auto one = [&](const NetworkSSF& ssf, double v0, double e, double nu_sup) {
      double kh = scn.objective.kappa_hat_eq25.value_or(-1.0);
      if (kh <= 0.0) kh = auto_kappa_hat(ssf, nullptr);
      const double psi_hat = assemble_psi_hat(ssf.rho_ext, nu_sup, ssf.psi);
      return closeness_bound(v0, ssf.alpha, kh, psi_hat, e, Td);
    };
    const double nu_sup = scn.finite ? input_sup(scn.finite->input_grid) : 0.0;
    if (two_stage) {
      row.stage1 = one(*ssf1, v0_stage1, eps / 2.0, nu_sup);
      row.stage2 = one(*ssf2, v0_stage2, eps / 2.0, nu_sup);
      row.total = transitivity(*row.stage1, *row.stage2);
    } else if (ssf2) {
      row.stage2 = one(*ssf2, v0_stage2, eps, nu_sup);
    } else if (ssf1) {
      row.stage1 = one(*ssf1, v0_stage1, eps, nu_sup);
    }
    rows.push_back(row);
  }
  return rows;
}

namespace {

void write_certificates(const PipelineOptions& opts, const Scenario& scn, PipelineData& data) {
  auto csv = open_out(opts, "certificates.csv");
  auto txt = open_out(opts, "certificates.txt");
  csv << "condition,value,verdict\n";
  txt << "certificate report: " << scn.name << " (" << scn.copies
      << " identical subsystems; conditions checked once per template)\n";
  if (data.reduced_margin) {
    csv << "reduced_block_inequality," << num(data.reduced_margin->margin) << ","
        << to_string(data.reduced_margin->verdict) << "\n";
    txt << "reduced block inequality: margin " << num6(data.reduced_margin->margin) << " ("
        << to_string(data.reduced_margin->verdict) << (data.reduced_margin->reduced_form ? ", channel inert" : "")
        << ")\n";
  }
  if (data.structural) {
    for (const auto& e : data.structural->entries) {
      csv << "structural " << e.name << "," << num(e.residual) << ","
          << (e.pass ? "satisfied" : "violated") << "\n";
      txt << "structural " << e.name << ": residual " << num(e.residual)
          << (e.pass ? "" : "  VIOLATED") << "\n";
    }
  }
  if (data.finite_margin) {
    csv << "finite_block_inequality," << num(data.finite_margin->margin) << ","
        << to_string(data.finite_margin->verdict) << "\n";
    txt << "finite block inequality: margin " << num6(data.finite_margin->margin) << " ("
        << to_string(data.finite_margin->verdict) << (data.finite_margin->reduced_form ? ", channel inert" : "")
        << ")\n";
  }
  if (data.reduced_spsf && scn.reduced)
    report_targets(txt, "reduced-stage", *data.reduced_spsf, scn.reduced->cert.targets, 0.0);
  if (data.finite_spsf && scn.finite)
    report_targets(txt, "finite-stage", *data.finite_spsf, scn.finite->cert.targets,
                   scn.finite->state_grid.delta());
}

void write_cycles(std::ostream& os, const GainMatrix& gains, const CycleReport& rep) {
  os << "cycle,composed_coefficient,composed_exponent,verdict\n";
  if (rep.used_reduction) {
    os << "max-geometric-cycle-mean," << num(rep.max_cycle_mean) << ",1,"
       << to_string(rep.verdict) << "\n";
  }
  for (const auto& row : rep.rows) {
    os << "\"";
    for (std::size_t k = 0; k < row.vertices.size(); ++k)
      os << (k ? "-" : "") << row.vertices[k];
    os << "\"," << num(row.composed.c) << "," << num(row.composed.p) << ","
       << to_string(row.verdict) << "\n";
  }
  os << "entries";
  for (int i = 0; i < gains.N; ++i)
    for (int j = 0; j < gains.N; ++j)
      os << "," << num6(gains.entry(i, j).c) << "|" << num6(gains.entry(i, j).p);
  os << "\n";
}

void write_smallgain_txt(const PipelineOptions& opts, const PipelineData& data) {
  auto txt = open_out(opts, "smallgain.txt");
  auto describe = [&txt](const char* name, const CycleReport& rep) {
    txt << name << ": " << to_string(rep.verdict);
    if (!rep.witness.empty()) {
      txt << ", worst cycle (";
      for (std::size_t k = 0; k < rep.witness.size(); ++k)
        txt << (k ? " " : "") << rep.witness[k];
      txt << ") composes to " << fn_str(rep.witness_fn);
    }
    if (rep.used_reduction)
      txt << " [max-algebra reduction, geometric cycle mean " << num6(rep.max_cycle_mean) << "]";
    txt << "\n";
  };
  if (data.cycles_stage1) describe("stage-1 small-gain", *data.cycles_stage1);
  if (data.cycles_stage2) describe("stage-2 small-gain", *data.cycles_stage2);
  if (data.alignment) {
    txt << "internal-input quantization radii mu: max "
        << num6(data.alignment->mu.size() ? data.alignment->mu.maxCoeff() : 0.0) << "\n";
  }
}

void write_ssf(const PipelineOptions& opts, const PipelineData& data) {
  auto txt = open_out(opts, "ssf.txt");
  auto describe = [&txt](const char* name, const NetworkSSF& ssf) {
    txt << name << ": alpha=" << fn_str(ssf.alpha) << " kappa=" << fn_str(ssf.kappa)
        << " rho_ext=" << fn_str(ssf.rho_ext) << " psi=" << num(ssf.psi)
        << (ssf.boundary ? "  [boundary small-gain caveat]" : "") << "\n";
  };
  if (data.ssf_stage1) describe("stage-1 composed certificate", *data.ssf_stage1);
  if (data.ssf_stage2) describe("stage-2 composed certificate", *data.ssf_stage2);
}

void write_bounds(const PipelineOptions& opts, const PipelineData& data) {
  auto csv = open_out(opts, "bounds.csv");
  csv << "stage,epsilon,Td,V0,kappa_hat,psi_hat,case,delta_hat,flags\n";
  auto row = [&csv](const char* stage, const ClosenessBound& b) {
    csv << stage << "," << num(b.epsilon) << "," << b.horizon_Td << "," << num(b.V0) << ","
        << num(b.kappa_hat) << "," << num(b.psi_hat) << "," << b.case_taken << ","
        << num(b.delta_hat) << ","
        << (b.vacuous ? "vacuous" : (b.clamped ? "clamped" : "")) << "\n";
  };
  for (const auto& r : data.bounds) {
    if (r.stage1) row("stage1", *r.stage1);
    if (r.stage2) row("stage2", *r.stage2);
    if (r.total) row("total", *r.total);
  }
}

void write_sim(const PipelineOptions& opts, const Scenario& scn, const PipelineData& data) {
  const TrajectoryBundle& b = *data.bundle;
  auto runs_csv = open_out(opts, "sim_runs.csv");
  runs_csv << "run";
  for (const auto& p : b.pair_names) runs_csv << "," << p;
  runs_csv << ",abstract_exited,concrete_safe\n";
  for (int r = 0; r < b.runs; ++r) {
    runs_csv << r;
    for (std::size_t p = 0; p < b.pair_names.size(); ++p) runs_csv << "," << num(b.sup_dev[p][r]);
    runs_csv << "," << int(b.abstract_exited[r]) << "," << int(b.concrete_safe[r]) << "\n";
  }

  if (!b.traces.empty()) {
    auto traces = open_out(opts, "sim_traces.csv");
    traces << "run,level,step,outputs...\n";
    for (std::size_t r = 0; r < b.traces.size(); ++r)
      for (std::size_t lvl = 0; lvl < b.traces[r].size(); ++lvl)
        for (std::size_t k = 0; k < b.traces[r][lvl].size(); ++k) {
          traces << r << "," << b.level_names[lvl] << "," << k;
          const Vector& y = b.traces[r][lvl][k];
          for (int d = 0; d < y.size(); ++d) traces << "," << num(y(d));
          traces << "\n";
        }
  }

  auto rep = open_out(opts, "sim_report.txt");
  rep << "coupled simulation: " << b.runs << " runs, horizon " << b.horizon << ", seed "
      << b.seed << "\n";
  for (std::size_t p = 0; p < b.pair_names.size(); ++p) {
    for (const auto& row : data.bounds) {
      const ClosenessBound* ref = nullptr;
      double eps = row.epsilon;
      if (b.pair_names[p] == "concrete-reduced" && row.stage1) {
        ref = &*row.stage1;
        eps = row.stage1->epsilon;
      } else if (b.pair_names[p] == "reduced-finite" && row.stage2 && row.stage1) {
        ref = &*row.stage2;
        eps = row.stage2->epsilon;
      } else if (b.pair_names[p] == "concrete-finite") {
        ref = row.total ? &*row.total : (row.stage2 ? &*row.stage2 : nullptr);
      }
      if (!ref) continue;
      const auto est = empirical_deviation_prob(b, b.pair_names[p], eps);
      const double slack = est.ci_upper - est.frequency;
      const bool sound = est.frequency <= ref->delta_hat + slack;
      rep << b.pair_names[p] << " eps=" << num6(eps) << ": frequency " << num6(est.frequency)
          << " (" << est.exceed << "/" << est.runs << ", CI95 [" << num6(est.ci_lower) << ","
          << num6(est.ci_upper) << "]) vs delta_hat " << num6(ref->delta_hat) << " -> "
          << (sound ? "sound" : "VIOLATED") << "\n";
    }
  }
  auto validation_line = [&rep](const char* name, const SPSFViolationReport& v) {
    rep << name << " certificate validation: " << v.violations << " violation(s) over "
        << v.points << " points (" << (v.exact ? "exact expectation" : "Monte Carlo")
        << ", worst excess " << num6(v.worst_excess) << ")\n";
  };
  if (data.reduced_validation) validation_line("reduced-stage", *data.reduced_validation);
  if (data.finite_validation) validation_line("finite-stage", *data.finite_validation);
  if (b.has_safety) {
    const int N = scn.copies;
    long joint = 0, marginal = 0;
    for (int r = 0; r < b.runs; ++r) {
      joint += b.concrete_safe[r];
      marginal += b.safe_subsystems[r];
    }
    const double joint_freq = static_cast<double>(joint) / b.runs;
    const double room_freq = static_cast<double>(marginal) / (static_cast<double>(b.runs) * N);
    // strictest reference: the smallest bound in the table
    double delta_ref = 1.0;
    for (const auto& row : data.bounds) {
      const ClosenessBound* ref = row.total ? &*row.total : (row.stage2 ? &*row.stage2 : nullptr);
      if (ref) delta_ref = std::min(delta_ref, ref->delta_hat);
    }
    if (data.bounds.empty()) delta_ref = 0.0;
    const double per_room = data.v0_policy - delta_ref;
    const double se_room = std::sqrt(std::max(0.0, room_freq * (1.0 - room_freq) / b.runs));
    rep << "safety per subsystem: empirical " << num6(room_freq) << " vs V0(initial cell) "
        << num6(data.v0_policy) << " - delta_hat " << num6(delta_ref) << " - 3se = "
        << num6(per_room - 3 * se_room) << " -> "
        << (room_freq >= per_room - 3 * se_room ? "sound" : "VIOLATED") << "\n";
    const double joint_ref = std::max(0.0, 1.0 - N * (1.0 - per_room));  // union bound
    const double se_joint = std::sqrt(std::max(0.0, joint_freq * (1.0 - joint_freq) / b.runs));
    rep << "safety joint (" << N << " subsystems): empirical " << num6(joint_freq)
        << " vs union-bound threshold " << num6(joint_ref - 3 * se_joint) << " -> "
        << (joint_freq >= joint_ref - 3 * se_joint ? "sound" : "VIOLATED") << "\n";
  }
}

}  // namespace

PipelineData run_pipeline(const Scenario& scn, const PipelineOptions& opts) {
  PipelineData data;
  const Interconnection net = scn.build_network();

  auto fail = [&data](const std::string& why) {
    data.warnings.push_back(why);
    data.exit_code = 1;
  };
  auto handle_verdict = [&](const char* what, CheckVerdict v) {
    if (v == CheckVerdict::violated) fail(std::string(what) + " violated");
    else if (v == CheckVerdict::boundary) {
      if (opts.strict) fail(std::string(what) + " on the boundary (strict)");
      else data.warnings.push_back(std::string(what) + " on the boundary");
    }
  };

  // ---- verify ----------------------------------------------------------
  if (scn.reduced) {
    const auto& st = *scn.reduced;
    data.reduced_margin = check_reduced_block_inequality(scn.unit, st.subsystem, st.cert.M, st.cert.K,
                           st.cert.L1.value_or(Matrix::Zero(scn.unit.input_dim(), 1)),
                           st.cert.P.value_or(Matrix::Identity(scn.unit.state_dim(),
                                                               st.subsystem.state_dim())),
                           st.cert.R_tilde.value_or(Matrix::Zero(scn.unit.input_dim(),
                                                                 st.subsystem.input_dim())),
                           st.cert.kappa_hat, st.cert.tuning.pi);
    data.structural = check_structural(
        scn.unit, st.subsystem, *st.cert.P, st.cert.Q.value_or(Matrix()),
        st.cert.S.value_or(Matrix()),
        st.cert.L1.value_or(Matrix::Zero(scn.unit.input_dim(), 1)),
        st.cert.L2.value_or(Matrix::Zero(scn.unit.input_dim(), 1)));
    data.reduced_spsf = make_reduced_spsf(scn);
    if (stage_enabled(opts, "verify")) {
      handle_verdict("reduced block inequality", data.reduced_margin->verdict);
      if (!data.structural->pass) fail("structural conditions violated");
    }
  }
  if (scn.finite) {
    data.finite_margin = check_finite_block_inequality(scn.gridded_unit(), scn.finite->cert.M, scn.finite->cert.K,
                             scn.finite->cert.kappa_hat, scn.finite->cert.tuning.pi);
    data.finite_spsf = make_finite_spsf(scn);
    if (stage_enabled(opts, "verify")) handle_verdict("finite block inequality", data.finite_margin->verdict);
  }
  if (stage_enabled(opts, "verify")) write_certificates(opts, scn, data);

  // ---- abstract ---------------------------------------------------------
  const bool need_mdp = scn.finite && (stage_enabled(opts, "abstract") ||
                                       stage_enabled(opts, "synth") || stage_enabled(opts, "sim"));
  if (need_mdp) {
    const NonlinearSCS& gridded = scn.gridded_unit();
    std::vector<Grid> state_grids(scn.copies, scn.finite->state_grid);
    Interconnection gridded_net = make_network(gridded, scn.copies, scn.topology);
    data.alignment = align_internal_grids(gridded_net, state_grids, 1);
    if (gridded.internal_dim() > 0) {
      const Grid& aligned = data.alignment->internal_grids[0];
      std::vector<int> cells = scn.finite->internal_cells;
      if (cells.empty()) cells.assign(aligned.dims(), std::max(1, scn.finite->internal_cells_uniform));
      if (static_cast<int>(cells.size()) != aligned.dims())
        throw std::runtime_error("internal_cells length must match the internal input dimension");
      data.synth_internal_grid = Grid::uniform(aligned.lower, aligned.upper, cells);
    } else {
      data.synth_internal_grid = Grid::empty();
    }
    data.mdp = build_fmdp(gridded, scn.finite->state_grid, scn.finite->input_grid,
                          *data.synth_internal_grid, 1e-8, opts.jobs);
    if (stage_enabled(opts, "abstract")) {
      if (data.mdp->probs.size() <= 20'000'000) {
        auto os = open_out(opts, "mdp_template.csv");
        export_mdp_csv(*data.mdp, os);
      } else {
        data.warnings.push_back("transition tensor export skipped (too large for CSV)");
      }
    }
  }

  // ---- compose ----------------------------------------------------------
  const bool allow_boundary = !opts.strict;
  if (scn.reduced) {
    GainMatrix g;
    CycleReport c;
    try {
      data.ssf_stage1 = compose_stage1(scn, scn.copies, allow_boundary, &g, &c);
    } catch (const std::runtime_error& e) {
      data.warnings.push_back(std::string("stage-1 composition: ") + e.what());
    }
    if (g.N > 0) {
      data.gains_stage1 = g;
      data.cycles_stage1 = c;
      if (stage_enabled(opts, "verify") || stage_enabled(opts, "compose"))
        handle_verdict("stage-1 small-gain condition", c.verdict);
    }
  }
  if (scn.finite) {
    GainMatrix g;
    CycleReport c;
    try {
      data.ssf_stage2 = compose_stage2(scn, scn.copies, allow_boundary, &g, &c);
    } catch (const std::runtime_error& e) {
      data.warnings.push_back(std::string("stage-2 composition: ") + e.what());
    }
    if (g.N > 0) {
      data.gains_stage2 = g;
      data.cycles_stage2 = c;
      if (stage_enabled(opts, "verify") || stage_enabled(opts, "compose"))
        handle_verdict("stage-2 small-gain condition", c.verdict);
    }
  }
  // small-gain reports belong to the verification surface as well
  if (stage_enabled(opts, "verify") || stage_enabled(opts, "compose")) {
    if (data.gains_stage1) {
      auto os = open_out(opts, "cycles_stage1.csv");
      write_cycles(os, *data.gains_stage1, *data.cycles_stage1);
    }
    if (data.gains_stage2) {
      auto os = open_out(opts, "cycles_stage2.csv");
      write_cycles(os, *data.gains_stage2, *data.cycles_stage2);
    }
    write_smallgain_txt(opts, data);
  }
  if (stage_enabled(opts, "compose")) write_ssf(opts, data);

  // ---- bound ------------------------------------------------------------
  if (scn.reduced && data.reduced_spsf) {
    data.v0_stage1 = evaluate_spsf(*data.reduced_spsf, scn.initial, scn.reduced->initial);
    if (data.ssf_stage1) data.v0_stage1 = inverse(data.ssf_stage1->sigmas[0])(data.v0_stage1);
  }
  if (scn.finite && data.finite_spsf) {
    const Vector base = scn.reduced ? scn.reduced->initial : scn.initial;
    const auto q = scn.finite->state_grid.quantize(base);
    if (!q) throw std::runtime_error("initial state leaves the abstraction domain");
    data.v0_stage2 = evaluate_spsf(*data.finite_spsf, base, *q);
    if (data.ssf_stage2) data.v0_stage2 = inverse(data.ssf_stage2->sigmas[0])(data.v0_stage2);
  }
  if (!scn.objective.epsilons.empty() && (data.ssf_stage1 || data.ssf_stage2)) {
    data.bounds = bound_table(scn, data.ssf_stage1 ? &*data.ssf_stage1 : nullptr,
                              data.ssf_stage2 ? &*data.ssf_stage2 : nullptr,
                              scn.objective.epsilons, data.v0_stage1, data.v0_stage2);
    if (stage_enabled(opts, "bound")) {
      write_bounds(opts, data);
      // the bound surface over the subsystem count: constant columns, the
      // composed offset being a maximum over identical subsystems
      std::vector<double> sizes;
      for (int k = 1; k <= 8; ++k) sizes.push_back(k);
      try {
        run_sweep(scn, SweepVariable::copies, sizes,
                  (std::filesystem::path(opts.out_dir) / "surface_N_eps.csv").string(),
                  opts.strict);
      } catch (const std::exception& e) {
        data.warnings.push_back(std::string("surface sweep skipped: ") + e.what());
      }
    }
  }

  // ---- synth ------------------------------------------------------------
  const bool need_policy =
      data.mdp && scn.objective.safe_lower.size() > 0 &&
      (stage_enabled(opts, "synth") || stage_enabled(opts, "sim"));
  if (need_policy) {
    const auto mask = safe_mask_from_box(scn.finite->state_grid, scn.objective.safe_lower,
                                         scn.objective.safe_upper);
    SynthesisOptions sopts;
    sopts.mode = scn.objective.internal_mode;
    sopts.jobs = opts.jobs;
    if (sopts.mode == InternalMode::fixed || sopts.mode == InternalMode::nominal_trace) {
      const Grid& ig = *data.synth_internal_grid;
      const long mid = ig.dims() ? *ig.locate(0.5 * (ig.lower + ig.upper)) : 0;
      sopts.fixed_internal = mid;
      sopts.internal_trace.assign(scn.objective.horizon, mid);
    }
    data.policy = dp_safety(*data.mdp, mask, scn.objective.horizon, sopts);
    const Vector base = scn.reduced ? scn.reduced->initial : scn.initial;
    const auto cell = scn.finite->state_grid.locate(base);
    data.v0_policy = cell ? data.policy->value_at(0, *cell) : 0.0;
    if (stage_enabled(opts, "synth")) {
      auto os = open_out(opts, "policy_template.csv");
      export_policy_csv(*data.policy, os);
    }
  }

  // ---- sim --------------------------------------------------------------
  if (stage_enabled(opts, "sim") && scn.simulation.runs > 0 && (scn.reduced || scn.finite)) {
    Stack stack;
    stack.concrete = &net;
    if (scn.reduced) {
      ReducedLevel lvl;
      lvl.subsystems.assign(scn.copies, scn.reduced->subsystem);
      lvl.spsfs.assign(scn.copies, *data.reduced_spsf);
      lvl.initial = Vector(scn.copies * scn.reduced->subsystem.state_dim());
      for (int i = 0; i < scn.copies; ++i)
        lvl.initial.segment(i * scn.reduced->subsystem.state_dim(),
                            scn.reduced->subsystem.state_dim()) = scn.reduced->initial;
      stack.reduced = std::move(lvl);
    }
    if (scn.finite) {
      FiniteLevel lvl;
      lvl.grids.assign(scn.copies, scn.finite->state_grid);
      lvl.spsfs.assign(scn.copies, *data.finite_spsf);
      if (data.policy) {
        PolicyLookup lk;
        lk.policy = &*data.policy;
        lk.state_grid = &scn.finite->state_grid;
        lk.input_grid = &scn.finite->input_grid;
        lvl.lookups.assign(scn.copies, lk);
      }
      stack.finite = std::move(lvl);
    }
    SimOptions sopts;
    sopts.horizon = scn.objective.horizon;
    sopts.runs = opts.runs.value_or(scn.simulation.runs);
    sopts.seed = opts.seed.value_or(scn.simulation.seed);
    sopts.jobs = opts.jobs;
    sopts.record_traces = 10;
    sopts.initial = Vector(scn.copies * scn.unit.state_dim());
    for (int i = 0; i < scn.copies; ++i)
      sopts.initial.segment(i * scn.unit.state_dim(), scn.unit.state_dim()) = scn.initial;
    if (scn.objective.safe_lower.size() == net.external_output_dim() / scn.copies) {
      Vector lo(net.external_output_dim()), hi(net.external_output_dim());
      const int q = net.external_output_dim() / scn.copies;
      for (int i = 0; i < scn.copies; ++i) {
        lo.segment(i * q, q) = scn.objective.safe_lower;
        hi.segment(i * q, q) = scn.objective.safe_upper;
      }
      sopts.safe_lower = lo;
      sopts.safe_upper = hi;
    }
    data.bundle = coupled_simulate(stack, sopts);

    // spot-check the certificates' expected-decrease inequality on the
    // domains the simulation actually visits
    if (scn.finite && data.finite_spsf) {
      const Grid& sg = scn.finite->state_grid;
      SPSFValidationOptions v;
      v.points = 200;
      v.draws = 2000;
      v.seed = sopts.seed + 17;
      v.x_lo = sg.lower;
      v.x_hi = sg.upper;
      v.xh_lo = sg.lower;
      v.xh_hi = sg.upper;
      v.nu_lo = scn.finite->input_grid.lower;
      v.nu_hi = scn.finite->input_grid.upper;
      v.w_lo = data.synth_internal_grid->lower;
      v.w_hi = data.synth_internal_grid->upper;
      data.finite_validation = validate_spsf_finite(scn.gridded_unit(), sg, *data.finite_spsf, v);
      if (data.finite_validation->violations > 0)
        fail("finite-stage certificate violated in Monte Carlo validation");
    }
    if (scn.reduced && data.reduced_spsf) {
      const Grid& sg = scn.finite ? scn.finite->state_grid
                                  : Grid::uniform(Vector::Constant(1, -1.0),
                                                  Vector::Constant(1, 1.0), {2});
      const Matrix& P = data.reduced_spsf->P;
      // concrete states near the lifted abstract box, internal inputs over
      // the wired output ranges
      const Vector a = P * sg.lower, b = P * sg.upper;
      const Vector span = (b - a).cwiseAbs();
      SPSFValidationOptions v;
      v.points = 500;
      v.seed = sopts.seed + 31;
      v.x_lo = a.cwiseMin(b) - 0.5 * span;
      v.x_hi = a.cwiseMax(b) + 0.5 * span;
      v.xh_lo = sg.lower;
      v.xh_hi = sg.upper;
      v.nu_lo = scn.finite ? scn.finite->input_grid.lower
                           : Vector::Zero(scn.reduced->subsystem.input_dim());
      v.nu_hi = scn.finite ? scn.finite->input_grid.upper
                           : Vector::Zero(scn.reduced->subsystem.input_dim());
      const int p = scn.unit.internal_dim();
      const Vector yl = scn.reduced->subsystem.C * sg.lower,
                   yh = scn.reduced->subsystem.C * sg.upper;
      const double wlo = yl.size() ? std::min(yl.minCoeff(), yh.minCoeff()) : -1.0;
      const double whi = yl.size() ? std::max(yl.maxCoeff(), yh.maxCoeff()) : 1.0;
      v.w_lo = Vector::Constant(p, wlo);
      v.w_hi = Vector::Constant(p, whi);
      data.reduced_validation =
          validate_spsf_reduced(scn.unit, scn.reduced->subsystem, *data.reduced_spsf, v);
      if (data.reduced_validation->violations > 0)
        fail("reduced-stage certificate violated in exact validation");
    }

    write_sim(opts, scn, data);
    for (const auto& pair : data.bundle->pair_names) {
      for (const auto& row : data.bounds) {
        const ClosenessBound* ref = nullptr;
        double eps = row.epsilon;
        if (pair == "concrete-reduced" && row.stage1) { ref = &*row.stage1; eps = ref->epsilon; }
        else if (pair == "reduced-finite" && row.stage2 && row.stage1) { ref = &*row.stage2; eps = ref->epsilon; }
        else if (pair == "concrete-finite") ref = row.total ? &*row.total : (row.stage2 ? &*row.stage2 : nullptr);
        if (!ref) continue;
        const auto est = empirical_deviation_prob(*data.bundle, pair, eps);
        if (est.frequency > ref->delta_hat + (est.ci_upper - est.frequency))
          fail("empirical deviation frequency exceeds delta_hat for " + pair);
      }
    }
  }

  return data;
}

void run_sweep(const Scenario& scn, SweepVariable over, const std::vector<double>& values,
               const std::string& out_path, bool strict) {
  std::ofstream os(out_path);
  if (!os) throw std::runtime_error("cannot write " + out_path);
  os << "N,epsilon,delta,psi,kappa,delta_hat\n";
  const bool allow_boundary = !strict;
  auto emit = [&](int copies, double eps, double delta, const NetworkSSF& ssf, double v0) {
    double kh = scn.objective.kappa_hat_eq25.value_or(-1.0);
    if (kh <= 0.0) kh = auto_kappa_hat(ssf, nullptr);
    const double psi_hat = assemble_psi_hat(
        ssf.rho_ext, scn.finite ? input_sup(scn.finite->input_grid) : 0.0, ssf.psi);
    const auto b = closeness_bound(v0, ssf.alpha, kh, psi_hat, eps, scn.objective.horizon);
    os << copies << "," << num(eps) << "," << num(delta) << "," << num(ssf.psi) << ","
       << num(ssf.kappa.c) << "," << num(b.delta_hat) << "\n";
  };

  switch (over) {
    case SweepVariable::copies: {
      for (double v : values) {
        const int copies = static_cast<int>(v);
        const NetworkSSF ssf = scn.finite ? compose_stage2(scn, copies, allow_boundary)
                                          : compose_stage1(scn, copies, allow_boundary);
        const double delta = scn.finite ? scn.finite->state_grid.delta() : 0.0;
        for (double eps : scn.objective.epsilons) emit(copies, eps, delta, ssf, 0.0);
      }
      break;
    }
    case SweepVariable::epsilon: {
      const NetworkSSF ssf = scn.finite ? compose_stage2(scn, scn.copies, allow_boundary)
                                        : compose_stage1(scn, scn.copies, allow_boundary);
      const double delta = scn.finite ? scn.finite->state_grid.delta() : 0.0;
      for (double eps : values) emit(scn.copies, eps, delta, ssf, 0.0);
      break;
    }
    case SweepVariable::delta: {
      if (!scn.finite) throw std::runtime_error("delta sweep needs a finite stage");
      for (double delta : values) {
        // rebuild the finite certificate at the requested resolution
        QuadSPSF t = build_finite_spsf(scn.gridded_unit(), scn.finite->cert.M,
                                       scn.finite->cert.K, scn.finite->cert.kappa_hat,
                                       scn.finite->cert.tuning, delta);
        apply_pins(t, scn.finite->cert, delta);
        std::vector<QuadSPSF> spsfs(scn.copies, t);
        FiniteExtras extras;
        extras.delta_tilde_f = PowerFn::linear(scn.finite->delta_tilde_f);
        extras.bar_lambda = PowerFn::linear(scn.finite->bar_lambda);
        extras.mu = Matrix::Zero(scn.copies, scn.copies);
        const GainMatrix gains =
            build_gains(spsfs, Flavor::finite, extras, topology_sources(scn.topology, scn.copies));
        const NetworkSSF ssf = compose_ssf(spsfs, gains, allow_boundary);
        for (double eps : scn.objective.epsilons) emit(scn.copies, eps, delta, ssf, 0.0);
      }
      break;
    }
  }
}

}  // namespace stochabs
