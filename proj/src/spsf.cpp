#include "stochabs/spsf.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace stochabs {

namespace {

Matrix zero_like(int rows, int cols) { return Matrix::Zero(rows, cols); }

Matrix first_E(const NonlinearSCS& sys) {
  if (sys.nonlin.empty()) return zero_like(sys.state_dim(), 1);
  if (sys.nonlin.size() > 1)
    throw std::invalid_argument("certificate checks support a single nonlinearity term");
  return sys.nonlin.front().E;
}

Matrix first_F(const NonlinearSCS& sys) {
  if (sys.nonlin.empty()) return zero_like(1, sys.state_dim());
  return sys.nonlin.front().F;
}

double slope_b_of(const NonlinearSCS& sys) {
  if (sys.nonlin.empty()) return std::numeric_limits<double>::infinity();
  return sys.nonlin.front().slope_b;
}

Matrix sqrt_spd(const Matrix& M) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(M);
  return es.operatorSqrt();
}

void require_pd(const Matrix& M) {
  if (M.rows() != M.cols() || min_eig_sym(0.5 * (M + M.transpose())) <= 0.0)
    throw std::invalid_argument("certificate weight not positive definite");
}

CheckVerdict classify(double margin) {
  if (std::abs(margin) <= kMarginTol) return CheckVerdict::boundary;
  return margin < 0.0 ? CheckVerdict::satisfied : CheckVerdict::violated;
}

/// Shared assembly of the block inequality. channel = B L1 + E (reduced) or
/// E (finite); the channel row/column is dropped when it cannot appear in the
/// error dynamics.
MarginReport block_margin(const NonlinearSCS& sys, const Matrix& G, const Matrix& M,
                          const Matrix& channel, double kappa_hat, double pi) {
  require_pd(M);
  if (pi <= 0.0) throw std::invalid_argument("pi must be positive");
  if (kappa_hat <= 0.0 || kappa_hat >= 1.0)
    throw std::invalid_argument("kappa_hat must lie in (0,1)");

  const Matrix F = first_F(sys);
  const double b = slope_b_of(sys);
  const double young = 1.0 + 2.0 / pi;
  const Matrix top = young * G.transpose() * M * G - kappa_hat * M;

  MarginReport rep;
  rep.min_eig_M = min_eig_sym(M);
  rep.cond_M = max_eig_sym(M) / rep.min_eig_M;

  const bool channel_active = !sys.is_linear() && channel.cwiseAbs().maxCoeff() > 0.0 &&
                              F.cwiseAbs().maxCoeff() > 0.0;
  if (!channel_active) {
    rep.reduced_form = true;
    rep.margin = max_eig_sym(0.5 * (top + top.transpose()));
    rep.verdict = classify(rep.margin);
    return rep;
  }

  const int n = sys.state_dim();
  Matrix diff = Matrix::Zero(n + 1, n + 1);
  diff.topLeftCorner(n, n) = top;
  const Matrix cross = G.transpose() * M * channel + F.transpose();  // LHS12 - (-F')
  diff.block(0, n, n, 1) = cross;
  diff.block(n, 0, 1, n) = cross.transpose();
  const double lhs22 = young * (channel.transpose() * M * channel)(0, 0);
  const double rhs22 = std::isinf(b) ? 0.0 : 2.0 / b;
  diff(n, n) = lhs22 - rhs22;
  rep.margin = max_eig_sym(0.5 * (diff + diff.transpose()));
  rep.verdict = classify(rep.margin);
  return rep;
}

}  // namespace

const char* to_string(CheckVerdict v) {
  switch (v) {
    case CheckVerdict::satisfied: return "satisfied";
    case CheckVerdict::boundary: return "boundary";
    default: return "violated";
  }
}

double Tuning::kappa_tilde_for(double kappa_hat) const {
  return kappa_tilde.value_or(1.0 - kappa_hat);
}

void Tuning::validate(double kappa_hat) const {
  if (pi <= 0.0) throw std::invalid_argument("pi must be positive");
  if (pi_tilde <= 0.0 || pi_tilde >= 1.0) throw std::invalid_argument("pi_tilde must lie in (0,1)");
  if (delta_tilde <= 0.0) throw std::invalid_argument("delta_tilde must be positive");
  const double kt = kappa_tilde_for(kappa_hat);
  if (kt <= 0.0 || kt > 1.0 - kappa_hat + 1e-12)
    throw std::invalid_argument("kappa_tilde must lie in (0, 1 - kappa_hat]");
}

MarginReport check_reduced_block_inequality(const NonlinearSCS& sys, const NonlinearSCS& abs_sys, const Matrix& M,
                        const Matrix& K, const Matrix& L1, const Matrix& P, const Matrix& R_tilde,
                        double kappa_hat, double pi) {
  (void)abs_sys;
  (void)P;
  (void)R_tilde;
  const Matrix G = sys.A + sys.B * K;
  const Matrix channel = sys.B * L1 + first_E(sys);
  return block_margin(sys, G, M, channel, kappa_hat, pi);
}

MarginReport check_finite_block_inequality(const NonlinearSCS& sys, const Matrix& M, const Matrix& K,
                         double kappa_hat, double pi) {
  const Matrix G = sys.A + sys.B * K;
  return block_margin(sys, G, M, first_E(sys), kappa_hat, pi);
}

double ResidualReport::residual(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return e.residual;
  throw std::invalid_argument("no residual named " + name);
}

ResidualReport check_structural(const NonlinearSCS& sys, const NonlinearSCS& abs_sys,
                                const Matrix& P, const Matrix& Q, const Matrix& S,
                                const Matrix& L1, const Matrix& L2) {
  ResidualReport rep;
  auto push = [&rep](const std::string& name, const Matrix& lhs, const Matrix& rhs) {
    ResidualEntry e;
    e.name = name;
    e.residual = lhs.size() ? (lhs - rhs).cwiseAbs().maxCoeff() : 0.0;
    e.pass = e.residual <= rep.tol;
    rep.pass = rep.pass && e.pass;
    rep.entries.push_back(e);
  };
  const Matrix S_eff = S.size() ? S : zero_like(sys.input_dim(), sys.internal_dim());
  push("AP = P*Ahat - B*Q", sys.A * P, P * abs_sys.A - sys.B * Q);
  push("E = P*Ehat - B*(L1-L2)", first_E(sys), P * first_E(abs_sys) - sys.B * (L1 - L2));
  push("D = P*Dhat - B*S", sys.D, P * abs_sys.D - sys.B * S_eff);
  push("R = P*Rhat", sys.R, P * abs_sys.R);
  push("Fhat = F*P", first_F(abs_sys), first_F(sys) * P);
  push("Chat = C*P", abs_sys.C, sys.C * P);
  return rep;
}

Matrix optimal_R_tilde(const Matrix& B, const Matrix& M, const Matrix& P, const Matrix& B_hat) {
  const Matrix gram = B.transpose() * M * B;
  Eigen::FullPivLU<Matrix> lu(gram);
  if (!lu.isInvertible()) {
    std::ostringstream msg;
    msg << "B'MB singular: rank " << lu.rank() << " of " << gram.rows();
    throw std::runtime_error(msg.str());
  }
  return lu.solve(B.transpose() * M * P * B_hat);
}

namespace {

PowerFn alpha_gain(const Matrix& M, const Matrix& C, int n) {
  const double lmax_ctc = max_eig_sym(C.transpose() * C);
  return PowerFn::quadratic(min_eig_sym(M) / (n * lmax_ctc));
}

PowerFn rho_int_gain(const NonlinearSCS& sys, const Matrix& M, double kt, const Tuning& t) {
  const int p = sys.internal_dim();
  if (p == 0) return PowerFn::zero();
  const double norm2 = spectral_norm(sqrt_spd(M) * sys.D);
  const double coef = (1.0 + t.delta_tilde) * (1.0 / (kt * t.pi_tilde)) * p *
                      (1.0 + 2.0 * t.pi + 1.0 / t.pi) * norm2 * norm2;
  return coef == 0.0 ? PowerFn::zero() : PowerFn::quadratic(coef);
}

}  // namespace

QuadSPSF build_reduced_spsf(const NonlinearSCS& sys, const NonlinearSCS& abs_sys, const Matrix& M,
                            const Matrix& P, const InterfaceMatrices& iface, double kappa_hat,
                            const Tuning& tuning) {
  tuning.validate(kappa_hat);
  if (!iface.K || !iface.L1 || !iface.L2 || !iface.Q || !iface.R_tilde)
    throw std::invalid_argument("reduced construction needs K, Q, L1, L2 and R_tilde");
  const auto reduced_margin = check_reduced_block_inequality(sys, abs_sys, M, *iface.K, *iface.L1, P, *iface.R_tilde, kappa_hat,
                               tuning.pi);
  if (reduced_margin.verdict == CheckVerdict::violated)
    throw std::runtime_error("block inequality violated, margin " + std::to_string(reduced_margin.margin));
  const Matrix S_eff = iface.S ? *iface.S : zero_like(sys.input_dim(), sys.internal_dim());
  const auto structural = check_structural(sys, abs_sys, P, *iface.Q, S_eff, *iface.L1, *iface.L2);
  if (!structural.pass) throw std::runtime_error("structural conditions violated");

  QuadSPSF s;
  s.M = M;
  s.P = P;
  s.interface = iface;
  if (!s.interface.S) s.interface.S = S_eff;
  s.F = first_F(sys);
  s.phi = sys.nonlin.empty() ? ScalarFn() : sys.nonlin.front().phi;
  const double kt = tuning.kappa_tilde_for(kappa_hat);
  s.alpha = alpha_gain(M, sys.C, sys.state_dim());
  s.kappa = PowerFn::linear(1.0 - (1.0 - tuning.pi_tilde) * kt);
  s.rho_int = rho_int_gain(sys, M, kt, tuning);
  const Matrix H = sys.B * (*iface.R_tilde) - P * abs_sys.B;
  const double hnorm = spectral_norm(sqrt_spd(M) * H);
  const double rho_ext_coef = (1.0 + 1.0 / tuning.delta_tilde) * (1.0 / (kt * tuning.pi_tilde)) *
                              sys.input_dim() * (1.0 + 3.0 * tuning.pi) * hnorm * hnorm;
  s.rho_ext = rho_ext_coef == 0.0 ? PowerFn::zero() : PowerFn::quadratic(rho_ext_coef);
  s.psi = 0.0;
  return s;
}

QuadSPSF build_finite_spsf(const NonlinearSCS& sys, const Matrix& M, const Matrix& K,
                           double kappa_hat, const Tuning& tuning, double delta) {
  tuning.validate(kappa_hat);
  if (delta < 0.0) throw std::invalid_argument("grid parameter must be nonnegative");
  const auto finite_margin = check_finite_block_inequality(sys, M, K, kappa_hat, tuning.pi);
  if (finite_margin.verdict == CheckVerdict::violated)
    throw std::runtime_error("block inequality violated, margin " + std::to_string(finite_margin.margin));

  QuadSPSF s;
  s.M = M;
  s.P = Matrix::Identity(sys.state_dim(), sys.state_dim());
  s.interface.K = K;
  s.F = first_F(sys);
  s.phi = sys.nonlin.empty() ? ScalarFn() : sys.nonlin.front().phi;
  const double kt = tuning.kappa_tilde_for(kappa_hat);
  s.alpha = alpha_gain(M, sys.C, sys.state_dim());
  s.kappa = PowerFn::linear(1.0 - (1.0 - tuning.pi_tilde) * kt);
  s.rho_int = rho_int_gain(sys, M, kt, tuning);
  s.rho_ext = PowerFn::zero();
  s.psi = (1.0 + 1.0 / tuning.delta_tilde) * (1.0 / (kt * tuning.pi_tilde)) * sys.state_dim() *
          (1.0 + 3.0 * tuning.pi) * max_eig_sym(M) * delta * delta;
  return s;
}

Vector interface_reduced(const QuadSPSF& spsf, const Vector& x, const Vector& x_hat,
                         const Vector& nu_hat, const Vector& w_hat) {
  const auto& it = spsf.interface;
  if (!it.K || !it.Q || !it.R_tilde || !it.L1 || !it.L2)
    throw std::invalid_argument("interface matrices missing");
  Vector nu = (*it.K) * (x - spsf.P * x_hat) + (*it.Q) * x_hat + (*it.R_tilde) * nu_hat;
  if (it.S && it.S->size() && w_hat.size()) nu += (*it.S) * w_hat;
  if (spsf.F.size()) {
    const double phix = spsf.phi((spsf.F * x)(0));
    const double phixh = spsf.phi((spsf.F * spsf.P * x_hat)(0));
    nu += it.L1->col(0) * phix - it.L2->col(0) * phixh;
  }
  return nu;
}

Vector interface_finite(const QuadSPSF& spsf, const Vector& x, const Vector& x_hat,
                        const Vector& nu_hat) {
  if (!spsf.interface.K) throw std::invalid_argument("interface matrices missing");
  return (*spsf.interface.K) * (x - x_hat) + nu_hat;
}

double evaluate_spsf(const QuadSPSF& spsf, const Vector& x, const Vector& x_hat) {
  if (x.size() != spsf.P.rows() || x_hat.size() != spsf.P.cols())
    throw std::invalid_argument("evaluate_spsf: dimension mismatch");
  const Vector e = x - spsf.P * x_hat;
  return e.dot(spsf.M * e);
}

SPSFGains general_iss_to_spsf(const DeltaISSCertificate& cert, const GeneralTuning& tuning,
                              double delta) {
  if (!tuning.pi_tilde_f.is_linear() || tuning.pi_tilde_f.c >= 1.0 || tuning.pi_tilde_f.is_zero())
    throw std::invalid_argument("Id - pi_tilde_f must be K-infinity (linear coefficient < 1)");
  if (!tuning.bar_lambda.is_linear() || tuning.bar_lambda.c <= 1.0)
    throw std::invalid_argument("bar_lambda - Id must be K-infinity (linear coefficient > 1)");
  if (!tuning.underline_kappa.is_linear() || tuning.underline_kappa.c >= 1.0 ||
      tuning.underline_kappa.is_zero())
    throw std::invalid_argument("Id - underline_kappa must be K-infinity (linear coefficient < 1)");
  for (double s : {1e-6, 1e-3, 1.0, 1e3, 1e6}) {
    if (tuning.underline_kappa(s) > cert.bar_kappa(s) * (1.0 + 1e-12))
      throw std::invalid_argument("underline_kappa exceeds bar_kappa");
  }
  if (tuning.delta_tilde_f.is_zero())
    throw std::invalid_argument("delta_tilde_f must be K-infinity");

  SPSFGains g;
  g.kappa = identity_minus(compose(identity_minus(tuning.pi_tilde_f), tuning.underline_kappa));
  const PowerFn lift = compose(inverse(tuning.underline_kappa),
                               compose(inverse(tuning.pi_tilde_f), tuning.bar_lambda));
  g.rho_int = compose(plus_identity(tuning.delta_tilde_f).fn, compose(lift, cert.bar_rho_int));
  if (cert.gamma.is_zero()) {
    g.psi = 0.0;
  } else {
    const PowerFn gamma_tilde =
        compose(plus_identity_inverse(tuning.delta_tilde_f).fn,
                compose(lift, compose(minus_identity_inverse(tuning.bar_lambda), cert.gamma)));
    g.psi = gamma_tilde(delta);
  }
  g.rho_ext = PowerFn::zero();
  g.alpha = compose(cert.underline_alpha, inverse(tuning.output_lipschitz));
  return g;
}

}  // namespace stochabs
