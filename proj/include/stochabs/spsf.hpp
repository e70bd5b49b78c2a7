#pragma once

#include <optional>
#include <string>
#include <vector>

#include "stochabs/kinf.hpp"
#include "stochabs/model.hpp"
#include "stochabs/types.hpp"

namespace stochabs {

/// Interface matrices of the refinement map
///   nu = K(x - P xhat) + Q xhat + Rt nuhat + S what + L1 phi(Fx) - L2 phi(FP xhat).
/// Any entry that a construction does not use stays empty.
struct InterfaceMatrices {
  std::optional<Matrix> K, Q, S, L1, L2, R_tilde;
};

/// Quadratic certificate S(x, xhat) = (x - P xhat)' M (x - P xhat) together
/// with its derived comparison gains. F/phi are kept so the interface map is
/// self-contained.
struct QuadSPSF {
  Matrix M;
  Matrix P;
  InterfaceMatrices interface;
  PowerFn alpha;
  PowerFn kappa;
  PowerFn rho_int;
  PowerFn rho_ext;
  double psi = 0.0;
  Matrix F;      // 1 x n nonlinearity readout (may be empty)
  ScalarFn phi;

  int concrete_dim() const { return static_cast<int>(P.rows()); }
  int abstract_dim() const { return static_cast<int>(P.cols()); }
};

/// Free constants of the max-form decomposition. kappa_tilde defaults to
/// 1 - kappa_hat; any smaller positive value is also admissible and the case
/// studies use such overrides.
struct Tuning {
  double pi = 1.0;
  double pi_tilde = 0.99;
  double delta_tilde = 1.0;
  std::optional<double> kappa_tilde;

  double kappa_tilde_for(double kappa_hat) const;
  void validate(double kappa_hat) const;
};

enum class CheckVerdict { satisfied, boundary, violated };
const char* to_string(CheckVerdict v);

struct MarginReport {
  double margin = 0.0;  // lambda_max(LHS - RHS); <= 0 means satisfied
  CheckVerdict verdict = CheckVerdict::violated;
  bool reduced_form = false;  // nonlinearity channel inert, (1,1) block only
  double min_eig_M = 0.0;
  double cond_M = 0.0;
  std::string detail;
};

/// Pass iff margin <= tol; |margin| <= tol reports boundary.
constexpr double kMarginTol = 1e-9;

/// Lyapunov-type block inequality for the reduced-order construction. When
/// the error dynamics never see the nonlinearity channel (B L1 + E = 0, or
/// F = 0, or the system is linear) the check reduces to
/// (1+2/pi)(A+BK)'M(A+BK) <= kappa_hat M; the stated case-study constants
/// satisfy only this reduced form, not the full coupled matrix.
MarginReport check_reduced_block_inequality(const NonlinearSCS& sys, const NonlinearSCS& abs_sys, const Matrix& M,
                        const Matrix& K, const Matrix& L1, const Matrix& P, const Matrix& R_tilde,
                        double kappa_hat, double pi);

/// Same inequality for the finite-abstraction construction (P = I, channel
/// matrix E).
MarginReport check_finite_block_inequality(const NonlinearSCS& sys, const Matrix& M, const Matrix& K,
                         double kappa_hat, double pi);

struct ResidualEntry {
  std::string name;
  double residual = 0.0;
  bool pass = true;
};

struct ResidualReport {
  std::vector<ResidualEntry> entries;
  bool pass = true;
  double tol = 1e-9;

  double residual(const std::string& name) const;
};

/// Max-norm residuals of the six structural equalities
///   AP = P Ahat - B Q,  E = P Ehat - B(L1 - L2),  D = P Dhat - B S,
///   R = P Rhat,  Fhat = F P,  Chat = C P.
ResidualReport check_structural(const NonlinearSCS& sys, const NonlinearSCS& abs_sys,
                                const Matrix& P, const Matrix& Q, const Matrix& S,
                                const Matrix& L1, const Matrix& L2);

/// Least-squares minimizer (B'MB)^{-1} B'M P Bhat of the external-input
/// mismatch; throws with a rank diagnostic when B'MB is singular.
Matrix optimal_R_tilde(const Matrix& B, const Matrix& M, const Matrix& P, const Matrix& B_hat);

/// Derived gains of the reduced-order certificate:
///   alpha  = lmin(M)/(n lmax(C'C)) s^2
///   kappa  = (1-(1-pi_t) kappa_t) s
///   rho_i  = (1+dt)(1/(kappa_t pi_t)) p(1+2pi+1/pi) |sqrtM D|_2^2 s^2
///   rho_e  = (1+1/dt)(1/(kappa_t pi_t)) m(1+3pi) |sqrtM(B Rt - P Bhat)|_2^2 s^2
/// with psi = 0.
QuadSPSF build_reduced_spsf(const NonlinearSCS& sys, const NonlinearSCS& abs_sys, const Matrix& M,
                            const Matrix& P, const InterfaceMatrices& iface, double kappa_hat,
                            const Tuning& tuning);

/// Finite-abstraction certificate (P = I): rho_ext = 0 and
/// psi = (1+1/dt)(1/(kappa_t pi_t)) n(1+3pi) lmax(M) delta^2.
QuadSPSF build_finite_spsf(const NonlinearSCS& sys, const Matrix& M, const Matrix& K,
                           double kappa_hat, const Tuning& tuning, double delta);

Vector interface_reduced(const QuadSPSF& spsf, const Vector& x, const Vector& x_hat,
                         const Vector& nu_hat, const Vector& w_hat);

/// nu = K(x - xhat) + nuhat.
Vector interface_finite(const QuadSPSF& spsf, const Vector& x, const Vector& x_hat,
                        const Vector& nu_hat);

double evaluate_spsf(const QuadSPSF& spsf, const Vector& x, const Vector& x_hat);

/// Incremental ISS certificate of the general construction route.
struct DeltaISSCertificate {
  PowerFn underline_alpha, overline_alpha;
  PowerFn bar_kappa;
  PowerFn bar_rho_int, bar_rho_ext;
  PowerFn gamma;
};

struct GeneralTuning {
  PowerFn pi_tilde_f;      // linear, coefficient < 1
  PowerFn delta_tilde_f;   // any K-infinity power form
  PowerFn bar_lambda;      // linear, coefficient > 1
  PowerFn underline_kappa; // linear, coefficient < 1, <= bar_kappa on a grid
  PowerFn output_lipschitz = PowerFn::identity();
};

struct SPSFGains {
  PowerFn alpha, kappa, rho_int, rho_ext;
  double psi = 0.0;
};

/// General-route gain set:
///   kappa   = Id - (Id - pi_f) o uk
///   rho_int = (Id + df) o uk^{-1} o pi_f^{-1} o lam o bar_rho_int
///   psi     = [(Id + df^{-1}) o uk^{-1} o pi_f^{-1} o lam o (lam-Id)^{-1} o gamma](delta)
///   alpha   = underline_alpha o output_lipschitz^{-1}
SPSFGains general_iss_to_spsf(const DeltaISSCertificate& cert, const GeneralTuning& tuning,
                              double delta);

}  // namespace stochabs
