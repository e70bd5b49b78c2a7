#pragma once

#include <optional>
#include <string>
#include <vector>

#include "stochabs/types.hpp"

namespace stochabs {

/// Scalar nonlinearity selected from a named registry so scenario files stay
/// declarative. normalize_slope produces shifted variants phi(s) - a*s.
class ScalarFn {
 public:
  enum class Kind { zero, identity, sine, saturation, tabulated };

  ScalarFn() = default;
  static ScalarFn from_name(const std::string& name);
  static ScalarFn tabulated_fn(std::vector<std::pair<double, double>> points);

  double operator()(double s) const;
  Kind kind() const { return kind_; }
  double shift() const { return shift_; }

  /// Default slope bounds of the registry function (before any shift).
  double default_slope_lo() const;
  double default_slope_hi() const;

  /// The function s -> phi(s) - a*s.
  ScalarFn shifted(double a) const;

  std::string name() const;

 private:
  Kind kind_ = Kind::zero;
  double shift_ = 0.0;
  std::vector<std::pair<double, double>> table_;
};

struct NonlinearTerm {
  Matrix E;        // n x 1
  Matrix F;        // 1 x n
  ScalarFn phi;
  double slope_a = 0.0;
  double slope_b = 0.0;  // may be +inf
};

struct BilinearTerm {
  int input_index = 0;
  Matrix N;  // n x n; contributes nu[j] * N * x
};

/// Discrete-time stochastic control subsystem
///   x+ = A x + sum_t E_t phi_t(F_t x) + B nu + sum_j nu_j N_j x + D w + bias
///        + R diag(noise_std) zeta,    y = C x,
/// with additive standard-normal noise zeta. bias and the bilinear terms are
/// zero for the plain tuple; they cover the room-temperature model where the
/// heater input multiplies (T_h - x) and the environment adds a constant.
struct NonlinearSCS {
  Matrix A, B, C, D, R;
  std::vector<NonlinearTerm> nonlin;
  Vector bias;                        // empty means zero
  std::vector<BilinearTerm> bilinear;
  Vector noise_std;

  int state_dim() const { return static_cast<int>(A.rows()); }
  int input_dim() const { return static_cast<int>(B.cols()); }
  int internal_dim() const { return static_cast<int>(D.cols()); }
  int output_dim() const { return static_cast<int>(C.rows()); }
  int noise_dim() const { return static_cast<int>(R.cols()); }

  /// True when every nonlinearity is absent (zero E or zero phi); such a
  /// system is handled as the linear tuple (A,B,C,D,R).
  bool is_linear() const;

  /// Throws std::invalid_argument on any dimension inconsistency.
  void validate() const;

  Vector step(const Vector& x, const Vector& nu, const Vector& w, const Vector& zeta) const;
  Vector deterministic_step(const Vector& x, const Vector& nu, const Vector& w) const;
  Vector output(const Vector& x) const { return C * x; }

  /// Effective noise map R * diag(noise_std).
  Matrix noise_matrix() const;
};

/// Shifts every nonlinearity to slope bounds (0, b-a) while keeping the step
/// map pointwise identical: A <- A + sum_t a_t E_t F_t, phi_t <- phi_t - a_t s.
NonlinearSCS normalize_slope(const NonlinearSCS& sys);

/// Samples difference quotients of each nonlinearity over a grid and reports
/// any quotient outside the declared slope interval.
struct SlopeCheck {
  bool ok = true;
  double worst_lo = 0.0, worst_hi = 0.0;
};
SlopeCheck spot_check_slopes(const NonlinearSCS& sys, int grid_points = 200, double span = 10.0);

/// How the rows of C are dealt out to the other subsystems; blocks may share
/// rows (both case studies broadcast the full output to every target).
struct OutputBlock {
  int target = 0;      // receiving subsystem
  int row_begin = 0;
  int row_count = 0;
};

struct OutputPartition {
  std::vector<OutputBlock> blocks;
  int external_block = -1;  // index into blocks for y_ii, -1 if none

  const OutputBlock* block_for_target(int target) const;
};

struct Interconnection {
  std::vector<NonlinearSCS> subsystems;
  std::vector<OutputPartition> partitions;
  /// For subsystem i, the ordered sources feeding w_i = [y_{j1,i}; y_{j2,i}; ...].
  std::vector<std::vector<int>> sources;

  int size() const { return static_cast<int>(subsystems.size()); }

  /// Concatenates the source output blocks into w_i given all current outputs.
  Vector gather_internal(int i, const std::vector<Vector>& outputs) const;

  /// Stacked external output of the network.
  Vector external_output(const std::vector<Vector>& states) const;
  int external_output_dim() const;
};

struct EdgeCheck {
  int from = 0, to = 0;
  int provided_rows = 0, expected_rows = 0;
  bool ok = true;
};

struct InterconnectionReport {
  bool pass = true;
  std::vector<EdgeCheck> edges;
  std::vector<std::pair<int, int>> violations;  // (from, to)
};

/// Per-edge dimension matching of Def. "w_{ji} = y_{ij}": every source block
/// feeding w_i must have exactly the width of its slice of D_i, and the slices
/// must tile D_i's columns.
InterconnectionReport validate_interconnection(const Interconnection& net);

enum class Topology { single, ring, complete };

/// Ordered source lists of the standard topologies.
std::vector<std::vector<int>> topology_sources(Topology topology, int copies);

/// N copies of a template subsystem wired in a ring or complete graph with
/// broadcast outputs.
Interconnection make_network(const NonlinearSCS& unit, int copies, Topology topology);

}  // namespace stochabs
