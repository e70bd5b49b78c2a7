#pragma once

#include <iosfwd>
#include <optional>
#include <vector>

#include "stochabs/model.hpp"
#include "stochabs/types.hpp"

namespace stochabs {

/// Uniform rectangular partition with cell centers as representative points.
/// delta() is the largest cell diameter in the infinity norm; the quantizer
/// satisfies |quantize(x) - x|_inf <= delta for in-domain x. A zero-dimension
/// grid is the single empty point (used when there are no internal inputs).
struct Grid {
  Vector lower, upper;
  std::vector<int> cells;

  static Grid empty();
  static Grid uniform(const Vector& lower, const Vector& upper, const std::vector<int>& cells);

  int dims() const { return static_cast<int>(cells.size()); }
  long total() const;
  double width(int d) const { return (upper(d) - lower(d)) / cells[d]; }
  double delta() const;

  Vector center(long flat) const;
  /// Cell containing x; nullopt when x leaves the domain (sink).
  std::optional<long> locate(const Vector& x) const;
  std::optional<Vector> quantize(const Vector& x) const;
  /// Nearest in-domain cell (boundary cells absorb out-of-domain points).
  long locate_clamped(const Vector& x) const;
  /// The grid extended as an unbounded lattice of the same spacing; always
  /// satisfies |snap(x) - x|_inf <= delta.
  Vector snap(const Vector& x) const;
};

/// Row-stochastic transition tensor over grid states plus one absorbing sink
/// for the out-of-domain mass. Rows are indexed by (state, input, internal)
/// cells and laid out row-major with the internal axis fastest.
struct FiniteMDP {
  Grid state_grid, input_grid, internal_grid;
  long n_states = 0, n_inputs = 0, n_internal = 0;
  std::vector<double> probs;  // rows of length n_states + 1, sink last

  long row_index(long s, long u, long w) const { return (s * n_inputs + u) * n_internal + w; }
  const double* row(long s, long u, long w) const {
    return probs.data() + row_index(s, u, w) * (n_states + 1);
  }
  long sink() const { return n_states; }
};

/// Gaussian-CDF kernel: the row at (xhat, uhat, what) integrates the normal
/// around the deterministic step over every cell, one independent noise
/// channel per state dimension. Below sigma_min a channel degenerates to a
/// point mass. Throws when the effective noise covariance is not diagonal.
FiniteMDP build_fmdp(const NonlinearSCS& sys, const Grid& state, const Grid& input,
                     const Grid& internal, double sigma_min = 1e-8, int jobs = 1);

/// Internal-input grids matched to the image of the neighbour output grids.
/// coarsen > 1 keeps every coarsen-th cell and reports the resulting
/// quantization radii; coarsen == 1 gives mu = 0 exactly.
struct InternalAlignment {
  std::vector<Grid> internal_grids;
  Matrix mu;  // mu(a,b): radius of the channel from subsystem a into b
};
InternalAlignment align_internal_grids(const Interconnection& net,
                                       const std::vector<Grid>& state_grids, int coarsen = 1);

/// Portable text export: header lines (counts, grids), then one CSV row per
/// (state, input, internal) triple with probabilities at 17 significant
/// digits, which round-trips doubles bit-exactly.
void export_mdp_csv(const FiniteMDP& mdp, std::ostream& os);
FiniteMDP import_mdp_csv(std::istream& is);

}  // namespace stochabs
