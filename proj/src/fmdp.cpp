#include "stochabs/fmdp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "stochabs/parallel.hpp"
#include "stochabs/stats.hpp"

namespace stochabs {

Grid Grid::empty() {
  Grid g;
  g.lower = Vector(0);
  g.upper = Vector(0);
  return g;
}

Grid Grid::uniform(const Vector& lower, const Vector& upper, const std::vector<int>& cells) {
  if (lower.size() != upper.size() || static_cast<std::size_t>(lower.size()) != cells.size())
    throw std::invalid_argument("grid: bound/cell dimensions differ");
  for (int d = 0; d < lower.size(); ++d) {
    if (!(lower(d) < upper(d))) throw std::invalid_argument("grid: lower must be below upper");
    if (cells[d] < 1) throw std::invalid_argument("grid: cells must be positive");
  }
  Grid g;
  g.lower = lower;
  g.upper = upper;
  g.cells = cells;
  return g;
}

long Grid::total() const {
  long t = 1;
  for (int c : cells) t *= c;
  return t;
}

double Grid::delta() const {
  double d = 0.0;
  for (int k = 0; k < dims(); ++k) d = std::max(d, width(k));
  return d;
}

Vector Grid::center(long flat) const {
  Vector x(dims());
  for (int d = dims() - 1; d >= 0; --d) {
    const long i = flat % cells[d];
    flat /= cells[d];
    x(d) = lower(d) + (i + 0.5) * width(d);
  }
  return x;
}

std::optional<long> Grid::locate(const Vector& x) const {
  if (x.size() != dims()) throw std::invalid_argument("grid: point dimension mismatch");
  long flat = 0;
  for (int d = 0; d < dims(); ++d) {
    if (x(d) < lower(d) || x(d) > upper(d)) return std::nullopt;
    long i = static_cast<long>(std::floor((x(d) - lower(d)) / width(d)));
    i = std::clamp<long>(i, 0, cells[d] - 1);
    flat = flat * cells[d] + i;
  }
  return flat;
}

std::optional<Vector> Grid::quantize(const Vector& x) const {
  const auto idx = locate(x);
  if (!idx) return std::nullopt;
  return center(*idx);
}

long Grid::locate_clamped(const Vector& x) const {
  if (x.size() != dims()) throw std::invalid_argument("grid: point dimension mismatch");
  long flat = 0;
  for (int d = 0; d < dims(); ++d) {
    long i = static_cast<long>(std::floor((x(d) - lower(d)) / width(d)));
    i = std::clamp<long>(i, 0, cells[d] - 1);
    flat = flat * cells[d] + i;
  }
  return flat;
}

Vector Grid::snap(const Vector& x) const {
  if (x.size() != dims()) throw std::invalid_argument("grid: point dimension mismatch");
  Vector q(dims());
  for (int d = 0; d < dims(); ++d) {
    const double w = width(d);
    q(d) = lower(d) + (std::floor((x(d) - lower(d)) / w) + 0.5) * w;
  }
  return q;
}

namespace {

Vector diagonal_noise_std(const NonlinearSCS& sys) {
  const Matrix gamma = sys.noise_matrix();
  const Matrix gram = gamma * gamma.transpose();
  const double scale = std::max(1.0, gram.cwiseAbs().maxCoeff());
  for (int i = 0; i < gram.rows(); ++i)
    for (int j = 0; j < gram.cols(); ++j)
      if (i != j && std::abs(gram(i, j)) > 1e-12 * scale)
        throw std::invalid_argument("kernel requires per-dimension independent noise");
  return gram.diagonal().cwiseSqrt();
}

}  // namespace

FiniteMDP build_fmdp(const NonlinearSCS& sys, const Grid& state, const Grid& input,
                     const Grid& internal, double sigma_min, int jobs) {
  if (state.dims() != sys.state_dim()) throw std::invalid_argument("state grid dimension mismatch");
  if (input.dims() != sys.input_dim()) throw std::invalid_argument("input grid dimension mismatch");
  if (internal.dims() != sys.internal_dim())
    throw std::invalid_argument("internal grid dimension mismatch");
  const Vector sigma = diagonal_noise_std(sys);

  FiniteMDP mdp;
  mdp.state_grid = state;
  mdp.input_grid = input;
  mdp.internal_grid = internal;
  mdp.n_states = state.total();
  mdp.n_inputs = input.total();
  mdp.n_internal = internal.total();
  const long rows = mdp.n_states * mdp.n_inputs * mdp.n_internal;
  const long cols = mdp.n_states + 1;
  if (rows <= 0 || rows * cols > 250'000'000L)
    throw std::runtime_error("transition tensor too large");
  mdp.probs.assign(static_cast<std::size_t>(rows * cols), 0.0);

  const int n = sys.state_dim();
  parallel_for(rows, jobs, [&](long r) {
    const long w = r % mdp.n_internal;
    const long u = (r / mdp.n_internal) % mdp.n_inputs;
    const long s = r / (mdp.n_internal * mdp.n_inputs);
    const Vector mean =
        sys.deterministic_step(state.center(s), input.center(u), internal.center(w));
    // per-dimension cell masses from CDF differences at the cell edges
    std::vector<std::vector<double>> factor(n);
    for (int d = 0; d < n; ++d) {
      factor[d].assign(state.cells[d], 0.0);
      if (sigma(d) < sigma_min) {
        const double pos = mean(d);
        if (pos >= state.lower(d) && pos <= state.upper(d)) {
          long i = static_cast<long>(std::floor((pos - state.lower(d)) / state.width(d)));
          i = std::clamp<long>(i, 0, state.cells[d] - 1);
          factor[d][i] = 1.0;
        }
        continue;
      }
      double prev = normal_cdf((state.lower(d) - mean(d)) / sigma(d));
      for (int i = 0; i < state.cells[d]; ++i) {
        const double edge = state.lower(d) + (i + 1) * state.width(d);
        const double next = normal_cdf((edge - mean(d)) / sigma(d));
        factor[d][i] = std::max(0.0, next - prev);
        prev = next;
      }
    }
    double* row = mdp.probs.data() + r * cols;
    double total = 0.0;
    for (long sp = 0; sp < mdp.n_states; ++sp) {
      long rest = sp;
      double p = 1.0;
      for (int d = n - 1; d >= 0; --d) {
        p *= factor[d][rest % state.cells[d]];
        rest /= state.cells[d];
        if (p == 0.0) break;
      }
      row[sp] = p;
      total += p;
    }
    row[mdp.n_states] = std::max(0.0, 1.0 - total);
  });
  return mdp;
}

InternalAlignment align_internal_grids(const Interconnection& net,
                                       const std::vector<Grid>& state_grids, int coarsen) {
  if (coarsen < 1) throw std::invalid_argument("coarsen factor must be >= 1");
  InternalAlignment out;
  const int N = net.size();
  out.mu = Matrix::Zero(N, N);
  out.internal_grids.resize(N);
  for (int i = 0; i < N; ++i) {
    std::vector<double> lo, hi;
    std::vector<int> cells;
    for (int j : net.sources[i]) {
      const OutputBlock* blk = net.partitions[j].block_for_target(i);
      if (!blk) continue;
      const Matrix& C = net.subsystems[j].C;
      double channel_mu = 0.0;
      for (int r = blk->row_begin; r < blk->row_begin + blk->row_count; ++r) {
        int nz = -1;
        for (int c = 0; c < C.cols(); ++c) {
          if (C(r, c) == 0.0) continue;
          if (nz >= 0) throw std::invalid_argument("output row is not a coordinate projection");
          nz = c;
        }
        if (nz < 0) {  // identically-zero output row, single cell centered at 0
          lo.push_back(-0.5);
          hi.push_back(0.5);
          cells.push_back(1);
          continue;
        }
        const double a = C(r, nz) * state_grids[j].lower(nz);
        const double b = C(r, nz) * state_grids[j].upper(nz);
        lo.push_back(std::min(a, b));
        hi.push_back(std::max(a, b));
        const int fine = state_grids[j].cells[nz];
        const int coarse = std::max(1, fine / coarsen);
        cells.push_back(coarse);
        if (coarsen > 1) {
          const double fine_w = (hi.back() - lo.back()) / fine;
          const double coarse_w = (hi.back() - lo.back()) / coarse;
          channel_mu = std::max(channel_mu, coarse_w - fine_w);
        }
      }
      out.mu(j, i) = std::max(out.mu(j, i), channel_mu);
    }
    if (lo.empty()) {
      out.internal_grids[i] = Grid::empty();
      continue;
    }
    Vector l(lo.size()), h(hi.size());
    for (std::size_t k = 0; k < lo.size(); ++k) {
      l(k) = lo[k];
      h(k) = hi[k];
    }
    out.internal_grids[i] = Grid::uniform(l, h, cells);
  }
  return out;
}

namespace {

void write_grid(std::ostream& os, const char* name, const Grid& g) {
  os << name << "," << g.dims();
  char buf[40];
  for (int d = 0; d < g.dims(); ++d) {
    std::snprintf(buf, sizeof buf, ",%.17g", g.lower(d));
    os << buf;
  }
  for (int d = 0; d < g.dims(); ++d) {
    std::snprintf(buf, sizeof buf, ",%.17g", g.upper(d));
    os << buf;
  }
  for (int d = 0; d < g.dims(); ++d) os << "," << g.cells[d];
  os << "\n";
}

Grid read_grid(const std::string& line, const char* name) {
  std::stringstream ss(line);
  std::string tok;
  std::getline(ss, tok, ',');
  if (tok != name) throw std::runtime_error("mdp import: expected " + std::string(name));
  std::getline(ss, tok, ',');
  const int d = std::stoi(tok);
  if (d == 0) return Grid::empty();
  Vector lo(d), hi(d);
  std::vector<int> cells(d);
  for (int k = 0; k < d; ++k) { std::getline(ss, tok, ','); lo(k) = std::stod(tok); }
  for (int k = 0; k < d; ++k) { std::getline(ss, tok, ','); hi(k) = std::stod(tok); }
  for (int k = 0; k < d; ++k) { std::getline(ss, tok, ','); cells[k] = std::stoi(tok); }
  return Grid::uniform(lo, hi, cells);
}

}  // namespace

void export_mdp_csv(const FiniteMDP& mdp, std::ostream& os) {
  os << "finite-mdp,v1\n";
  os << "counts," << mdp.n_states << "," << mdp.n_inputs << "," << mdp.n_internal << "\n";
  write_grid(os, "state_grid", mdp.state_grid);
  write_grid(os, "input_grid", mdp.input_grid);
  write_grid(os, "internal_grid", mdp.internal_grid);
  char buf[40];
  for (long s = 0; s < mdp.n_states; ++s) {
    for (long u = 0; u < mdp.n_inputs; ++u) {
      for (long w = 0; w < mdp.n_internal; ++w) {
        os << "row," << s << "," << u << "," << w;
        const double* row = mdp.row(s, u, w);
        for (long c = 0; c <= mdp.n_states; ++c) {
          std::snprintf(buf, sizeof buf, ",%.17g", row[c]);
          os << buf;
        }
        os << "\n";
      }
    }
  }
}

FiniteMDP import_mdp_csv(std::istream& is) {
  std::string line;
  std::getline(is, line);
  if (line != "finite-mdp,v1") throw std::runtime_error("mdp import: bad magic");
  std::getline(is, line);
  long S, U, W;
  if (std::sscanf(line.c_str(), "counts,%ld,%ld,%ld", &S, &U, &W) != 3)
    throw std::runtime_error("mdp import: bad counts");
  FiniteMDP mdp;
  std::getline(is, line);
  mdp.state_grid = read_grid(line, "state_grid");
  std::getline(is, line);
  mdp.input_grid = read_grid(line, "input_grid");
  std::getline(is, line);
  mdp.internal_grid = read_grid(line, "internal_grid");
  mdp.n_states = S;
  mdp.n_inputs = U;
  mdp.n_internal = W;
  mdp.probs.assign(static_cast<std::size_t>(S * U * W * (S + 1)), 0.0);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string tok;
    std::getline(ss, tok, ',');
    if (tok != "row") throw std::runtime_error("mdp import: expected row");
    std::getline(ss, tok, ',');
    const long s = std::stol(tok);
    std::getline(ss, tok, ',');
    const long u = std::stol(tok);
    std::getline(ss, tok, ',');
    const long w = std::stol(tok);
    double* row = mdp.probs.data() + mdp.row_index(s, u, w) * (S + 1);
    for (long c = 0; c <= S; ++c) {
      std::getline(ss, tok, ',');
      row[c] = std::stod(tok);
    }
  }
  return mdp;
}

}  // namespace stochabs
