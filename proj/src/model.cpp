#include "stochabs/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace stochabs {

namespace {
double clamp01sym(double s) { return std::clamp(s, -1.0, 1.0); }
}  // namespace

ScalarFn ScalarFn::from_name(const std::string& name) {
  ScalarFn f;
  if (name == "zero") f.kind_ = Kind::zero;
  else if (name == "identity") f.kind_ = Kind::identity;
  else if (name == "sin") f.kind_ = Kind::sine;
  else if (name == "sat" || name == "saturation") f.kind_ = Kind::saturation;
  else throw std::invalid_argument("unknown nonlinearity '" + name + "'");
  return f;
}

ScalarFn ScalarFn::tabulated_fn(std::vector<std::pair<double, double>> points) {
  if (points.size() < 2) throw std::invalid_argument("tabulated nonlinearity needs >= 2 points");
  std::sort(points.begin(), points.end());
  ScalarFn f;
  f.kind_ = Kind::tabulated;
  f.table_ = std::move(points);
  return f;
}

double ScalarFn::operator()(double s) const {
  double base = 0.0;
  switch (kind_) {
    case Kind::zero: base = 0.0; break;
    case Kind::identity: base = s; break;
    case Kind::sine: base = std::sin(s); break;
    case Kind::saturation: base = clamp01sym(s); break;
    case Kind::tabulated: {
      if (s <= table_.front().first) {
        base = table_.front().second;
      } else if (s >= table_.back().first) {
        base = table_.back().second;
      } else {
        auto it = std::upper_bound(table_.begin(), table_.end(), std::make_pair(s, std::numeric_limits<double>::infinity()));
        auto lo = std::prev(it);
        double t = (s - lo->first) / (it->first - lo->first);
        base = lo->second + t * (it->second - lo->second);
      }
      break;
    }
  }
  return base - shift_ * s;
}

double ScalarFn::default_slope_lo() const {
  switch (kind_) {
    case Kind::zero: return 0.0;
    case Kind::identity: return 1.0;
    case Kind::sine: return -1.0;
    case Kind::saturation: return 0.0;
    case Kind::tabulated: {
      double lo = std::numeric_limits<double>::infinity();
      for (std::size_t k = 1; k < table_.size(); ++k)
        lo = std::min(lo, (table_[k].second - table_[k - 1].second) / (table_[k].first - table_[k - 1].first));
      return std::min(lo, 0.0);
    }
  }
  return 0.0;
}

double ScalarFn::default_slope_hi() const {
  switch (kind_) {
    case Kind::zero: return 0.0;
    case Kind::identity: return 1.0;
    case Kind::sine: return 1.0;
    case Kind::saturation: return 1.0;
    case Kind::tabulated: {
      double hi = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 1; k < table_.size(); ++k)
        hi = std::max(hi, (table_[k].second - table_[k - 1].second) / (table_[k].first - table_[k - 1].first));
      return std::max(hi, 0.0);
    }
  }
  return 0.0;
}

ScalarFn ScalarFn::shifted(double a) const {
  ScalarFn f = *this;
  f.shift_ += a;
  return f;
}

std::string ScalarFn::name() const {
  std::string base;
  switch (kind_) {
    case Kind::zero: base = "zero"; break;
    case Kind::identity: base = "identity"; break;
    case Kind::sine: base = "sin"; break;
    case Kind::saturation: base = "sat"; break;
    case Kind::tabulated: base = "tabulated"; break;
  }
  if (shift_ != 0.0) base += "-" + std::to_string(shift_) + "*s";
  return base;
}

bool NonlinearSCS::is_linear() const {
  for (const auto& t : nonlin) {
    if (t.phi.kind() == ScalarFn::Kind::zero && t.phi.shift() == 0.0) continue;
    if (t.E.size() && t.E.cwiseAbs().maxCoeff() > 0.0) return false;
  }
  return true;
}

void NonlinearSCS::validate() const {
  const int n = state_dim();
  auto fail = [](const std::string& msg) { throw std::invalid_argument(msg); };
  if (A.rows() != A.cols()) fail("A must be square");
  if (B.rows() != n) fail("B row count must match state dimension");
  if (C.cols() != n) fail("C column count must match state dimension");
  if (D.rows() != n) fail("D row count must match state dimension");
  if (R.rows() != n) fail("R row count must match state dimension");
  if (noise_std.size() != R.cols()) fail("noise_std length must match noise channel count");
  if (bias.size() && bias.size() != n) fail("bias length must match state dimension");
  for (const auto& t : nonlin) {
    if (t.E.rows() != n || t.E.cols() != 1) fail("nonlinearity E must be n x 1");
    if (t.F.rows() != 1 || t.F.cols() != n) fail("nonlinearity F must be 1 x n");
    if (t.slope_a > t.slope_b) fail("slope_a must not exceed slope_b");
  }
  for (const auto& b : bilinear) {
    if (b.input_index < 0 || b.input_index >= input_dim()) fail("bilinear input index out of range");
    if (b.N.rows() != n || b.N.cols() != n) fail("bilinear N must be n x n");
  }
}

Vector NonlinearSCS::deterministic_step(const Vector& x, const Vector& nu, const Vector& w) const {
  if (x.size() != state_dim() || nu.size() != input_dim() || w.size() != internal_dim())
    throw std::invalid_argument("step: dimension mismatch");
  Vector next = A * x + B * nu;
  for (const auto& t : nonlin) {
    const double arg = (t.F * x)(0);
    next += t.E.col(0) * t.phi(arg);
  }
  for (const auto& b : bilinear) next += nu(b.input_index) * (b.N * x);
  if (w.size()) next += D * w;
  if (bias.size()) next += bias;
  return next;
}

Vector NonlinearSCS::step(const Vector& x, const Vector& nu, const Vector& w, const Vector& zeta) const {
  if (zeta.size() != noise_dim()) throw std::invalid_argument("step: noise dimension mismatch");
  Vector next = deterministic_step(x, nu, w);
  if (zeta.size()) next += R * noise_std.cwiseProduct(zeta);
  return next;
}

Matrix NonlinearSCS::noise_matrix() const { return R * noise_std.asDiagonal(); }

NonlinearSCS normalize_slope(const NonlinearSCS& sys) {
  NonlinearSCS out = sys;
  for (auto& t : out.nonlin) {
    const double a = t.slope_a;
    if (a == 0.0) continue;
    out.A += a * (t.E * t.F);
    t.phi = t.phi.shifted(a);
    t.slope_b = t.slope_b - a;
    t.slope_a = 0.0;
  }
  return out;
}

SlopeCheck spot_check_slopes(const NonlinearSCS& sys, int grid_points, double span) {
  SlopeCheck res;
  for (const auto& t : sys.nonlin) {
    for (int i = 0; i < grid_points; ++i) {
      const double c = -span + 2.0 * span * i / (grid_points - 1);
      const double d = c + span / grid_points;
      const double q = (t.phi(c) - t.phi(d)) / (c - d);
      if (q < t.slope_a - 1e-9 || q > t.slope_b + 1e-9) {
        res.ok = false;
        res.worst_lo = std::min(res.worst_lo, q - t.slope_a);
        res.worst_hi = std::max(res.worst_hi, q - t.slope_b);
      }
    }
  }
  return res;
}

const OutputBlock* OutputPartition::block_for_target(int target) const {
  for (const auto& b : blocks)
    if (b.target == target) return &b;
  return nullptr;
}

Vector Interconnection::gather_internal(int i, const std::vector<Vector>& outputs) const {
  const auto& srcs = sources[i];
  int total = 0;
  for (int j : srcs) {
    const OutputBlock* b = partitions[j].block_for_target(i);
    total += b ? b->row_count : 0;
  }
  Vector w(total);
  int at = 0;
  for (int j : srcs) {
    const OutputBlock* b = partitions[j].block_for_target(i);
    if (!b) continue;
    w.segment(at, b->row_count) = outputs[j].segment(b->row_begin, b->row_count);
    at += b->row_count;
  }
  return w;
}

int Interconnection::external_output_dim() const {
  int total = 0;
  for (int i = 0; i < size(); ++i) {
    const OutputBlock* b = partitions[i].external_block >= 0
                               ? &partitions[i].blocks[partitions[i].external_block]
                               : nullptr;
    total += b ? b->row_count : subsystems[i].output_dim();
  }
  return total;
}

Vector Interconnection::external_output(const std::vector<Vector>& states) const {
  Vector y(external_output_dim());
  int at = 0;
  for (int i = 0; i < size(); ++i) {
    Vector yi = subsystems[i].output(states[i]);
    const OutputBlock* b = partitions[i].external_block >= 0
                               ? &partitions[i].blocks[partitions[i].external_block]
                               : nullptr;
    if (b) {
      y.segment(at, b->row_count) = yi.segment(b->row_begin, b->row_count);
      at += b->row_count;
    } else {
      y.segment(at, yi.size()) = yi;
      at += yi.size();
    }
  }
  return y;
}

InterconnectionReport validate_interconnection(const Interconnection& net) {
  InterconnectionReport rep;
  for (int i = 0; i < net.size(); ++i) {
    int claimed = 0;
    for (int j : net.sources[i]) {
      EdgeCheck e;
      e.from = j;
      e.to = i;
      const OutputBlock* b = net.partitions[j].block_for_target(i);
      e.provided_rows = b ? b->row_count : 0;
      claimed += e.provided_rows;
      e.expected_rows = e.provided_rows;  // width fixed below from D columns
      rep.edges.push_back(e);
    }
    // The source blocks must tile D_i's columns exactly; a mismatch is
    // attributed to every edge whose width disagrees with an even split.
    const int p = net.subsystems[i].internal_dim();
    if (claimed != p) {
      rep.pass = false;
      if (!net.sources[i].empty()) {
        const int expect_each = p / static_cast<int>(net.sources[i].size());
        for (auto& e : rep.edges) {
          if (e.to != i) continue;
          e.expected_rows = expect_each;
          if (e.provided_rows != expect_each) {
            e.ok = false;
            rep.violations.emplace_back(e.from, e.to);
          }
        }
      } else {
        rep.violations.emplace_back(i, i);
      }
    }
  }
  return rep;
}

std::vector<std::vector<int>> topology_sources(Topology topology, int copies) {
  std::vector<std::vector<int>> sources(copies);
  for (int i = 0; i < copies; ++i) {
    switch (topology) {
      case Topology::single:
        break;
      case Topology::ring:
        if (copies >= 2) sources[i] = {(i - 1 + copies) % copies, (i + 1) % copies};
        break;
      case Topology::complete:
        for (int j = 0; j < copies; ++j)
          if (j != i) sources[i].push_back(j);
        break;
    }
  }
  return sources;
}

Interconnection make_network(const NonlinearSCS& unit, int copies, Topology topology) {
  if (copies < 1) throw std::invalid_argument("network needs at least one subsystem");
  Interconnection net;
  net.subsystems.assign(copies, unit);
  net.partitions.resize(copies);
  net.sources = topology_sources(topology, copies);
  const int q = unit.output_dim();
  for (int j = 0; j < copies; ++j) {
    auto& part = net.partitions[j];
    // broadcast: the full output row range serves every receiver and the
    // external channel
    for (int i = 0; i < copies; ++i) {
      if (i == j) continue;
      bool feeds = std::find(net.sources[i].begin(), net.sources[i].end(), j) != net.sources[i].end();
      if (feeds) part.blocks.push_back({i, 0, q});
    }
    part.blocks.push_back({j, 0, q});
    part.external_block = static_cast<int>(part.blocks.size()) - 1;
  }
  return net;
}

}  // namespace stochabs
