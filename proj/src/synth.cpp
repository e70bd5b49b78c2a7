#include "stochabs/synth.hpp"

#include <algorithm>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "stochabs/parallel.hpp"

namespace stochabs {

Policy dp_safety(const FiniteMDP& mdp, const std::vector<std::uint8_t>& safe_mask, int Td,
                 const SynthesisOptions& opts) {
  if (Td < 1) throw std::invalid_argument("horizon must be at least 1");
  if (static_cast<long>(safe_mask.size()) != mdp.n_states)
    throw std::invalid_argument("safe mask size must match state count");
  if (std::find(safe_mask.begin(), safe_mask.end(), std::uint8_t{1}) == safe_mask.end())
    throw std::invalid_argument("safe set is empty");
  if (opts.mode == InternalMode::fixed &&
      (opts.fixed_internal < 0 || opts.fixed_internal >= mdp.n_internal))
    throw std::invalid_argument("fixed internal index out of range");
  if (opts.mode == InternalMode::nominal_trace &&
      static_cast<int>(opts.internal_trace.size()) < Td)
    throw std::invalid_argument("nominal trace shorter than horizon");

  Policy pol;
  pol.Td = Td;
  pol.n_states = mdp.n_states;
  pol.inputs.assign(static_cast<long>(Td) * mdp.n_states, 0);
  pol.values.assign(static_cast<long>(Td + 1) * mdp.n_states, 0.0);

  for (long s = 0; s < mdp.n_states; ++s)
    pol.values[static_cast<long>(Td) * mdp.n_states + s] = safe_mask[s] ? 1.0 : 0.0;

  for (int k = Td - 1; k >= 0; --k) {
    const double* next = pol.values.data() + static_cast<long>(k + 1) * mdp.n_states;
    double* cur = pol.values.data() + static_cast<long>(k) * mdp.n_states;
    int* act = pol.inputs.data() + static_cast<long>(k) * mdp.n_states;
    parallel_for(mdp.n_states, opts.jobs, [&](long s) {
      if (!safe_mask[s]) {
        cur[s] = 0.0;
        act[s] = 0;
        return;
      }
      double best = -1.0;
      int best_u = 0;
      for (long u = 0; u < mdp.n_inputs; ++u) {
        double agg = 0.0;
        auto value_for = [&](long w) {
          const double* row = mdp.row(s, u, w);
          double v = 0.0;
          for (long sp = 0; sp < mdp.n_states; ++sp)
            if (row[sp] != 0.0) v += row[sp] * next[sp];
          return v;
        };
        switch (opts.mode) {
          case InternalMode::fixed:
            agg = value_for(opts.fixed_internal);
            break;
          case InternalMode::nominal_trace:
            agg = value_for(opts.internal_trace[k]);
            break;
          case InternalMode::robust_min: {
            agg = 1.0;
            for (long w = 0; w < mdp.n_internal; ++w) agg = std::min(agg, value_for(w));
            break;
          }
        }
        if (agg > best) {
          best = agg;
          best_u = static_cast<int>(u);
        }
      }
      cur[s] = best;
      act[s] = best_u;
    });
  }
  return pol;
}

std::vector<std::uint8_t> safe_mask_from_box(const Grid& grid, const Vector& lower,
                                             const Vector& upper) {
  if (lower.size() != grid.dims() || upper.size() != grid.dims())
    throw std::invalid_argument("safe box dimension mismatch");
  std::vector<std::uint8_t> mask(grid.total(), 0);
  for (long s = 0; s < grid.total(); ++s) {
    const Vector c = grid.center(s);
    bool inside = true;
    for (int d = 0; d < grid.dims(); ++d)
      inside = inside && c(d) >= lower(d) && c(d) <= upper(d);
    mask[s] = inside ? 1 : 0;
  }
  return mask;
}

void export_policy_csv(const Policy& policy, std::ostream& os) {
  os << "policy,v1," << policy.Td << "," << policy.n_states << "\n";
  char buf[40];
  for (int k = 0; k < policy.Td; ++k) {
    for (long s = 0; s < policy.n_states; ++s) {
      std::snprintf(buf, sizeof buf, "%.17g", policy.value_at(k, s));
      os << k << "," << s << "," << policy.input_at(k, s) << "," << buf << "\n";
    }
  }
}

Policy import_policy_csv(std::istream& is) {
  std::string line;
  std::getline(is, line);
  int Td;
  long S;
  if (std::sscanf(line.c_str(), "policy,v1,%d,%ld", &Td, &S) != 2)
    throw std::runtime_error("policy import: bad header");
  Policy pol;
  pol.Td = Td;
  pol.n_states = S;
  pol.inputs.assign(static_cast<long>(Td) * S, 0);
  pol.values.assign(static_cast<long>(Td + 1) * S, 0.0);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    int k, u;
    long s;
    double v;
    if (std::sscanf(line.c_str(), "%d,%ld,%d,%lf", &k, &s, &u, &v) != 4)
      throw std::runtime_error("policy import: bad row");
    pol.inputs[static_cast<long>(k) * S + s] = u;
    pol.values[static_cast<long>(k) * S + s] = v;
  }
  return pol;
}

Vector PolicyLookup::abstract_input(int k, const Vector& x_hat) const {
  if (!policy || !state_grid || !input_grid) throw std::invalid_argument("policy lookup unbound");
  if (k >= policy->Td) throw std::out_of_range("horizon exhausted");
  // off-domain trackers reuse the nearest boundary cell's decision
  const int u = policy->input_at(k, state_grid->locate_clamped(x_hat));
  return input_grid->center(u);
}

}  // namespace stochabs
