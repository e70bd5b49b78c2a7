#pragma once

#include <iosfwd>
#include <vector>

#include "stochabs/fmdp.hpp"
#include "stochabs/spsf.hpp"

namespace stochabs {

/// Deterministic Markov policy with its value table. value(k, s) is the
/// probability of staying inside the safe set over the remaining k..Td steps;
/// input(k, s) is defined for k < Td.
struct Policy {
  int Td = 0;
  long n_states = 0;
  std::vector<int> inputs;    // Td * n_states
  std::vector<double> values; // (Td + 1) * n_states

  int input_at(int k, long s) const { return inputs[static_cast<long>(k) * n_states + s]; }
  double value_at(int k, long s) const { return values[static_cast<long>(k) * n_states + s]; }
};

enum class InternalMode { fixed, robust_min, nominal_trace };

struct SynthesisOptions {
  InternalMode mode = InternalMode::robust_min;
  long fixed_internal = 0;              // mode fixed
  std::vector<long> internal_trace;     // mode nominal_trace, one index per step
  int jobs = 1;
};

/// Bounded-horizon safety value iteration. V_Td = safe indicator;
/// V_k = max over inputs of the safe-restricted expected next value, with the
/// internal input aggregated per mode (worst case for robust_min). Ties break
/// to the lowest input index; sink and unsafe states carry value 0.
Policy dp_safety(const FiniteMDP& mdp, const std::vector<std::uint8_t>& safe_mask, int Td,
                 const SynthesisOptions& opts = {});

std::vector<std::uint8_t> safe_mask_from_box(const Grid& grid, const Vector& lower,
                                             const Vector& upper);

/// CSV export (k, state_index, input_index, value) and its inverse.
void export_policy_csv(const Policy& policy, std::ostream& os);
Policy import_policy_csv(std::istream& is);

/// Abstract-input source of a refined controller: looks up the policy at the
/// quantized tracker state. Out-of-domain trackers fall back to input 0;
/// k >= Td is a hard error ("horizon exhausted").
struct PolicyLookup {
  const Policy* policy = nullptr;
  const Grid* state_grid = nullptr;
  const Grid* input_grid = nullptr;

  Vector abstract_input(int k, const Vector& x_hat) const;
};

}  // namespace stochabs
