#pragma once

#include <array>
#include <cstdint>

namespace stochabs {

/// Philox-4x32-10 counter-based generator. Draws are addressed, not
/// sequenced: the word at (seed, run, step, index) is the same no matter
/// which thread asks for it, which is what makes noise coupling across
/// system levels exact by construction.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

class NoiseStream {
 public:
  NoiseStream(std::uint64_t seed, std::uint64_t run) : seed_(seed), run_(run) {}

  /// Uniform draw in (0,1) at the addressed counter.
  double uniform(std::uint32_t step, std::uint32_t index) const;

  /// Standard normal draw via the inverse CDF.
  double gaussian(std::uint32_t step, std::uint32_t index) const;

 private:
  std::uint64_t seed_;
  std::uint64_t run_;
};

}  // namespace stochabs
