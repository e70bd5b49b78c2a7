#include "stochabs/rng.hpp"

#include "stochabs/stats.hpp"

namespace stochabs {

namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void round_once(std::array<std::uint32_t, 4>& ctr, std::array<std::uint32_t, 2>& key) {
  const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * ctr[0];
  const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * ctr[2];
  const std::array<std::uint32_t, 4> next = {
      static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0],
      static_cast<std::uint32_t>(p1),
      static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1],
      static_cast<std::uint32_t>(p0),
  };
  ctr = next;
  key[0] += kWeyl0;
  key[1] += kWeyl1;
}

}  // namespace

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key) {
  for (int r = 0; r < 10; ++r) round_once(counter, key);
  return counter;
}

double NoiseStream::uniform(std::uint32_t step, std::uint32_t index) const {
  const std::array<std::uint32_t, 4> ctr = {
      static_cast<std::uint32_t>(run_), static_cast<std::uint32_t>(run_ >> 32), step, index};
  const std::array<std::uint32_t, 2> key = {
      static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32)};
  const auto out = philox4x32(ctr, key);
  const std::uint64_t bits = (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
  // 53 mantissa bits, offset keeps the value strictly inside (0,1)
  return static_cast<double>(bits >> 11) * 0x1.0p-53 + 0x1.0p-54;
}

double NoiseStream::gaussian(std::uint32_t step, std::uint32_t index) const {
  return normal_inv_cdf(uniform(step, index));
}

}  // namespace stochabs
