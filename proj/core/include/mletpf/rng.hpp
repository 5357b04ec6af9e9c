#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace mletpf::rng {

/// Philox4x32-10 counter-based generator (Salmon et al. constants).
/// Every draw is a pure function of (counter, key), so particle propagation
/// stays reproducible under any execution order or thread count.
struct Philox4x32 {
  static constexpr std::uint32_t kMult0 = 0xD2511F53u;
  static constexpr std::uint32_t kMult1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

  static std::array<std::uint32_t, 4> block(std::array<std::uint32_t, 4> ctr,
                                            std::array<std::uint32_t, 2> key) {
    for (int round = 0; round < 10; ++round) {
      const std::uint64_t p0 = std::uint64_t{kMult0} * ctr[0];
      const std::uint64_t p1 = std::uint64_t{kMult1} * ctr[2];
      ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0],
             static_cast<std::uint32_t>(p1),
             static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1],
             static_cast<std::uint32_t>(p0)};
      key[0] += kWeyl0;
      key[1] += kWeyl1;
    }
    return ctr;
  }
};

/// What a draw is for. Kept in the counter so the same (stream, particle,
/// step, channel) tuple never aliases across purposes.
enum class Draw : std::uint32_t {
  Noise = 0,     // Brownian increments
  Init = 1,      // initial-condition samples
  ObsNoise = 2,  // synthetic measurement error
};

/// Identifies one independent stream of randomness within a run.
/// Level estimators get their own stream id; fine and coarse members of a
/// pair share the stream so their Brownian paths couple.
struct StreamKey {
  std::uint64_t seed = 0;
  std::uint32_t stream = 0;
};

inline double uniform_from_bits(std::uint32_t hi, std::uint32_t lo) {
  const std::uint64_t bits = (std::uint64_t{hi} << 32) | lo;
  return static_cast<double>((bits >> 11) + 1) * 0x1.0p-53;  // (0, 1]
}

/// One standard normal draw, keyed by the full draw coordinates.
inline double gaussian(const StreamKey& sk, Draw purpose, std::uint32_t particle,
                       std::uint64_t step, std::uint32_t channel) {
  const std::array<std::uint32_t, 4> ctr = {
      static_cast<std::uint32_t>(step),
      static_cast<std::uint32_t>(step >> 32),
      particle,
      channel | (static_cast<std::uint32_t>(purpose) << 24)};
  const std::array<std::uint32_t, 2> key = {
      static_cast<std::uint32_t>(sk.seed),
      static_cast<std::uint32_t>(sk.seed >> 32) ^ sk.stream};
  const auto w = Philox4x32::block(ctr, key);
  const double u1 = uniform_from_bits(w[0], w[1]);
  const double u2 = uniform_from_bits(w[2], w[3]);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
}

}  // namespace mletpf::rng
