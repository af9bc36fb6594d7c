#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <unordered_set>
#include <vector>

#include "charter/errors.hpp"

namespace charter {

// Finalizer from splitmix64. Used both for stream derivation and seeding.
inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Deterministic counter-based stream: xoshiro256++ seeded by a splitmix64
// chain over (seed, label0..label3). Every randomized stage of a run owns
// its own stream, so results do not depend on scheduling or call order.
class RngStream {
public:
  explicit RngStream(std::uint64_t seed) { seed_state(seed); }

  static RngStream derive(std::uint64_t seed, std::uint64_t l0,
                          std::uint64_t l1 = 0, std::uint64_t l2 = 0,
                          std::uint64_t l3 = 0) {
    constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;
    std::uint64_t h = mix64(seed + kGolden);
    h = mix64(h ^ (l0 + kGolden));
    h = mix64(h ^ (l1 + kGolden));
    h = mix64(h ^ (l2 + kGolden));
    h = mix64(h ^ (l3 + kGolden));
    return RngStream(h);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform double in [0, 1), 53 random bits.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller; platform-independent given the stream.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    // u1 in (0, 1] so the log is finite.
    double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    double u2 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  // Unbiased integer in [0, n) by rejection.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw InvalidInput("RngStream::below requires n > 0");
    std::uint64_t threshold = (~n + 1) % n;  // 2^64 mod n
    for (;;) {
      std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  void seed_state(std::uint64_t seed) {
    std::uint64_t s = seed;
    for (auto& w : s_) {
      s += 0x9E3779B97F4A7C15ull;
      w = mix64(s);
    }
  }

  std::array<std::uint64_t, 4> s_{};
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// Stage labels for stream derivation. Fixed values are part of the
// reproducibility contract: transcripts are functions of (seed, labels).
enum StreamStage : std::uint64_t {
  kStreamBatch = 1,       // per (client, round): batch index sampling
  kStreamGradNoise = 2,   // per (client, round): gradient privacy noise
  kStreamQuantGrad = 3,   // per (client, round): gradient quantizer
  kStreamVerifNoise = 4,  // per (client, iterate): loss privacy noise
  kStreamQuantLoss = 5,   // per (client, iterate): loss quantizer
  kStreamData = 6,        // per (client, index): data draws
  kStreamProblem = 7,     // problem construction (basis, shifts)
  kStreamMechanism = 8,   // standalone mechanism calls
  kStreamSgd = 9,         // baseline stages
};

// k distinct integers from [0, n), Floyd's algorithm. Output order is
// deterministic given the stream (insertion order).
inline std::vector<std::int64_t> sample_without_replacement(std::int64_t n,
                                                            std::int64_t k,
                                                            RngStream& rng) {
  if (k < 0 || n < 0 || k > n)
    throw InvalidInput("sample_without_replacement requires 0 <= k <= n");
  std::vector<std::int64_t> out;
  out.reserve(static_cast<std::size_t>(k));
  std::unordered_set<std::int64_t> chosen;
  chosen.reserve(static_cast<std::size_t>(k) * 2);
  for (std::int64_t j = n - k; j < n; ++j) {
    std::int64_t t = static_cast<std::int64_t>(
        rng.below(static_cast<std::uint64_t>(j) + 1));
    if (chosen.count(t)) {
      chosen.insert(j);
      out.push_back(j);
    } else {
      chosen.insert(t);
      out.push_back(t);
    }
  }
  return out;
}

}  // namespace charter
