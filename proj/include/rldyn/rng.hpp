#pragma once

// Deterministic seeded randomness. Everything in the library draws from
// derived sub-streams keyed by (master seed, purpose tag, indices...), so a
// run is reproducible from its master seed alone and can be resumed from any
// checkpoint without persisting generator state.

#include <cstdint>
#include <cmath>
#include <initializer_list>
#include <stdexcept>
#include <vector>

namespace rldyn {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// xoshiro256++ with splitmix64 seeding. Distribution helpers are hand-rolled
// (std::*_distribution output is implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& w : state_) w = splitmix64(sm);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // [0, 1), 53-bit resolution
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // [0, n); multiply-shift bounding (bias < 2^-64, fully deterministic)
  int uniform_int(int n) {
    if (n <= 0) throw std::invalid_argument("Rng::uniform_int: n must be positive");
    return static_cast<int>(
        (static_cast<unsigned __int128>(next_u64()) * static_cast<std::uint64_t>(n)) >> 64);
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Box-Muller; draws a fresh pair per call so forked streams stay aligned.
  double normal() {
    double u1 = uniform01();
    const double u2 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    constexpr double two_pi = 6.283185307179586476925286766559;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
  }

  // index into a normalized probability vector by CDF walk
  int categorical(const std::vector<double>& probs) {
    const double u = uniform01();
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      acc += probs[i];
      if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size()) - 1;
  }

  // weighted pick over arbitrary nonnegative weights
  int weighted(const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    if (total <= 0.0) throw std::invalid_argument("Rng::weighted: total weight must be positive");
    const double u = uniform01() * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      acc += weights[i];
      if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(weights.size()) - 1;
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::uint64_t state_[4];
};

// Hash-chain a path of indices onto the master seed to name a sub-stream.
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = master ^ 0x6a09e667f3bcc908ULL;
  for (std::uint64_t p : path) {
    h ^= p + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    h = splitmix64(h);
  }
  return h;
}

inline Rng derive_rng(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
  return Rng(derive_seed(master, path));
}

// purpose tags, one per independent randomness consumer
namespace stream {
constexpr std::uint64_t suite = 1;
constexpr std::uint64_t pretrain = 2;
constexpr std::uint64_t rollout = 3;
constexpr std::uint64_t probe = 4;
constexpr std::uint64_t eval_samples = 5;
constexpr std::uint64_t strategy = 6;
constexpr std::uint64_t ppl_samples = 7;
constexpr std::uint64_t pair_probe = 8;
constexpr std::uint64_t bandit = 9;
constexpr std::uint64_t toy = 10;
constexpr std::uint64_t batch = 11;
}  // namespace stream

}  // namespace rldyn
