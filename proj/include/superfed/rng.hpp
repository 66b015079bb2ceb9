#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace superfed {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace detail

// Purpose tags for the named substreams used across a run. Every random
// draw in the simulator comes from a stream named by
// (master seed, purpose, client id, round), so results never depend on the
// order clients happen to execute in.
namespace streams {
inline constexpr std::string_view global_init = "global-init";
inline constexpr std::string_view local_init = "local-init";
inline constexpr std::string_view select = "select";
inline constexpr std::string_view shuffle = "shuffle";
inline constexpr std::string_view lambda = "lambda";
inline constexpr std::string_view blobs = "blobs";
inline constexpr std::string_view partition = "partition";
inline constexpr std::string_view split = "split";
inline constexpr std::string_view noise = "noise";
}  // namespace streams

// Deterministic random substream. The same name tuple always reproduces the
// same sequence; distinct tuples give unrelated sequences.
// Generator: xoshiro256++ seeded through splitmix64 over the tuple.
class RngStream {
 public:
  explicit RngStream(std::uint64_t master_seed, std::string_view purpose = "",
                     std::uint64_t id_a = 0, std::uint64_t id_b = 0) {
    std::uint64_t h = master_seed;
    detail::splitmix64(h);
    h ^= detail::fnv1a64(purpose);
    detail::splitmix64(h);
    h ^= id_a;
    detail::splitmix64(h);
    h ^= id_b;
    for (auto& word : state_) word = detail::splitmix64(h);
    if ((state_[0] | state_[1] | state_[2] | state_[3]) == 0) state_[0] = 1;
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = detail::rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = detail::rotl(state_[3], 45);
    return result;
  }

  // Uniform on [0, 1), 53-bit resolution.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Uniform integer on [0, n), unbiased via rejection.
  std::uint64_t uniform_below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("uniform_below: n must be positive");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() / n * n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  // Standard normal, polar method (spare value discarded so that the draw
  // count per call is stateless).
  double normal() {
    double u, v, s;
    do {
      u = 2.0 * uniform01() - 1.0;
      v = 2.0 * uniform01() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    return u * std::sqrt(-2.0 * std::log(s) / s);
  }

  // Gamma(shape, 1) via Marsaglia-Tsang, with the usual boost for shape < 1.
  double gamma(double shape) {
    if (shape <= 0.0) throw std::invalid_argument("gamma: shape must be positive");
    if (shape < 1.0) {
      return gamma(shape + 1.0) * std::pow(uniform01(), 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform01();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  // Symmetric Dirichlet(alpha) over `count` components.
  std::vector<double> dirichlet(double alpha, std::size_t count) {
    std::vector<double> p(count);
    double total = 0.0;
    for (auto& value : p) {
      value = gamma(alpha);
      total += value;
    }
    if (total <= 0.0) {  // all-zero draw is measure zero; fall back to uniform
      for (auto& value : p) value = 1.0 / static_cast<double>(count);
      return p;
    }
    for (auto& value : p) value /= total;
    return p;
  }

  // Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::array<std::uint64_t, 4> state_{};
};

}  // namespace superfed
