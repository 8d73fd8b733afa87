#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace kdctc {

// Identifier written into manifest headers so files produced here can be
// regenerated by any implementation of the same draw algorithms.
inline constexpr const char* kRngAlgorithmId = "mt19937_64/fnv1a-stream/v1";

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
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

// Deterministic random source. std::mt19937_64 output is pinned by the
// standard, and every mapping below (bounded ints, unit doubles, shuffle)
// is implemented here rather than via the non-portable std distributions,
// so identical seeds give identical draws on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  // Named sub-stream: independent draws per concern (shuffle, flips,
  // patch sampling, ...) so skipping one concern cannot desync another.
  Rng(std::uint64_t seed, std::string_view stream)
      : gen_([&] {
          std::uint64_t s = seed ^ fnv1a64(stream);
          return splitmix64(s);
        }()) {}

  std::uint64_t next_u64() { return gen_(); }

  // Unbiased integer in [0, n) by rejection.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) return 0;
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
      x = gen_();
    } while (x >= limit);
    return x % n;
  }

  // Double in [0, 1) with 53 random bits.
  double unit() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }

  // Fair coin from the top bit.
  bool coin() { return (gen_() >> 63) != 0; }

  // Fisher-Yates, high-to-low, using below() for the index draw.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace kdctc
