#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace nluqa {

// Seeded generator whose outputs are identical across standard libraries.
// std::uniform_*_distribution and std::shuffle are implementation-defined,
// so the index/real draws and the shuffle are implemented here on top of
// mt19937_64, whose sequence the standard fixes.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Independent stream derived from (seed, stream) with splitmix64.
  static Rng derive(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t next() { return engine_(); }

  // Uniform in [0, n); n must be positive.
  std::uint64_t index(std::uint64_t n);

  // Uniform in [0, 1).
  double real();

  double uniform(double lo, double hi) { return lo + (hi - lo) * real(); }

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(index(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace nluqa
