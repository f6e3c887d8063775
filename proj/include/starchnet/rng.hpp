#pragma once

#include <cstddef>
#include <cstdint>
#include <iterator>
#include <optional>
#include <random>
#include <string_view>
#include <utility>

namespace starchnet {

/// Seeded generator used for every random decision in the toolkit.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the
/// standard. Conversions to floating point, normals and bounded integers are
/// implemented here instead of through <random> distributions, which are
/// allowed to differ between standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via the Box-Muller transform.
  double normal();

  /// Uniform integer in [0, n). n must be positive.
  std::size_t below(std::size_t n);

  bool bernoulli(double p) { return uniform() < p; }

  template <std::random_access_iterator It>
  void shuffle(It first, It last) {
    auto n = static_cast<std::size_t>(last - first);
    for (std::size_t i = n; i > 1; --i) {
      std::size_t j = below(i);
      using std::swap;
      swap(first[i - 1], first[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  std::optional<double> spare_normal_;
};

/// Derives an independent seed for one purpose from the run seed.
///
/// Scheme: h = FNV-1a(purpose); s = splitmix64(seed ^ h); then for each of the
/// two integer salts s = splitmix64(s ^ salt). Purposes used by the toolkit are
/// "split", "init", "dropout", "shuffle" and "augment".
std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose, std::uint64_t salt_a = 0,
                          std::uint64_t salt_b = 0);

}  // namespace starchnet
