// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace vmolora {

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes);

/// Derives an independent stream seed from a root seed and a stream label,
/// e.g. derive_seed(7, "init/block3"). Pure and platform independent.
std::uint64_t derive_seed(std::uint64_t root, std::string_view label);

/// Seeded generator with platform-independent distributions.
///
/// mt19937_64 output is fixed by the standard; the standard library's
/// distributions are not, so uniform/normal/index/shuffle are implemented
/// here on top of the raw engine.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t root, std::string_view label) : engine_(derive_seed(root, label)) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  /// Uniform integer in [0, n) without modulo bias.
  std::size_t index(std::size_t n);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[index(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace vmolora
