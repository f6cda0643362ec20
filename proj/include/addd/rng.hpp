#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>

namespace addd {

/// Seedable generator used for every random draw in the project.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the C++
/// standard. Everything derived from it (uniforms, normals, bounded integers,
/// shuffles) is computed here rather than through <random> distributions,
/// whose algorithms differ between standard library implementations:
///   uniform()  -- top 53 bits of one engine output, scaled into [0, 1)
///   normal()   -- Box-Muller on two uniforms, second variate cached
///   below(n)   -- rejection sampling on the engine output (no modulo bias)
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  double uniform();
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  std::uint64_t below(std::uint64_t n);

 private:
  std::mt19937_64 engine_;
  std::optional<double> spare_;
};

/// SplitMix64 finalizer over (seed, stream); derives independent child seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

/// Fisher-Yates shuffle driven by Rng::below.
template <typename T>
void shuffle(std::span<T> items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace addd
