#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace prismer {

// Mixes a seed with a label so that independent streams (per parameter, per
// scene, per arm) never share state.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label);
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

// Seeded generator with distribution code written out explicitly, so the
// produced streams do not depend on the standard library's distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  // [0, 1)
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // [0, n)
  std::size_t below(std::size_t n);
  double normal();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace prismer
