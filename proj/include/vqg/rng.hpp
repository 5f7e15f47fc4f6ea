#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string_view>

namespace vqg {

/// xoshiro256** generator. Every random draw in the library (initialization,
/// shuffling, synthetic data) goes through this type so that a seed fully
/// determines a run, independent of the standard library implementation.
class Rng {
 public:
  using State = std::array<std::uint64_t, 4>;

  explicit Rng(std::uint64_t seed = 0);

  /// Independent stream derived from a seed and a label, e.g. a parameter name.
  static Rng derive(std::uint64_t seed, std::string_view label);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via Box-Muller (no cached second value).
  double normal(double mean = 0.0, double stddev = 1.0);

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  const State& state() const { return s_; }
  void set_state(const State& s) { s_ = s; }

 private:
  State s_{};
};

std::uint64_t splitmix64(std::uint64_t& x);
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace vqg
