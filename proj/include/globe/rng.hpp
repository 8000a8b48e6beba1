#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

namespace globe {

/// Counter-based random stream. Draw i of a stream is a pure function of
/// (key, i), so streams can be split by name without sharing state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : key_(mix(seed ^ 0x6a09e667f3bcc909ULL)) {}

  /// Independent sub-stream derived from this stream's key and a label.
  Rng split(std::string_view label) const;
  Rng split(std::uint64_t index) const;

  std::uint64_t next_u64() { return mix(key_ + kGolden * ++counter_); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal (Box-Muller, one value per two uniforms).
  double normal();
  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n);

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

  /// `k` distinct indices from [0, n), in draw order.
  std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k);

  static std::uint64_t mix(std::uint64_t z);

 private:
  Rng(std::uint64_t key, int) : key_(key) {}
  static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace globe
