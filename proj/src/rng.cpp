#include "globe/rng.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

namespace globe {

std::uint64_t Rng::mix(std::uint64_t z) {
  // splitmix64 finalizer
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Rng Rng::split(std::string_view label) const {
  // FNV-1a over the label, then mixed with the parent key.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : label) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return Rng(mix(key_ ^ mix(h)), 0);
}

Rng Rng::split(std::uint64_t index) const {
  return Rng(mix(key_ ^ mix(index + 0x243f6a8885a308d3ULL)), 0);
}

double Rng::normal() {
  double u1 = uniform();
  const double u2 = uniform();
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t Rng::below(std::size_t n) {
  if (n <= 1) return 0;
  // Lemire's multiply-shift with rejection.
  const unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * n;
  auto lo = static_cast<std::uint64_t>(m);
  if (lo < n) {
    const std::uint64_t threshold = (0 - static_cast<std::uint64_t>(n)) % n;
    auto mm = m;
    while (lo < threshold) {
      mm = static_cast<unsigned __int128>(next_u64()) * n;
      lo = static_cast<std::uint64_t>(mm);
    }
    return static_cast<std::size_t>(mm >> 64);
  }
  return static_cast<std::size_t>(m >> 64);
}

std::vector<std::size_t> Rng::sample_indices(std::size_t n, std::size_t k) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (k > n) k = n;
  for (std::size_t i = 0; i < k; ++i) {
    std::swap(idx[i], idx[i + below(n - i)]);
  }
  idx.resize(k);
  return idx;
}

}  // namespace globe
