#include "globe/invariants.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace globe {

double smoothlog(double x) {
  if (x < 0.0) throw std::domain_error("smoothlog requires x >= 0");
  return -std::expm1(-x) * std::log1p(x);
}

double smoothlog_derivative(double x) {
  if (x < 0.0) throw std::domain_error("smoothlog requires x >= 0");
  return std::exp(-x) * std::log1p(x) - std::expm1(-x) / (1.0 + x);
}

Vec3 relative_position(const Vec3& target, const Vec3& source, double ell) {
  if (!(ell > 0.0)) throw std::domain_error("reference length must be positive");
  return (target - source) / ell;
}

void legendre(int n, double x, std::span<double> p, std::span<double> dp) {
  // P_{k+1} = ((2k+1) x P_k - k P_{k-1}) / (k+1);  P'_{k+1} = P'_{k-1} + (2k+1) P_k
  double p_prev = 1.0, p_cur = x;
  double dp_prev = 0.0, dp_cur = 1.0;
  for (int i = 1; i <= n; ++i) {
    p[i - 1] = p_cur;
    dp[i - 1] = dp_cur;
    const double k = i;
    const double p_next = ((2.0 * k + 1.0) * x * p_cur - k * p_prev) / (k + 1.0);
    const double dp_next = dp_prev + (2.0 * k + 1.0) * p_cur;
    p_prev = p_cur;
    p_cur = p_next;
    dp_prev = dp_cur;
    dp_cur = dp_next;
  }
}

namespace {
constexpr int kMaxHarmonics = 16;
}

void pair_features(const Vec3& a, const Vec3& b, int n_harmonics, std::span<double> out) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na < kZeroNorm || nb < kZeroNorm) {
    std::fill(out.begin(), out.begin() + n_harmonics, 0.0);
    return;
  }
  const double c = std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
  const double w = smoothlog(na * nb);
  double p[kMaxHarmonics], dp[kMaxHarmonics];
  legendre(n_harmonics, c, p, dp);
  for (int i = 0; i < n_harmonics; ++i) out[i] = w * p[i];
}

void pair_features_vjp(const Vec3& a, const Vec3& b, int n_harmonics, std::span<const double> g,
                       Vec3& ga, Vec3& gb) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na < kZeroNorm || nb < kZeroNorm) return;
  const double c = std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
  const double m = na * nb;
  const double w = smoothlog(m);
  const double dw = smoothlog_derivative(m);
  double p[kMaxHarmonics], dp[kMaxHarmonics];
  legendre(n_harmonics, c, p, dp);
  double g_w = 0.0, g_c = 0.0;
  for (int i = 0; i < n_harmonics; ++i) {
    g_w += g[i] * p[i];
    g_c += g[i] * w * dp[i];
  }
  const Vec3 ua = a / na;
  const Vec3 ub = b / nb;
  // d|a||b|/da = |b| a^, dc/da = (b^ - c a^) / |a|
  ga += g_w * dw * nb * ua + g_c * (ub - c * ua) / na;
  gb += g_w * dw * na * ub + g_c * (ua - c * ub) / nb;
}

std::vector<double> encode_vectors(std::span<const Vec3> vectors, int n_harmonics) {
  if (n_harmonics < 1 || n_harmonics > kMaxHarmonics) {
    throw std::invalid_argument("n_harmonics must be in [1, 16]");
  }
  const int m = static_cast<int>(vectors.size());
  std::vector<double> out(static_cast<std::size_t>(encoded_size(m, n_harmonics)));
  for (int i = 0; i < m; ++i) out[i] = smoothlog(vectors[i].norm());
  std::size_t pos = static_cast<std::size_t>(m);
  for (int a = 0; a < m; ++a) {
    for (int b = a + 1; b < m; ++b) {
      pair_features(vectors[a], vectors[b], n_harmonics, std::span(out).subspan(pos, n_harmonics));
      pos += static_cast<std::size_t>(n_harmonics);
    }
  }
  return out;
}

std::vector<Vec3> encode_vectors_vjp(std::span<const Vec3> vectors, int n_harmonics,
                                     std::span<const double> g) {
  const int m = static_cast<int>(vectors.size());
  std::vector<Vec3> grad(vectors.size(), Vec3::Zero());
  for (int i = 0; i < m; ++i) {
    const double n = vectors[i].norm();
    if (n >= kZeroNorm) grad[i] += g[i] * smoothlog_derivative(n) * vectors[i] / n;
  }
  std::size_t pos = static_cast<std::size_t>(m);
  for (int a = 0; a < m; ++a) {
    for (int b = a + 1; b < m; ++b) {
      pair_features_vjp(vectors[a], vectors[b], n_harmonics, g.subspan(pos, n_harmonics), grad[a], grad[b]);
      pos += static_cast<std::size_t>(n_harmonics);
    }
  }
  return grad;
}

}  // namespace globe
