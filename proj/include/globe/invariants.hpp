#pragma once

#include <span>
#include <vector>

#include "globe/geometry.hpp"

namespace globe {

/// Below this norm a vector has no direction; angle-dependent quantities
/// built from it are defined as zero.
inline constexpr double kZeroNorm = 1e-30;

/// (1 - e^-x) ln(1 + x). Grows like x^2 near zero and like ln x far out.
/// Throws std::domain_error for x < 0.
double smoothlog(double x);
double smoothlog_derivative(double x);

/// (x_t - x_s) / ell. Throws std::domain_error unless ell > 0.
Vec3 relative_position(const Vec3& target, const Vec3& source, double ell);

/// Legendre polynomials P_1..P_n at x, and their derivatives.
void legendre(int n, double x, std::span<double> p, std::span<double> dp);

/// Number of scalars encode_vectors emits for `n_vectors` inputs.
constexpr int encoded_size(int n_vectors, int n_harmonics) {
  return n_vectors + n_vectors * (n_vectors - 1) / 2 * n_harmonics;
}

/// smoothlog(|a||b|) P_i(cos angle(a, b)) for i = 1..n_harmonics; all zero
/// when either vector has no direction.
void pair_features(const Vec3& a, const Vec3& b, int n_harmonics, std::span<double> out);

/// Accumulates the vector-Jacobian product of pair_features into ga, gb.
void pair_features_vjp(const Vec3& a, const Vec3& b, int n_harmonics, std::span<const double> g,
                       Vec3& ga, Vec3& gb);

/// Rotation- and reflection-invariant encoding of a vector bag. Layout:
/// smoothlog(|v_i|) for each vector in bag order, then for each pair a < b
/// (lexicographic) the n_harmonics pair features.
std::vector<double> encode_vectors(std::span<const Vec3> vectors, int n_harmonics);

/// Gradient of <g, encode_vectors(V)> with respect to each vector.
std::vector<Vec3> encode_vectors_vjp(std::span<const Vec3> vectors, int n_harmonics,
                                     std::span<const double> g);

}  // namespace globe
