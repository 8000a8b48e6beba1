#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "globe/hyperstack.hpp"
#include "globe/rng.hpp"

namespace globe {

/// A differentiable building block reduced to a scalar by a fixed random
/// projection, with its hand-written gradient.
struct Primitive {
  std::string name;
  std::vector<double> x0;
  std::function<double(std::span<const double>)> value;
  std::function<void(std::span<const double>, std::span<double>)> gradient;
};

std::vector<Primitive> primitive_registry(std::uint64_t seed);

/// Elementwise |a - f| / max(|a|, |f|, 1e-3 max(|f|_inf, 1)).
double gradcheck_rel_error(std::span<const double> analytic, std::span<const double> numeric);

struct GradcheckResult {
  std::string name;
  std::size_t inputs = 0;
  double max_rel_error = 0.0;
};

/// Central differences with step h max(1, |x_i|).
GradcheckResult gradcheck(const Primitive& p, double h = 1e-6);

// ---------------------------------------------------------------------------

struct PropertyResult {
  std::string name;
  double worst = 0.0;
  double tolerance = 0.0;
  bool pass = false;
  std::string detail;
};

struct SuiteReport {
  std::string suite;
  std::vector<PropertyResult> properties;
  bool pass() const;
  void print(std::ostream& out) const;
};

/// Random problem matching `config`: every bc type gets a few faces, globals
/// and reference lengths are drawn at random.
Sample random_problem(const ModelConfig& config, std::size_t faces_per_bc, std::size_t queries, std::uint64_t seed);

/// Rotation/reflection matrix and translation applied to a whole problem.
struct RigidMotion {
  Eigen::Matrix3d Q = Eigen::Matrix3d::Identity();
  Vec3 shift = Vec3::Zero();
};

/// Uniformly random orthogonal Q (det -1 when `reflect`) that keeps the
/// plane z = 0 for dim 2.
RigidMotion random_motion(int dim, bool reflect, Rng& rng);

/// Transforms positions, normals and global vectors. With
/// freeze_global_vectors the global vectors keep their original direction,
/// which breaks equivariance on purpose.
Sample apply_motion(const Sample& sample, const RigidMotion& m, bool freeze_global_vectors = false);

/// Largest transform error over all fields, each field normalized by its
/// largest magnitude.
double equivariance_error(const FieldSet& base, const FieldSet& moved, const Eigen::Matrix3d& Q);

struct VerifyOptions {
  std::uint64_t seed = 0;
  int motions = 50;
  bool negative_control = false;
  EvalOptions eval;
};

SuiteReport verify_equivariance(const Model& model, const ParameterStore& store, const VerifyOptions& opts);
/// Model-level decay checks use `model`; dimension-specific kernel checks
/// build their own fresh kernels in 2D and 3D.
SuiteReport verify_decay(const Model& model, const ParameterStore& store, const VerifyOptions& opts);
SuiteReport verify_discretization(const VerifyOptions& opts);
SuiteReport verify_gradcheck(const VerifyOptions& opts);
SuiteReport verify_units(const Model& model, const ParameterStore& store, const VerifyOptions& opts);
SuiteReport verify_chunking(const Model& model, const ParameterStore& store, const VerifyOptions& opts);

/// Least-squares slope of log(y) against log(x).
double loglog_slope(std::span<const double> x, std::span<const double> y);

}  // namespace globe
