#pragma once

#include <Eigen/QR>

#include "globe/kernel.hpp"
#include "globe/rng.hpp"

namespace testing {

using globe::Rng;
using globe::Vec3;

inline Vec3 random_vec(Rng& rng, int dim, double scale = 1.0) {
  Vec3 v(rng.normal(), rng.normal(), dim == 3 ? rng.normal() : 0.0);
  return scale * v;
}

/// Random orthogonal map; dim 2 maps keep the plane z = 0.
inline Eigen::Matrix3d random_orthogonal(Rng& rng, int dim, bool reflect) {
  Eigen::Matrix3d q = Eigen::Matrix3d::Identity();
  if (dim == 2) {
    const double a = rng.uniform(0.0, 6.283185307179586);
    q.topLeftCorner<2, 2>() << std::cos(a), -std::sin(a), std::sin(a), std::cos(a);
    if (reflect) q.col(1) *= -1.0;
    return q;
  }
  Eigen::Matrix3d a;
  for (int i = 0; i < 9; ++i) a.data()[i] = rng.normal();
  Eigen::HouseholderQR<Eigen::Matrix3d> qr(a);
  q = qr.householderQ();
  if ((q.determinant() < 0) != reflect) q.col(2) *= -1.0;
  return q;
}

/// A kernel problem with every kind of input populated.
struct KernelProblem {
  globe::KernelSpec spec;
  globe::ParameterStore store;
  globe::KernelBranch branch;
  std::vector<globe::Face> faces;
  globe::RowMatrix face_scalars;
  std::vector<Vec3> face_vectors;
  std::vector<double> strengths;
  globe::GlobalInputs globals;
  std::vector<Vec3> targets;

  globe::SourceView view() const {
    return globe::SourceView{faces, spec.face_scalars ? &face_scalars : nullptr, face_vectors, strengths};
  }
  globe::KernelField eval(const globe::EvalOptions& opts = {}) const {
    globe::KernelField out(targets.size(), spec.scalar_out, spec.vector_out);
    globe::branch_forward(branch, store, 0.8, view(), globals, targets, opts, out);
    return out;
  }
};

inline KernelProblem make_kernel_problem(int dim, std::uint64_t seed, std::size_t n_faces = 9,
                                         std::size_t n_targets = 13) {
  Rng rng(seed);
  KernelProblem p;
  p.spec.dim = dim;
  p.spec.face_scalars = 2;
  p.spec.face_vectors = 1;
  p.spec.global_scalars = 1;
  p.spec.global_vectors = 1;
  p.spec.harmonics = 2;
  p.spec.hidden = {12, 12};
  p.spec.scalar_out = 2;
  p.spec.vector_out = 2;
  p.branch = globe::add_kernel_branch(p.store, "k", p.spec);
  p.store.initialize(rng.next_u64());
  p.store.values(p.branch.alpha)[0] = 0.2;
  p.face_scalars.resize(static_cast<Eigen::Index>(n_faces), 2);
  for (std::size_t s = 0; s < n_faces; ++s) {
    p.faces.push_back(globe::Face{random_vec(rng, dim), random_vec(rng, dim).normalized(), 0.2 + rng.uniform()});
    p.face_scalars(static_cast<Eigen::Index>(s), 0) = rng.normal();
    p.face_scalars(static_cast<Eigen::Index>(s), 1) = rng.normal();
    p.face_vectors.push_back(random_vec(rng, dim));
    p.strengths.push_back(rng.normal());
  }
  p.globals.scalars = {0.7};
  p.globals.vectors = {random_vec(rng, dim)};
  for (std::size_t t = 0; t < n_targets; ++t) p.targets.push_back(random_vec(rng, dim, 2.0));
  return p;
}

inline double field_distance(const globe::KernelField& a, const globe::KernelField& b) {
  double scale = 0.0, worst = 0.0;
  for (Eigen::Index i = 0; i < a.scalars.size(); ++i) scale = std::max(scale, std::abs(b.scalars.data()[i]));
  for (const auto& v : b.vectors) scale = std::max(scale, v.norm());
  for (Eigen::Index i = 0; i < a.scalars.size(); ++i) {
    worst = std::max(worst, std::abs(a.scalars.data()[i] - b.scalars.data()[i]));
  }
  for (std::size_t i = 0; i < a.vectors.size(); ++i) worst = std::max(worst, (a.vectors[i] - b.vectors[i]).norm());
  return scale > 0 ? worst / scale : worst;
}

}  // namespace testing
