#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "globe/geometry.hpp"
#include "globe/invariants.hpp"
#include "globe/netcore.hpp"

namespace globe {

/// Channel layout and architecture of one kernel. Every kernel sees the
/// vector bag [n_s, face vectors..., global vectors..., r] (n_s omitted when
/// use_normal is false) and the scalar bag
/// face scalars ++ global scalars.
struct KernelSpec {
  int dim = 2;
  int face_scalars = 0;
  int face_vectors = 0;
  int global_scalars = 0;
  int global_vectors = 0;
  int harmonics = 1;
  int scalar_out = 0;
  int vector_out = 0;
  std::vector<int> hidden{64, 64, 64};
  int pade_n = 2;
  int pade_d = 2;
  bool use_normal = true;  // false drops n_s from the vector bag

  int vector_count() const { return (use_normal ? 2 : 1) + face_vectors + global_vectors; }
  int face_vector_offset() const { return use_normal ? 1 : 0; }
  /// r-hat plus an axis and a dipole/meridional direction per non-r vector.
  int basis_size() const { return 1 + 2 * (vector_count() - 1); }
  int feature_count() const {
    return face_scalars + global_scalars + encoded_size(vector_count(), harmonics);
  }
  /// Padé output width: scalar channels, then basis_size coefficients per
  /// vector output.
  int pade_width() const { return scalar_out + vector_out * basis_size(); }
  std::vector<int> layer_sizes() const;
  std::size_t parameter_count() const;  // Padé core plus the alpha offset
};

/// Inputs of one source-target pair.
struct PairContext {
  int dim = 2;
  Vec3 r = Vec3::Zero();
  std::vector<Vec3> vectors;   // n_s first, r last
  std::vector<double> scalars;
};

PairContext build_pair_context(const Face& face, const Vec3& target, double ell_eff,
                               std::span<const Vec3> face_vectors, std::span<const double> face_scalars,
                               std::span<const Vec3> global_vectors, std::span<const double> global_scalars,
                               int dim, bool include_normal = true);

/// (1 - e^{-|r|^2}) / (|r|^2 + 1)^{(d-1)/2}
double envelope(const Vec3& r, int dim);
Vec3 envelope_gradient(const Vec3& r, int dim);

struct ReprojectionBasis {
  std::vector<Vec3> vectors;
};

/// b_0 = r-hat (zero when r = 0); then for every non-r vector v the axis
/// smoothlog(|v|) v-hat and the dipole direction smoothlog(|v|) times the
/// component of -v-hat orthogonal to r-hat (not renormalized).
ReprojectionBasis build_basis(const PairContext& ctx);

/// Accumulates the gradient of <g_basis, build_basis(ctx)> into g_vectors
/// (indexed like ctx.vectors, r last).
void build_basis_vjp(const PairContext& ctx, std::span<const Vec3> g_basis, std::span<Vec3> g_vectors);

/// One learnable kernel: Padé core plus a log-scale offset alpha.
struct KernelBranch {
  KernelSpec spec;
  PadeLayout pade;
  std::size_t alpha = 0;
};

KernelBranch add_kernel_branch(ParameterStore& store, const std::string& prefix, const KernelSpec& spec);

struct PairOutput {
  std::vector<double> scalars;
  std::vector<Vec3> vectors;
};

/// Reference single-pair evaluation. The batched evaluator below must agree
/// with it.
PairOutput kernel_pair(const KernelBranch& branch, const ParameterStore& store, const PairContext& ctx);

/// Per-target outputs: scalars is (targets x scalar_out), vectors holds
/// vector_out entries per target.
struct KernelField {
  RowMatrix scalars;
  std::vector<Vec3> vectors;
  int vector_out = 0;

  KernelField() = default;
  KernelField(std::size_t targets, int scalar_out, int vector_out);
  std::size_t size() const { return static_cast<std::size_t>(scalars.rows()); }
  Vec3& vec(std::size_t t, int o) { return vectors[t * static_cast<std::size_t>(vector_out) + static_cast<std::size_t>(o)]; }
  const Vec3& vec(std::size_t t, int o) const {
    return vectors[t * static_cast<std::size_t>(vector_out) + static_cast<std::size_t>(o)];
  }
  void set_zero();
  KernelField& operator+=(const KernelField& other);
};

/// K_t = sum_s w_s a_s K_ts with compensated summation. per_pair is indexed
/// [t * n_sources + s].
KernelField aggregate(std::span<const PairOutput> per_pair, std::size_t n_targets, std::span<const double> strengths,
                      std::span<const double> areas, int scalar_out, int vector_out);

/// Face-attached inputs for one source partition.
struct SourceView {
  std::span<const Face> faces;
  const RowMatrix* face_scalars = nullptr;  // faces x spec.face_scalars, may be null when zero
  std::span<const Vec3> face_vectors;       // faces * spec.face_vectors
  std::span<const double> strengths;        // one per face
};

struct SourceGrad {
  RowMatrix face_scalars;
  std::vector<Vec3> face_vectors;
  std::vector<double> strengths;

  void reset(std::size_t faces, int n_scalars, int n_vectors);
};

struct GlobalInputs {
  std::vector<double> scalars;
  std::vector<Vec3> vectors;
};

struct EvalOptions {
  std::size_t chunk_size = 0;  // targets per chunk; 0 picks a pair budget
  int threads = 1;
};

/// Calls fn(begin, end) over consecutive target ranges of at most chunk_size.
void evaluate_chunked(std::size_t n_targets, std::size_t chunk_size,
                      const std::function<void(std::size_t, std::size_t)>& fn);

/// Adds sum_s w_s a_s K_ts for every target into `out`. ell is the
/// user-provided reference length; the branch's alpha scales it.
void branch_forward(const KernelBranch& branch, const ParameterStore& store, double ell, const SourceView& sources,
                    const GlobalInputs& globals, std::span<const Vec3> targets, const EvalOptions& opts,
                    KernelField& out);

/// Reverse pass of branch_forward for upstream gradient `g_out`. Accumulates
/// into source gradients and into `param_grad` (store layout, includes alpha).
void branch_backward(const KernelBranch& branch, const ParameterStore& store, double ell, const SourceView& sources,
                     const GlobalInputs& globals, std::span<const Vec3> targets, const KernelField& g_out,
                     const EvalOptions& opts, SourceGrad& g_sources, std::span<double> param_grad);

}  // namespace globe
