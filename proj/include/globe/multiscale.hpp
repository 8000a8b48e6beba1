#pragma once

#include <span>
#include <string>
#include <vector>

#include "globe/kernel.hpp"

namespace globe {

/// ell * exp(alpha). Throws std::domain_error unless ell > 0.
double effective_length(double ell, double alpha);

/// ln(ell_i / ell_j) for every pair i < j of the provided reference lengths.
std::vector<double> scale_ratio_features(std::span<const double> lengths);

constexpr int ratio_feature_count(int n_scales) { return n_scales * (n_scales - 1) / 2; }

/// One kernel branch per reference length, identical architecture and
/// independent parameters. Every branch sees the ratio features appended to
/// its global scalars.
struct MultiscaleKernel {
  std::vector<KernelBranch> branches;

  int size() const { return static_cast<int>(branches.size()); }
  const KernelSpec& spec() const { return branches.front().spec; }
};

/// `base.global_scalars` counts user globals only; the ratio features are
/// added here.
MultiscaleKernel add_multiscale_kernel(ParameterStore& store, const std::string& prefix, KernelSpec base,
                                       int n_scales);

/// Sources for a multiscale evaluation. strengths holds one row per branch:
/// strengths[k * faces + s].
struct MultiscaleSources {
  std::span<const Face> faces;
  const RowMatrix* face_scalars = nullptr;
  std::span<const Vec3> face_vectors;
  std::span<const double> strengths;
};

/// Adds sum_k sum_s w_s^k a_s K^k_ts into out. `globals` holds user globals
/// only.
void multiscale_forward(const MultiscaleKernel& mk, const ParameterStore& store, std::span<const double> lengths,
                        const MultiscaleSources& sources, const GlobalInputs& globals,
                        std::span<const Vec3> targets, const EvalOptions& opts, KernelField& out);

/// Reverse pass. g_sources.strengths uses the [k * faces + s] layout and must
/// be sized by the caller (or empty, in which case it is reset).
void multiscale_backward(const MultiscaleKernel& mk, const ParameterStore& store, std::span<const double> lengths,
                         const MultiscaleSources& sources, const GlobalInputs& globals,
                         std::span<const Vec3> targets, const KernelField& g_out, const EvalOptions& opts,
                         SourceGrad& g_sources, std::span<double> param_grad);

}  // namespace globe
