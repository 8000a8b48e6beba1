#include "globe/multiscale.hpp"

#include <cmath>
#include <stdexcept>

namespace globe {

double effective_length(double ell, double alpha) {
  if (!(ell > 0.0)) throw std::domain_error("reference length must be positive");
  return ell * std::exp(alpha);
}

std::vector<double> scale_ratio_features(std::span<const double> lengths) {
  if (lengths.empty()) throw std::invalid_argument("at least one reference length required");
  std::vector<double> out;
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    if (!(lengths[i] > 0.0)) throw std::domain_error("reference length must be positive");
    for (std::size_t j = i + 1; j < lengths.size(); ++j) out.push_back(std::log(lengths[i] / lengths[j]));
  }
  return out;
}

MultiscaleKernel add_multiscale_kernel(ParameterStore& store, const std::string& prefix, KernelSpec base,
                                       int n_scales) {
  if (n_scales < 1) throw std::invalid_argument("at least one kernel branch required");
  base.global_scalars += ratio_feature_count(n_scales);
  MultiscaleKernel mk;
  for (int k = 0; k < n_scales; ++k) {
    mk.branches.push_back(add_kernel_branch(store, prefix + "/branch" + std::to_string(k), base));
  }
  return mk;
}

namespace {

GlobalInputs with_ratios(const GlobalInputs& globals, std::span<const double> lengths) {
  GlobalInputs g = globals;
  const auto ratios = scale_ratio_features(lengths);
  g.scalars.insert(g.scalars.end(), ratios.begin(), ratios.end());
  return g;
}

void check(const MultiscaleKernel& mk, std::span<const double> lengths, const MultiscaleSources& sources) {
  if (static_cast<int>(lengths.size()) != mk.size()) {
    throw std::invalid_argument("reference length count " + std::to_string(lengths.size()) +
                                " does not match branch count " + std::to_string(mk.size()));
  }
  if (sources.strengths.size() != sources.faces.size() * lengths.size()) {
    throw std::invalid_argument("strengths need one channel per branch per source face");
  }
}

SourceView branch_view(const MultiscaleSources& sources, std::size_t k) {
  const std::size_t ns = sources.faces.size();
  return SourceView{sources.faces, sources.face_scalars, sources.face_vectors, sources.strengths.subspan(k * ns, ns)};
}

}  // namespace

void multiscale_forward(const MultiscaleKernel& mk, const ParameterStore& store, std::span<const double> lengths,
                        const MultiscaleSources& sources, const GlobalInputs& globals,
                        std::span<const Vec3> targets, const EvalOptions& opts, KernelField& out) {
  check(mk, lengths, sources);
  const GlobalInputs g = with_ratios(globals, lengths);
  for (std::size_t k = 0; k < mk.branches.size(); ++k) {
    branch_forward(mk.branches[k], store, lengths[k], branch_view(sources, k), g, targets, opts, out);
  }
}

void multiscale_backward(const MultiscaleKernel& mk, const ParameterStore& store, std::span<const double> lengths,
                         const MultiscaleSources& sources, const GlobalInputs& globals,
                         std::span<const Vec3> targets, const KernelField& g_out, const EvalOptions& opts,
                         SourceGrad& g_sources, std::span<double> param_grad) {
  check(mk, lengths, sources);
  const std::size_t ns = sources.faces.size();
  const KernelSpec& spec = mk.spec();
  if (g_sources.strengths.empty()) {
    g_sources.reset(ns, spec.face_scalars, spec.face_vectors);
    g_sources.strengths.assign(ns * lengths.size(), 0.0);
  }
  const GlobalInputs g = with_ratios(globals, lengths);
  SourceGrad branch_grad;
  for (std::size_t k = 0; k < mk.branches.size(); ++k) {
    branch_grad.reset(ns, spec.face_scalars, spec.face_vectors);
    branch_backward(mk.branches[k], store, lengths[k], branch_view(sources, k), g, targets, g_out, opts,
                    branch_grad, param_grad);
    if (spec.face_scalars > 0) g_sources.face_scalars += branch_grad.face_scalars;
    for (std::size_t i = 0; i < branch_grad.face_vectors.size(); ++i) g_sources.face_vectors[i] += branch_grad.face_vectors[i];
    for (std::size_t s = 0; s < ns; ++s) g_sources.strengths[k * ns + s] += branch_grad.strengths[s];
  }
}

}  // namespace globe
