#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "globe/multiscale.hpp"
#include "globe/pipeline.hpp"

namespace globe {

/// Architecture and field schema. Text form is `key = value` lines; lists
/// are comma separated.
struct ModelConfig {
  int dim = 2;
  int hyperlayers = 2;  // communication layers plus the final evaluation
  int latent_scalars = 6;
  int latent_vectors = 3;
  int harmonics = 1;
  std::vector<int> hidden{64, 64, 64};
  int pade_n = 2;
  int pade_d = 2;
  bool use_normal = true;
  int branches = 2;
  std::vector<std::string> bc_types{"no_slip"};
  std::vector<std::string> global_scalars;
  std::vector<std::string> global_vectors{"U_inf_dir"};
  std::vector<std::string> scalar_fields{"Cp", "Cpt", "ln_nut"};
  std::vector<std::string> vector_fields{"dU", "CF_shear"};

  /// Throws std::invalid_argument describing the first problem.
  void validate() const;
  std::string to_text() const;
  static ModelConfig from_text(const std::string& text);
  /// Applies one key; returns false for keys that are not model keys.
  bool apply(const std::string& key, const std::string& value);
  bool operator==(const ModelConfig&) const = default;

  /// Spec of the kernels in layer i (before ratio features are added).
  KernelSpec layer_spec(int layer) const;
};

/// `key = value` lines with '#' comments, in file order.
std::vector<std::pair<std::string, std::string>> parse_key_values(const std::string& text);

struct Model {
  ModelConfig config;
  /// layers[i][bc] is the multiscale kernel sourced from faces of type bc.
  std::vector<std::map<std::string, MultiscaleKernel>> layers;
  std::size_t calib_scale_s = 0;
  std::size_t calib_bias_s = 0;
  std::size_t calib_scale_v = 0;

  static Model build(const ModelConfig& config, ParameterStore& store);
  int n_layers() const { return static_cast<int>(layers.size()); }
};

/// Per-face state of one BC partition.
struct LatentState {
  RowMatrix strengths;       // branches x faces
  RowMatrix scalars;         // faces x latent scalars (empty at layer 0)
  std::vector<Vec3> vectors;  // faces * latent vectors
};
using StateMap = std::map<std::string, LatentState>;

/// Strengths 1, no latents.
StateMap initial_state(const Model& model, const Sample& sample);

/// Checks bc types, globals and scale count against the config. Throws
/// std::invalid_argument listing every mismatch.
void check_schema(const ModelConfig& config, const Sample& sample);

GlobalInputs model_globals(const ModelConfig& config, const Sample& sample);

/// One communication round (layer < H - 1): every BC's kernel is evaluated
/// from its faces to all boundary faces, contributions are summed over
/// source types and parsed into the next state.
StateMap hyperlayer_step(const Model& model, const ParameterStore& store, int layer, const StateMap& state,
                         const Sample& sample, const EvalOptions& opts);

/// Final layer to `queries`, calibrated. raw receives the uncalibrated sum
/// when non-null.
FieldSet final_eval(const Model& model, const ParameterStore& store, const StateMap& state, const Sample& sample,
                    std::span<const Vec3> queries, const EvalOptions& opts, KernelField* raw = nullptr);

struct ForwardCache {
  std::vector<StateMap> states;  // states[i] feeds layer i
  KernelField raw;
};

FieldSet model_forward(const Model& model, const ParameterStore& store, const Sample& sample,
                       const EvalOptions& opts = {}, ForwardCache* cache = nullptr);

/// Gradient of <g_fields, model_forward(...)> with respect to parameters,
/// accumulated into param_grad. Evaluated at sample.queries.
void model_backward(const Model& model, const ParameterStore& store, const Sample& sample, const ForwardCache& cache,
                    const FieldSet& g_fields, const EvalOptions& opts, std::span<double> param_grad);

struct ParameterBreakdown {
  std::vector<std::pair<std::string, std::size_t>> items;
  std::size_t total = 0;
};

/// Counted from the architecture arithmetic, without building a store.
ParameterBreakdown count_parameters(const ModelConfig& config);

/// Copies values from `loaded` into `store` by path. Throws when a path is
/// missing or its shape differs.
void load_parameters(ParameterStore& store, const ParameterStore& loaded);

}  // namespace globe
