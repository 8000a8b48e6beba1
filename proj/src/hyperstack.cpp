#include "globe/hyperstack.hpp"

#include <algorithm>
#include <set>
#include <sstream>
#include <stdexcept>

namespace globe {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream ss(value);
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int to_int(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  int v = 0;
  try {
    v = std::stoi(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != value.size()) throw std::invalid_argument("config key '" + key + "' needs an integer");
  return v;
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw std::invalid_argument("config key '" + key + "' needs true or false");
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? ", " : "") + items[i];
  return out;
}

}  // namespace

std::vector<std::pair<std::string, std::string>> parse_key_values(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("config line " + std::to_string(lineno) + " has no '='");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw std::invalid_argument("config line " + std::to_string(lineno) + " has an empty key");
    out.emplace_back(key, trim(line.substr(eq + 1)));
  }
  return out;
}

bool ModelConfig::apply(const std::string& key, const std::string& value) {
  if (key == "dim") {
    dim = to_int(key, value);
  } else if (key == "hyperlayers") {
    hyperlayers = to_int(key, value);
  } else if (key == "latent_scalars") {
    latent_scalars = to_int(key, value);
  } else if (key == "latent_vectors") {
    latent_vectors = to_int(key, value);
  } else if (key == "harmonics") {
    harmonics = to_int(key, value);
  } else if (key == "hidden") {
    hidden.clear();
    for (const auto& w : split_list(value)) hidden.push_back(to_int(key, w));
  } else if (key == "pade_n") {
    pade_n = to_int(key, value);
  } else if (key == "pade_d") {
    pade_d = to_int(key, value);
  } else if (key == "use_normal") {
    use_normal = to_bool(key, value);
  } else if (key == "branches") {
    branches = to_int(key, value);
  } else if (key == "bc_types") {
    bc_types = split_list(value);
  } else if (key == "global_scalars") {
    global_scalars = split_list(value);
  } else if (key == "global_vectors") {
    global_vectors = split_list(value);
  } else if (key == "scalar_fields") {
    scalar_fields = split_list(value);
  } else if (key == "vector_fields") {
    vector_fields = split_list(value);
  } else {
    return false;
  }
  return true;
}

ModelConfig ModelConfig::from_text(const std::string& text) {
  ModelConfig c;
  for (const auto& [k, v] : parse_key_values(text)) {
    if (!c.apply(k, v)) throw std::invalid_argument("unknown model config key '" + k + "'");
  }
  c.validate();
  return c;
}

std::string ModelConfig::to_text() const {
  std::ostringstream out;
  out << "dim = " << dim << '\n'
      << "hyperlayers = " << hyperlayers << '\n'
      << "latent_scalars = " << latent_scalars << '\n'
      << "latent_vectors = " << latent_vectors << '\n'
      << "harmonics = " << harmonics << '\n'
      << "hidden = ";
  for (std::size_t i = 0; i < hidden.size(); ++i) out << (i ? ", " : "") << hidden[i];
  out << '\n'
      << "pade_n = " << pade_n << '\n'
      << "pade_d = " << pade_d << '\n'
      << "use_normal = " << (use_normal ? "true" : "false") << '\n'
      << "branches = " << branches << '\n'
      << "bc_types = " << join(bc_types) << '\n'
      << "global_scalars = " << join(global_scalars) << '\n'
      << "global_vectors = " << join(global_vectors) << '\n'
      << "scalar_fields = " << join(scalar_fields) << '\n'
      << "vector_fields = " << join(vector_fields) << '\n';
  return out.str();
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("model config: " + m); };
  if (dim != 2 && dim != 3) fail("dim must be 2 or 3");
  if (hyperlayers < 1) fail("hyperlayers must be >= 1");
  if (latent_scalars < 0 || latent_vectors < 0) fail("latent counts must be >= 0");
  if (harmonics < 1 || harmonics > 16) fail("harmonics must be in [1, 16]");
  if (hidden.empty()) fail("hidden needs at least one width");
  for (int w : hidden) {
    if (w < 1) fail("hidden widths must be positive");
  }
  if (pade_n < 1 || pade_d < 1) fail("Pade orders must be >= 1");
  if (branches < 1 || branches > 4) fail("branches must be in [1, 4]");
  if (bc_types.empty()) fail("at least one bc type required");
  if (scalar_fields.empty() && vector_fields.empty()) fail("at least one output field required");
  std::set<std::string> seen;
  for (const auto* list : {&scalar_fields, &vector_fields}) {
    for (const auto& n : *list) {
      if (!seen.insert(n).second) fail("duplicate field name '" + n + "'");
    }
  }
  if (std::set<std::string>(bc_types.begin(), bc_types.end()).size() != bc_types.size()) fail("duplicate bc type");
}

KernelSpec ModelConfig::layer_spec(int layer) const {
  KernelSpec s;
  s.dim = dim;
  s.face_scalars = layer == 0 ? 0 : latent_scalars;
  s.face_vectors = layer == 0 ? 0 : latent_vectors;
  s.global_scalars = static_cast<int>(global_scalars.size());
  s.global_vectors = static_cast<int>(global_vectors.size());
  s.harmonics = harmonics;
  s.hidden = hidden;
  s.pade_n = pade_n;
  s.pade_d = pade_d;
  s.use_normal = use_normal;
  if (layer + 1 < hyperlayers) {
    s.scalar_out = branches + latent_scalars;
    s.vector_out = latent_vectors;
  } else {
    s.scalar_out = static_cast<int>(scalar_fields.size());
    s.vector_out = static_cast<int>(vector_fields.size());
  }
  return s;
}

Model Model::build(const ModelConfig& config, ParameterStore& store) {
  config.validate();
  Model m;
  m.config = config;
  for (int i = 0; i < config.hyperlayers; ++i) {
    std::map<std::string, MultiscaleKernel> layer;
    for (const auto& bc : config.bc_types) {
      layer[bc] = add_multiscale_kernel(store, "layer" + std::to_string(i) + "/" + bc, config.layer_spec(i),
                                        config.branches);
    }
    m.layers.push_back(std::move(layer));
  }
  const auto ns = config.scalar_fields.size();
  const auto nv = config.vector_fields.size();
  m.calib_scale_s = store.add("calibration/scalar_scale", {ns}, InitKind::kOne);
  m.calib_bias_s = store.add("calibration/scalar_bias", {ns}, InitKind::kZero);
  m.calib_scale_v = store.add("calibration/vector_scale", {nv}, InitKind::kOne);
  return m;
}

void check_schema(const ModelConfig& config, const Sample& sample) {
  std::vector<std::string> problems;
  if (sample.dim != config.dim) problems.push_back("dimension " + std::to_string(sample.dim) + " != " + std::to_string(config.dim));
  for (const auto& [bc, mesh] : sample.boundaries) {
    if (std::find(config.bc_types.begin(), config.bc_types.end(), bc) == config.bc_types.end()) {
      problems.push_back("unknown bc type '" + bc + "'");
    }
  }
  for (const auto& n : config.global_scalars) {
    if (std::none_of(sample.global_scalars.begin(), sample.global_scalars.end(), [&](const auto& p) { return p.first == n; })) {
      problems.push_back("missing global scalar '" + n + "'");
    }
  }
  for (const auto& n : config.global_vectors) {
    if (std::none_of(sample.global_vectors.begin(), sample.global_vectors.end(), [&](const auto& p) { return p.first == n; })) {
      problems.push_back("missing global vector '" + n + "'");
    }
  }
  if (static_cast<int>(sample.reference_lengths.size()) != config.branches) {
    problems.push_back(std::to_string(sample.reference_lengths.size()) + " reference lengths for " +
                       std::to_string(config.branches) + " branches");
  }
  if (!problems.empty()) {
    std::string msg = "sample does not match model schema:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw std::invalid_argument(msg);
  }
}

GlobalInputs model_globals(const ModelConfig& config, const Sample& sample) {
  GlobalInputs g;
  for (const auto& n : config.global_scalars) {
    for (const auto& [name, v] : sample.global_scalars) {
      if (name == n) {
        g.scalars.push_back(v);
        break;
      }
    }
  }
  for (const auto& n : config.global_vectors) {
    for (const auto& [name, v] : sample.global_vectors) {
      if (name == n) {
        g.vectors.push_back(v);
        break;
      }
    }
  }
  return g;
}

StateMap initial_state(const Model& model, const Sample& sample) {
  StateMap state;
  for (const auto& [bc, mesh] : sample.boundaries) {
    LatentState s;
    s.strengths = RowMatrix::Ones(model.config.branches, static_cast<Eigen::Index>(mesh.size()));
    s.scalars = RowMatrix(static_cast<Eigen::Index>(mesh.size()), 0);
    state[bc] = std::move(s);
  }
  return state;
}

namespace {

MultiscaleSources sources_of(const BoundaryMesh& mesh, const LatentState& s) {
  return MultiscaleSources{mesh.faces, &s.scalars, s.vectors,
                           std::span<const double>(s.strengths.data(), static_cast<std::size_t>(s.strengths.size()))};
}

std::vector<Vec3> centroids(const BoundaryMesh& mesh) {
  std::vector<Vec3> c;
  c.reserve(mesh.size());
  for (const auto& f : mesh.faces) c.push_back(f.centroid);
  return c;
}

}  // namespace

StateMap hyperlayer_step(const Model& model, const ParameterStore& store, int layer, const StateMap& state,
                         const Sample& sample, const EvalOptions& opts) {
  const ModelConfig& cfg = model.config;
  if (layer < 0 || layer + 1 >= model.n_layers()) throw std::invalid_argument("not a communication layer");
  const GlobalInputs globals = model_globals(cfg, sample);
  const int K = cfg.branches;
  StateMap next;
  for (const auto& [tbc, tmesh] : sample.boundaries) {
    const auto targets = centroids(tmesh);
    KernelField out(targets.size(), K + cfg.latent_scalars, cfg.latent_vectors);
    for (const auto& [sbc, smesh] : sample.boundaries) {
      multiscale_forward(model.layers[static_cast<std::size_t>(layer)].at(sbc), store, sample.reference_lengths,
                         sources_of(smesh, state.at(sbc)), globals, targets, opts, out);
    }
    LatentState s;
    s.strengths = out.scalars.leftCols(K).transpose();
    s.scalars = out.scalars.rightCols(cfg.latent_scalars);
    s.vectors = out.vectors;
    next[tbc] = std::move(s);
  }
  return next;
}

FieldSet final_eval(const Model& model, const ParameterStore& store, const StateMap& state, const Sample& sample,
                    std::span<const Vec3> queries, const EvalOptions& opts, KernelField* raw) {
  const ModelConfig& cfg = model.config;
  const int ns = static_cast<int>(cfg.scalar_fields.size());
  const int nv = static_cast<int>(cfg.vector_fields.size());
  const GlobalInputs globals = model_globals(cfg, sample);
  KernelField out(queries.size(), ns, nv);
  for (const auto& [sbc, smesh] : sample.boundaries) {
    multiscale_forward(model.layers.back().at(sbc), store, sample.reference_lengths, sources_of(smesh, state.at(sbc)),
                       globals, queries, opts, out);
  }
  FieldSet fields(cfg.scalar_fields, cfg.vector_fields, queries.size());
  const auto scale_s = store.values(model.calib_scale_s);
  const auto bias_s = store.values(model.calib_bias_s);
  const auto scale_v = store.values(model.calib_scale_v);
  for (std::size_t p = 0; p < queries.size(); ++p) {
    for (int f = 0; f < ns; ++f) {
      fields.scalars(static_cast<Eigen::Index>(p), f) =
          scale_s[static_cast<std::size_t>(f)] * out.scalars(static_cast<Eigen::Index>(p), f) + bias_s[static_cast<std::size_t>(f)];
    }
    for (int f = 0; f < nv; ++f) fields.vec(p, f) = scale_v[static_cast<std::size_t>(f)] * out.vec(p, f);
  }
  require_finite("model_forward", fields.scalars);
  if (raw) *raw = std::move(out);
  return fields;
}

FieldSet model_forward(const Model& model, const ParameterStore& store, const Sample& sample, const EvalOptions& opts,
                       ForwardCache* cache) {
  check_schema(model.config, sample);
  StateMap state = initial_state(model, sample);
  if (cache) cache->states.clear();
  for (int i = 0; i + 1 < model.n_layers(); ++i) {
    StateMap next = hyperlayer_step(model, store, i, state, sample, opts);
    if (cache) cache->states.push_back(std::move(state));
    state = std::move(next);
  }
  FieldSet out = final_eval(model, store, state, sample, sample.queries, opts, cache ? &cache->raw : nullptr);
  if (cache) cache->states.push_back(std::move(state));
  return out;
}

void model_backward(const Model& model, const ParameterStore& store, const Sample& sample, const ForwardCache& cache,
                    const FieldSet& g_fields, const EvalOptions& opts, std::span<double> param_grad) {
  const ModelConfig& cfg = model.config;
  const int ns = static_cast<int>(cfg.scalar_fields.size());
  const int nv = static_cast<int>(cfg.vector_fields.size());
  const int K = cfg.branches;
  const std::size_t nq = sample.queries.size();
  if (g_fields.size() != nq || cache.states.size() != static_cast<std::size_t>(model.n_layers())) {
    throw std::invalid_argument("model_backward: cache or gradient does not match the sample");
  }
  const GlobalInputs globals = model_globals(cfg, sample);

  // Calibration.
  const auto scale_s = store.values(model.calib_scale_s);
  const auto scale_v = store.values(model.calib_scale_v);
  const auto& calib_s = store.entry(model.calib_scale_s);
  const auto& calib_b = store.entry(model.calib_bias_s);
  const auto& calib_v = store.entry(model.calib_scale_v);
  KernelField g_raw(nq, ns, nv);
  for (std::size_t p = 0; p < nq; ++p) {
    const auto row = static_cast<Eigen::Index>(p);
    for (int f = 0; f < ns; ++f) {
      const double g = g_fields.scalars(row, f);
      param_grad[calib_s.offset + static_cast<std::size_t>(f)] += g * cache.raw.scalars(row, f);
      param_grad[calib_b.offset + static_cast<std::size_t>(f)] += g;
      g_raw.scalars(row, f) = scale_s[static_cast<std::size_t>(f)] * g;
    }
    for (int f = 0; f < nv; ++f) {
      const Vec3& g = g_fields.vec(p, f);
      param_grad[calib_v.offset + static_cast<std::size_t>(f)] += g.dot(cache.raw.vec(p, f));
      g_raw.vec(p, f) = scale_v[static_cast<std::size_t>(f)] * g;
    }
  }

  // Final layer: gradients into the state feeding it.
  const int last = model.n_layers() - 1;
  std::map<std::string, SourceGrad> g_state;
  {
    const StateMap& state = cache.states[static_cast<std::size_t>(last)];
    for (const auto& [sbc, smesh] : sample.boundaries) {
      SourceGrad& g = g_state[sbc];
      multiscale_backward(model.layers[static_cast<std::size_t>(last)].at(sbc), store, sample.reference_lengths,
                          sources_of(smesh, state.at(sbc)), globals, sample.queries, g_raw, opts, g, param_grad);
    }
  }

  // Communication layers in reverse.
  for (int i = last - 1; i >= 0; --i) {
    const StateMap& state = cache.states[static_cast<std::size_t>(i)];
    std::map<std::string, SourceGrad> g_prev;
    for (const auto& [tbc, tmesh] : sample.boundaries) {
      const auto targets = centroids(tmesh);
      const SourceGrad& gn = g_state.at(tbc);
      const std::size_t nt = targets.size();
      KernelField g_out(nt, K + cfg.latent_scalars, cfg.latent_vectors);
      for (std::size_t t = 0; t < nt; ++t) {
        const auto row = static_cast<Eigen::Index>(t);
        for (int k = 0; k < K; ++k) g_out.scalars(row, k) = gn.strengths[static_cast<std::size_t>(k) * nt + t];
        for (int j = 0; j < cfg.latent_scalars; ++j) g_out.scalars(row, K + j) = gn.face_scalars(row, j);
      }
      g_out.vectors = gn.face_vectors;
      for (const auto& [sbc, smesh] : sample.boundaries) {
        multiscale_backward(model.layers[static_cast<std::size_t>(i)].at(sbc), store, sample.reference_lengths,
                            sources_of(smesh, state.at(sbc)), globals, targets, g_out, opts, g_prev[sbc], param_grad);
      }
    }
    g_state = std::move(g_prev);
  }
}

ParameterBreakdown count_parameters(const ModelConfig& config) {
  config.validate();
  ParameterBreakdown b;
  for (int i = 0; i < config.hyperlayers; ++i) {
    KernelSpec spec = config.layer_spec(i);
    spec.global_scalars += ratio_feature_count(config.branches);
    const std::size_t pade = 2 * mlp_parameter_count(spec.layer_sizes());
    for (const auto& bc : config.bc_types) {
      const std::string prefix = "layer" + std::to_string(i) + "/" + bc;
      b.items.emplace_back(prefix + " Pade cores (" + std::to_string(config.branches) + " branches)",
                           pade * static_cast<std::size_t>(config.branches));
      b.items.emplace_back(prefix + " scale offsets", static_cast<std::size_t>(config.branches));
    }
  }
  b.items.emplace_back("calibration", 2 * config.scalar_fields.size() + config.vector_fields.size());
  for (const auto& [name, n] : b.items) b.total += n;
  return b;
}

void load_parameters(ParameterStore& store, const ParameterStore& loaded) {
  for (const auto& e : store.entries()) {
    if (!loaded.contains(e.path)) throw std::invalid_argument("checkpoint is missing parameter " + e.path);
    const auto id = loaded.find(e.path);
    if (loaded.entry(id).shape != e.shape) throw std::invalid_argument("checkpoint shape mismatch for " + e.path);
    const auto src = loaded.values(id);
    std::copy(src.begin(), src.end(), store.values().begin() + static_cast<std::ptrdiff_t>(e.offset));
  }
  if (loaded.entries().size() != store.entries().size()) {
    throw std::invalid_argument("checkpoint has parameters the model does not use");
  }
}

}  // namespace globe
