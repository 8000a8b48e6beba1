#include "globe/kernel.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "globe/parallel.hpp"

namespace globe {

std::vector<int> KernelSpec::layer_sizes() const {
  std::vector<int> sizes;
  sizes.push_back(feature_count());
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(pade_width());
  return sizes;
}

std::size_t KernelSpec::parameter_count() const { return 2 * mlp_parameter_count(layer_sizes()) + 1; }

PairContext build_pair_context(const Face& face, const Vec3& target, double ell_eff,
                               std::span<const Vec3> face_vectors, std::span<const double> face_scalars,
                               std::span<const Vec3> global_vectors, std::span<const double> global_scalars,
                               int dim, bool include_normal) {
  if (dim != 2 && dim != 3) throw std::invalid_argument("dimension must be 2 or 3");
  auto in_plane = [dim](const Vec3& v) { return dim == 3 || v.z() == 0.0; };
  if (!in_plane(face.centroid) || !in_plane(target) || !in_plane(face.normal)) {
    throw std::invalid_argument("2D pair context has out-of-plane components");
  }
  PairContext ctx;
  ctx.dim = dim;
  ctx.r = relative_position(target, face.centroid, ell_eff);
  ctx.vectors.reserve(2 + face_vectors.size() + global_vectors.size());
  if (include_normal) ctx.vectors.push_back(face.normal);
  ctx.vectors.insert(ctx.vectors.end(), face_vectors.begin(), face_vectors.end());
  ctx.vectors.insert(ctx.vectors.end(), global_vectors.begin(), global_vectors.end());
  ctx.vectors.push_back(ctx.r);
  ctx.scalars.assign(face_scalars.begin(), face_scalars.end());
  ctx.scalars.insert(ctx.scalars.end(), global_scalars.begin(), global_scalars.end());
  return ctx;
}

double envelope(const Vec3& r, int dim) {
  const double rho = r.squaredNorm();
  const double num = -std::expm1(-rho);
  return dim == 2 ? num / std::sqrt(rho + 1.0) : num / (rho + 1.0);
}

Vec3 envelope_gradient(const Vec3& r, int dim) {
  const double rho = r.squaredNorm();
  const double num = -std::expm1(-rho);
  const double p = 0.5 * (dim - 1);
  const double base = dim == 2 ? 1.0 / std::sqrt(rho + 1.0) : 1.0 / (rho + 1.0);
  const double dg_drho = std::exp(-rho) * base - p * num * base / (rho + 1.0);
  return 2.0 * dg_drho * r;
}

namespace {

/// Gradient of u = smoothlog(|v|) v-hat with respect to v, applied to g_u.
Vec3 axis_vjp(const Vec3& v, const Vec3& g_u) {
  const double n = v.norm();
  if (n < kZeroNorm) return Vec3::Zero();
  const Vec3 vh = v / n;
  const double along = vh.dot(g_u);
  return smoothlog_derivative(n) * along * vh + smoothlog(n) / n * (g_u - along * vh);
}

Vec3 axis_of(const Vec3& v) {
  const double n = v.norm();
  return n < kZeroNorm ? Vec3::Zero() : Vec3(smoothlog(n) / n * v);
}

}  // namespace

ReprojectionBasis build_basis(const PairContext& ctx) {
  const Vec3& r = ctx.vectors.back();
  const double nr = r.norm();
  const Vec3 rhat = nr < kZeroNorm ? Vec3::Zero() : Vec3(r / nr);
  ReprojectionBasis basis;
  basis.vectors.reserve(2 * ctx.vectors.size() - 1);
  basis.vectors.push_back(rhat);
  for (std::size_t i = 0; i + 1 < ctx.vectors.size(); ++i) {
    const Vec3 u = axis_of(ctx.vectors[i]);
    basis.vectors.push_back(u);
    basis.vectors.push_back(-(u - u.dot(rhat) * rhat));
  }
  return basis;
}

void build_basis_vjp(const PairContext& ctx, std::span<const Vec3> g_basis, std::span<Vec3> g_vectors) {
  const std::size_t m = ctx.vectors.size();
  const Vec3& r = ctx.vectors.back();
  const double nr = r.norm();
  const bool has_dir = nr >= kZeroNorm;
  const Vec3 rhat = has_dir ? Vec3(r / nr) : Vec3::Zero();
  Vec3 g_rhat = g_basis[0];
  for (std::size_t i = 0; i + 1 < m; ++i) {
    const Vec3 u = axis_of(ctx.vectors[i]);
    const Vec3& g_axis = g_basis[1 + 2 * i];
    const Vec3& g_e = g_basis[2 + 2 * i];
    const Vec3 g_u = g_axis - (g_e - rhat.dot(g_e) * rhat);
    g_vectors[i] += axis_vjp(ctx.vectors[i], g_u);
    g_rhat += u.dot(rhat) * g_e + rhat.dot(g_e) * u;
  }
  if (has_dir) g_vectors[m - 1] += (g_rhat - rhat.dot(g_rhat) * rhat) / nr;
}

KernelBranch add_kernel_branch(ParameterStore& store, const std::string& prefix, const KernelSpec& spec) {
  if (spec.scalar_out + spec.vector_out <= 0) throw std::invalid_argument("kernel must produce some output");
  KernelBranch b;
  b.spec = spec;
  b.pade = add_pade(store, prefix + "/pade", spec.layer_sizes(), spec.pade_n, spec.pade_d);
  b.alpha = store.add(prefix + "/alpha", {1}, InitKind::kZero);
  return b;
}

PairOutput kernel_pair(const KernelBranch& branch, const ParameterStore& store, const PairContext& ctx) {
  const KernelSpec& spec = branch.spec;
  if (static_cast<int>(ctx.vectors.size()) != spec.vector_count() ||
      static_cast<int>(ctx.scalars.size()) != spec.face_scalars + spec.global_scalars) {
    throw std::invalid_argument("pair context does not match kernel channel counts");
  }
  const auto encoded = encode_vectors(ctx.vectors, spec.harmonics);
  RowMatrix x(1, spec.feature_count());
  std::size_t c = 0;
  for (double s : ctx.scalars) x(0, static_cast<Eigen::Index>(c++)) = s;
  for (double s : encoded) x(0, static_cast<Eigen::Index>(c++)) = s;
  RowMatrix y;
  pade_forward(branch.pade, store, x, y);
  const double g = envelope(ctx.r, ctx.dim);
  const auto basis = build_basis(ctx);
  const int nb = spec.basis_size();

  PairOutput out;
  out.scalars.resize(static_cast<std::size_t>(spec.scalar_out));
  for (int j = 0; j < spec.scalar_out; ++j) out.scalars[static_cast<std::size_t>(j)] = g * y(0, j);
  out.vectors.assign(static_cast<std::size_t>(spec.vector_out), Vec3::Zero());
  for (int o = 0; o < spec.vector_out; ++o) {
    for (int j = 0; j < nb; ++j) {
      out.vectors[static_cast<std::size_t>(o)] += g * y(0, spec.scalar_out + o * nb + j) * basis.vectors[static_cast<std::size_t>(j)];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

KernelField::KernelField(std::size_t targets, int scalar_out, int vector_out_)
    : scalars(RowMatrix::Zero(static_cast<Eigen::Index>(targets), scalar_out)),
      vectors(targets * static_cast<std::size_t>(vector_out_), Vec3::Zero()),
      vector_out(vector_out_) {}

void KernelField::set_zero() {
  scalars.setZero();
  std::fill(vectors.begin(), vectors.end(), Vec3::Zero());
}

KernelField& KernelField::operator+=(const KernelField& other) {
  scalars += other.scalars;
  for (std::size_t i = 0; i < vectors.size(); ++i) vectors[i] += other.vectors[i];
  return *this;
}

namespace {

/// Neumaier compensated accumulator.
struct CompensatedSum {
  double sum = 0.0;
  double comp = 0.0;
  void add(double x) {
    const double t = sum + x;
    comp += std::abs(sum) >= std::abs(x) ? (sum - t) + x : (x - t) + sum;
    sum = t;
  }
  double value() const { return sum + comp; }
};

}  // namespace

KernelField aggregate(std::span<const PairOutput> per_pair, std::size_t n_targets, std::span<const double> strengths,
                      std::span<const double> areas, int scalar_out, int vector_out) {
  const std::size_t ns = strengths.size();
  if (areas.size() != ns || per_pair.size() != n_targets * ns) {
    throw std::invalid_argument("aggregate: inconsistent pair, strength and area counts");
  }
  KernelField out(n_targets, scalar_out, vector_out);
  std::vector<CompensatedSum> acc(static_cast<std::size_t>(scalar_out + 3 * vector_out));
  for (std::size_t t = 0; t < n_targets; ++t) {
    std::fill(acc.begin(), acc.end(), CompensatedSum{});
    for (std::size_t s = 0; s < ns; ++s) {
      const auto& p = per_pair[t * ns + s];
      const double wa = strengths[s] * areas[s];
      for (int j = 0; j < scalar_out; ++j) acc[static_cast<std::size_t>(j)].add(wa * p.scalars[static_cast<std::size_t>(j)]);
      for (int o = 0; o < vector_out; ++o) {
        for (int k = 0; k < 3; ++k) {
          acc[static_cast<std::size_t>(scalar_out + 3 * o + k)].add(wa * p.vectors[static_cast<std::size_t>(o)][k]);
        }
      }
    }
    for (int j = 0; j < scalar_out; ++j) out.scalars(static_cast<Eigen::Index>(t), j) = acc[static_cast<std::size_t>(j)].value();
    for (int o = 0; o < vector_out; ++o) {
      for (int k = 0; k < 3; ++k) out.vec(t, o)[k] = acc[static_cast<std::size_t>(scalar_out + 3 * o + k)].value();
    }
  }
  return out;
}

void SourceGrad::reset(std::size_t faces, int n_scalars, int n_vectors) {
  face_scalars = RowMatrix::Zero(static_cast<Eigen::Index>(faces), n_scalars);
  face_vectors.assign(faces * static_cast<std::size_t>(n_vectors), Vec3::Zero());
  strengths.assign(faces, 0.0);
}

void evaluate_chunked(std::size_t n_targets, std::size_t chunk_size,
                      const std::function<void(std::size_t, std::size_t)>& fn) {
  if (chunk_size == 0) throw std::invalid_argument("chunk_size must be >= 1");
  for (std::size_t begin = 0; begin < n_targets; begin += chunk_size) {
    fn(begin, std::min(n_targets, begin + chunk_size));
  }
}

// ---------------------------------------------------------------------------
// Batched evaluation.
//
// Features and basis entries that do not involve r are constant per source and
// are computed once. Per pair only |r|, the (v_a, r) pair features, the
// envelope and the r-dependent basis directions are rebuilt.

namespace {

constexpr std::size_t kPairBudget = 2048;

struct SourceTable {
  int m = 0;             // vectors in the bag, r included
  int n_fixed = 0;       // m - 1
  int scalar_cols = 0;   // face + global scalars
  int mag_r_col = 0;
  std::vector<int> pair_r_col;  // first column of pair (a, r)
  RowMatrix fixed_rows;         // sources x features, r-dependent columns zero
  std::vector<Vec3> vecs;       // sources x n_fixed
  std::vector<Vec3> axes;       // sources x n_fixed
  std::vector<double> weight;   // w_s a_s
};

int pair_column(int scalar_cols, int m, int h, int a, int b) {
  int idx = 0;
  for (int i = 0; i < a; ++i) idx += m - 1 - i;
  idx += b - a - 1;
  return scalar_cols + m + idx * h;
}

void check_inputs(const KernelSpec& spec, const SourceView& src, const GlobalInputs& g) {
  const std::size_t ns = src.faces.size();
  if (static_cast<int>(g.scalars.size()) != spec.global_scalars ||
      static_cast<int>(g.vectors.size()) != spec.global_vectors) {
    throw std::invalid_argument("global inputs do not match kernel spec");
  }
  if (src.strengths.size() != ns) throw std::invalid_argument("one strength per source face required");
  if (src.face_vectors.size() != ns * static_cast<std::size_t>(spec.face_vectors)) {
    throw std::invalid_argument("face vector count does not match kernel spec");
  }
  if (spec.face_scalars > 0) {
    if (!src.face_scalars || src.face_scalars->rows() != static_cast<Eigen::Index>(ns) ||
        src.face_scalars->cols() != spec.face_scalars) {
      throw std::invalid_argument("face scalar shape does not match kernel spec");
    }
  }
}

SourceTable build_table(const KernelSpec& spec, const SourceView& src, const GlobalInputs& g) {
  check_inputs(spec, src, g);
  SourceTable tab;
  const std::size_t ns = src.faces.size();
  const int h = spec.harmonics;
  tab.m = spec.vector_count();
  tab.n_fixed = tab.m - 1;
  tab.scalar_cols = spec.face_scalars + spec.global_scalars;
  tab.mag_r_col = tab.scalar_cols + tab.m - 1;
  for (int a = 0; a < tab.n_fixed; ++a) tab.pair_r_col.push_back(pair_column(tab.scalar_cols, tab.m, h, a, tab.m - 1));

  const auto nf = static_cast<std::size_t>(tab.n_fixed);
  tab.fixed_rows = RowMatrix::Zero(static_cast<Eigen::Index>(ns), spec.feature_count());
  tab.vecs.resize(ns * nf);
  tab.axes.resize(ns * nf);
  tab.weight.resize(ns);
  for (std::size_t s = 0; s < ns; ++s) {
    Vec3* v = &tab.vecs[s * nf];
    const int off = spec.face_vector_offset();
    if (spec.use_normal) v[0] = src.faces[s].normal;
    for (int i = 0; i < spec.face_vectors; ++i) v[off + i] = src.face_vectors[s * static_cast<std::size_t>(spec.face_vectors) + static_cast<std::size_t>(i)];
    for (int i = 0; i < spec.global_vectors; ++i) v[off + spec.face_vectors + i] = g.vectors[static_cast<std::size_t>(i)];
    for (std::size_t i = 0; i < nf; ++i) tab.axes[s * nf + i] = axis_of(v[i]);

    auto row = tab.fixed_rows.row(static_cast<Eigen::Index>(s));
    int c = 0;
    for (int i = 0; i < spec.face_scalars; ++i) row(c++) = (*src.face_scalars)(static_cast<Eigen::Index>(s), i);
    for (double x : g.scalars) row(c++) = x;
    for (std::size_t i = 0; i < nf; ++i) row(c++) = smoothlog(v[i].norm());
    double buf[16];
    for (int a = 0; a < tab.n_fixed; ++a) {
      for (int b = a + 1; b < tab.n_fixed; ++b) {
        pair_features(v[a], v[b], h, std::span(buf, static_cast<std::size_t>(h)));
        const int col = pair_column(tab.scalar_cols, tab.m, h, a, b);
        for (int k = 0; k < h; ++k) row(col + k) = buf[k];
      }
    }
    tab.weight[s] = src.strengths[s] * src.faces[s].area;
  }
  return tab;
}

struct Workspace {
  RowMatrix x, y, gy, gx;
  PadeCache cache;
  std::vector<double> env;
  std::vector<Vec3> r;
  std::vector<Vec3> basis;
  std::vector<Vec3> g_basis;
  std::vector<double> g_env;
};

/// Fills features, envelope, r and basis for targets [t0, t1) x all sources.
void fill_pairs(const KernelSpec& spec, const SourceTable& tab, std::span<const Face> faces,
                std::span<const Vec3> targets, std::size_t t0, std::size_t t1, double ell_eff, Workspace& ws) {
  const std::size_t ns = faces.size();
  const std::size_t P = (t1 - t0) * ns;
  const int h = spec.harmonics;
  const auto nb = static_cast<std::size_t>(spec.basis_size());
  const auto nf = static_cast<std::size_t>(tab.n_fixed);
  ws.x.resize(static_cast<Eigen::Index>(P), spec.feature_count());
  ws.env.resize(P);
  ws.r.resize(P);
  ws.basis.resize(P * nb);
  const double inv_ell = 1.0 / ell_eff;
  double buf[16];
  for (std::size_t t = t0; t < t1; ++t) {
    for (std::size_t s = 0; s < ns; ++s) {
      const std::size_t p = (t - t0) * ns + s;
      const Vec3 r = (targets[t] - faces[s].centroid) * inv_ell;
      ws.r[p] = r;
      auto row = ws.x.row(static_cast<Eigen::Index>(p));
      row = tab.fixed_rows.row(static_cast<Eigen::Index>(s));
      const double nr = r.norm();
      row(tab.mag_r_col) = smoothlog(nr);
      const Vec3* v = &tab.vecs[s * nf];
      for (std::size_t a = 0; a < nf; ++a) {
        pair_features(v[a], r, h, std::span(buf, static_cast<std::size_t>(h)));
        for (int k = 0; k < h; ++k) row(tab.pair_r_col[a] + k) = buf[k];
      }
      ws.env[p] = envelope(r, spec.dim);
      const Vec3 rhat = nr < kZeroNorm ? Vec3::Zero() : Vec3(r / nr);
      Vec3* b = &ws.basis[p * nb];
      b[0] = rhat;
      const Vec3* u = &tab.axes[s * nf];
      for (std::size_t i = 0; i < nf; ++i) {
        b[1 + 2 * i] = u[i];
        b[2 + 2 * i] = -(u[i] - u[i].dot(rhat) * rhat);
      }
    }
  }
}

std::size_t targets_per_chunk(std::size_t requested, std::size_t n_sources) {
  if (requested > 0) return requested;
  return std::max<std::size_t>(1, kPairBudget / std::max<std::size_t>(1, n_sources));
}

}  // namespace

void branch_forward(const KernelBranch& branch, const ParameterStore& store, double ell, const SourceView& sources,
                    const GlobalInputs& globals, std::span<const Vec3> targets, const EvalOptions& opts,
                    KernelField& out) {
  const KernelSpec& spec = branch.spec;
  if (out.size() != targets.size() || out.scalars.cols() != spec.scalar_out || out.vector_out != spec.vector_out) {
    throw std::invalid_argument("output field shape does not match kernel");
  }
  const std::size_t ns = sources.faces.size();
  if (ns == 0 || targets.empty()) return;
  if (!(ell > 0.0)) throw std::domain_error("reference length must be positive");
  const double ell_eff = ell * std::exp(store.values(branch.alpha)[0]);
  const SourceTable tab = build_table(spec, sources, globals);

  const std::size_t chunk = targets_per_chunk(opts.chunk_size, ns);
  const std::size_t n_chunks = (targets.size() + chunk - 1) / chunk;
  const int so = spec.scalar_out;
  const int vo = spec.vector_out;
  const int nb = spec.basis_size();
  std::vector<Workspace> spaces(static_cast<std::size_t>(std::max(1, opts.threads)));

  parallel_for(n_chunks, opts.threads, [&](std::size_t c, int worker) {
    Workspace& ws = spaces[static_cast<std::size_t>(worker)];
    const std::size_t t0 = c * chunk;
    const std::size_t t1 = std::min(targets.size(), t0 + chunk);
    fill_pairs(spec, tab, sources.faces, targets, t0, t1, ell_eff, ws);
    pade_forward(branch.pade, store, ws.x, ws.y);
    std::vector<CompensatedSum> acc(static_cast<std::size_t>(so + 3 * vo));
    for (std::size_t t = t0; t < t1; ++t) {
      std::fill(acc.begin(), acc.end(), CompensatedSum{});
      for (std::size_t s = 0; s < ns; ++s) {
        const std::size_t p = (t - t0) * ns + s;
        const double scale = tab.weight[s] * ws.env[p];
        const double* y = ws.y.row(static_cast<Eigen::Index>(p)).data();
        for (int j = 0; j < so; ++j) acc[static_cast<std::size_t>(j)].add(scale * y[j]);
        const Vec3* b = &ws.basis[p * static_cast<std::size_t>(nb)];
        for (int o = 0; o < vo; ++o) {
          Vec3 v = Vec3::Zero();
          const double* coef = y + so + o * nb;
          for (int j = 0; j < nb; ++j) v += coef[j] * b[j];
          for (int k = 0; k < 3; ++k) acc[static_cast<std::size_t>(so + 3 * o + k)].add(scale * v[k]);
        }
      }
      for (int j = 0; j < so; ++j) out.scalars(static_cast<Eigen::Index>(t), j) += acc[static_cast<std::size_t>(j)].value();
      for (int o = 0; o < vo; ++o) {
        for (int k = 0; k < 3; ++k) out.vec(t, o)[k] += acc[static_cast<std::size_t>(so + 3 * o + k)].value();
      }
    }
  });
}

namespace {

struct BackwardAccum {
  std::vector<double> param_grad;  // unused for worker 0
  RowMatrix g_fixed;               // sources x features
  std::vector<Vec3> g_vec;         // sources x n_fixed, raw-vector gradients
  std::vector<Vec3> g_axis;        // sources x n_fixed, axis gradients
  std::vector<double> g_weight;    // d/d(w_s) / a_s folded in later
  double g_log_ell = 0.0;

  void reset(std::size_t ns, int features, int n_fixed) {
    g_fixed = RowMatrix::Zero(static_cast<Eigen::Index>(ns), features);
    g_vec.assign(ns * static_cast<std::size_t>(n_fixed), Vec3::Zero());
    g_axis.assign(ns * static_cast<std::size_t>(n_fixed), Vec3::Zero());
    g_weight.assign(ns, 0.0);
    g_log_ell = 0.0;
  }
};

}  // namespace

void branch_backward(const KernelBranch& branch, const ParameterStore& store, double ell, const SourceView& sources,
                     const GlobalInputs& globals, std::span<const Vec3> targets, const KernelField& g_out,
                     const EvalOptions& opts, SourceGrad& g_sources, std::span<double> param_grad) {
  const KernelSpec& spec = branch.spec;
  const std::size_t ns = sources.faces.size();
  if (ns == 0 || targets.empty()) return;
  if (g_out.size() != targets.size()) throw std::invalid_argument("gradient field shape does not match targets");
  const double ell_eff = ell * std::exp(store.values(branch.alpha)[0]);
  const SourceTable tab = build_table(spec, sources, globals);

  const std::size_t chunk = targets_per_chunk(opts.chunk_size, ns);
  const std::size_t n_chunks = (targets.size() + chunk - 1) / chunk;
  const int so = spec.scalar_out;
  const int vo = spec.vector_out;
  const int nb = spec.basis_size();
  const int h = spec.harmonics;
  const auto nf = static_cast<std::size_t>(tab.n_fixed);
  const int workers = std::max(1, std::min<int>(opts.threads, static_cast<int>(n_chunks)));

  std::vector<Workspace> spaces(static_cast<std::size_t>(workers));
  std::vector<BackwardAccum> accs(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    accs[static_cast<std::size_t>(w)].reset(ns, spec.feature_count(), tab.n_fixed);
    if (w > 0) accs[static_cast<std::size_t>(w)].param_grad.assign(param_grad.size(), 0.0);
  }

  parallel_for(n_chunks, workers, [&](std::size_t c, int worker) {
    Workspace& ws = spaces[static_cast<std::size_t>(worker)];
    BackwardAccum& acc = accs[static_cast<std::size_t>(worker)];
    std::span<double> pg = worker == 0 ? param_grad : std::span<double>(acc.param_grad);
    const std::size_t t0 = c * chunk;
    const std::size_t t1 = std::min(targets.size(), t0 + chunk);
    const std::size_t P = (t1 - t0) * ns;
    fill_pairs(spec, tab, sources.faces, targets, t0, t1, ell_eff, ws);
    pade_forward(branch.pade, store, ws.x, ws.y, &ws.cache);

    ws.gy.resize(ws.y.rows(), ws.y.cols());
    ws.g_basis.assign(P * static_cast<std::size_t>(nb), Vec3::Zero());
    ws.g_env.assign(P, 0.0);
    for (std::size_t t = t0; t < t1; ++t) {
      const auto ti = static_cast<Eigen::Index>(t);
      for (std::size_t s = 0; s < ns; ++s) {
        const std::size_t p = (t - t0) * ns + s;
        const auto pi = static_cast<Eigen::Index>(p);
        const double e = ws.env[p];
        const double wa = tab.weight[s];
        const double* y = ws.y.row(pi).data();
        double* gy = ws.gy.row(pi).data();
        const Vec3* b = &ws.basis[p * static_cast<std::size_t>(nb)];
        Vec3* gb = &ws.g_basis[p * static_cast<std::size_t>(nb)];
        double g_env = 0.0;
        double dot_out = 0.0;  // <g_out_t, raw pair output> with weight removed
        for (int j = 0; j < so; ++j) {
          const double g = g_out.scalars(ti, j);
          dot_out += g * y[j] * e;
          g_env += wa * g * y[j];
          gy[j] = wa * g * e;
        }
        for (int o = 0; o < vo; ++o) {
          const Vec3& gv = g_out.vec(t, o);
          const double* coef = y + so + o * nb;
          double* gcoef = gy + so + o * nb;
          for (int j = 0; j < nb; ++j) {
            const double proj = gv.dot(b[j]);
            dot_out += proj * coef[j] * e;
            g_env += wa * proj * coef[j];
            gcoef[j] = wa * proj * e;
            gb[j] += (wa * e * coef[j]) * gv;
          }
        }
        ws.g_env[p] = g_env;
        acc.g_weight[s] += dot_out;
      }
    }

    pade_backward(branch.pade, store, ws.cache, ws.gy, &ws.gx, pg);

    for (std::size_t t = t0; t < t1; ++t) {
      for (std::size_t s = 0; s < ns; ++s) {
        const std::size_t p = (t - t0) * ns + s;
        const auto pi = static_cast<Eigen::Index>(p);
        const Vec3& r = ws.r[p];
        const double nr = r.norm();
        const bool has_dir = nr >= kZeroNorm;
        const Vec3 rhat = has_dir ? Vec3(r / nr) : Vec3::Zero();
        const double* gx = ws.gx.row(pi).data();
        Vec3 gr = ws.g_env[p] * envelope_gradient(r, spec.dim);

        const Vec3* gb = &ws.g_basis[p * static_cast<std::size_t>(nb)];
        const Vec3* u = &tab.axes[s * nf];
        Vec3* g_axis = &acc.g_axis[s * nf];
        Vec3 g_rhat = gb[0];
        for (std::size_t i = 0; i < nf; ++i) {
          const Vec3& g_e = gb[2 + 2 * i];
          g_axis[i] += gb[1 + 2 * i] - (g_e - rhat.dot(g_e) * rhat);
          g_rhat += u[i].dot(rhat) * g_e + rhat.dot(g_e) * u[i];
        }
        if (has_dir) {
          gr += (g_rhat - rhat.dot(g_rhat) * rhat) / nr;
          gr += gx[tab.mag_r_col] * smoothlog_derivative(nr) * rhat;
        }
        const Vec3* v = &tab.vecs[s * nf];
        Vec3* g_vec = &acc.g_vec[s * nf];
        for (std::size_t a = 0; a < nf; ++a) {
          pair_features_vjp(v[a], r, h, std::span(gx + tab.pair_r_col[a], static_cast<std::size_t>(h)), g_vec[a], gr);
        }
        acc.g_fixed.row(static_cast<Eigen::Index>(s)) += ws.gx.row(pi);
        acc.g_log_ell -= gr.dot(r);
      }
    }
  });

  for (int w = 1; w < workers; ++w) {
    auto& a = accs[static_cast<std::size_t>(w)];
    for (std::size_t i = 0; i < param_grad.size(); ++i) param_grad[i] += a.param_grad[i];
    accs[0].g_fixed += a.g_fixed;
    for (std::size_t i = 0; i < a.g_vec.size(); ++i) {
      accs[0].g_vec[i] += a.g_vec[i];
      accs[0].g_axis[i] += a.g_axis[i];
    }
    for (std::size_t s = 0; s < ns; ++s) accs[0].g_weight[s] += a.g_weight[s];
    accs[0].g_log_ell += a.g_log_ell;
  }
  const BackwardAccum& acc = accs[0];
  param_grad[store.entry(branch.alpha).offset] += acc.g_log_ell;

  if (g_sources.strengths.size() != ns) g_sources.reset(ns, spec.face_scalars, spec.face_vectors);
  for (std::size_t s = 0; s < ns; ++s) {
    g_sources.strengths[s] += acc.g_weight[s] * sources.faces[s].area;
    for (int i = 0; i < spec.face_scalars; ++i) {
      g_sources.face_scalars(static_cast<Eigen::Index>(s), i) += acc.g_fixed(static_cast<Eigen::Index>(s), i);
    }
    if (spec.face_vectors == 0) continue;
    // Only face vectors carry gradient upstream.
    const Vec3* v = &tab.vecs[s * nf];
    const double* gf = acc.g_fixed.row(static_cast<Eigen::Index>(s)).data();
    std::vector<Vec3> gv(nf, Vec3::Zero());
    for (std::size_t a = 0; a < nf; ++a) {
      const double n = v[a].norm();
      if (n >= kZeroNorm) gv[a] += gf[tab.scalar_cols + static_cast<int>(a)] * smoothlog_derivative(n) * v[a] / n;
      gv[a] += acc.g_vec[s * nf + a] + axis_vjp(v[a], acc.g_axis[s * nf + a]);
    }
    for (int a = 0; a < tab.n_fixed; ++a) {
      for (int b = a + 1; b < tab.n_fixed; ++b) {
        const int col = pair_column(tab.scalar_cols, tab.m, h, a, b);
        pair_features_vjp(v[a], v[b], h, std::span(gf + col, static_cast<std::size_t>(h)), gv[static_cast<std::size_t>(a)],
                          gv[static_cast<std::size_t>(b)]);
      }
    }
    for (int i = 0; i < spec.face_vectors; ++i) {
      g_sources.face_vectors[s * static_cast<std::size_t>(spec.face_vectors) + static_cast<std::size_t>(i)] +=
          gv[static_cast<std::size_t>(spec.face_vector_offset() + i)];
    }
  }
}

}  // namespace globe
