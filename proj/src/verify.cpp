#include "globe/verify.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <ostream>
#include <sstream>

namespace globe {

bool SuiteReport::pass() const {
  return !properties.empty() && std::all_of(properties.begin(), properties.end(), [](const auto& p) { return p.pass; });
}

void SuiteReport::print(std::ostream& out) const {
  for (const auto& p : properties) {
    out << (p.pass ? "PASS " : "FAIL ") << suite << '/' << p.name << "  worst=" << std::setprecision(4)
        << std::scientific << p.worst << " tol=" << p.tolerance << std::defaultfloat;
    if (!p.detail.empty()) out << "  " << p.detail;
    out << '\n';
  }
}

namespace {

Vec3 random_vec(Rng& rng, int dim, double scale = 1.0) {
  return Vec3(rng.normal(), rng.normal(), dim == 3 ? rng.normal() : 0.0) * scale;
}

Vec3 random_unit(Rng& rng, int dim) {
  for (;;) {
    const Vec3 v = random_vec(rng, dim);
    if (v.norm() > 1e-3) return v.normalized();
  }
}

double max_rel_diff(const FieldSet& a, const FieldSet& b) {
  return equivariance_error(a, b, Eigen::Matrix3d::Identity());
}

PropertyResult upper(std::string name, double worst, double tol, std::string detail = {}) {
  return PropertyResult{std::move(name), worst, tol, worst <= tol, std::move(detail)};
}

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(6) << v;
  return s.str();
}

}  // namespace

Sample random_problem(const ModelConfig& config, std::size_t faces_per_bc, std::size_t queries, std::uint64_t seed) {
  Rng rng = Rng(seed).split("problem");
  const int d = config.dim;
  Sample s;
  s.dim = d;
  for (const auto& bc : config.bc_types) {
    BoundaryMesh mesh;
    mesh.dim = d;
    mesh.bc = bc;
    for (std::size_t i = 0; i < faces_per_bc; ++i) {
      mesh.faces.push_back(Face{random_vec(rng, d), random_unit(rng, d), rng.uniform(0.2, 1.0)});
    }
    s.boundaries[bc] = std::move(mesh);
  }
  for (const auto& n : config.global_scalars) s.global_scalars.emplace_back(n, rng.normal());
  for (const auto& n : config.global_vectors) s.global_vectors.emplace_back(n, random_vec(rng, d));
  for (int k = 0; k < config.branches; ++k) s.reference_lengths.push_back(k == 0 ? 1.0 : rng.uniform(0.05, 0.5));
  for (std::size_t i = 0; i < queries; ++i) s.queries.push_back(random_vec(rng, d, 2.0));
  return s;
}

RigidMotion random_motion(int dim, bool reflect, Rng& rng) {
  RigidMotion m;
  if (dim == 2) {
    const double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
    m.Q << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1;
    if (reflect) m.Q = m.Q * Eigen::Vector3d(1, -1, 1).asDiagonal();
  } else {
    Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    q.normalize();
    m.Q = q.toRotationMatrix();
    if (reflect) m.Q = m.Q * Eigen::Vector3d(1, 1, -1).asDiagonal();
  }
  m.shift = random_vec(rng, dim, 3.0);
  return m;
}

Sample apply_motion(const Sample& sample, const RigidMotion& m, bool freeze_global_vectors) {
  Sample out = sample;
  for (auto& [bc, mesh] : out.boundaries) {
    for (auto& f : mesh.faces) {
      f.centroid = m.Q * f.centroid + m.shift;
      f.normal = m.Q * f.normal;
    }
  }
  for (auto& q : out.queries) q = m.Q * q + m.shift;
  if (!freeze_global_vectors) {
    for (auto& [name, v] : out.global_vectors) v = m.Q * v;
  }
  if (out.has_targets) {
    for (auto& v : out.targets.vectors) v = m.Q * v;
  }
  return out;
}

double equivariance_error(const FieldSet& base, const FieldSet& moved, const Eigen::Matrix3d& Q) {
  double worst = 0.0;
  for (int f = 0; f < base.n_scalars(); ++f) {
    const double scale = std::max(base.scalars.col(f).cwiseAbs().maxCoeff(), 1e-300);
    const double diff = (moved.scalars.col(f) - base.scalars.col(f)).cwiseAbs().maxCoeff();
    worst = std::max(worst, diff / scale);
  }
  for (int f = 0; f < base.n_vectors(); ++f) {
    double scale = 1e-300, diff = 0.0;
    for (std::size_t p = 0; p < base.size(); ++p) {
      scale = std::max(scale, base.vec(p, f).norm());
      diff = std::max(diff, (moved.vec(p, f) - Q * base.vec(p, f)).norm());
    }
    worst = std::max(worst, diff / scale);
  }
  return worst;
}

double loglog_slope(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += std::log(x[i]) / static_cast<double>(n);
    my += std::log(y[i]) / static_cast<double>(n);
  }
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

// ---------------------------------------------------------------------------

SuiteReport verify_equivariance(const Model& model, const ParameterStore& store, const VerifyOptions& opts) {
  SuiteReport rep{"equivariance", {}};
  Rng rng = Rng(opts.seed).split("equivariance");
  const Sample base = random_problem(model.config, 12, 40, rng.next_u64());
  const FieldSet ref = model_forward(model, store, base, opts.eval);
  double worst_rot = 0.0, worst_ref = 0.0;
  for (int i = 0; i < opts.motions; ++i) {
    const bool reflect = i % 2 == 1;
    const RigidMotion m = random_motion(model.config.dim, reflect, rng);
    const FieldSet moved = model_forward(model, store, apply_motion(base, m, opts.negative_control), opts.eval);
    const double err = equivariance_error(ref, moved, m.Q);
    (reflect ? worst_ref : worst_rot) = std::max(reflect ? worst_ref : worst_rot, err);
  }
  const std::string tag = opts.negative_control ? " (global vectors frozen)" : "";
  rep.properties.push_back(upper("rotation+translation", worst_rot, 1e-9, std::to_string((opts.motions + 1) / 2) + " motions" + tag));
  rep.properties.push_back(upper("reflection+translation", worst_ref, 1e-9, std::to_string(opts.motions / 2) + " motions" + tag));

  // Face order within a partition only reassociates sums.
  Sample perm = base;
  for (auto& [bc, mesh] : perm.boundaries) std::reverse(mesh.faces.begin(), mesh.faces.end());
  rep.properties.push_back(upper("face permutation", max_rel_diff(ref, model_forward(model, store, perm, opts.eval)), 1e-10));

  // Repeated query rows are identical.
  Sample dup = base;
  dup.queries.push_back(dup.queries.front());
  const FieldSet d = model_forward(model, store, dup, opts.eval);
  double rep_diff = (d.scalars.row(0) - d.scalars.row(static_cast<Eigen::Index>(dup.queries.size() - 1))).cwiseAbs().maxCoeff();
  for (int f = 0; f < d.n_vectors(); ++f) rep_diff = std::max(rep_diff, (d.vec(0, f) - d.vec(dup.queries.size() - 1, f)).norm());
  rep.properties.push_back(upper("repeated query identical", rep_diff, 0.0));
  return rep;
}

namespace {

/// Raw (uncalibrated) model output at queries.
KernelField raw_output(const Model& model, const ParameterStore& store, const Sample& s, const EvalOptions& opts) {
  check_schema(model.config, s);
  StateMap state = initial_state(model, s);
  for (int i = 0; i + 1 < model.n_layers(); ++i) state = hyperlayer_step(model, store, i, state, s, opts);
  KernelField raw;
  final_eval(model, store, state, s, s.queries, opts, &raw);
  return raw;
}

double field_magnitude(const KernelField& k, std::size_t p, int f) {
  const int ns = static_cast<int>(k.scalars.cols());
  return f < ns ? std::abs(k.scalars(static_cast<Eigen::Index>(p), f)) : k.vec(p, f - ns).norm();
}

std::vector<Vec3> directions(int dim, int count, Rng& rng) {
  std::vector<Vec3> d;
  for (int i = 0; i < count; ++i) d.push_back(random_unit(rng, dim));
  return d;
}

}  // namespace

SuiteReport verify_decay(const Model& model, const ParameterStore& store, const VerifyOptions& opts) {
  SuiteReport rep{"decay", {}};
  Rng rng = Rng(opts.seed).split("decay");
  const int d = model.config.dim;
  const double expected = -(d - 1);
  Sample s = random_problem(model.config, 8, 0, rng.next_u64());
  double diam = 0.0;
  for (const auto& [bc1, m1] : s.boundaries) {
    for (const auto& [bc2, m2] : s.boundaries) {
      for (const auto& a : m1.faces) {
        for (const auto& b : m2.faces) diam = std::max(diam, (a.centroid - b.centroid).norm());
      }
    }
  }
  const auto dirs = directions(d, 8, rng);
  const int n_fields = static_cast<int>(model.config.scalar_fields.size() + model.config.vector_fields.size());

  // Log-log slope of the largest magnitude over R in [1e2, 1e4].
  std::vector<double> radii;
  for (int k = 0; k <= 8; ++k) radii.push_back(std::pow(10.0, 2.0 + 0.25 * k));
  s.queries.clear();
  for (double R : radii) {
    for (const auto& u : dirs) s.queries.push_back(R * u);
  }
  const KernelField far = raw_output(model, store, s, opts.eval);
  std::vector<double> mags;
  for (std::size_t i = 0; i < radii.size(); ++i) {
    double m = 0.0;
    for (std::size_t j = 0; j < dirs.size(); ++j) {
      for (int f = 0; f < n_fields; ++f) m = std::max(m, field_magnitude(far, i * dirs.size() + j, f));
    }
    mags.push_back(m);
  }
  const double slope = loglog_slope(radii, mags);

  // Same fit far beyond the range, to show where the slope is heading.
  std::vector<double> deep{1e8, 1e9, 1e10};
  s.queries.clear();
  for (double R : deep) {
    for (const auto& u : dirs) s.queries.push_back(R * u);
  }
  const KernelField deep_out = raw_output(model, store, s, opts.eval);
  std::vector<double> deep_mags;
  for (std::size_t i = 0; i < deep.size(); ++i) {
    double m = 0.0;
    for (std::size_t j = 0; j < dirs.size(); ++j) {
      for (int f = 0; f < n_fields; ++f) m = std::max(m, field_magnitude(deep_out, i * dirs.size() + j, f));
    }
    deep_mags.push_back(m);
  }
  rep.properties.push_back(upper("model log-log slope", std::abs(slope - expected), 0.05,
                                 "slope[1e2,1e4]=" + fmt(slope) + " slope[1e8,1e10]=" + fmt(loglog_slope(deep, deep_mags)) +
                                     " expected=" + fmt(expected)));

  // Magnitude at 1e4 diameters against magnitude at distance 10.
  s.queries.clear();
  for (const auto& u : dirs) s.queries.push_back(10.0 * u);
  for (const auto& u : dirs) s.queries.push_back(1e4 * diam * u);
  const KernelField pair = raw_output(model, store, s, opts.eval);
  const double factor = std::pow(10.0, -3.0 * (d - 1)) * 1.1;
  double worst = 0.0;
  for (int f = 0; f < n_fields; ++f) {
    double near_mag = 0.0, far_mag = 0.0;
    for (std::size_t j = 0; j < dirs.size(); ++j) {
      near_mag = std::max(near_mag, field_magnitude(pair, j, f));
      far_mag = std::max(far_mag, field_magnitude(pair, dirs.size() + j, f));
    }
    if (near_mag > 0.0) worst = std::max(worst, far_mag / (near_mag * factor));
  }
  rep.properties.push_back(upper("far value below 1.1 x envelope law", worst, 1.0,
                                 "ratio to bound (diameter " + fmt(diam) + ")"));

  // Single kernel: |K(R)| <= C / R^(d-1) with C measured at R = 10.
  KernelSpec spec;
  spec.dim = d;
  spec.scalar_out = 2;
  spec.vector_out = 1;
  ParameterStore ks;
  const KernelBranch branch = add_kernel_branch(ks, "k", spec);
  ks.initialize(rng.next_u64());
  const std::vector<Face> src{Face{Vec3::Zero(), random_unit(rng, d), 1.0}};
  const std::vector<double> w{1.0};
  std::vector<Vec3> probes;
  const std::vector<double> kr{10.0, 1e2, 1e3, 1e4};
  for (double R : kr) {
    for (const auto& u : dirs) probes.push_back(R * u);
  }
  KernelField out(probes.size(), 2, 1);
  branch_forward(branch, ks, 1.0, SourceView{src, nullptr, {}, w}, {}, probes, opts.eval, out);
  double C = 0.0;
  for (std::size_t j = 0; j < dirs.size(); ++j) {
    for (int f = 0; f < 3; ++f) C = std::max(C, field_magnitude(out, j, f) * std::pow(10.0, d - 1));
  }
  double kworst = 0.0;
  for (std::size_t i = 1; i < kr.size(); ++i) {
    for (std::size_t j = 0; j < dirs.size(); ++j) {
      for (int f = 0; f < 3; ++f) {
        kworst = std::max(kworst, field_magnitude(out, i * dirs.size() + j, f) / (C / std::pow(kr[i], d - 1)));
      }
    }
  }
  rep.properties.push_back(upper("kernel C/R^(d-1) bound", kworst, 1.0, "ratio to bound"));
  return rep;
}

SuiteReport verify_discretization(const VerifyOptions& opts) {
  SuiteReport rep{"discretization", {}};
  Rng rng = Rng(opts.seed).split("discretization");
  KernelSpec spec;
  spec.dim = 2;
  spec.scalar_out = 2;
  spec.vector_out = 1;
  ParameterStore ks;
  const KernelBranch branch = add_kernel_branch(ks, "k", spec);
  ks.initialize(rng.next_u64());

  std::vector<Vec3> probes;
  for (int i = 0; i < 16; ++i) {
    const double a = 2.0 * std::numbers::pi * (i + 0.25) / 16.0;
    probes.emplace_back(1.8 * std::cos(a), 1.8 * std::sin(a), 0.0);
    probes.emplace_back(0.3 * std::cos(a + 0.1), 0.3 * std::sin(a + 0.1), 0.0);
  }
  auto field = [&](int n) {
    std::vector<Face> faces;
    std::vector<double> w;
    for (int i = 0; i < n; ++i) {
      const double t = 2.0 * std::numbers::pi * (i + 0.5) / n;
      const Vec3 x(std::cos(t), 0.6 * std::sin(t), 0.0);
      const Vec3 dx(-std::sin(t), 0.6 * std::cos(t), 0.0);
      faces.push_back(Face{x, Vec3(dx.y(), -dx.x(), 0.0).normalized(), dx.norm() * 2.0 * std::numbers::pi / n});
      w.push_back(1.0 + 0.5 * std::cos(t) + 0.3 * std::sin(2.0 * t));
    }
    KernelField out(probes.size(), 2, 1);
    branch_forward(branch, ks, 1.0, SourceView{faces, nullptr, {}, w}, {}, probes, opts.eval, out);
    return out;
  };
  const KernelField ref = field(1280);
  auto diff = [&](const KernelField& k) {
    double worst = 0.0;
    for (std::size_t p = 0; p < probes.size(); ++p) {
      worst = std::max(worst, (k.scalars.row(static_cast<Eigen::Index>(p)) - ref.scalars.row(static_cast<Eigen::Index>(p))).cwiseAbs().maxCoeff());
      worst = std::max(worst, (k.vec(p, 0) - ref.vec(p, 0)).norm());
    }
    return worst;
  };
  const double e20 = diff(field(20)), e40 = diff(field(40)), e80 = diff(field(80));
  const std::string detail = "e20=" + fmt(e20) + " e40=" + fmt(e40) + " e80=" + fmt(e80);
  rep.properties.push_back(upper("refinement 20->40 ratio", e20 > 0 ? e40 / e20 : 0.0, 0.6, detail));
  rep.properties.push_back(upper("refinement 40->80 ratio", e40 > 0 ? e80 / e40 : 0.0, 0.6, detail));
  return rep;
}

SuiteReport verify_gradcheck(const VerifyOptions& opts) {
  SuiteReport rep{"gradcheck", {}};
  for (const auto& p : primitive_registry(opts.seed)) {
    const auto r = gradcheck(p);
    rep.properties.push_back(upper(r.name, r.max_rel_error, 1e-5, std::to_string(r.inputs) + " inputs"));
  }
  return rep;
}

namespace {

RawFlow units_flow(Rng& rng, double L, double V, double nu_scale, double p_scale, std::vector<double>& nut) {
  RawFlow raw;
  raw.dim = 2;
  BoundaryMesh mesh;
  mesh.dim = 2;
  mesh.bc = "no_slip";
  const int n = 24;
  const double R = 0.5;
  for (int i = 0; i < n; ++i) {
    const double t = 2.0 * std::numbers::pi * (i + 0.5) / n;
    const Vec3 radial(std::cos(t), std::sin(t), 0.0);
    mesh.faces.push_back(Face{R * L * radial, radial, 2.0 * std::numbers::pi * R * L / n});
  }
  raw.boundaries["no_slip"] = mesh;
  const Vec3 dir = Vec3(30.0, 5.0, 0.0).normalized();
  for (int i = 0; i < 30; ++i) {
    const double r = R * (1.05 + 4.0 * rng.uniform());
    const double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const Vec3 x(r * std::cos(a), r * std::sin(a), 0.0);
    const Vec3 u = cylinder_velocity(x, R, dir) * std::hypot(30.0, 5.0);
    raw.points.push_back(x * L);
    raw.U.push_back(u * V);
    raw.p.push_back(0.5 * 1.2 * (std::pow(std::hypot(30.0, 5.0), 2) - u.squaredNorm()) * p_scale);
    const double draw = 1.5e-5 * rng.uniform(0.0, 50.0);
    if (nut.size() < 30) nut.push_back(draw);
    raw.nu_t.push_back(nut[static_cast<std::size_t>(i)] * nu_scale);
  }
  return raw;
}

double sample_rel_diff(const Sample& a, const Sample& b) {
  double worst = max_rel_diff(a.targets, b.targets);
  auto rel = [](const Vec3& x, const Vec3& y) { return (x - y).norm() / std::max(1e-300, x.norm()); };
  for (std::size_t i = 0; i < a.queries.size(); ++i) worst = std::max(worst, rel(a.queries[i], b.queries[i]));
  for (const auto& [bc, mesh] : a.boundaries) {
    const auto& other = b.boundaries.at(bc);
    for (std::size_t i = 0; i < mesh.faces.size(); ++i) {
      worst = std::max(worst, rel(mesh.faces[i].centroid, other.faces[i].centroid));
      worst = std::max(worst, std::abs(mesh.faces[i].area - other.faces[i].area) / mesh.faces[i].area);
    }
  }
  for (std::size_t i = 0; i < a.reference_lengths.size(); ++i) {
    worst = std::max(worst, std::abs(a.reference_lengths[i] - b.reference_lengths[i]) / a.reference_lengths[i]);
  }
  return worst;
}

}  // namespace

SuiteReport verify_units(const Model& model, const ParameterStore& store, const VerifyOptions& opts) {
  SuiteReport rep{"units", {}};
  Rng rng = Rng(opts.seed).split("units");
  std::vector<double> nut;
  Rng r1 = rng.split("flow"), r2 = rng.split("flow");
  // SI, then feet / slugs: lengths and velocities scale by 1/0.3048,
  // density by 0.00194032 slug/ft^3 per kg/m^3.
  const double k = 1.0 / 0.3048;
  const double rho_k = 0.00194032;
  const RawFlow si = units_flow(r1, 1.0, 1.0, 1.0, 1.0, nut);
  const RawFlow imp = units_flow(r2, k, k, k * k, rho_k * k * k, nut);
  FlowConstants c_si{1.2, 1.5e-5, Vec3(30.0, 5.0, 0.0), 1.0};
  FlowConstants c_imp{1.2 * rho_k, 1.5e-5 * k * k, Vec3(30.0 * k, 5.0 * k, 0.0), k};
  const Sample a = nondimensionalize(si, c_si);
  const Sample b = nondimensionalize(imp, c_imp);
  rep.properties.push_back(upper("nondimensional sample", sample_rel_diff(a, b), 1e-12));

  try {
    check_schema(model.config, a);
    const FieldSet fa = model_forward(model, store, a, opts.eval);
    const FieldSet fb = model_forward(model, store, b, opts.eval);
    rep.properties.push_back(upper("model output", max_rel_diff(fa, fb), 1e-12));
  } catch (const std::invalid_argument&) {
    rep.properties.push_back(PropertyResult{"model output", 0.0, 1e-12, true, "skipped: model schema is not aerodynamic"});
  }
  return rep;
}

SuiteReport verify_chunking(const Model& model, const ParameterStore& store, const VerifyOptions& opts) {
  SuiteReport rep{"chunking", {}};
  const Sample s = random_problem(model.config, 10, 100, Rng(opts.seed).split("chunking").next_u64());
  EvalOptions whole = opts.eval;
  whole.chunk_size = s.queries.size();
  const FieldSet ref = model_forward(model, store, s, whole);
  for (std::size_t c : {std::size_t{1}, std::size_t{7}, std::size_t{4096}}) {
    EvalOptions e = opts.eval;
    e.chunk_size = c;
    rep.properties.push_back(upper("chunk " + std::to_string(c), max_rel_diff(ref, model_forward(model, store, s, e)), 1e-12));
  }
  return rep;
}

}  // namespace globe
