#include <algorithm>
#include <cmath>
#include <memory>

#include "globe/training.hpp"
#include "globe/verify.hpp"

namespace globe {

namespace {

std::vector<double> random_vector(Rng& rng, std::size_t n, double scale = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = scale * rng.normal();
  return v;
}

Vec3 vec_at(std::span<const double> x, std::size_t i) { return Vec3(x[3 * i], x[3 * i + 1], x[3 * i + 2]); }

void add_vec(std::span<double> g, std::size_t i, const Vec3& v) {
  for (int k = 0; k < 3; ++k) g[3 * i + static_cast<std::size_t>(k)] += v[k];
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Primitive scalar_map(std::string name, std::vector<double> x0, std::vector<double> c, double (*f)(double),
                     double (*df)(double)) {
  Primitive p;
  p.name = std::move(name);
  p.x0 = std::move(x0);
  p.value = [c, f](std::span<const double> x) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += c[i] * f(x[i]);
    return s;
  };
  p.gradient = [c, df](std::span<const double> x, std::span<double> g) {
    for (std::size_t i = 0; i < x.size(); ++i) g[i] = c[i] * df(x[i]);
  };
  return p;
}

RowMatrix to_matrix(std::span<const double> x, Eigen::Index rows, Eigen::Index cols) {
  RowMatrix m(rows, cols);
  std::copy(x.begin(), x.begin() + rows * cols, m.data());
  return m;
}

/// Shared state for primitives whose inputs are a ParameterStore plus extra
/// values.
struct StoreBox {
  ParameterStore store;
  void load(std::span<const double> x) {
    auto v = store.values();
    std::copy(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(v.size()), v.begin());
  }
  std::vector<double> params() const { return {store.values().begin(), store.values().end()}; }
};

// Kernel branch or multiscale evaluation over a small random problem. The
// differentiable inputs are all parameters, the strengths, the face scalars
// and the face vectors.
Primitive kernel_primitive(const std::string& name, int dim, int branches, std::uint64_t seed) {
  Rng rng = Rng(seed).split(name);
  KernelSpec spec;
  spec.dim = dim;
  spec.face_scalars = 2;
  spec.face_vectors = 2;
  spec.global_scalars = 1;
  spec.global_vectors = 1;
  spec.harmonics = 2;
  spec.hidden = {6, 5};
  spec.scalar_out = 2;
  spec.vector_out = 2;
  auto box = std::make_shared<StoreBox>();
  auto mk = std::make_shared<MultiscaleKernel>(add_multiscale_kernel(box->store, name, spec, branches));
  box->store.initialize(rng.next_u64());
  for (auto& a : mk->branches) box->store.values(a.alpha)[0] = 0.1 * rng.normal();

  const std::size_t ns = 3, nt = 4;
  auto planar = [dim](Vec3 v) {
    if (dim == 2) v.z() = 0.0;
    return v;
  };
  auto faces = std::make_shared<std::vector<Face>>();
  for (std::size_t s = 0; s < ns; ++s) {
    Vec3 n = planar(Vec3(rng.normal(), rng.normal(), rng.normal())).normalized();
    faces->push_back(Face{planar(Vec3(rng.normal(), rng.normal(), rng.normal())), n, 0.5 + rng.uniform()});
  }
  auto targets = std::make_shared<std::vector<Vec3>>();
  targets->push_back((*faces)[0].centroid);  // exercises r = 0
  for (std::size_t t = 1; t < nt; ++t) targets->push_back(planar(Vec3(rng.normal(), rng.normal(), rng.normal()) * 1.5));
  auto globals = std::make_shared<GlobalInputs>();
  globals->scalars = {0.4};
  globals->vectors = {planar(Vec3(0.3, -0.8, 0.5))};
  auto lengths = std::make_shared<std::vector<double>>();
  for (int k = 0; k < branches; ++k) lengths->push_back(k == 0 ? 1.0 : 0.3);

  const std::size_t np = box->store.size();
  const std::size_t n_w = ns * static_cast<std::size_t>(branches);
  const std::size_t n_fs = ns * 2;
  const std::size_t n_fv = ns * 2 * 3;

  // Upstream gradient.
  auto g_out = std::make_shared<KernelField>(nt, spec.scalar_out, spec.vector_out);
  for (std::size_t t = 0; t < nt; ++t) {
    for (int j = 0; j < spec.scalar_out; ++j) g_out->scalars(static_cast<Eigen::Index>(t), j) = rng.normal();
    for (int o = 0; o < spec.vector_out; ++o) g_out->vec(t, o) = planar(Vec3(rng.normal(), rng.normal(), rng.normal()));
  }

  struct Unpacked {
    std::vector<double> w;
    RowMatrix fs;
    std::vector<Vec3> fv;
  };
  auto unpack = [=](std::span<const double> x) {
    box->load(x);
    Unpacked u;
    u.w.assign(x.begin() + static_cast<std::ptrdiff_t>(np), x.begin() + static_cast<std::ptrdiff_t>(np + n_w));
    u.fs = to_matrix(x.subspan(np + n_w), static_cast<Eigen::Index>(ns), 2);
    for (std::size_t i = 0; i < ns * 2; ++i) u.fv.push_back(planar(vec_at(x.subspan(np + n_w + n_fs), i)));
    return u;
  };

  Primitive p;
  p.name = name;
  p.x0 = box->params();
  for (double v : random_vector(rng, n_w)) p.x0.push_back(v);
  for (double v : random_vector(rng, n_fs)) p.x0.push_back(v);
  for (std::size_t i = 0; i < ns * 2; ++i) {
    const Vec3 v = planar(Vec3(rng.normal(), rng.normal(), rng.normal()));
    for (int k = 0; k < 3; ++k) p.x0.push_back(v[k]);
  }
  p.value = [=](std::span<const double> x) {
    const Unpacked u = unpack(x);
    KernelField out(nt, spec.scalar_out, spec.vector_out);
    multiscale_forward(*mk, box->store, *lengths, MultiscaleSources{*faces, &u.fs, u.fv, u.w}, *globals, *targets, {},
                       out);
    double s = 0.0;
    for (std::size_t t = 0; t < nt; ++t) {
      for (int j = 0; j < spec.scalar_out; ++j) {
        s += out.scalars(static_cast<Eigen::Index>(t), j) * g_out->scalars(static_cast<Eigen::Index>(t), j);
      }
      for (int o = 0; o < spec.vector_out; ++o) s += out.vec(t, o).dot(g_out->vec(t, o));
    }
    return s;
  };
  p.gradient = [=](std::span<const double> x, std::span<double> g) {
    const Unpacked u = unpack(x);
    std::fill(g.begin(), g.end(), 0.0);
    SourceGrad sg;
    EvalOptions opts;
    opts.chunk_size = 3;  // also exercises multi-chunk accumulation
    multiscale_backward(*mk, box->store, *lengths, MultiscaleSources{*faces, &u.fs, u.fv, u.w}, *globals, *targets,
                        *g_out, opts, sg, g.subspan(0, np));
    for (std::size_t i = 0; i < n_w; ++i) g[np + i] = sg.strengths[i];
    for (std::size_t i = 0; i < n_fs; ++i) g[np + n_w + i] = sg.face_scalars.data()[i];
    for (std::size_t i = 0; i < ns * 2; ++i) add_vec(g.subspan(np + n_w + n_fs, n_fv), i, sg.face_vectors[i]);
  };
  return p;
}

// Full model loss on a tiny problem; inputs are all parameters.
Primitive model_primitive(const std::string& name, ModelConfig cfg, std::size_t faces, std::size_t queries,
                          std::uint64_t seed) {
  Rng rng = Rng(seed).split(name);
  auto box = std::make_shared<StoreBox>();
  auto model = std::make_shared<Model>(Model::build(cfg, box->store));
  box->store.initialize(rng.next_u64());
  for (auto& v : box->store.values()) v += 0.05 * rng.normal();  // move calibration off identity
  auto sample = std::make_shared<Sample>(random_problem(cfg, faces, queries, rng.next_u64()));
  const FieldSet pred = model_forward(*model, box->store, *sample);
  sample->has_targets = true;
  sample->targets = pred;
  for (std::size_t p = 0; p < pred.size(); ++p) {
    for (int f = 0; f < pred.n_scalars(); ++f) sample->targets.scalars(static_cast<Eigen::Index>(p), f) += 0.3 * rng.normal();
    for (int f = 0; f < pred.n_vectors(); ++f) {
      Vec3 d(rng.normal(), rng.normal(), cfg.dim == 3 ? rng.normal() : 0.0);
      sample->targets.vec(p, f) += 0.3 * d;
    }
  }
  sample->mask = FieldMask(pred.size(), pred.n_fields(), true);
  if (pred.size() > 1) sample->mask.set(1, 0, false);
  auto loss = std::make_shared<LossConfig>();

  Primitive p;
  p.name = name;
  p.x0 = box->params();
  p.value = [=](std::span<const double> x) {
    box->load(x);
    return sample_loss(*model, box->store, *sample, *loss, {}, {}).total;
  };
  p.gradient = [=](std::span<const double> x, std::span<double> g) {
    box->load(x);
    std::fill(g.begin(), g.end(), 0.0);
    sample_loss(*model, box->store, *sample, *loss, {}, g);
  };
  return p;
}

}  // namespace

std::vector<Primitive> primitive_registry(std::uint64_t seed) {
  Rng rng = Rng(seed).split("primitives");
  std::vector<Primitive> out;

  out.push_back(scalar_map("smoothlog", {0.01, 0.3, 1.0, 2.5, 10.0, 300.0}, random_vector(rng, 6), smoothlog,
                           smoothlog_derivative));
  out.push_back(scalar_map("silu", {-4.0, -0.7, 0.0, 0.4, 3.0}, random_vector(rng, 5), silu, silu_derivative));
  {
    auto c = random_vector(rng, 4);
    Primitive p;
    p.name = "huber";
    p.x0 = {-2.3, -0.4, 0.2, 1.7};
    p.value = [c](std::span<const double> x) {
      double s = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) s += c[i] * huber(x[i], 1.0);
      return s;
    };
    p.gradient = [c](std::span<const double> x, std::span<double> g) {
      for (std::size_t i = 0; i < x.size(); ++i) g[i] = c[i] * huber_derivative(x[i], 1.0);
    };
    out.push_back(p);
  }
  {
    const int n = 5;
    auto c = random_vector(rng, 3 * n);
    Primitive p;
    p.name = "legendre";
    p.x0 = {-0.7, 0.1, 0.55};
    p.value = [c, n](std::span<const double> x) {
      double s = 0.0;
      std::vector<double> P(n), dP(n);
      for (std::size_t i = 0; i < x.size(); ++i) {
        legendre(n, x[i], P, dP);
        for (int k = 0; k < n; ++k) s += c[i * n + static_cast<std::size_t>(k)] * P[static_cast<std::size_t>(k)];
      }
      return s;
    };
    p.gradient = [c, n](std::span<const double> x, std::span<double> g) {
      std::vector<double> P(n), dP(n);
      for (std::size_t i = 0; i < x.size(); ++i) {
        legendre(n, x[i], P, dP);
        g[i] = 0.0;
        for (int k = 0; k < n; ++k) g[i] += c[i * n + static_cast<std::size_t>(k)] * dP[static_cast<std::size_t>(k)];
      }
    };
    out.push_back(p);
  }
  {
    const int h = 4;
    auto c = random_vector(rng, h);
    Primitive p;
    p.name = "pair_features";
    p.x0 = random_vector(rng, 6);
    p.value = [c, h](std::span<const double> x) {
      std::vector<double> f(h);
      pair_features(vec_at(x, 0), vec_at(x, 1), h, f);
      return dot(c, f);
    };
    p.gradient = [c, h](std::span<const double> x, std::span<double> g) {
      Vec3 ga = Vec3::Zero(), gb = Vec3::Zero();
      pair_features_vjp(vec_at(x, 0), vec_at(x, 1), h, c, ga, gb);
      std::fill(g.begin(), g.end(), 0.0);
      add_vec(g, 0, ga);
      add_vec(g, 1, gb);
    };
    out.push_back(p);
  }
  {
    const int m = 4, h = 3;
    auto c = random_vector(rng, static_cast<std::size_t>(encoded_size(m, h)));
    Primitive p;
    p.name = "encode_vectors";
    p.x0 = random_vector(rng, 3 * m);
    auto vecs = [m](std::span<const double> x) {
      std::vector<Vec3> v;
      for (int i = 0; i < m; ++i) v.push_back(vec_at(x, static_cast<std::size_t>(i)));
      return v;
    };
    p.value = [=](std::span<const double> x) { return dot(c, encode_vectors(vecs(x), h)); };
    p.gradient = [=](std::span<const double> x, std::span<double> g) {
      const auto gv = encode_vectors_vjp(vecs(x), h, c);
      std::fill(g.begin(), g.end(), 0.0);
      for (int i = 0; i < m; ++i) add_vec(g, static_cast<std::size_t>(i), gv[static_cast<std::size_t>(i)]);
    };
    out.push_back(p);
  }
  {
    auto c = random_vector(rng, 3);
    Primitive p;
    p.name = "relative_position";
    p.x0 = random_vector(rng, 6);
    p.x0.push_back(0.7);
    p.value = [c](std::span<const double> x) {
      const Vec3 r = relative_position(vec_at(x, 0), vec_at(x, 1), x[6]);
      return r.dot(Vec3(c[0], c[1], c[2]));
    };
    p.gradient = [c](std::span<const double> x, std::span<double> g) {
      const Vec3 cv(c[0], c[1], c[2]);
      const Vec3 r = relative_position(vec_at(x, 0), vec_at(x, 1), x[6]);
      std::fill(g.begin(), g.end(), 0.0);
      add_vec(g, 0, cv / x[6]);
      add_vec(g, 1, -cv / x[6]);
      g[6] = -cv.dot(r) / x[6];
    };
    out.push_back(p);
  }
  for (int dim : {2, 3}) {
    Primitive p;
    p.name = "envelope_d" + std::to_string(dim);
    p.x0 = random_vector(rng, 3);
    p.value = [dim](std::span<const double> x) { return envelope(vec_at(x, 0), dim); };
    p.gradient = [dim](std::span<const double> x, std::span<double> g) {
      const Vec3 v = envelope_gradient(vec_at(x, 0), dim);
      for (int k = 0; k < 3; ++k) g[static_cast<std::size_t>(k)] = v[k];
    };
    out.push_back(p);
  }
  {
    const std::size_t m = 4;
    const std::size_t nb = 2 * m - 1;
    auto c = random_vector(rng, 3 * nb);
    Primitive p;
    p.name = "reprojection_basis";
    p.x0 = random_vector(rng, 3 * m);
    auto ctx_of = [m](std::span<const double> x) {
      PairContext ctx;
      ctx.dim = 3;
      for (std::size_t i = 0; i < m; ++i) ctx.vectors.push_back(vec_at(x, i));
      ctx.r = ctx.vectors.back();
      return ctx;
    };
    p.value = [=](std::span<const double> x) {
      const auto b = build_basis(ctx_of(x));
      double s = 0.0;
      for (std::size_t j = 0; j < nb; ++j) s += b.vectors[j].dot(vec_at(c, j));
      return s;
    };
    p.gradient = [=](std::span<const double> x, std::span<double> g) {
      std::vector<Vec3> gb, gv(m, Vec3::Zero());
      for (std::size_t j = 0; j < nb; ++j) gb.push_back(vec_at(c, j));
      build_basis_vjp(ctx_of(x), gb, gv);
      std::fill(g.begin(), g.end(), 0.0);
      for (std::size_t i = 0; i < m; ++i) add_vec(g, i, gv[i]);
    };
    out.push_back(p);
  }
  {
    const std::size_t nb = 5;
    auto gv = random_vector(rng, 3);
    Primitive p;
    p.name = "basis_contraction";
    p.x0 = random_vector(rng, nb + 3 * nb);
    p.value = [=](std::span<const double> x) {
      Vec3 v = Vec3::Zero();
      for (std::size_t j = 0; j < nb; ++j) v += x[j] * vec_at(x.subspan(nb), j);
      return v.dot(vec_at(gv, 0));
    };
    p.gradient = [=](std::span<const double> x, std::span<double> g) {
      const Vec3 u = vec_at(gv, 0);
      for (std::size_t j = 0; j < nb; ++j) {
        g[j] = vec_at(x.subspan(nb), j).dot(u);
        for (int k = 0; k < 3; ++k) g[nb + 3 * j + static_cast<std::size_t>(k)] = x[j] * u[k];
      }
    };
    out.push_back(p);
  }
  for (int which = 0; which < 2; ++which) {
    const std::vector<int> sizes{3, 5, 4, 2};
    auto box = std::make_shared<StoreBox>();
    auto mlp = std::make_shared<MlpLayout>();
    auto pade = std::make_shared<PadeLayout>();
    if (which == 0) {
      *mlp = add_mlp(box->store, "mlp", sizes);
    } else {
      *pade = add_pade(box->store, "pade", sizes, 2, 2);
    }
    box->store.initialize(rng.next_u64());
    const std::size_t np = box->store.size();
    const Eigen::Index rows = 3;
    auto c = random_vector(rng, static_cast<std::size_t>(rows * 2));
    Primitive p;
    p.name = which == 0 ? "mlp" : "pade_mlp";
    p.x0 = box->params();
    for (double v : random_vector(rng, static_cast<std::size_t>(rows * 3))) p.x0.push_back(v);
    auto forward = [=](std::span<const double> x, RowMatrix& y, MlpCache* mc, PadeCache* pc) {
      box->load(x);
      const RowMatrix in = to_matrix(x.subspan(np), rows, 3);
      if (which == 0) {
        mlp_forward(*mlp, box->store, in, y, mc);
      } else {
        pade_forward(*pade, box->store, in, y, pc);
      }
    };
    p.value = [=](std::span<const double> x) {
      RowMatrix y;
      forward(x, y, nullptr, nullptr);
      return dot(c, std::span<const double>(y.data(), static_cast<std::size_t>(y.size())));
    };
    p.gradient = [=](std::span<const double> x, std::span<double> g) {
      RowMatrix y, gx;
      MlpCache mc;
      PadeCache pc;
      forward(x, y, &mc, &pc);
      const RowMatrix gy = to_matrix(c, rows, 2);
      std::fill(g.begin(), g.end(), 0.0);
      if (which == 0) {
        mlp_backward(*mlp, box->store, mc, gy, &gx, g.subspan(0, np));
      } else {
        pade_backward(*pade, box->store, pc, gy, &gx, g.subspan(0, np));
      }
      std::copy(gx.data(), gx.data() + gx.size(), g.begin() + static_cast<std::ptrdiff_t>(np));
    };
    out.push_back(p);
  }
  for (int order : {2, 3}) {
    Primitive p;
    p.name = "pade_combine_n" + std::to_string(order);
    p.x0 = {0.7, -1.3, -0.4, 2.1};
    p.value = [order](std::span<const double> x) {
      return pade_combine(x[0], x[1], order, 2) + pade_combine(x[2], x[3], order, 2);
    };
    p.gradient = [order](std::span<const double> x, std::span<double> g) {
      pade_combine_partials(x[0], x[1], order, 2, g[0], g[1]);
      pade_combine_partials(x[2], x[3], order, 2, g[2], g[3]);
    };
    out.push_back(p);
  }
  {
    const std::size_t ns = 3, nt = 2;
    auto gsc = random_vector(rng, nt);
    auto gve = random_vector(rng, 3 * nt);
    Primitive p;
    p.name = "aggregate";
    // w (ns), a (ns), per-pair scalar (nt*ns), per-pair vector (nt*ns*3)
    p.x0 = random_vector(rng, 2 * ns + nt * ns * 4);
    auto pairs_of = [=](std::span<const double> x) {
      std::vector<PairOutput> pairs(nt * ns);
      for (std::size_t i = 0; i < nt * ns; ++i) {
        pairs[i].scalars = {x[2 * ns + i]};
        pairs[i].vectors = {vec_at(x.subspan(2 * ns + nt * ns), i)};
      }
      return pairs;
    };
    p.value = [=](std::span<const double> x) {
      const auto pairs = pairs_of(x);
      const KernelField k = aggregate(pairs, nt, x.subspan(0, ns), x.subspan(ns, ns), 1, 1);
      double s = 0.0;
      for (std::size_t t = 0; t < nt; ++t) s += gsc[t] * k.scalars(static_cast<Eigen::Index>(t), 0) + k.vec(t, 0).dot(vec_at(gve, t));
      return s;
    };
    p.gradient = [=](std::span<const double> x, std::span<double> g) {
      std::fill(g.begin(), g.end(), 0.0);
      for (std::size_t t = 0; t < nt; ++t) {
        for (std::size_t s = 0; s < ns; ++s) {
          const std::size_t i = t * ns + s;
          const double k = x[2 * ns + i];
          const Vec3 kv = vec_at(x.subspan(2 * ns + nt * ns), i);
          const double inner = gsc[t] * k + kv.dot(vec_at(gve, t));
          g[s] += x[ns + s] * inner;
          g[ns + s] += x[s] * inner;
          g[2 * ns + i] = x[s] * x[ns + s] * gsc[t];
          add_vec(g.subspan(2 * ns + nt * ns), i, x[s] * x[ns + s] * vec_at(gve, t));
        }
      }
    };
    out.push_back(p);
  }
  {
    const std::size_t n = 4;
    auto target = std::make_shared<FieldSet>(std::vector<std::string>{"Cp", "ln_nut"}, std::vector<std::string>{"dU"}, n);
    for (std::size_t i = 0; i < n; ++i) {
      target->scalars(static_cast<Eigen::Index>(i), 0) = rng.normal();
      target->scalars(static_cast<Eigen::Index>(i), 1) = rng.normal();
      target->vec(i, 0) = Vec3(rng.normal(), rng.normal(), rng.normal());
    }
    auto mask = std::make_shared<FieldMask>(n, 3, true);
    mask->set(2, 1, false);
    // Errors of order 0.5 to 3 so both Huber branches are active.
    Primitive p;
    p.name = "field_loss";
    for (std::size_t i = 0; i < n; ++i) {
      p.x0.push_back(target->scalars(static_cast<Eigen::Index>(i), 0) + (i % 2 ? 2.1 : -0.4));
      p.x0.push_back(target->scalars(static_cast<Eigen::Index>(i), 1) + (i % 2 ? -0.3 : 1.8));
    }
    for (std::size_t i = 0; i < n; ++i) {
      const Vec3 v = target->vec(i, 0) + (i % 2 ? 0.4 : 2.5) * Vec3(0.6, -0.48, 0.64);
      for (int k = 0; k < 3; ++k) p.x0.push_back(v[k]);
    }
    auto pred_of = [=](std::span<const double> x) {
      FieldSet f(target->scalar_names, target->vector_names, n);
      for (std::size_t i = 0; i < n; ++i) {
        f.scalars(static_cast<Eigen::Index>(i), 0) = x[2 * i];
        f.scalars(static_cast<Eigen::Index>(i), 1) = x[2 * i + 1];
        f.vec(i, 0) = vec_at(x.subspan(2 * n), i);
      }
      return f;
    };
    p.value = [=](std::span<const double> x) { return field_loss(pred_of(x), *target, *mask, LossConfig{}).total; };
    p.gradient = [=](std::span<const double> x, std::span<double> g) {
      FieldSet gp;
      field_loss(pred_of(x), *target, *mask, LossConfig{}, &gp);
      for (std::size_t i = 0; i < n; ++i) {
        g[2 * i] = gp.scalars(static_cast<Eigen::Index>(i), 0);
        g[2 * i + 1] = gp.scalars(static_cast<Eigen::Index>(i), 1);
        for (int k = 0; k < 3; ++k) g[2 * n + 3 * i + static_cast<std::size_t>(k)] = gp.vec(i, 0)[k];
      }
    };
    out.push_back(p);
  }

  out.push_back(kernel_primitive("kernel_branch_d2", 2, 1, rng.next_u64()));
  out.push_back(kernel_primitive("kernel_branch_d3", 3, 1, rng.next_u64()));
  out.push_back(kernel_primitive("multiscale_kernel", 3, 2, rng.next_u64()));

  {
    ModelConfig cfg;
    cfg.dim = 2;
    cfg.hyperlayers = 1;
    cfg.latent_scalars = 0;
    cfg.latent_vectors = 0;
    cfg.hidden = {4};
    cfg.branches = 1;
    cfg.bc_types = {"wall"};
    cfg.global_vectors = {"g"};
    cfg.scalar_fields = {"p"};
    cfg.vector_fields = {"u"};
    out.push_back(model_primitive("tiny_model_h1", cfg, 2, 3, rng.next_u64()));
    cfg.hyperlayers = 2;
    cfg.latent_scalars = 2;
    cfg.latent_vectors = 1;
    out.push_back(model_primitive("tiny_model_h2", cfg, 2, 3, rng.next_u64()));
    cfg.dim = 3;
    cfg.hyperlayers = 3;
    cfg.branches = 2;
    cfg.bc_types = {"wall", "inlet"};
    cfg.global_scalars = {"s"};
    out.push_back(model_primitive("tiny_model_h3_two_bc_d3", cfg, 2, 3, rng.next_u64()));
  }
  return out;
}

double gradcheck_rel_error(std::span<const double> analytic, std::span<const double> numeric) {
  double fmax = 1.0;
  for (double f : numeric) fmax = std::max(fmax, std::abs(f));
  const double floor = 1e-3 * fmax;
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

GradcheckResult gradcheck(const Primitive& p, double h) {
  std::vector<double> x = p.x0;
  std::vector<double> analytic(x.size(), 0.0), numeric(x.size(), 0.0);
  p.gradient(x, analytic);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    const double step = h * std::max(1.0, std::abs(xi));
    x[i] = xi + step;
    const double up = p.value(x);
    x[i] = xi - step;
    const double down = p.value(x);
    x[i] = xi;
    numeric[i] = (up - down) / (2.0 * step);
  }
  return GradcheckResult{p.name, x.size(), gradcheck_rel_error(analytic, numeric)};
}

}  // namespace globe
