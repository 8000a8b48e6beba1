// Acceptance checks. Each criterion prints exactly one line starting with
// "<id> PASS" or "<id> FAIL"; indented lines after it are diagnostics.

#include <CLI11.hpp>

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numbers>
#include <sstream>

#include "globe/training.hpp"
#include "globe/verify.hpp"

using namespace globe;
namespace fs = std::filesystem;

namespace {

struct Options {
  fs::path work = "acceptance_work";
  std::uint64_t seed = 0;
  int a5_epochs = 400;
  int a6_epochs = 30;
  int threads = 1;
  bool verbose = false;
};

struct Outcome {
  bool pass = false;
  std::string summary;
  std::vector<std::string> details;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string num(double v) {
  std::ostringstream ss;
  ss << std::setprecision(4) << v;
  return ss.str();
}

std::string suite_details(const SuiteReport& r, std::vector<std::string>& out) {
  std::string worst;
  for (const auto& p : r.properties) {
    out.push_back(std::string(p.pass ? "ok   " : "FAIL ") + r.suite + "/" + p.name + " worst=" + num(p.worst) +
                  " tol=" + num(p.tolerance) + (p.detail.empty() ? "" : " " + p.detail));
  }
  return worst;
}

const PropertyResult* find_property(const SuiteReport& r, const std::string& name) {
  for (const auto& p : r.properties) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

Model fresh_model(const ModelConfig& cfg, ParameterStore& store, std::uint64_t seed) {
  Model m = Model::build(cfg, store);
  store.initialize(Rng(seed).split("init").next_u64());
  return m;
}

// ---------------------------------------------------------------------------

Outcome a1(const Options& o) {
  const auto t0 = Clock::now();
  ParameterStore store;
  const Model model = fresh_model(ModelConfig{}, store, o.seed);
  VerifyOptions vo;
  vo.seed = o.seed;
  vo.motions = 50;
  const auto rep = verify_equivariance(model, store, vo);
  const double t = seconds_since(t0);
  Outcome out;
  suite_details(rep, out.details);
  const auto* rot = find_property(rep, "rotation+translation");
  const auto* ref = find_property(rep, "reflection+translation");
  const double worst = std::max(rot->worst, ref->worst);
  out.pass = rot->pass && ref->pass && t < 60.0;
  out.summary = "equivariance H=2 fresh init, 50 rigid motions: max rel error " + num(worst) + " (tol 1e-9), " +
                num(t) + " s (limit 60)";
  return out;
}

Outcome a2(const Options& o) {
  const auto t0 = Clock::now();
  VerifyOptions vo;
  vo.seed = o.seed;
  const auto rep = verify_discretization(vo);
  const double t = seconds_since(t0);
  Outcome out;
  suite_details(rep, out.details);
  out.pass = rep.pass() && t < 10.0;
  out.summary = "discretization 20/40/80 faces: ratios " + num(rep.properties[0].worst) + ", " +
                num(rep.properties[1].worst) + " (limit 0.6), " + rep.properties[0].detail + ", " + num(t) +
                " s (limit 10)";
  return out;
}

Outcome a3(const Options& o) {
  const auto t0 = Clock::now();
  Outcome out;
  out.pass = true;
  std::string summary = "far-field slope over R in [1e2, 1e4]:";
  for (int dim : {2, 3}) {
    ModelConfig cfg;
    cfg.dim = dim;
    ParameterStore store;
    const Model model = fresh_model(cfg, store, o.seed);
    VerifyOptions vo;
    vo.seed = o.seed;
    const auto rep = verify_decay(model, store, vo);
    suite_details(rep, out.details);
    const auto* slope = find_property(rep, "model log-log slope");
    out.pass = out.pass && slope->pass;
    summary += " d=" + std::to_string(dim) + " " + slope->detail + " (|err| " + num(slope->worst) + ", tol 0.05);";
  }
  const double t = seconds_since(t0);
  out.pass = out.pass && t < 10.0;
  out.summary = summary + " " + num(t) + " s (limit 10)";
  return out;
}

Outcome a4(const Options& o) {
  const auto t0 = Clock::now();
  VerifyOptions vo;
  vo.seed = o.seed;
  const auto rep = verify_gradcheck(vo);
  const double t = seconds_since(t0);
  Outcome out;
  suite_details(rep, out.details);
  double worst = 0.0;
  for (const auto& p : rep.properties) worst = std::max(worst, p.worst);
  out.pass = rep.pass() && t < 60.0;
  out.summary = "gradcheck over " + std::to_string(rep.properties.size()) + " primitives incl. tiny models: max rel error " +
                num(worst) + " (tol 1e-5), " + num(t) + " s (limit 60)";
  return out;
}

// ---------------------------------------------------------------------------
// Least-squares helpers for the oracle fits.

struct LeastSquares {
  Eigen::MatrixXd ata;
  Eigen::VectorXd atb;
  explicit LeastSquares(int n) : ata(Eigen::MatrixXd::Zero(n, n)), atb(Eigen::VectorXd::Zero(n)) {}
  void add(const Eigen::VectorXd& row, double y) {
    ata.selfadjointView<Eigen::Lower>().rankUpdate(row);
    atb += y * row;
  }
  Eigen::VectorXd solve() const {
    Eigen::MatrixXd full = ata.selfadjointView<Eigen::Lower>();
    return full.completeOrthogonalDecomposition().solve(atb);
  }
};

// ---------------------------------------------------------------------------
// A5: monopole task.

ModelConfig laplace_model() {
  ModelConfig c;
  c.dim = 2;
  c.hyperlayers = 1;
  c.latent_scalars = 0;
  c.latent_vectors = 0;
  c.hidden = {32, 32};
  c.branches = 1;
  c.use_normal = false;
  c.bc_types = {"source", "sink"};
  c.global_scalars = {};
  c.global_vectors = {};
  c.scalar_fields = {"phi"};
  c.vector_fields = {"grad_phi"};
  return c;
}

std::vector<Sample> laplace_set(const std::string& label, int count, std::uint64_t seed) {
  Rng rng = Rng(seed).split(label);
  std::vector<Sample> out;
  for (int i = 0; i < count; ++i) out.push_back(gen_laplace_source_sample(LaplaceParams{}, rng.next_u64()));
  return out;
}

// Eight radial profiles g_j(r); the fit combines sum_s a_s g_j(|x - x_s|) per
// BC type with shared coefficients.
constexpr int kRadial = 8;
void radial_profiles(double r, double* g) {
  g[0] = std::log(r);
  g[1] = 1.0;
  g[2] = r;
  g[3] = r * r;
  g[4] = 1.0 / r;
  g[5] = 1.0 / (r * r);
  g[6] = std::exp(-r);
  g[7] = std::exp(-r * r);
}

Eigen::VectorXd monopole_features(const Sample& s, const Vec3& x) {
  Eigen::VectorXd row = Eigen::VectorXd::Zero(2 * kRadial);
  int b = 0;
  for (const char* bc : {"source", "sink"}) {
    const auto it = s.boundaries.find(bc);
    if (it != s.boundaries.end()) {
      for (const auto& f : it->second.faces) {
        double g[kRadial];
        radial_profiles((x - f.centroid).norm(), g);
        for (int j = 0; j < kRadial; ++j) row[b * kRadial + j] += f.area * g[j];
      }
    }
    ++b;
  }
  return row;
}

double phi_mae(const Model& model, const ParameterStore& store, const std::vector<Sample>& set, const EvalOptions& eo) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& s : set) {
    const auto pred = model_forward(model, store, s, eo);
    for (std::size_t p = 0; p < s.targets.size(); ++p) {
      sum += std::abs(pred.scalars(static_cast<Eigen::Index>(p), 0) - s.targets.scalars(static_cast<Eigen::Index>(p), 0));
      ++n;
    }
  }
  return sum / static_cast<double>(n);
}

Outcome a5(const Options& o) {
  Outcome out;
  const auto train_set = laplace_set("laplace-train", 64, o.seed);
  const auto test_set = laplace_set("laplace-test", 16, o.seed);

  LeastSquares ls(2 * kRadial);
  for (const auto& s : train_set) {
    for (std::size_t p = 0; p < s.queries.size(); ++p) {
      ls.add(monopole_features(s, s.queries[p]), s.targets.scalars(static_cast<Eigen::Index>(p), 0));
    }
  }
  const Eigen::VectorXd coef = ls.solve();
  double oracle = 0.0;
  std::size_t n = 0;
  for (const auto& s : train_set) {
    for (std::size_t p = 0; p < s.queries.size(); ++p) {
      oracle += std::abs(monopole_features(s, s.queries[p]).dot(coef) - s.targets.scalars(static_cast<Eigen::Index>(p), 0));
      ++n;
    }
  }
  oracle /= static_cast<double>(n);
  const double oracle_limit = 0.005;
  const double threshold = 4.0 * oracle_limit;
  out.details.push_back("oracle: 8 radial monopole profiles per BC type, least squares on the training set, phi MAE " +
                        num(oracle) + " (must be < " + num(oracle_limit) + ")");

  const auto t0 = Clock::now();
  ParameterStore store;
  const Model model = fresh_model(laplace_model(), store, o.seed);
  TrainConfig tc;
  tc.epochs = o.a5_epochs;
  tc.lr = 3e-3;
  tc.min_lr = 1e-5;
  tc.patience = 10;
  tc.seed = o.seed;
  tc.eval.threads = o.threads;
  fs::create_directories(o.work);
  const auto res = train(model, store, train_set, tc, [&](const EpochRecord& r) {
    if (o.verbose && r.epoch % 20 == 0) {
      std::cerr << "A5 epoch " << r.epoch << " loss " << r.loss << " lr " << r.lr << " " << seconds_since(t0) << "s\n";
    }
  });
  const double t = seconds_since(t0);
  {
    std::ofstream csv(o.work / "a5_loss.csv");
    write_history_csv(csv, res);
    std::ofstream ck(o.work / "a5_model.ckpt", std::ios::binary);
    write_checkpoint(ck, store, model.config.to_text());
  }
  const double train_mae = phi_mae(model, store, train_set, tc.eval);
  const double test_mae = phi_mae(model, store, test_set, tc.eval);
  const double reduction = res.history.front().loss / res.history.back().best_loss;
  out.details.push_back("training: " + std::to_string(tc.epochs) + " epochs, loss " + num(res.history.front().loss) +
                        " -> " + num(res.history.back().loss) + " (x" + num(reduction) + " reduction), train phi MAE " +
                        num(train_mae));
  out.pass = oracle < oracle_limit && test_mae < threshold && t < 1800.0;
  out.summary = "Laplace monopoles: held-out phi MAE " + num(test_mae) + " (limit " + num(threshold) + " = 4 x oracle bound " +
                num(oracle_limit) + "; oracle MAE " + num(oracle) + "), train " + num(t) + " s (limit 1800)";
  return out;
}

// ---------------------------------------------------------------------------
// A6 / A7: cylinder task.

std::vector<Sample> cylinder_set(const std::string& label, int count, bool held_out, double decimate,
                                 std::uint64_t seed) {
  Rng rng = Rng(seed).split(label);
  std::vector<Sample> out;
  for (int i = 0; i < count; ++i) {
    CylinderParams p;
    p.angle = held_out ? 2.0 * std::numbers::pi * (i + 0.5) / count - std::numbers::pi
                       : rng.uniform(-std::numbers::pi, std::numbers::pi);
    const std::uint64_t s = rng.next_u64();
    Sample sample = gen_cylinder_sample(p, s);
    if (decimate > 0.0) {
      for (auto& [bc, mesh] : sample.boundaries) mesh = decimate_expand(mesh, decimate, s);
    }
    out.push_back(std::move(sample));
  }
  return out;
}

// 2D doublet and source velocity fields of unit strength.
Vec3 doublet(const Vec3& r, const Vec3& m) {
  const double r2 = r.squaredNorm();
  return (2.0 * m.dot(r) * r / r2 - m) / (2.0 * std::numbers::pi * r2);
}

constexpr int kDoubletTerms = 2;

// Vector features: a doublet along the freestream and a point source, both at
// the area-weighted boundary centroid and scaled by total area.
std::array<Vec3, kDoubletTerms> doublet_features(const Sample& s, const Vec3& x) {
  const Vec3 u = s.global_vectors.front().second;
  double area = 0.0;
  Vec3 centre = Vec3::Zero();
  for (const auto& [bc, mesh] : s.boundaries) {
    for (const auto& face : mesh.faces) {
      area += face.area;
      centre += face.area * face.centroid;
    }
  }
  const Vec3 r = x - centre / area;
  return {area * doublet(r, u), area * r / (2.0 * std::numbers::pi * r.squaredNorm())};
}

struct CylinderScore {
  double dU = 0.0;
  double Cp = 0.0;
};

CylinderScore score_oracle(const std::vector<Sample>& fit, const std::vector<Sample>& test) {
  LeastSquares ls(kDoubletTerms);
  const int idU = fit.front().targets.vector_index("dU");
  for (const auto& s : fit) {
    for (std::size_t p = 0; p < s.queries.size(); ++p) {
      if (!s.mask.at(p, s.targets.n_scalars() + idU)) continue;
      const auto f = doublet_features(s, s.queries[p]);
      for (int c = 0; c < 2; ++c) {
        Eigen::VectorXd row(kDoubletTerms);
        for (int j = 0; j < kDoubletTerms; ++j) row[j] = f[static_cast<std::size_t>(j)][c];
        ls.add(row, s.targets.vec(p, idU)[c]);
      }
    }
  }
  const Eigen::VectorXd coef = ls.solve();
  CylinderScore sc;
  std::size_t nu = 0, np = 0;
  for (const auto& s : test) {
    const int icp = s.targets.scalar_index("Cp");
    const Vec3 dir = s.global_vectors.front().second;
    for (std::size_t p = 0; p < s.queries.size(); ++p) {
      const auto f = doublet_features(s, s.queries[p]);
      Vec3 du = Vec3::Zero();
      for (int j = 0; j < kDoubletTerms; ++j) du += coef[j] * f[static_cast<std::size_t>(j)];
      if (s.mask.at(p, s.targets.n_scalars() + idU)) {
        sc.dU += (du - s.targets.vec(p, idU)).norm();
        ++nu;
      }
      if (s.mask.at(p, icp)) {
        const double cp = 1.0 - (dir + du).squaredNorm();
        sc.Cp += std::abs(cp - s.targets.scalars(static_cast<Eigen::Index>(p), icp));
        ++np;
      }
    }
  }
  sc.dU /= static_cast<double>(nu);
  sc.Cp /= static_cast<double>(np);
  return sc;
}

CylinderScore score_model(const Model& model, const ParameterStore& store, const std::vector<Sample>& test,
                          const EvalOptions& eo) {
  std::vector<const FieldSet*> targets;
  std::vector<const FieldMask*> masks;
  for (const auto& s : test) {
    targets.push_back(&s.targets);
    masks.push_back(&s.mask);
  }
  const auto sigma = pooled_sigma(targets, masks, 2);
  std::vector<MetricReport> reps;
  for (const auto& s : test) {
    reps.push_back(metrics(model_forward(model, store, s, eo), s.targets, s.mask, s.surface, sigma, 2));
  }
  const auto mean = average_reports(reps);
  return CylinderScore{mean.find("dU")->mae, mean.find("Cp")->mae};
}

struct CylinderRun {
  CylinderScore model;
  CylinderScore oracle;
  double seconds = 0.0;
  double loss0 = 0.0, loss_end = 0.0;
};

void save_run(const fs::path& path, const CylinderRun& r) {
  std::ofstream out(path);
  out << std::setprecision(17) << "dU = " << r.model.dU << "\nCp = " << r.model.Cp << "\noracle_dU = " << r.oracle.dU
      << "\noracle_Cp = " << r.oracle.Cp << "\nseconds = " << r.seconds << '\n';
}

bool load_run(const fs::path& path, CylinderRun& r) {
  std::ifstream in(path);
  if (!in) return false;
  std::ostringstream ss;
  ss << in.rdbuf();
  std::map<std::string, double> kv;
  for (const auto& [k, v] : parse_key_values(ss.str())) kv[k] = std::stod(v);
  r.model = {kv.at("dU"), kv.at("Cp")};
  r.oracle = {kv.at("oracle_dU"), kv.at("oracle_Cp")};
  r.seconds = kv.at("seconds");
  return true;
}

CylinderRun cylinder_run(const Options& o, const std::string& tag, double decimate) {
  const auto train_set = cylinder_set("cylinder-train", 50, false, decimate, o.seed);
  const auto test_set = cylinder_set("cylinder-test", 10, true, decimate, o.seed);
  CylinderRun run;
  run.oracle = score_oracle(train_set, test_set);

  const auto t0 = Clock::now();
  ParameterStore store;
  const Model model = fresh_model(ModelConfig{}, store, o.seed);
  TrainConfig tc;
  tc.epochs = o.a6_epochs;
  tc.lr = 1e-3;
  tc.patience = 5;
  tc.seed = o.seed;
  tc.eval.threads = o.threads;
  fs::create_directories(o.work);
  const auto res = train(model, store, train_set, tc, [&](const EpochRecord& r) {
    if (o.verbose) {
      std::cerr << tag << " epoch " << r.epoch << " loss " << r.loss << " lr " << r.lr << " " << seconds_since(t0) << "s";
      if (r.epoch % 10 == 0) {
        const auto sc = score_model(model, store, test_set, tc.eval);
        std::cerr << " held-out dU " << sc.dU << " Cp " << sc.Cp;
      }
      std::cerr << '\n';
    }
  });
  run.seconds = seconds_since(t0);
  run.loss0 = res.history.front().loss;
  run.loss_end = res.history.back().loss;
  {
    std::ofstream csv(o.work / (tag + "_loss.csv"));
    write_history_csv(csv, res);
    std::ofstream ck(o.work / (tag + "_model.ckpt"), std::ios::binary);
    write_checkpoint(ck, store, model.config.to_text());
  }
  run.model = score_model(model, store, test_set, tc.eval);
  save_run(o.work / (tag + "_result.txt"), run);
  return run;
}

Outcome a6(const Options& o) {
  const auto r = cylinder_run(o, "a6", 0.0);
  Outcome out;
  const double lim_dU = 0.05, lim_Cp = 0.08;
  const bool oracle_ok = r.oracle.dU < lim_dU / 4 && r.oracle.Cp < lim_Cp / 4;
  out.details.push_back("oracle: doublet/source least squares, held-out dU MAE " + num(r.oracle.dU) + " Cp MAE " +
                        num(r.oracle.Cp) + " (must be < " + num(lim_dU / 4) + ", " + num(lim_Cp / 4) + ")");
  out.details.push_back("training: " + std::to_string(o.a6_epochs) + " epochs, loss " + num(r.loss0) + " -> " +
                        num(r.loss_end));
  out.pass = oracle_ok && r.model.dU < lim_dU && r.model.Cp < lim_Cp && r.seconds < 7200.0;
  out.summary = "cylinder, 50 train / 10 held-out angles: dU MAE " + num(r.model.dU) + " (limit 0.05), Cp MAE " +
                num(r.model.Cp) + " (limit 0.08), train " + num(r.seconds) + " s (limit 7200)";
  return out;
}

Outcome a7(const Options& o) {
  Outcome out;
  CylinderRun base;
  if (!load_run(o.work / "a6_result.txt", base)) {
    out.details.push_back("no stored A6 result, training the undecimated baseline first");
    base = cylinder_run(o, "a6", 0.0);
  }
  CylinderRun dec;
  try {
    dec = cylinder_run(o, "a7", 0.5);
  } catch (const std::exception& e) {
    out.pass = false;
    out.summary = std::string("decimated meshes raised an error: ") + e.what();
    return out;
  }
  const double r_dU = dec.model.dU / base.model.dU;
  const double r_Cp = dec.model.Cp / base.model.Cp;
  out.details.push_back("baseline dU " + num(base.model.dU) + " Cp " + num(base.model.Cp) + "; decimated dU " +
                        num(dec.model.dU) + " Cp " + num(dec.model.Cp) + "; decimated train " + num(dec.seconds) + " s");
  out.pass = r_dU < 15.0 && r_Cp < 15.0;
  out.summary = "decimate_expand(0.5): held-out MAE degradation dU x" + num(r_dU) + ", Cp x" + num(r_Cp) +
                " (limit x15), ran without error";
  return out;
}

Outcome a8(const Options& o) {
  const auto t0 = Clock::now();
  ParameterStore store;
  const Model model = fresh_model(ModelConfig{}, store, o.seed);
  VerifyOptions vo;
  vo.seed = o.seed;
  const auto rep = verify_units(model, store, vo);
  const double t = seconds_since(t0);
  Outcome out;
  suite_details(rep, out.details);
  double worst = 0.0;
  for (const auto& p : rep.properties) worst = std::max(worst, p.worst);
  out.pass = rep.pass() && t < 1.0;
  out.summary = "SI vs ft/slug inputs: max rel difference " + num(worst) + " (tol 1e-12), " + num(t) + " s (limit 1)";
  return out;
}

Outcome a9(const Options& o) {
  const auto t0 = Clock::now();
  ParameterStore store;
  const Model model = fresh_model(ModelConfig{}, store, o.seed);
  VerifyOptions vo;
  vo.seed = o.seed;
  const auto rep = verify_chunking(model, store, vo);
  const double t = seconds_since(t0);
  Outcome out;
  suite_details(rep, out.details);
  double worst = 0.0;
  for (const auto& p : rep.properties) worst = std::max(worst, p.worst);
  out.pass = rep.pass() && t < 10.0;
  out.summary = "chunk sizes 1, 7, 4096 vs unchunked: max rel difference " + num(worst) + " (tol 1e-12), " + num(t) +
                " s (limit 10)";
  return out;
}

Outcome a10(const Options&) {
  const ModelConfig cfg;
  const auto count = count_parameters(cfg);
  ParameterStore store;
  Model::build(cfg, store);
  Outcome out;
  for (const auto& [name, n] : count.items) out.details.push_back(name + ": " + std::to_string(n));
  const long diff = static_cast<long>(count.total) - 117282L;
  out.pass = count.total == store.size();
  out.summary = "parameter count (2 branches, H=2, 6+3 latents, hidden 64x3, aero fields): " +
                std::to_string(count.total) + " vs reference 117282 (difference " + std::to_string(diff) +
                "; exact match not required), breakdown sums to built store: " + (out.pass ? "yes" : "no");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  Options o;
  std::vector<std::string> ids;
  std::string work = o.work.string();
  app.add_option("ids", ids, "criteria to run (default: all)");
  app.add_option("--work", work, "directory for checkpoints and loss curves");
  app.add_option("--seed", o.seed, "seed for every criterion");
  app.add_option("--a5-epochs", o.a5_epochs, "Laplace training epochs");
  app.add_option("--a6-epochs", o.a6_epochs, "cylinder training epochs (A6 and A7)");
  app.add_option("--threads", o.threads, "worker threads for kernel evaluation");
  app.add_flag("--verbose", o.verbose, "progress on stderr");
  CLI11_PARSE(app, argc, argv);
  o.work = work;

  const std::vector<std::pair<std::string, std::function<Outcome(const Options&)>>> all{
      {"A1", a1}, {"A2", a2}, {"A3", a3}, {"A4", a4}, {"A5", a5},
      {"A6", a6}, {"A7", a7}, {"A8", a8}, {"A9", a9}, {"A10", a10}};
  if (ids.empty()) {
    for (const auto& [id, fn] : all) ids.push_back(id);
  }
  bool ok = true;
  for (const auto& id : ids) {
    const auto it = std::find_if(all.begin(), all.end(), [&](const auto& p) { return p.first == id; });
    if (it == all.end()) {
      std::cerr << "unknown criterion " << id << '\n';
      return 2;
    }
    Outcome r;
    try {
      r = it->second(o);
    } catch (const std::exception& e) {
      r.pass = false;
      r.summary = std::string("error: ") + e.what();
    }
    std::cout << id << (r.pass ? " PASS " : " FAIL ") << r.summary << '\n';
    for (const auto& d : r.details) std::cout << "    " << d << '\n';
    std::cout.flush();
    ok = ok && r.pass;
  }
  return ok ? 0 : 1;
}
