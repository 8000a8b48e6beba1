// globe: data generation, training, inference, evaluation and property
// verification for boundary-kernel surrogates.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "globe/geometry.hpp"
#include "globe/hyperstack.hpp"
#include "globe/pipeline.hpp"
#include "globe/rng.hpp"
#include "globe/training.hpp"
#include "globe/verify.hpp"

namespace fs = std::filesystem;
using namespace globe;

namespace {

struct RunConfig {
  ModelConfig model;
  std::uint64_t seed = 0;
  std::size_t chunk_size = 0;
  int threads = 1;
  bool deterministic = false;
  std::string out;

  // gen
  std::string kind = "cylinder";
  int count = 1;
  int faces = 48;
  int queries = 512;
  double angle_min = -15.0;
  double angle_max = 15.0;
  double decimate = 0.0;
  // train
  std::string data;
  int epochs = 10;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  double min_lr = 6.25e-5;
  double lr_factor = 0.5;
  int patience = 5;
  std::size_t subsample = 4096;
  // infer / eval / verify
  std::string ckpt;
  std::string sample;
  std::string suite = "all";
  bool negative_control = false;

  EvalOptions eval() const { return EvalOptions{chunk_size, deterministic ? 1 : std::max(1, threads)}; }
};

/// A run key: how to print it, how to set it from text, and the CLI option
/// that overrides it.
struct RunKey {
  std::string name;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
  CLI::Option* flag = nullptr;
};

template <class T>
T parse_value(const std::string& key, const std::string& text) {
  T v{};
  std::istringstream ss(text);
  ss >> std::boolalpha >> v;
  if (ss.fail() || !(ss >> std::ws).eof()) throw std::invalid_argument("config key '" + key + "' has invalid value '" + text + "'");
  return v;
}

template <class T>
RunKey bind(const std::string& name, T& ref) {
  RunKey k;
  k.name = name;
  k.get = [&ref] {
    std::ostringstream ss;
    ss << std::boolalpha << ref;
    return ss.str();
  };
  k.set = [&ref, name](const std::string& v) {
    if constexpr (std::is_same_v<T, std::string>) {
      ref = v;
    } else {
      ref = parse_value<T>(name, v);
    }
  };
  return k;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> sample_files(const std::string& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir);
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".sample") files.push_back(e.path().string());
  }
  std::sort(files.begin(), files.end());
  return files;
}

std::vector<Sample> load_dataset(const std::string& dir) {
  std::vector<Sample> out;
  for (const auto& f : sample_files(dir)) out.push_back(read_sample_file(f));
  return out;
}

struct LoadedModel {
  ParameterStore store;
  Model model;
};

LoadedModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  Checkpoint ck = read_checkpoint(in);
  LoadedModel lm;
  lm.model = Model::build(ModelConfig::from_text(ck.config_text), lm.store);
  load_parameters(lm.store, ck.store);
  return lm;
}

void save_model(const std::string& path, const Model& model, const ParameterStore& store) {
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  write_checkpoint(out, store, model.config.to_text());
  if (!out) throw std::runtime_error("write failed for checkpoint " + path);
}

std::ofstream open_out(const std::string& path) {
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  return out;
}

// ---------------------------------------------------------------------------

int cmd_gen(const RunConfig& rc) {
  if (rc.out.empty()) throw std::invalid_argument("gen needs --out <dir>");
  if (rc.count < 0) throw std::invalid_argument("--count must be >= 0");
  fs::create_directories(rc.out);
  const Rng data = Rng(rc.seed).split("data");
  std::ofstream manifest = open_out((fs::path(rc.out) / "manifest.txt").string());
  manifest << "kind = " << rc.kind << "\ncount = " << rc.count << "\nseed = " << rc.seed << '\n';
  if (rc.kind == "cylinder") {
    manifest << "faces = " << rc.faces << "\nqueries = " << rc.queries << "\nangle_min = " << rc.angle_min
             << "\nangle_max = " << rc.angle_max << "\ndecimate = " << rc.decimate << '\n';
  } else if (rc.kind == "laplace") {
    manifest << "queries = " << rc.queries << '\n';
  } else {
    throw std::invalid_argument("unknown --kind '" + rc.kind + "' (cylinder or laplace)");
  }
  manifest << "# file, sample seed, parameters\n";
  for (int i = 0; i < rc.count; ++i) {
    Rng r = data.split(static_cast<std::uint64_t>(i));
    const std::uint64_t s = r.next_u64();
    std::ostringstream name;
    name << rc.kind << '_' << std::setw(4) << std::setfill('0') << i << ".sample";
    Sample sample;
    std::string extra;
    if (rc.kind == "cylinder") {
      CylinderParams p;
      p.faces = rc.faces;
      p.queries = rc.queries;
      const double deg = rc.count == 1 ? rc.angle_min : rc.angle_min + (rc.angle_max - rc.angle_min) * r.uniform();
      p.angle = deg * std::numbers::pi / 180.0;
      sample = gen_cylinder_sample(p, s);
      if (rc.decimate > 0.0) {
        for (auto& [bc, mesh] : sample.boundaries) mesh = decimate_expand(mesh, rc.decimate, s);
      }
      extra = "angle_deg=" + format_double(deg);
    } else {
      LaplaceParams p;
      p.queries = rc.queries;
      sample = gen_laplace_source_sample(p, s);
    }
    write_sample_file((fs::path(rc.out) / name.str()).string(), sample);
    manifest << name.str() << ", " << s << (extra.empty() ? "" : ", " + extra) << '\n';
  }
  std::cout << "wrote " << rc.count << " samples to " << rc.out << '\n';
  return 0;
}

int cmd_train(const RunConfig& rc) {
  if (rc.data.empty() || rc.out.empty()) throw std::invalid_argument("train needs --data <dir> and --out <checkpoint>");
  const auto dataset = load_dataset(rc.data);
  if (dataset.empty()) throw std::runtime_error("no .sample files in " + rc.data);
  ParameterStore store;
  const Model model = Model::build(rc.model, store);
  store.initialize(Rng(rc.seed).split("init").next_u64());
  for (const auto& s : dataset) check_schema(model.config, s);

  TrainConfig tc;
  tc.epochs = rc.epochs;
  tc.lr = rc.lr;
  tc.weight_decay = rc.weight_decay;
  tc.min_lr = rc.min_lr;
  tc.lr_factor = rc.lr_factor;
  tc.patience = rc.patience;
  tc.subsample = rc.subsample;
  tc.seed = rc.seed;
  tc.eval = rc.eval();
  std::cout << "parameters = " << store.size() << '\n';
  TrainResult result;
  try {
    result = train(model, store, dataset, tc, [](const EpochRecord& r) {
      std::cout << "epoch " << r.epoch << " loss " << r.loss << " lr " << r.lr << " best " << r.best_loss << std::endl;
    });
  } catch (const std::runtime_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  save_model(rc.out, model, store);
  std::ofstream csv = open_out(rc.out + ".loss.csv");
  write_history_csv(csv, result);
  std::cout << "checkpoint " << rc.out << "\nloss csv " << rc.out << ".loss.csv\n";
  return 0;
}

int cmd_infer(const RunConfig& rc) {
  if (rc.ckpt.empty() || rc.sample.empty() || rc.out.empty()) {
    throw std::invalid_argument("infer needs --ckpt, --sample and --out");
  }
  const LoadedModel lm = load_model(rc.ckpt);
  const Sample s = read_sample_file(rc.sample);
  const FieldSet f = model_forward(lm.model, lm.store, s, rc.eval());
  std::ofstream out = open_out(rc.out);
  const char* axes[3] = {"x", "y", "z"};
  for (int i = 0; i < s.dim; ++i) out << (i ? "," : "") << axes[i];
  for (const auto& n : f.scalar_names) out << ',' << n;
  for (const auto& n : f.vector_names) {
    for (int i = 0; i < s.dim; ++i) out << ',' << n << '.' << axes[i];
  }
  out << '\n';
  for (std::size_t p = 0; p < f.size(); ++p) {
    for (int i = 0; i < s.dim; ++i) out << (i ? "," : "") << format_double(s.queries[p][i]);
    for (int k = 0; k < f.n_scalars(); ++k) out << ',' << format_double(f.scalars(static_cast<Eigen::Index>(p), k));
    for (int k = 0; k < f.n_vectors(); ++k) {
      for (int i = 0; i < s.dim; ++i) out << ',' << format_double(f.vec(p, k)[i]);
    }
    out << '\n';
  }
  std::cout << "wrote " << f.size() << " rows to " << rc.out << '\n';
  return 0;
}

int cmd_eval(const RunConfig& rc) {
  if (rc.ckpt.empty() || rc.data.empty() || rc.out.empty()) throw std::invalid_argument("eval needs --ckpt, --data and --out");
  const LoadedModel lm = load_model(rc.ckpt);
  const auto files = sample_files(rc.data);
  if (files.empty()) throw std::runtime_error("no .sample files in " + rc.data);
  std::vector<Sample> samples;
  for (const auto& f : files) {
    samples.push_back(read_sample_file(f));
    if (!samples.back().has_targets) throw std::runtime_error(f + ": sample has no targets");
  }
  std::vector<const FieldSet*> targets;
  std::vector<const FieldMask*> masks;
  for (const auto& s : samples) {
    targets.push_back(&s.targets);
    masks.push_back(&s.mask);
  }
  const auto sigma = pooled_sigma(targets, masks, lm.model.config.dim);
  std::vector<MetricReport> reports;
  std::ofstream per = open_out(rc.out + "_per_sample.csv");
  write_metric_csv_header(per);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const FieldSet pred = model_forward(lm.model, lm.store, samples[i], rc.eval());
    reports.push_back(metrics(pred, samples[i].targets, samples[i].mask, samples[i].surface, sigma, samples[i].dim));
    write_metric_csv_rows(per, fs::path(files[i]).filename().string(), reports.back());
  }
  std::ofstream agg = open_out(rc.out + "_aggregate.csv");
  write_metric_csv_header(agg);
  const MetricReport mean = average_reports(reports);
  write_metric_csv_rows(agg, "mean", mean);
  write_metric_csv_header(std::cout);
  write_metric_csv_rows(std::cout, "mean", mean);
  return 0;
}

int cmd_verify(const RunConfig& rc) {
  LoadedModel lm;
  if (rc.ckpt.empty()) {
    lm.model = Model::build(rc.model, lm.store);
    lm.store.initialize(Rng(rc.seed).split("init").next_u64());
  } else {
    lm = load_model(rc.ckpt);
  }
  VerifyOptions vo;
  vo.seed = rc.seed;
  vo.negative_control = rc.negative_control;
  vo.eval = rc.eval();
  const std::vector<std::string> all{"equivariance", "decay", "discretization", "gradcheck", "units", "chunking"};
  std::vector<std::string> suites;
  if (rc.suite == "all") {
    suites = all;
  } else if (std::find(all.begin(), all.end(), rc.suite) != all.end()) {
    suites = {rc.suite};
  } else {
    throw std::invalid_argument("unknown suite '" + rc.suite + "'");
  }
  bool ok = true;
  for (const auto& name : suites) {
    SuiteReport r;
    if (name == "equivariance") r = verify_equivariance(lm.model, lm.store, vo);
    if (name == "decay") r = verify_decay(lm.model, lm.store, vo);
    if (name == "discretization") r = verify_discretization(vo);
    if (name == "gradcheck") r = verify_gradcheck(vo);
    if (name == "units") r = verify_units(lm.model, lm.store, vo);
    if (name == "chunking") r = verify_chunking(lm.model, lm.store, vo);
    r.print(std::cout);
    ok = ok && r.pass();
  }
  std::cout << (ok ? "all properties hold" : "some properties failed") << '\n';
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  RunConfig rc;
  CLI::App app{"Boundary-kernel surrogate: generate, train, infer, evaluate, verify"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path;
  app.add_option("--config", config_path, "key = value file with model and run keys");

  std::vector<RunKey> keys;
  auto global = [&](const std::string& name, auto& ref, const std::string& help) {
    RunKey k = bind(name, ref);
    k.flag = app.add_option("--" + std::string(name == "chunk_size" ? "chunk-size" : name), ref, help);
    keys.push_back(k);
  };
  global("seed", rc.seed, "root seed for data, init and subsampling streams");
  global("out", rc.out, "output path");
  global("chunk_size", rc.chunk_size, "query points per evaluation chunk (0 = automatic)");
  global("threads", rc.threads, "worker threads for evaluation");
  {
    RunKey k = bind("deterministic", rc.deterministic);
    k.flag = app.add_flag("--deterministic", rc.deterministic, "single-threaded ordered reductions");
    keys.push_back(k);
  }

  auto* gen = app.add_subcommand("gen", "write synthetic samples and a manifest");
  auto* trn = app.add_subcommand("train", "train a model and write a checkpoint");
  auto* inf = app.add_subcommand("infer", "evaluate a checkpoint at a sample's query points");
  auto* evl = app.add_subcommand("eval", "metrics of a checkpoint over a sample directory");
  auto* ver = app.add_subcommand("verify", "run property suites");
  auto sub = [&](CLI::App* cmd, const std::string& name, auto& ref, const std::string& help) {
    RunKey k = bind(name, ref);
    std::string flag = name;
    std::replace(flag.begin(), flag.end(), '_', '-');
    k.flag = cmd->add_option("--" + flag, ref, help);
    keys.push_back(k);
  };
  sub(gen, "kind", rc.kind, "cylinder or laplace");
  sub(gen, "count", rc.count, "number of samples");
  sub(gen, "faces", rc.faces, "boundary faces (cylinder)");
  sub(gen, "queries", rc.queries, "query points per sample");
  sub(gen, "angle_min", rc.angle_min, "smallest freestream angle in degrees (cylinder)");
  sub(gen, "angle_max", rc.angle_max, "largest freestream angle in degrees (cylinder)");
  sub(gen, "decimate", rc.decimate, "fraction of faces dropped with area expansion (cylinder)");
  sub(trn, "data", rc.data, "directory of .sample files");
  sub(trn, "epochs", rc.epochs, "training epochs");
  sub(trn, "lr", rc.lr, "initial learning rate");
  sub(trn, "weight_decay", rc.weight_decay, "decoupled weight decay");
  sub(trn, "min_lr", rc.min_lr, "learning-rate floor");
  sub(trn, "lr_factor", rc.lr_factor, "plateau decay factor");
  sub(trn, "patience", rc.patience, "epochs without improvement before decay");
  sub(trn, "subsample", rc.subsample, "query points drawn per sample and step");
  sub(inf, "ckpt", rc.ckpt, "checkpoint");
  sub(inf, "sample", rc.sample, "sample file");
  sub(evl, "ckpt", rc.ckpt, "checkpoint");
  sub(evl, "data", rc.data, "directory of .sample files");
  sub(ver, "ckpt", rc.ckpt, "checkpoint (fresh initialization when omitted)");
  sub(ver, "suite", rc.suite, "equivariance, decay, discretization, gradcheck, units, chunking or all");
  {
    RunKey k = bind("negative_control", rc.negative_control);
    k.flag = ver->add_flag("--negative-control", rc.negative_control, "freeze global vectors under motions");
    keys.push_back(k);
  }

  CLI11_PARSE(app, argc, argv);

  try {
    if (!config_path.empty()) {
      for (const auto& [key, value] : parse_key_values(read_text(config_path))) {
        if (rc.model.apply(key, value)) continue;
        bool known = false;
        for (auto& k : keys) {
          if (k.name != key) continue;
          known = true;
          if (k.flag->count() == 0) k.set(value);
        }
        if (!known) throw std::invalid_argument("unknown config key '" + key + "' in " + config_path);
      }
    }
    rc.model.validate();

    std::cout << "# effective configuration\n" << rc.model.to_text();
    std::set<std::string> printed;
    for (const auto& k : keys) {
      if (printed.insert(k.name).second) std::cout << k.name << " = " << k.get() << '\n';
    }
    std::cout << "# end configuration" << std::endl;

    if (*gen) return cmd_gen(rc);
    if (*trn) return cmd_train(rc);
    if (*inf) return cmd_infer(rc);
    if (*evl) return cmd_eval(rc);
    if (*ver) return cmd_verify(rc);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
