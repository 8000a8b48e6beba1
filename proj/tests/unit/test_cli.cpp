#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "globe/hyperstack.hpp"
#include "globe/rng.hpp"

using namespace globe;
namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::path(GLOBE_TEST_TMP) / "cli";

int run(const std::string& args, const std::string& log = "last.log") {
  fs::create_directories(kWork);
  const std::string cmd = std::string(GLOBE_CLI) + " " + args + " > " + (kWork / log).string() + " 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string dir(const std::string& name) {
  const auto p = kWork / name;
  fs::remove_all(p);
  return p.string();
}

const std::string kTinyModel = "--config " GLOBE_TEST_SOURCE "/tiny_aero.cfg";

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("gen with zero count writes an empty manifest") {
  const auto out = dir("gen0");
  CHECK(run("--out " + out + " gen --kind laplace --count 0") == 0);
  const auto manifest = slurp(fs::path(out) / "manifest.txt");
  CHECK(manifest.find("count = 0") != std::string::npos);
  CHECK(manifest.find(".sample") == std::string::npos);
}

TEST_CASE("gen is deterministic and cylinder samples have unit total pressure") {
  const auto a = dir("gen_a"), b = dir("gen_b");
  CHECK(run("--seed 4 --out " + a + " gen --kind cylinder --count 3 --queries 32 --faces 16") == 0);
  CHECK(run("--seed 4 --out " + b + " gen --kind cylinder --count 3 --queries 32 --faces 16") == 0);
  for (const auto& e : fs::directory_iterator(a)) {
    CHECK(slurp(e.path()) == slurp(fs::path(b) / e.path().filename()));
  }
  for (int i = 0; i < 3; ++i) {
    const auto s = read_sample_file((fs::path(a) / ("cylinder_000" + std::to_string(i) + ".sample")).string());
    for (std::size_t p = 0; p < s.targets.size(); ++p) {
      CHECK(s.targets.scalars(static_cast<Eigen::Index>(p), 1) == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
  CHECK(run("--out " + dir("gen_bad") + " gen --kind plasma --count 1") != 0);
}

TEST_CASE("train infer eval round trip") {
  const auto data = dir("data");
  REQUIRE(run("--seed 1 --out " + data + " gen --kind cylinder --count 2 --queries 24 --faces 12") == 0);
  const auto ckdir = dir("ckpt");
  fs::create_directories(ckdir);
  const std::string ck0 = ckdir + "/zero.ckpt";

  SUBCASE("zero epochs checkpoint equals initialization") {
    REQUIRE(run(kTinyModel + " --seed 3 --out " + ck0 + " train --data " + data + " --epochs 0") == 0);
    std::ifstream in(ck0, std::ios::binary);
    const auto ck = read_checkpoint(in);
    const auto cfg = ModelConfig::from_text(ck.config_text);
    ParameterStore fresh;
    Model::build(cfg, fresh);
    fresh.initialize(Rng(3).split("init").next_u64());
    CHECK(ck.store == fresh);
  }
  SUBCASE("training is reproducible") {
    const std::string a = ckdir + "/a.ckpt", b = ckdir + "/b.ckpt";
    REQUIRE(run(kTinyModel + " --deterministic --seed 5 --out " + a + " train --data " + data + " --epochs 2 --subsample 16") == 0);
    REQUIRE(run(kTinyModel + " --deterministic --seed 5 --out " + b + " train --data " + data + " --epochs 2 --subsample 16") == 0);
    CHECK(slurp(a + ".loss.csv") == slurp(b + ".loss.csv"));
    CHECK(slurp(a) == slurp(b));
    CHECK(slurp(a + ".loss.csv").rfind("epoch,loss,lr", 0) == 0);
  }
  SUBCASE("inference") {
    REQUIRE(run(kTinyModel + " --out " + ck0 + " train --data " + data + " --epochs 0") == 0);
    const std::string sample = data + "/cylinder_0000.sample";
    REQUIRE(run("--chunk-size 1 --out " + ckdir + "/c1.csv infer --ckpt " + ck0 + " --sample " + sample) == 0);
    REQUIRE(run("--chunk-size 1000000 --out " + ckdir + "/cbig.csv infer --ckpt " + ck0 + " --sample " + sample) == 0);
    std::ifstream f1(ckdir + "/c1.csv"), f2(ckdir + "/cbig.csv");
    std::string l1, l2;
    std::getline(f1, l1);
    std::getline(f2, l2);
    CHECK(l1 == l2);
    CHECK(l1.rfind("x,y,Cp,Cpt,ln_nut,dU.x,dU.y", 0) == 0);
    int rows = 0;
    while (std::getline(f1, l1) && std::getline(f2, l2)) {
      ++rows;
      std::stringstream a(l1), b(l2);
      std::string ca, cb;
      while (std::getline(a, ca, ',') && std::getline(b, cb, ',')) {
        const double x = std::stod(ca), y = std::stod(cb);
        CHECK(std::abs(x - y) <= 1e-12 * std::max(1.0, std::abs(x)));
      }
    }
    CHECK(rows == 24);

    auto s = read_sample_file(sample);
    s.has_targets = false;
    s.targets = {};
    s.mask = {};
    s.queries.resize(3);
    s.surface.clear();
    write_sample_file(ckdir + "/notargets.sample", s);
    CHECK(run("--out " + ckdir + "/nt.csv infer --ckpt " + ck0 + " --sample " + ckdir + "/notargets.sample") == 0);
    s.queries.clear();
    write_sample_file(ckdir + "/empty.sample", s);
    REQUIRE(run("--out " + ckdir + "/empty.csv infer --ckpt " + ck0 + " --sample " + ckdir + "/empty.sample") == 0);
    CHECK(slurp(ckdir + "/empty.csv") == "x,y,Cp,Cpt,ln_nut,dU.x,dU.y,CF_shear.x,CF_shear.y\n");

    s.boundaries["inlet"] = s.boundaries.at("no_slip");
    s.boundaries.erase("no_slip");
    write_sample_file(ckdir + "/wrong.sample", s);
    CHECK(run("--out " + ckdir + "/w.csv infer --ckpt " + ck0 + " --sample " + ckdir + "/wrong.sample", "wrong.log") != 0);
    CHECK(slurp(kWork / "wrong.log").find("no_slip") != std::string::npos);
  }
  SUBCASE("evaluating against own predictions gives zero error") {
    REQUIRE(run(kTinyModel + " --out " + ck0 + " train --data " + data + " --epochs 0") == 0);
    std::ifstream in(ck0, std::ios::binary);
    const auto ck = read_checkpoint(in);
    ParameterStore store;
    const auto model = Model::build(ModelConfig::from_text(ck.config_text), store);
    load_parameters(store, ck.store);
    const auto self = dir("self");
    fs::create_directories(self);
    for (const auto& e : fs::directory_iterator(data)) {
      if (e.path().extension() != ".sample") continue;
      auto s = read_sample_file(e.path().string());
      s.targets = model_forward(model, store, s);
      s.targets.scalars.col(2).setConstant(0.0);
      write_sample_file((fs::path(self) / e.path().filename()).string(), s);
    }
    REQUIRE(run("--out " + ckdir + "/self eval --ckpt " + ck0 + " --data " + self) == 0);
    const auto agg = slurp(ckdir + "/self_aggregate.csv");
    std::istringstream rows(agg);
    std::string header, line;
    std::getline(rows, header);
    CHECK(slurp(ckdir + "/self_per_sample.csv").find("cylinder_0001.sample") != std::string::npos);
    int checked = 0;
    while (std::getline(rows, line)) {
      std::vector<std::string> col;
      std::stringstream ls(line);
      for (std::string c; std::getline(ls, c, ',');) col.push_back(c);
      REQUIRE(col.size() == 9);
      if (col[3] == "0") continue;  // CF_shear is masked out
      ++checked;
      if (col[1] == "ln_nut") {
        CHECK(col[6] == "nan-undefined");
        continue;
      }
      CHECK(std::stod(col[4]) == 0.0);
      CHECK(std::stod(col[5]) == 0.0);
    }
    CHECK(checked == 4);
    CHECK(run("--out " + ckdir + "/bad eval --ckpt " + ck0 + " --data " + ckdir) != 0);
  }
}

TEST_CASE("unreadable sample is reported by file") {
  const auto data = dir("broken");
  fs::create_directories(data);
  std::ofstream(data + "/x.sample") << "garbage\n";
  CHECK(run("--out " + data + "/m.ckpt train --data " + data + " --epochs 0", "broken.log") != 0);
  CHECK(slurp(kWork / "broken.log").find("x.sample") != std::string::npos);
}

TEST_CASE("config file keys are overridden by flags and echoed") {
  const auto cfg = kWork / "run.cfg";
  fs::create_directories(kWork);
  std::ofstream(cfg) << "hidden = 5\nseed = 9\nkind = laplace\ncount = 0\n";
  const auto out = dir("cfg");
  CHECK(run("--config " + cfg.string() + " --seed 2 --out " + out + " gen", "cfg.log") == 0);
  const auto log = slurp(kWork / "cfg.log");
  CHECK(log.find("hidden = 5") != std::string::npos);
  CHECK(log.find("seed = 2") != std::string::npos);
  CHECK(log.find("kind = laplace") != std::string::npos);
  std::ofstream(cfg) << "bogus = 1\n";
  CHECK(run("--config " + cfg.string() + " --out " + out + " gen") != 0);
}

TEST_CASE("verify passes on a fresh model and the negative control fails") {
  CHECK(run(kTinyModel + " verify --suite equivariance") == 0);
  CHECK(run(kTinyModel + " verify --suite equivariance --negative-control") != 0);
  CHECK(run(kTinyModel + " verify --suite chunking") == 0);
}

}
