#include <doctest.h>

#include <cmath>
#include <sstream>

#include "globe/training.hpp"
#include "support.hpp"

using namespace globe;

namespace {

FieldSet random_fields(Rng& rng, std::size_t n, int dim) {
  FieldSet f({"Cp", "ln_nut"}, {"dU"}, n);
  for (Eigen::Index i = 0; i < f.scalars.size(); ++i) f.scalars.data()[i] = rng.normal();
  for (auto& v : f.vectors) v = testing::random_vec(rng, dim);
  return f;
}

ModelConfig laplace_config() {
  ModelConfig c;
  c.dim = 2;
  c.hyperlayers = 1;
  c.latent_scalars = 0;
  c.latent_vectors = 0;
  c.hidden = {8, 8};
  c.branches = 1;
  c.use_normal = false;
  c.bc_types = {"source", "sink"};
  c.global_vectors = {};
  c.scalar_fields = {"phi"};
  c.vector_fields = {"grad_phi"};
  return c;
}

std::vector<Sample> laplace_data(int n, int queries) {
  LaplaceParams prm;
  prm.queries = queries;
  std::vector<Sample> out;
  for (int i = 0; i < n; ++i) out.push_back(gen_laplace_source_sample(prm, 100 + i));
  return out;
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("huber") {
  CHECK(huber(0.0, 1.0) == 0.0);
  CHECK(huber(0.5, 1.0) == 0.125);
  CHECK(huber(3.0, 1.0) == 2.5);
  CHECK(huber(-3.0, 1.0) == 2.5);
  CHECK(huber(1.0, 1.0) == 0.5);
  CHECK(huber_derivative(1.0, 1.0) == 1.0);
  CHECK(huber_derivative(-4.0, 2.0) == -2.0);
  CHECK_THROWS_AS(huber(1.0, 0.0), std::domain_error);
}

TEST_CASE("loss scales") {
  const LossConfig c;
  CHECK(c.scale_for("dU") == 1.0);
  CHECK(c.scale_for("ln_nut") == 5.0);
  CHECK(c.scale_for("CF_shear") == 1e-2);
  CHECK(c.scale_for("phi") == 1.0);
  CHECK(c.huber_delta == 1.0);
}

TEST_CASE("field loss") {
  Rng rng(1);
  const auto target = random_fields(rng, 12, 3);
  const FieldMask all(12, 3, true);
  const LossConfig cfg;
  CHECK(field_loss(target, target, all, cfg).total == 0.0);

  const auto pred = random_fields(rng, 12, 3);
  const auto base = field_loss(pred, target, all, cfg);
  CHECK(base.total > 0.0);
  REQUIRE(base.per_field.size() == 3);
  CHECK(base.per_field[1].first == "ln_nut");

  SUBCASE("vector part is rotation invariant") {
    const auto q = testing::random_orthogonal(rng, 3, true);
    auto p2 = pred, t2 = target;
    for (auto& v : p2.vectors) v = q * v;
    for (auto& v : t2.vectors) v = q * v;
    CHECK(field_loss(p2, t2, all, cfg).total == doctest::Approx(base.total).epsilon(1e-14));
  }
  SUBCASE("masked point is excluded") {
    FieldMask m = all;
    for (int f = 0; f < 3; ++f) m.set(4, f, false);
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < 12; ++i) {
      if (i != 4) keep.push_back(i);
    }
    const auto reduced = field_loss(pred.select(keep), target.select(keep), all.select(keep), cfg);
    CHECK(field_loss(pred, target, m, cfg).total == doctest::Approx(reduced.total).epsilon(1e-14));
  }
  SUBCASE("fully masked field contributes zero") {
    FieldMask m = all;
    for (std::size_t p = 0; p < 12; ++p) m.set(p, 2, false);
    const auto r = field_loss(pred, target, m, cfg);
    REQUIRE(r.fully_masked.size() == 1);
    CHECK(r.fully_masked[0] == "dU");
    CHECK(r.per_field[2].second == 0.0);
  }
  SUBCASE("missing target field is an error") {
    FieldSet t({"Cp"}, {"dU"}, 12);
    CHECK_THROWS_AS(field_loss(pred, t, FieldMask(12, 2, true), cfg), std::invalid_argument);
  }
  SUBCASE("gradient") {
    auto p = pred;
    p.scalars *= 3.0;  // reach the linear branch too
    FieldSet g;
    field_loss(p, target, all, cfg, &g);
    for (Eigen::Index i = 0; i < p.scalars.size(); ++i) {
      auto up = p, dn = p;
      up.scalars.data()[i] += 1e-6;
      dn.scalars.data()[i] -= 1e-6;
      const double fd = (field_loss(up, target, all, cfg).total - field_loss(dn, target, all, cfg).total) / 2e-6;
      CHECK(g.scalars.data()[i] == doctest::Approx(fd).epsilon(1e-6).scale(1e-4));
    }
    for (std::size_t i = 0; i < p.vectors.size(); ++i) {
      for (int k = 0; k < 3; ++k) {
        auto up = p, dn = p;
        up.vectors[i][k] += 1e-6;
        dn.vectors[i][k] -= 1e-6;
        const double fd = (field_loss(up, target, all, cfg).total - field_loss(dn, target, all, cfg).total) / 2e-6;
        CHECK(g.vectors[i][k] == doctest::Approx(fd).epsilon(1e-6).scale(1e-4));
      }
    }
  }
}

TEST_CASE("subsample") {
  const auto s = laplace_data(1, 40)[0];
  const auto same = subsample_queries(s, 40, 1);
  CHECK(same.queries == s.queries);
  const auto a = subsample_queries(s, 10, 7), b = subsample_queries(s, 10, 7);
  CHECK(a.queries.size() == 10);
  CHECK(a.queries == b.queries);
  CHECK(subsample_queries(s, 10, 8).queries != a.queries);
  for (std::size_t i = 0; i < a.queries.size(); ++i) {
    std::size_t j = 0;
    while (s.queries[j] != a.queries[i]) ++j;
    CHECK(a.targets.scalars(static_cast<Eigen::Index>(i), 0) == s.targets.scalars(static_cast<Eigen::Index>(j), 0));
    CHECK(a.targets.vec(i, 0) == s.targets.vec(j, 0));
    CHECK(a.mask.at(i, 0) == s.mask.at(j, 0));
  }
}

TEST_CASE("zero epochs return the initial parameters") {
  const auto cfg = laplace_config();
  ParameterStore store;
  const auto model = Model::build(cfg, store);
  store.initialize(1);
  const ParameterStore before = store;
  TrainConfig tc;
  tc.epochs = 0;
  const auto res = train(model, store, laplace_data(2, 16), tc);
  CHECK(store == before);
  REQUIRE(res.history.size() == 1);
  CHECK(res.history[0].epoch == 0);
}

TEST_CASE("training is reproducible and the schedule never increases") {
  const auto cfg = laplace_config();
  const auto data = laplace_data(4, 32);
  TrainConfig tc;
  tc.epochs = 6;
  tc.lr = 3e-3;
  tc.patience = 0;
  tc.subsample = 24;
  auto run = [&] {
    ParameterStore store;
    const auto model = Model::build(cfg, store);
    store.initialize(2);
    const auto res = train(model, store, data, tc);
    std::ostringstream csv;
    write_history_csv(csv, res);
    return std::make_pair(csv.str(), res);
  };
  const auto [csv1, r1] = run();
  const auto [csv2, r2] = run();
  CHECK(csv1 == csv2);
  CHECK(csv1.rfind("epoch,loss,lr,best_loss,loss_phi,loss_grad_phi\n", 0) == 0);
  REQUIRE(r1.history.size() == 7);
  for (std::size_t i = 1; i < r1.history.size(); ++i) CHECK(r1.history[i].lr <= r1.history[i - 1].lr);
  CHECK(r1.history.back().best_loss < r1.history.front().loss);
}

TEST_CASE("non-finite loss names epoch and sample") {
  const auto cfg = laplace_config();
  ParameterStore store;
  const auto model = Model::build(cfg, store);
  store.initialize(3);
  auto data = laplace_data(2, 8);
  data[1].targets.scalars(0, 0) = std::numeric_limits<double>::infinity();
  TrainConfig tc;
  tc.epochs = 1;
  try {
    train(model, store, data, tc);
    FAIL("expected an error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("sample 1") != std::string::npos);
  }
}

TEST_CASE("metrics") {
  Rng rng(4);
  const auto target = random_fields(rng, 30, 2);
  const FieldMask all(30, 3, true);
  const FieldSet* tp = &target;
  const FieldMask* mp = &all;
  const auto sigma = pooled_sigma(std::span(&tp, 1), std::span(&mp, 1), 2);
  std::vector<std::uint8_t> surface(30, 0);
  surface[3] = 1;

  const auto zero = metrics(target, target, all, surface, sigma, 2);
  for (const auto& f : zero.fields) {
    CHECK(f.mae == 0.0);
    CHECK(f.mse == 0.0);
    CHECK(f.z_mse == 0.0);
  }

  auto shifted = target;
  for (std::size_t p = 0; p < 30; ++p) {
    shifted.scalars(static_cast<Eigen::Index>(p), 0) += sigma[0][0];
    shifted.scalars(static_cast<Eigen::Index>(p), 1) += sigma[1][0];
    shifted.vec(p, 0) += Vec3(sigma[2][0], sigma[2][1], 0);
  }
  const auto one = metrics(shifted, target, all, surface, sigma, 2);
  for (const auto& f : one.fields) CHECK(f.z_mse == doctest::Approx(1.0).epsilon(1e-12));

  const auto pred = random_fields(rng, 30, 2);
  const auto rep = metrics(pred, target, all, surface, sigma, 2);
  for (const auto& f : rep.fields) {
    CHECK(f.mae * f.mae <= f.mse * (1 + 1e-12));
    CHECK(f.surface_mae * f.surface_mae <= f.surface_mse * (1 + 1e-12));
  }

  auto constant = target;
  constant.scalars.col(0).setConstant(0.7);
  const FieldSet* cp = &constant;
  const auto csig = pooled_sigma(std::span(&cp, 1), std::span(&mp, 1), 2);
  const auto crep = metrics(pred, constant, all, {}, csig, 2);
  CHECK(std::isnan(crep.find("Cp")->z_mse));
  CHECK(std::isfinite(crep.find("Cp")->mse));
  CHECK(std::isnan(crep.find("Cp")->surface_mae));
  CHECK(crep.find("missing") == nullptr);

  const std::vector<MetricReport> both{zero, rep};
  const auto avg = average_reports(both);
  CHECK(avg.find("dU")->mae == doctest::Approx(0.5 * rep.find("dU")->mae));
}

TEST_CASE("metric csv marks undefined values") {
  MetricReport r;
  FieldMetric m;
  m.name = "Cp";
  m.z_mse = std::nan("");
  r.fields.push_back(m);
  std::ostringstream out;
  write_metric_csv_header(out);
  write_metric_csv_rows(out, "s0", r);
  CHECK(out.str().find("nan-undefined") != std::string::npos);
}

}
