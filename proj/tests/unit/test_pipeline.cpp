#include <doctest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "globe/pipeline.hpp"

using namespace globe;

namespace {

RawFlow point_flow(const Vec3& x, const Vec3& u, double p, double nut) {
  RawFlow raw;
  raw.dim = 2;
  BoundaryMesh m;
  m.bc = "no_slip";
  m.faces.push_back(Face{Vec3(0.1, 0.2, 0), Vec3::UnitY(), 0.3});
  raw.boundaries["no_slip"] = m;
  raw.points = {x};
  raw.U = {u};
  raw.p = {p};
  raw.nu_t = {nut};
  return raw;
}

Sample with_cpt(std::vector<double> cpt) {
  Sample s;
  s.has_targets = true;
  s.targets = FieldSet(kAeroScalars, kAeroVectors, cpt.size());
  s.mask = FieldMask(cpt.size(), 5, true);
  for (std::size_t i = 0; i < cpt.size(); ++i) s.targets.scalars(static_cast<Eigen::Index>(i), 1) = cpt[i];
  return s;
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("freestream state") {
  FlowConstants k{1.2, 1.5e-5, Vec3(30, 0, 0), 1.0};
  const auto s = nondimensionalize(point_flow(Vec3(2, 1, 0), k.U_inf, 0.0, 0.0), k);
  CHECK(s.targets.scalars(0, 0) == 0.0);
  CHECK(s.targets.scalars(0, 1) == 1.0);
  CHECK(s.targets.scalars(0, 2) == 0.0);
  CHECK(s.targets.vec(0, 0).isZero(0));
  CHECK_FALSE(s.mask.at(0, 4));
  CHECK(s.mask.at(0, 0));
  REQUIRE(s.global_vectors.size() == 1);
  CHECK(s.global_vectors[0].second == Vec3(1, 0, 0));
  REQUIRE(s.reference_lengths.size() == 2);
  CHECK(s.reference_lengths[1] == doctest::Approx(std::sqrt(1.5e-5 / 30.0)));
}

TEST_CASE("stagnation point") {
  FlowConstants k{1.2, 1e-5, Vec3(0, 10, 0), 2.0};
  const auto s = nondimensionalize(point_flow(Vec3(1, 1, 0), Vec3::Zero(), k.dynamic_pressure(), 0.0), k);
  CHECK(s.targets.scalars(0, 0) == doctest::Approx(1.0));
  CHECK(s.targets.scalars(0, 1) == doctest::Approx(1.0));
  CHECK(s.targets.vec(0, 0).isApprox(Vec3(0, -1, 0)));
  CHECK(s.queries[0] == Vec3(0.5, 0.5, 0));
}

TEST_CASE("eddy viscosity channel") {
  FlowConstants k{1.0, 2e-5, Vec3(1, 0, 0), 1.0};
  const auto s = nondimensionalize(point_flow(Vec3(1, 1, 0), Vec3(1, 0, 0), 0.0, 2e-5 * (std::exp(1.0) - 1.0)), k);
  CHECK(s.targets.scalars(0, 2) == doctest::Approx(1.0));
}

TEST_CASE("changing units leaves the sample unchanged") {
  const double L = 0.3048, V = 0.3048, rho_k = 515.379;
  FlowConstants si{1.2, 1.5e-5, Vec3(30, 4, 0), 1.3};
  FlowConstants ft{si.rho / rho_k, si.nu / (L * V), si.U_inf / V, si.c_ref / L};
  auto a = point_flow(Vec3(2, 1, 0), Vec3(25, -3, 0), 120.0, 3e-4);
  auto b = a;
  b.points[0] /= L;
  b.U[0] /= V;
  b.p[0] /= rho_k * V * V;
  b.nu_t[0] /= L * V;
  for (auto& f : b.boundaries["no_slip"].faces) {
    f.centroid /= L;
    f.area /= L;
  }
  const auto sa = nondimensionalize(a, si), sb = nondimensionalize(b, ft);
  for (int f = 0; f < 3; ++f) CHECK(sb.targets.scalars(0, f) == doctest::Approx(sa.targets.scalars(0, f)).epsilon(1e-12));
  CHECK((sb.targets.vec(0, 0) - sa.targets.vec(0, 0)).norm() < 1e-12);
  CHECK((sb.queries[0] - sa.queries[0]).norm() < 1e-12);
  CHECK(sb.reference_lengths[1] == doctest::Approx(sa.reference_lengths[1]).epsilon(1e-12));
  CHECK(sb.boundaries.at("no_slip").faces[0].area == doctest::Approx(sa.boundaries.at("no_slip").faces[0].area).epsilon(1e-12));
}

TEST_CASE("invalid inputs") {
  FlowConstants k;
  k.nu = 0.0;
  CHECK_THROWS_AS(k.validate(), std::invalid_argument);
  FlowConstants ok;
  try {
    nondimensionalize(point_flow(Vec3(1, 0, 0), Vec3(std::nan(""), 0, 0), 0.0, 0.0), ok);
    FAIL("expected an error");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("point 0") != std::string::npos);
  }
}

TEST_CASE("nonphysical masking") {
  auto s = mask_nonphysical(with_cpt({1.0, 1.05, 1.02, 0.4}));
  for (int f = 0; f < 5; ++f) {
    CHECK(s.mask.at(0, f));
    CHECK_FALSE(s.mask.at(1, f));
    CHECK(s.mask.at(2, f));
    CHECK(s.mask.at(3, f));
  }
}

TEST_CASE("cylinder surface pressure") {
  const Vec3 dir(1, 0, 0);
  auto cp = [&](double th) {
    const Vec3 x(0.5 * std::cos(th), 0.5 * std::sin(th), 0);
    return 1.0 - cylinder_velocity(x, 0.5, dir).squaredNorm();
  };
  CHECK(cp(std::numbers::pi) == doctest::Approx(1.0));
  CHECK(cp(std::numbers::pi / 2) == doctest::Approx(-3.0));
  for (double th : {0.3, 1.1, 2.5}) CHECK(cp(th) == doctest::Approx(1.0 - 4.0 * std::sin(th) * std::sin(th)));
  const Vec3 far = cylinder_velocity(Vec3(1e4, 3e3, 0), 0.5, dir);
  CHECK((far - dir).norm() < 1e-8);
  // no flow through the wall
  const Vec3 rad(std::cos(0.7), std::sin(0.7), 0);
  CHECK(std::abs(cylinder_velocity(0.5 * rad, 0.5, Vec3(0.6, 0.8, 0)).dot(rad)) < 1e-14);
}

TEST_CASE("cylinder samples") {
  CylinderParams prm;
  prm.angle = 0.3;
  prm.queries = 64;
  const auto s = gen_cylinder_sample(prm, 5);
  CHECK_NOTHROW(s.validate());
  CHECK(s.boundaries.at("no_slip").size() == 48);
  CHECK(s.boundaries.at("no_slip").total_area() == doctest::Approx(std::numbers::pi).epsilon(1e-12));
  CHECK(s.surface.size() == 64);
  for (std::size_t i = 0; i < s.targets.size(); ++i) {
    CHECK(s.targets.scalars(static_cast<Eigen::Index>(i), 1) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s.queries[i].norm() >= 0.5);
  }
  CHECK(s.reference_lengths[1] == doctest::Approx(0.05));
  const auto again = gen_cylinder_sample(prm, 5);
  CHECK(again.queries == s.queries);
  prm.outward_normals = false;
  CHECK(gen_cylinder_sample(prm, 5).boundaries.at("no_slip").faces[0].normal.dot(s.boundaries.at("no_slip").faces[0].normal) ==
        doctest::Approx(-1.0));
}

TEST_CASE("laplace monopoles") {
  const std::vector<Monopole> unit{Monopole{Vec3::Zero(), 1.0}};
  CHECK(laplace_potential(unit, Vec3(1, 0, 0)) == doctest::Approx(0.0));
  CHECK(laplace_potential(unit, Vec3(0, std::exp(1.0), 0)) == doctest::Approx(0.15915).epsilon(1e-5));
  const Vec3 g = laplace_gradient(unit, Vec3(2, 0, 0));
  CHECK(g.isApprox(Vec3(1.0 / (4 * std::numbers::pi), 0, 0)));

  const std::vector<Monopole> pair{Monopole{Vec3(-1, 0, 0), 1.0}, Monopole{Vec3(1, 0.5, 0), -1.0}};
  const std::vector<Monopole> swapped{Monopole{Vec3(-1, 0, 0), -1.0}, Monopole{Vec3(1, 0.5, 0), 1.0}};
  for (const Vec3& x : {Vec3(0.3, 2, 0), Vec3(-3, -1, 0)}) {
    CHECK(laplace_potential(swapped, x) == doctest::Approx(-laplace_potential(pair, x)));
    CHECK(laplace_gradient(swapped, x).isApprox(-laplace_gradient(pair, x)));
  }
}

TEST_CASE("laplace samples") {
  LaplaceParams prm;
  prm.queries = 50;
  const auto s = gen_laplace_source_sample(prm, 3);
  CHECK_NOTHROW(s.validate());
  std::size_t faces = 0;
  for (const auto& [bc, mesh] : s.boundaries) {
    CHECK((bc == "source" || bc == "sink"));
    faces += mesh.size();
    for (const auto& f : mesh.faces) {
      CHECK(f.area >= 0.5);
      CHECK(f.area <= 1.5);
    }
  }
  CHECK(faces >= 1);
  CHECK(faces <= 4);
  CHECK(s.queries.size() == 50);
  for (const auto& q : s.queries) {
    for (const auto& [bc, mesh] : s.boundaries) {
      for (const auto& f : mesh.faces) CHECK((q - f.centroid).norm() >= 0.25);
    }
  }
}

TEST_CASE("sample text round trip") {
  CylinderParams prm;
  prm.queries = 20;
  prm.faces = 12;
  auto s = gen_cylinder_sample(prm, 9);
  s.global_scalars.emplace_back("Re", 1e6);
  std::stringstream ss;
  write_sample(ss, s);
  const auto back = read_sample(ss);
  CHECK(back.dim == s.dim);
  CHECK(back.queries == s.queries);
  CHECK(back.reference_lengths == s.reference_lengths);
  CHECK(back.global_scalars == s.global_scalars);
  CHECK(back.global_vectors == s.global_vectors);
  CHECK(back.targets.scalars == s.targets.scalars);
  CHECK(back.targets.vectors == s.targets.vectors);
  CHECK(back.targets.scalar_names == s.targets.scalar_names);
  CHECK(back.mask.valid == s.mask.valid);
  CHECK(back.surface == s.surface);
  CHECK(back.boundaries.at("no_slip").faces.size() == 12);

  Sample bare;
  bare.boundaries["w"].faces.push_back(Face{Vec3(0, 0, 0), Vec3::UnitY(), 1.0});
  bare.boundaries["w"].bc = "w";
  bare.reference_lengths = {1.0};
  std::stringstream s2;
  write_sample(s2, bare);
  const auto b2 = read_sample(s2);
  CHECK_FALSE(b2.has_targets);
  CHECK(b2.queries.empty());
}

TEST_CASE("field set and mask selection") {
  FieldSet f({"a"}, {"v"}, 4);
  FieldMask m(4, 2, true);
  for (int i = 0; i < 4; ++i) {
    f.scalars(i, 0) = i;
    f.vec(static_cast<std::size_t>(i), 0) = Vec3(i, 0, 0);
  }
  m.set(2, 1, false);
  const auto fs = f.select({2, 0});
  const auto ms = m.select({2, 0});
  CHECK(fs.scalars(0, 0) == 2.0);
  CHECK(fs.vec(1, 0) == Vec3::Zero());
  CHECK_FALSE(ms.at(0, 1));
  CHECK(ms.at(1, 1));
  CHECK(f.scalar_index("a") == 0);
  CHECK(f.vector_index("a") == -1);
}

}
