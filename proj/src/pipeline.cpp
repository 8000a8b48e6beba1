#include "globe/pipeline.hpp"

#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "globe/rng.hpp"

namespace globe {

FieldSet::FieldSet(std::vector<std::string> s, std::vector<std::string> v, std::size_t points)
    : scalar_names(std::move(s)),
      vector_names(std::move(v)),
      scalars(RowMatrix::Zero(static_cast<Eigen::Index>(points), static_cast<Eigen::Index>(scalar_names.size()))),
      vectors(points * vector_names.size(), Vec3::Zero()) {}

int FieldSet::scalar_index(const std::string& name) const {
  for (std::size_t i = 0; i < scalar_names.size(); ++i) {
    if (scalar_names[i] == name) return static_cast<int>(i);
  }
  return -1;
}

int FieldSet::vector_index(const std::string& name) const {
  for (std::size_t i = 0; i < vector_names.size(); ++i) {
    if (vector_names[i] == name) return static_cast<int>(i);
  }
  return -1;
}

FieldSet FieldSet::select(const std::vector<std::size_t>& idx) const {
  FieldSet out(scalar_names, vector_names, idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.scalars.row(static_cast<Eigen::Index>(i)) = scalars.row(static_cast<Eigen::Index>(idx[i]));
    for (int f = 0; f < n_vectors(); ++f) out.vec(i, f) = vec(idx[i], f);
  }
  return out;
}

FieldMask::FieldMask(std::size_t points, int fields_, bool value)
    : fields(fields_), valid(points * static_cast<std::size_t>(fields_), value ? 1 : 0) {}

FieldMask FieldMask::select(const std::vector<std::size_t>& idx) const {
  FieldMask out(idx.size(), fields, true);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    for (int f = 0; f < fields; ++f) out.set(i, f, at(idx[i], f));
  }
  return out;
}

namespace {

bool planar(const Vec3& v) { return v.z() == 0.0; }

}  // namespace

void Sample::validate() const {
  if (dim != 2 && dim != 3) throw std::invalid_argument("sample dimension must be 2 or 3");
  if (reference_lengths.empty()) throw std::invalid_argument("sample has no reference lengths");
  for (double l : reference_lengths) {
    if (!(l > 0.0) || !std::isfinite(l)) throw std::invalid_argument("reference lengths must be positive and finite");
  }
  for (const auto& [bc, mesh] : boundaries) {
    if (mesh.dim != dim) throw std::invalid_argument("boundary '" + bc + "' has the wrong dimension");
    for (std::size_t i = 0; i < mesh.faces.size(); ++i) {
      const Face& f = mesh.faces[i];
      if (!f.centroid.allFinite() || !f.normal.allFinite() || !std::isfinite(f.area)) {
        throw std::invalid_argument("non-finite face " + std::to_string(i) + " in boundary '" + bc + "'");
      }
      if (dim == 2 && (!planar(f.centroid) || !planar(f.normal))) {
        throw std::invalid_argument("2D face " + std::to_string(i) + " in boundary '" + bc + "' leaves the plane");
      }
    }
  }
  for (std::size_t i = 0; i < queries.size(); ++i) {
    if (!queries[i].allFinite()) throw std::invalid_argument("non-finite query point " + std::to_string(i));
    if (dim == 2 && !planar(queries[i])) throw std::invalid_argument("2D query point " + std::to_string(i) + " leaves the plane");
  }
  for (const auto& [name, v] : global_vectors) {
    if (!v.allFinite() || (dim == 2 && !planar(v))) throw std::invalid_argument("invalid global vector '" + name + "'");
  }
  if (has_targets) {
    if (targets.size() != queries.size()) throw std::invalid_argument("target rows do not match query count");
    if (mask.fields != targets.n_fields() || mask.size() != queries.size()) {
      throw std::invalid_argument("mask shape does not match targets");
    }
  }
  if (!surface.empty() && surface.size() != queries.size()) throw std::invalid_argument("surface flags do not match queries");
}

// ---------------------------------------------------------------------------
// Text format.

namespace {

const char* kAxes[3] = {"x", "y", "z"};

void write_point(std::ostream& out, const Vec3& p, int dim) {
  for (int i = 0; i < dim; ++i) out << (i ? " " : "") << format_double(p[i]);
}

std::vector<std::string> split_words(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> words;
  std::string w;
  while (ss >> w) words.push_back(w);
  return words;
}

double parse_number(const std::string& s, int lineno) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size()) throw std::invalid_argument("bad number '" + s + "' on line " + std::to_string(lineno));
  return v;
}

std::vector<double> parse_numbers(const std::vector<std::string>& words, std::size_t from, int lineno) {
  std::vector<double> v;
  for (std::size_t i = from; i < words.size(); ++i) v.push_back(parse_number(words[i], lineno));
  return v;
}

Vec3 to_point(const std::vector<double>& v, std::size_t from, int dim, int lineno) {
  if (v.size() != from + static_cast<std::size_t>(dim)) {
    throw std::invalid_argument("expected " + std::to_string(dim) + " coordinates on line " + std::to_string(lineno));
  }
  Vec3 p = Vec3::Zero();
  for (int i = 0; i < dim; ++i) p[i] = v[from + static_cast<std::size_t>(i)];
  return p;
}

}  // namespace

void write_sample(std::ostream& out, const Sample& s) {
  out << "globe-sample v1 d=" << s.dim << '\n';
  for (const auto& [bc, mesh] : s.boundaries) {
    out << "[boundary bc=" << bc << "]\n";
    write_face_records(out, mesh);
  }
  out << "[globals]\n";
  for (const auto& [name, v] : s.global_scalars) out << "scalar " << name << ' ' << format_double(v) << '\n';
  for (const auto& [name, v] : s.global_vectors) {
    out << "vector " << name << ' ';
    write_point(out, v, s.dim);
    out << '\n';
  }
  out << "[scales]\n";
  for (double l : s.reference_lengths) out << format_double(l) << '\n';
  out << "[queries]\n";
  for (const auto& q : s.queries) {
    write_point(out, q, s.dim);
    out << '\n';
  }
  if (s.has_targets) {
    const FieldSet& t = s.targets;
    out << "[targets]\ncolumns";
    for (const auto& n : t.scalar_names) out << ' ' << n;
    for (const auto& n : t.vector_names) {
      for (int i = 0; i < s.dim; ++i) out << ' ' << n << '.' << kAxes[i];
    }
    out << '\n';
    for (std::size_t p = 0; p < t.size(); ++p) {
      bool first = true;
      auto put = [&](double v) {
        out << (first ? "" : " ") << format_double(v);
        first = false;
      };
      for (int f = 0; f < t.n_scalars(); ++f) put(t.scalars(static_cast<Eigen::Index>(p), f));
      for (int f = 0; f < t.n_vectors(); ++f) {
        for (int i = 0; i < s.dim; ++i) put(t.vec(p, f)[i]);
      }
      out << '\n';
    }
    out << "[mask]\ncolumns";
    for (const auto& n : t.scalar_names) out << ' ' << n;
    for (const auto& n : t.vector_names) out << ' ' << n;
    out << '\n';
    for (std::size_t p = 0; p < s.mask.size(); ++p) {
      for (int f = 0; f < s.mask.fields; ++f) out << (f ? " " : "") << (s.mask.at(p, f) ? 1 : 0);
      out << '\n';
    }
  }
  if (!s.surface.empty()) {
    out << "[surface]\n";
    for (auto f : s.surface) out << static_cast<int>(f) << '\n';
  }
}

Sample read_sample(std::istream& in) {
  Sample s;
  std::string line;
  int lineno = 0;
  bool have_header = false;
  std::string section;
  std::string bc;
  std::vector<std::string> target_columns;
  std::vector<std::vector<double>> target_rows;
  std::vector<std::string> mask_columns;
  std::vector<std::vector<double>> mask_rows;
  bool saw_targets = false;
  bool saw_mask = false;

  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const auto words = split_words(line);
    if (words.empty()) continue;
    if (!have_header) {
      if (words.size() < 3 || words[0] != "globe-sample" || words[1] != "v1" || words[2].rfind("d=", 0) != 0) {
        throw std::invalid_argument("expected 'globe-sample v1 d=<2|3>' header");
      }
      s.dim = static_cast<int>(parse_number(words[2].substr(2), lineno));
      if (s.dim != 2 && s.dim != 3) throw std::invalid_argument("sample dimension must be 2 or 3");
      have_header = true;
      continue;
    }
    if (words[0].front() == '[') {
      const std::string tag = line.substr(line.find('[') + 1, line.find(']') - line.find('[') - 1);
      if (tag.rfind("boundary bc=", 0) == 0) {
        section = "boundary";
        bc = tag.substr(std::string("boundary bc=").size());
        auto& mesh = s.boundaries[bc];
        mesh.dim = s.dim;
        mesh.bc = bc;
      } else if (tag == "globals" || tag == "scales" || tag == "queries" || tag == "targets" || tag == "mask" ||
                 tag == "surface") {
        section = tag;
        if (tag == "targets") saw_targets = true;
        if (tag == "mask") saw_mask = true;
      } else {
        throw std::invalid_argument("unknown section [" + tag + "] on line " + std::to_string(lineno));
      }
      continue;
    }
    if (section == "boundary") {
      if (words[0] != "f") throw std::invalid_argument("expected face record on line " + std::to_string(lineno));
      try {
        s.boundaries[bc].faces.push_back(parse_face_record(parse_numbers(words, 1, lineno), s.dim));
      } catch (const std::invalid_argument& e) {
        throw std::invalid_argument(std::string(e.what()) + " on line " + std::to_string(lineno));
      }
    } else if (section == "globals") {
      if (words.size() < 3) throw std::invalid_argument("bad global on line " + std::to_string(lineno));
      if (words[0] == "scalar" && words.size() == 3) {
        s.global_scalars.emplace_back(words[1], parse_number(words[2], lineno));
      } else if (words[0] == "vector") {
        s.global_vectors.emplace_back(words[1], to_point(parse_numbers(words, 2, lineno), 0, s.dim, lineno));
      } else {
        throw std::invalid_argument("bad global on line " + std::to_string(lineno));
      }
    } else if (section == "scales") {
      for (const auto& w : words) s.reference_lengths.push_back(parse_number(w, lineno));
    } else if (section == "queries") {
      s.queries.push_back(to_point(parse_numbers(words, 0, lineno), 0, s.dim, lineno));
    } else if (section == "targets" || section == "mask") {
      auto& cols = section == "targets" ? target_columns : mask_columns;
      auto& rows = section == "targets" ? target_rows : mask_rows;
      if (words[0] == "columns") {
        cols.assign(words.begin() + 1, words.end());
      } else {
        auto v = parse_numbers(words, 0, lineno);
        if (v.size() != cols.size()) throw std::invalid_argument("column count mismatch on line " + std::to_string(lineno));
        rows.push_back(std::move(v));
      }
    } else if (section == "surface") {
      s.surface.push_back(parse_number(words[0], lineno) != 0.0 ? 1 : 0);
    } else {
      throw std::invalid_argument("data outside a section on line " + std::to_string(lineno));
    }
  }
  if (!have_header) throw std::invalid_argument("empty sample file");

  if (saw_targets) {
    std::vector<std::string> scalar_names, vector_names;
    for (std::size_t c = 0; c < target_columns.size();) {
      const auto& name = target_columns[c];
      const auto dot = name.rfind('.');
      if (dot == std::string::npos) {
        scalar_names.push_back(name);
        ++c;
        continue;
      }
      const std::string base = name.substr(0, dot);
      for (int i = 0; i < s.dim; ++i) {
        if (c + static_cast<std::size_t>(i) >= target_columns.size() ||
            target_columns[c + static_cast<std::size_t>(i)] != base + "." + kAxes[i]) {
          throw std::invalid_argument("vector field '" + base + "' needs consecutive component columns");
        }
      }
      vector_names.push_back(base);
      c += static_cast<std::size_t>(s.dim);
    }
    for (std::size_t c = 0, sc = 0; c < target_columns.size(); ++c) {
      if (target_columns[c].find('.') == std::string::npos && scalar_names[sc++] != target_columns[c]) {
        throw std::invalid_argument("scalar target columns must precede vector columns");
      }
    }
    s.has_targets = true;
    s.targets = FieldSet(scalar_names, vector_names, target_rows.size());
    for (std::size_t p = 0; p < target_rows.size(); ++p) {
      std::size_t c = 0;
      for (int f = 0; f < s.targets.n_scalars(); ++f) s.targets.scalars(static_cast<Eigen::Index>(p), f) = target_rows[p][c++];
      for (int f = 0; f < s.targets.n_vectors(); ++f) {
        for (int i = 0; i < s.dim; ++i) s.targets.vec(p, f)[i] = target_rows[p][c++];
      }
    }
    s.mask = FieldMask(target_rows.size(), s.targets.n_fields(), true);
    if (saw_mask) {
      std::vector<std::string> expected = scalar_names;
      expected.insert(expected.end(), vector_names.begin(), vector_names.end());
      if (mask_columns != expected) throw std::invalid_argument("mask columns must list the target fields in order");
      if (mask_rows.size() != target_rows.size()) throw std::invalid_argument("mask rows do not match target rows");
      for (std::size_t p = 0; p < mask_rows.size(); ++p) {
        for (int f = 0; f < s.mask.fields; ++f) s.mask.set(p, f, mask_rows[p][static_cast<std::size_t>(f)] != 0.0);
      }
    }
  }
  s.validate();
  return s;
}

Sample read_sample_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open sample file " + path);
  try {
    return read_sample(in);
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

void write_sample_file(const std::string& path, const Sample& sample) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  write_sample(out, sample);
  if (!out) throw std::runtime_error("write failed for " + path);
}

// ---------------------------------------------------------------------------

void FlowConstants::validate() const {
  if (!(rho > 0.0) || !(nu > 0.0) || !(c_ref > 0.0) || !(speed() > 0.0) || !U_inf.allFinite()) {
    throw std::invalid_argument("flow constants need rho, nu, c_ref and |U_inf| positive");
  }
}

Sample nondimensionalize(const RawFlow& raw, const FlowConstants& k) {
  k.validate();
  const std::size_t n = raw.points.size();
  if (raw.U.size() != n || raw.p.size() != n || raw.nu_t.size() != n) {
    throw std::invalid_argument("raw field arrays must have one entry per point");
  }
  const double speed = k.speed();
  const double q_inf = k.dynamic_pressure();
  const double c = k.c_ref;

  Sample s;
  s.dim = raw.dim;
  for (const auto& [bc, mesh] : raw.boundaries) {
    BoundaryMesh m = mesh;
    const double area_scale = std::pow(c, raw.dim - 1);
    for (auto& f : m.faces) {
      f.centroid /= c;
      f.area /= area_scale;
    }
    s.boundaries[bc] = std::move(m);
  }
  s.global_vectors.emplace_back("U_inf_dir", k.U_inf / speed);
  s.reference_lengths = {1.0, std::sqrt(k.nu * c / speed) / c};
  s.queries.resize(n);
  s.has_targets = true;
  s.targets = FieldSet(kAeroScalars, kAeroVectors, n);
  s.mask = FieldMask(n, s.targets.n_fields(), true);
  for (std::size_t i = 0; i < n; ++i) {
    if (!raw.points[i].allFinite() || !raw.U[i].allFinite() || !std::isfinite(raw.p[i]) || !std::isfinite(raw.nu_t[i])) {
      throw std::invalid_argument("non-finite field value at point " + std::to_string(i));
    }
    s.queries[i] = raw.points[i] / c;
    const Vec3 u = raw.U[i] / speed;
    const auto row = static_cast<Eigen::Index>(i);
    const double cp = raw.p[i] / q_inf;
    s.targets.scalars(row, 0) = cp;
    s.targets.scalars(row, 1) = cp + u.squaredNorm();
    s.targets.scalars(row, 2) = std::log1p(raw.nu_t[i] / k.nu);
    s.targets.vec(i, 0) = (raw.U[i] - k.U_inf) / speed;
    s.targets.vec(i, 1) = Vec3::Zero();
    s.mask.set(i, 4, false);
  }
  s.validate();
  return s;
}

Sample mask_nonphysical(Sample sample) {
  if (!sample.has_targets) throw std::invalid_argument("mask_nonphysical needs targets");
  const int cpt = sample.targets.scalar_index("Cpt");
  if (cpt < 0) return sample;
  for (std::size_t p = 0; p < sample.targets.size(); ++p) {
    if (sample.targets.scalars(static_cast<Eigen::Index>(p), cpt) > 1.02) {
      for (int f = 0; f < sample.mask.fields; ++f) sample.mask.set(p, f, false);
    }
  }
  return sample;
}

// ---------------------------------------------------------------------------

Vec3 cylinder_velocity(const Vec3& x, double radius, const Vec3& dir) {
  // Complex potential U (z e^{-ia} + R^2 e^{ia} / z); dw/dz = u - i v.
  const std::complex<double> z(x.x(), x.y());
  const std::complex<double> rot(dir.x(), dir.y());
  const std::complex<double> dw = std::conj(rot) - rot * radius * radius / (z * z);
  return Vec3(dw.real(), -dw.imag(), 0.0);
}

Sample gen_cylinder_sample(const CylinderParams& prm, std::uint64_t seed) {
  if (prm.faces < 8) throw std::invalid_argument("cylinder needs at least 8 faces");
  if (!(prm.radius > 0.0)) throw std::invalid_argument("cylinder radius must be positive");
  const double R = prm.radius;
  const double c = 2.0 * R;
  const Vec3 dir(std::cos(prm.angle), std::sin(prm.angle), 0.0);

  RawFlow raw;
  raw.dim = 2;
  BoundaryMesh mesh;
  mesh.dim = 2;
  mesh.bc = "no_slip";
  const double arc = 2.0 * std::numbers::pi * R / prm.faces;
  for (int i = 0; i < prm.faces; ++i) {
    const double th = 2.0 * std::numbers::pi * (i + 0.5) / prm.faces;
    const Vec3 radial(std::cos(th), std::sin(th), 0.0);
    mesh.faces.push_back(Face{R * radial, prm.outward_normals ? radial : Vec3(-radial), arc});
  }
  raw.boundaries["no_slip"] = mesh;

  Rng rng = Rng(seed).split("cylinder");
  std::vector<std::uint8_t> surface;
  const double log_hi = std::log10(9.0);
  for (int i = 0; i < prm.queries; ++i) {
    double r = 0.0;
    if (i % 2 == 0) {
      r = std::sqrt(R * R + rng.uniform() * (100.0 * R * R - R * R));
    } else {
      r = R + R * std::pow(10.0, rng.uniform(-3.0, log_hi));
    }
    const double th = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const Vec3 x(r * std::cos(th), r * std::sin(th), 0.0);
    const Vec3 u = cylinder_velocity(x, R, dir);
    raw.points.push_back(x);
    raw.U.push_back(u);
    raw.p.push_back(0.5 * (1.0 - u.squaredNorm()));
    raw.nu_t.push_back(0.0);
    surface.push_back(r - R < prm.surface_band * R ? 1 : 0);
  }

  FlowConstants k;
  k.rho = 1.0;
  k.U_inf = dir;
  k.c_ref = c;
  k.nu = prm.delta_ratio * prm.delta_ratio * c;
  Sample s = mask_nonphysical(nondimensionalize(raw, k));
  s.surface = std::move(surface);
  return s;
}

double laplace_potential(std::span<const Monopole> sources, const Vec3& x) {
  double phi = 0.0;
  for (const auto& m : sources) phi += m.strength * std::log((x - m.position).norm()) / (2.0 * std::numbers::pi);
  return phi;
}

Vec3 laplace_gradient(std::span<const Monopole> sources, const Vec3& x) {
  Vec3 g = Vec3::Zero();
  for (const auto& m : sources) {
    const Vec3 d = x - m.position;
    g += m.strength * d / (2.0 * std::numbers::pi * d.squaredNorm());
  }
  return g;
}

Sample laplace_sample_from(std::span<const Monopole> sources, std::span<const Vec3> queries) {
  Sample s;
  s.dim = 2;
  for (const auto& m : sources) {
    const std::string bc = m.strength >= 0.0 ? "source" : "sink";
    auto& mesh = s.boundaries[bc];
    mesh.dim = 2;
    mesh.bc = bc;
    mesh.faces.push_back(Face{m.position, Vec3::UnitX(), std::abs(m.strength)});
  }
  s.reference_lengths = {1.0};
  s.queries.assign(queries.begin(), queries.end());
  s.has_targets = true;
  s.targets = FieldSet({"phi"}, {"grad_phi"}, queries.size());
  s.mask = FieldMask(queries.size(), 2, true);
  for (std::size_t i = 0; i < queries.size(); ++i) {
    s.targets.scalars(static_cast<Eigen::Index>(i), 0) = laplace_potential(sources, queries[i]);
    s.targets.vec(i, 0) = laplace_gradient(sources, queries[i]);
  }
  s.validate();
  return s;
}

Sample gen_laplace_source_sample(const LaplaceParams& prm, std::uint64_t seed) {
  if (prm.min_sources < 1 || prm.max_sources < prm.min_sources) throw std::invalid_argument("bad source count range");
  if (!(prm.min_distance > 0.05)) throw std::invalid_argument("queries must stay more than 0.05 from sources");
  Rng rng = Rng(seed).split("laplace");
  const int n = prm.min_sources + static_cast<int>(rng.below(static_cast<std::uint64_t>(prm.max_sources - prm.min_sources + 1)));
  std::vector<Monopole> sources;
  for (int i = 0; i < n; ++i) {
    Monopole m;
    m.position = Vec3(rng.uniform(-prm.source_box, prm.source_box), rng.uniform(-prm.source_box, prm.source_box), 0.0);
    m.strength = rng.uniform(prm.min_strength, prm.max_strength) * (rng.below(2) == 0 ? 1.0 : -1.0);
    sources.push_back(m);
  }
  std::vector<Vec3> queries;
  while (static_cast<int>(queries.size()) < prm.queries) {
    const Vec3 q(rng.uniform(-prm.query_box, prm.query_box), rng.uniform(-prm.query_box, prm.query_box), 0.0);
    bool ok = true;
    for (const auto& m : sources) ok = ok && (q - m.position).norm() >= prm.min_distance;
    if (ok) queries.push_back(q);
  }
  return laplace_sample_from(sources, queries);
}

}  // namespace globe
