#include "globe/geometry.hpp"

#include <charconv>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "globe/rng.hpp"

namespace globe {

double BoundaryMesh::total_area() const {
  double sum = 0.0;
  double comp = 0.0;
  for (const auto& f : faces) {
    const double t = sum + f.area;
    comp += std::abs(sum) >= std::abs(f.area) ? (sum - t) + f.area : (f.area - t) + sum;
    sum = t;
  }
  return sum + comp;
}

namespace {

double bbox_diagonal(const TriangleSoup& soup) {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  bool any = false;
  auto grow = [&](const Vec3& p) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
    any = true;
  };
  for (const auto& t : soup.triangles) {
    for (const auto& p : t) grow(p);
  }
  for (const auto& s : soup.segments) {
    for (const auto& p : s) grow(p);
  }
  return any ? (hi - lo).norm() : 0.0;
}

}  // namespace

BoundaryMesh faces_from_triangles(const TriangleSoup& soup, const std::string& bc) {
  if (soup.dim != 2 && soup.dim != 3) {
    throw std::invalid_argument("dimension must be 2 or 3");
  }
  BoundaryMesh mesh;
  mesh.dim = soup.dim;
  mesh.bc = bc;
  const double scale = bbox_diagonal(soup);

  if (soup.dim == 3) {
    if (!soup.segments.empty()) throw std::invalid_argument("segment records require d=2");
    const double min_area = 1e-14 * scale * scale;
    mesh.faces.reserve(soup.triangles.size());
    for (std::size_t k = 0; k < soup.triangles.size(); ++k) {
      const auto& [a, b, c] = soup.triangles[k];
      const Vec3 cross = (b - a).cross(c - a);
      const double area = 0.5 * cross.norm();
      if (!(area > min_area)) {
        throw std::invalid_argument("degenerate triangle at index " + std::to_string(k));
      }
      mesh.faces.push_back({(a + b + c) / 3.0, cross.normalized(), area});
    }
  } else {
    if (!soup.triangles.empty()) throw std::invalid_argument("triangle records require d=3");
    const double min_length = 1e-14 * scale;
    mesh.faces.reserve(soup.segments.size());
    for (std::size_t k = 0; k < soup.segments.size(); ++k) {
      const auto& [a, b] = soup.segments[k];
      const Vec3 t = b - a;
      const double length = t.head<2>().norm();
      if (!(length > min_length)) {
        throw std::invalid_argument("degenerate segment at index " + std::to_string(k));
      }
      const Vec3 n(t.y() / length, -t.x() / length, 0.0);
      mesh.faces.push_back({0.5 * (a + b), n, length});
    }
  }
  return mesh;
}

BoundaryMesh decimate_expand(const BoundaryMesh& mesh, double drop_fraction, std::uint64_t seed) {
  if (!(drop_fraction >= 0.0 && drop_fraction < 1.0)) {
    throw std::invalid_argument("drop_fraction must lie in [0, 1)");
  }
  const std::size_t n = mesh.faces.size();
  const auto n_drop = static_cast<std::size_t>(std::floor(drop_fraction * static_cast<double>(n)));
  Rng rng = Rng(seed).split("decimate");
  std::vector<char> dropped(n, 0);
  for (std::size_t i : rng.sample_indices(n, n_drop)) dropped[i] = 1;

  const double expand = 1.0 / (1.0 - drop_fraction);
  BoundaryMesh out;
  out.dim = mesh.dim;
  out.bc = mesh.bc;
  out.faces.reserve(n - n_drop);
  for (std::size_t i = 0; i < n; ++i) {
    if (dropped[i]) continue;
    Face f = mesh.faces[i];
    f.area *= expand;
    out.faces.push_back(f);
  }
  return out;
}

std::map<std::string, BoundaryMesh> merge_by_bc(const std::vector<BoundaryMesh>& meshes) {
  std::map<std::string, BoundaryMesh> merged;
  for (const auto& m : meshes) {
    auto [it, inserted] = merged.try_emplace(m.bc);
    auto& dst = it->second;
    if (inserted) {
      dst.dim = m.dim;
      dst.bc = m.bc;
    } else if (dst.dim != m.dim) {
      throw std::invalid_argument("cannot merge meshes of different dimension for bc " + m.bc);
    }
    dst.faces.insert(dst.faces.end(), m.faces.begin(), m.faces.end());
  }
  return merged;
}

std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

Face parse_face_record(const std::vector<double>& values, int dim) {
  if (values.size() != static_cast<std::size_t>(2 * dim + 1)) {
    throw std::invalid_argument("face record needs " + std::to_string(2 * dim + 1) + " values");
  }
  Face f;
  f.centroid.setZero();
  f.normal.setZero();
  for (int i = 0; i < dim; ++i) {
    f.centroid[i] = values[i];
    f.normal[i] = values[dim + i];
  }
  f.area = values[2 * dim];
  const double nn = f.normal.norm();
  if (!(std::abs(nn - 1.0) < 1e-9)) throw std::invalid_argument("face normal is not unit length");
  f.normal /= nn;
  if (!(f.area >= 0.0) || !std::isfinite(f.area)) throw std::invalid_argument("face area must be >= 0");
  return f;
}

void write_face_records(std::ostream& out, const BoundaryMesh& mesh) {
  for (const auto& f : mesh.faces) {
    out << 'f';
    for (int i = 0; i < mesh.dim; ++i) out << ' ' << format_double(f.centroid[i]);
    for (int i = 0; i < mesh.dim; ++i) out << ' ' << format_double(f.normal[i]);
    out << ' ' << format_double(f.area) << '\n';
  }
}

void write_mesh(std::ostream& out, const BoundaryMesh& mesh) {
  out << "globe-mesh v1 d=" << mesh.dim << " bc=" << mesh.bc << '\n';
  write_face_records(out, mesh);
}

namespace {

std::string strip_comment(const std::string& line) {
  const auto pos = line.find('#');
  return pos == std::string::npos ? line : line.substr(0, pos);
}

std::string header_value(const std::string& header, const std::string& key) {
  std::istringstream ss(header);
  std::string tok;
  const std::string prefix = key + "=";
  while (ss >> tok) {
    if (tok.rfind(prefix, 0) == 0) return tok.substr(prefix.size());
  }
  throw std::invalid_argument("mesh header is missing " + key);
}

}  // namespace

BoundaryMesh read_mesh(std::istream& in) {
  std::string line;
  std::string header;
  while (std::getline(in, line)) {
    header = strip_comment(line);
    if (header.find_first_not_of(" \t\r") != std::string::npos) break;
  }
  if (header.rfind("globe-mesh v1", 0) != 0) {
    throw std::invalid_argument("expected 'globe-mesh v1' header");
  }
  const int dim = std::stoi(header_value(header, "d"));
  if (dim != 2 && dim != 3) throw std::invalid_argument("mesh dimension must be 2 or 3");
  const std::string bc = header_value(header, "bc");

  BoundaryMesh mesh;
  mesh.dim = dim;
  mesh.bc = bc;
  TriangleSoup soup;
  soup.dim = dim;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(strip_comment(line));
    std::string tag;
    if (!(ss >> tag)) continue;
    std::vector<double> vals;
    double v;
    while (ss >> v) vals.push_back(v);
    if (!ss.eof()) throw std::invalid_argument("bad number on mesh line " + std::to_string(lineno));
    if (tag == "f") {
      mesh.faces.push_back(parse_face_record(vals, dim));
    } else if (tag == "tri" || tag == "seg") {
      const int nv = tag == "tri" ? 3 : 2;
      if (vals.size() != static_cast<std::size_t>(nv * dim)) {
        throw std::invalid_argument(tag + " record has wrong arity on line " + std::to_string(lineno));
      }
      std::array<Vec3, 3> pts{Vec3::Zero(), Vec3::Zero(), Vec3::Zero()};
      for (int p = 0; p < nv; ++p) {
        for (int i = 0; i < dim; ++i) pts[p][i] = vals[p * dim + i];
      }
      if (nv == 3) {
        soup.triangles.push_back(pts);
      } else {
        soup.segments.push_back({pts[0], pts[1]});
      }
    } else {
      throw std::invalid_argument("unknown mesh record '" + tag + "' on line " + std::to_string(lineno));
    }
  }
  if (!soup.triangles.empty() || !soup.segments.empty()) {
    const BoundaryMesh derived = faces_from_triangles(soup, bc);
    mesh.faces.insert(mesh.faces.end(), derived.faces.begin(), derived.faces.end());
  }
  return mesh;
}

}  // namespace globe
