#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace globe {

/// Spatial vector. 2D problems use the first two components and keep z = 0,
/// so every dot product and norm is the same as in the plane.
using Vec3 = Eigen::Vector3d;

/// One oriented boundary face. Only these three quantities are ever visible
/// to the model; vertex connectivity is discarded on construction.
struct Face {
  Vec3 centroid = Vec3::Zero();
  Vec3 normal = Vec3::UnitX();
  double area = 0.0;
};

/// Connectivity-free soup of faces sharing one boundary-condition label.
/// Faces may overlap, intersect or leave gaps.
struct BoundaryMesh {
  int dim = 2;
  std::string bc;
  std::vector<Face> faces;

  std::size_t size() const { return faces.size(); }
  double total_area() const;
};

/// Raw polygonal input: triangles in 3D, line segments in 2D.
struct TriangleSoup {
  int dim = 3;
  std::vector<std::array<Vec3, 3>> triangles;
  std::vector<std::array<Vec3, 2>> segments;
};

/// One face per triangle (3D) or segment (2D). Normal follows the winding:
/// (b - a) x (c - a) for triangles, the tangent rotated clockwise for
/// segments. Throws std::invalid_argument naming the first degenerate element.
BoundaryMesh faces_from_triangles(const TriangleSoup& soup, const std::string& bc);

/// Drops floor(drop_fraction * n) faces chosen uniformly at random and
/// multiplies every surviving area by 1 / (1 - drop_fraction). Survivors keep
/// their input order.
BoundaryMesh decimate_expand(const BoundaryMesh& mesh, double drop_fraction, std::uint64_t seed);

/// Concatenates faces per BC label in input order.
std::map<std::string, BoundaryMesh> merge_by_bc(const std::vector<BoundaryMesh>& meshes);

/// Reads `globe-mesh v1 d=<2|3> bc=<label>` followed by `f`, `tri` (3D) or
/// `seg` (2D) records.
BoundaryMesh read_mesh(std::istream& in);
void write_mesh(std::ostream& out, const BoundaryMesh& mesh);

/// Face records without header, shared by the mesh and sample formats.
void write_face_records(std::ostream& out, const BoundaryMesh& mesh);
Face parse_face_record(const std::vector<double>& values, int dim);

/// Stream formatting that round-trips doubles exactly.
std::string format_double(double v);

}  // namespace globe
