#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "globe/geometry.hpp"
#include "globe/netcore.hpp"

namespace globe {

/// Named scalar and vector channels over a batch of points.
struct FieldSet {
  std::vector<std::string> scalar_names;
  std::vector<std::string> vector_names;
  RowMatrix scalars;          // points x scalar fields
  std::vector<Vec3> vectors;  // points * vector fields

  FieldSet() = default;
  FieldSet(std::vector<std::string> scalar_names, std::vector<std::string> vector_names, std::size_t points);

  std::size_t size() const { return static_cast<std::size_t>(scalars.rows()); }
  int n_scalars() const { return static_cast<int>(scalar_names.size()); }
  int n_vectors() const { return static_cast<int>(vector_names.size()); }
  int n_fields() const { return n_scalars() + n_vectors(); }
  int scalar_index(const std::string& name) const;  // -1 when absent
  int vector_index(const std::string& name) const;
  Vec3& vec(std::size_t p, int f) { return vectors[p * static_cast<std::size_t>(n_vectors()) + static_cast<std::size_t>(f)]; }
  const Vec3& vec(std::size_t p, int f) const {
    return vectors[p * static_cast<std::size_t>(n_vectors()) + static_cast<std::size_t>(f)];
  }
  /// Rows `idx` in the given order.
  FieldSet select(const std::vector<std::size_t>& idx) const;
};

/// Per point, per field validity. Fields are ordered scalars then vectors,
/// matching the FieldSet it belongs to.
struct FieldMask {
  int fields = 0;
  std::vector<std::uint8_t> valid;

  FieldMask() = default;
  FieldMask(std::size_t points, int fields, bool value);
  std::size_t size() const { return fields == 0 ? 0 : valid.size() / static_cast<std::size_t>(fields); }
  bool at(std::size_t p, int f) const { return valid[p * static_cast<std::size_t>(fields) + static_cast<std::size_t>(f)] != 0; }
  void set(std::size_t p, int f, bool v) { valid[p * static_cast<std::size_t>(fields) + static_cast<std::size_t>(f)] = v ? 1 : 0; }
  FieldMask select(const std::vector<std::size_t>& idx) const;
};

/// One nondimensional problem instance.
struct Sample {
  int dim = 2;
  std::map<std::string, BoundaryMesh> boundaries;
  std::vector<std::pair<std::string, double>> global_scalars;
  std::vector<std::pair<std::string, Vec3>> global_vectors;
  std::vector<double> reference_lengths;
  std::vector<Vec3> queries;
  bool has_targets = false;
  FieldSet targets;
  FieldMask mask;
  std::vector<std::uint8_t> surface;  // per query; empty when unknown

  /// Checks shapes, finiteness and 2D planarity. Throws std::invalid_argument.
  void validate() const;
};

void write_sample(std::ostream& out, const Sample& sample);
Sample read_sample(std::istream& in);
Sample read_sample_file(const std::string& path);
void write_sample_file(const std::string& path, const Sample& sample);

// ---------------------------------------------------------------------------
// Aerodynamic nondimensionalization.

inline const std::vector<std::string> kAeroScalars{"Cp", "Cpt", "ln_nut"};
inline const std::vector<std::string> kAeroVectors{"dU", "CF_shear"};

struct FlowConstants {
  double rho = 1.0;
  double nu = 1.0;
  Vec3 U_inf = Vec3::UnitX();
  double c_ref = 1.0;

  double speed() const { return U_inf.norm(); }
  double dynamic_pressure() const { return 0.5 * rho * U_inf.squaredNorm(); }
  /// Throws std::invalid_argument unless rho, nu, c_ref and |U_inf| are positive.
  void validate() const;
};

/// Dimensional flow data. Pressure is gauge pressure (zero in the freestream).
struct RawFlow {
  int dim = 2;
  std::map<std::string, BoundaryMesh> boundaries;
  std::vector<Vec3> points;
  std::vector<Vec3> U;
  std::vector<double> p;
  std::vector<double> nu_t;
};

/// Builds a Sample with fields Cp, Cpt, ln_nut, dU, CF_shear (CF_shear zero
/// and masked out), lengths divided by c_ref, the freestream direction as
/// global vector "U_inf_dir" and reference lengths {1, sqrt(nu c / |U|) / c}.
/// Throws std::invalid_argument naming the first non-finite point.
Sample nondimensionalize(const RawFlow& raw, const FlowConstants& constants);

/// Masks every field at points whose target Cpt exceeds 1.02.
Sample mask_nonphysical(Sample sample);

// ---------------------------------------------------------------------------
// Synthetic generators.

struct CylinderParams {
  double radius = 0.5;
  double angle = 0.0;  // freestream direction, radians
  int faces = 48;
  int queries = 512;
  bool outward_normals = true;
  double delta_ratio = 0.05;  // sqrt(nu / (|U| c)), sets the second reference length
  double surface_band = 0.05;  // offsets below this fraction of R count as surface points
};

/// Inviscid potential flow past a circular cylinder of diameter c_ref = 2R,
/// nondimensionalized through nondimensionalize().
Sample gen_cylinder_sample(const CylinderParams& params, std::uint64_t seed);

/// Exact potential-flow velocity at x for a cylinder of radius R centred at
/// the origin in a unit-speed stream along `dir`.
Vec3 cylinder_velocity(const Vec3& x, double radius, const Vec3& dir);

struct LaplaceParams {
  int min_sources = 1;
  int max_sources = 4;
  double source_box = 2.0;     // sources uniform in [-b, b]^2
  double query_box = 4.0;      // queries uniform in [-b, b]^2
  double min_distance = 0.25;  // query rejection radius around each source
  double min_strength = 0.5;
  double max_strength = 1.5;
  int queries = 256;
};

struct Monopole {
  Vec3 position = Vec3::Zero();
  double strength = 1.0;
};

/// Phi = sum q ln(r) / 2pi and its gradient.
double laplace_potential(std::span<const Monopole> sources, const Vec3& x);
Vec3 laplace_gradient(std::span<const Monopole> sources, const Vec3& x);

/// Random monopoles, each one face with area |q| in BC "source" (q > 0) or
/// "sink" (q < 0). Fields: scalar "phi", vector "grad_phi".
Sample gen_laplace_source_sample(const LaplaceParams& params, std::uint64_t seed);
Sample laplace_sample_from(std::span<const Monopole> sources, std::span<const Vec3> queries);

}  // namespace globe
