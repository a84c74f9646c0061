// Shared test fixtures: canonical scenes and small utilities.
#pragma once

#include <sstream>
#include <string>

#include "dart/config.hpp"

namespace dart::testing {

// Axis-aligned box as six parallelogram quads with inward normals.
inline std::string box_mesh_text(double w, double d, double h, bool group_per_wall = false) {
  std::ostringstream ss;
  ss.precision(17);
  auto v = [&](double x, double y, double z) { ss << "v " << x << " " << y << " " << z << "\n"; };
  v(0, 0, 0); v(w, 0, 0); v(w, d, 0); v(0, d, 0);          // 1..4 floor ring
  v(0, 0, h); v(w, 0, h); v(w, d, h); v(0, d, h);          // 5..8 ceiling ring
  auto g = [&](const char* name) {
    if (group_per_wall) ss << "g " << name << "\n";
  };
  g("floor");   ss << "f 1 2 3 4\n";
  g("ceiling"); ss << "f 5 8 7 6\n";
  g("west");    ss << "f 1 4 8 5\n";
  g("east");    ss << "f 2 6 7 3\n";
  g("south");   ss << "f 1 5 6 2\n";
  g("north");   ss << "f 4 3 7 8\n";
  return ss.str();
}

inline TriangleMesh box_mesh(double w, double d, double h, bool group_per_wall = false) {
  std::istringstream in(box_mesh_text(w, d, h, group_per_wall));
  return parse_mesh(in, "<box>");
}

// Two parallel unit squares one meter apart, facing each other.
inline TriangleMesh facing_squares_mesh() {
  std::istringstream in(
      "v 0 0 0\nv 0 1 0\nv 0 1 1\nv 0 0 1\n"
      "v 1 0 0\nv 1 0 1\nv 1 1 1\nv 1 1 0\n"
      "g a\nf 1 2 3 4\n"
      "g b\nf 5 6 7 8\n");
  return parse_mesh(in, "<squares>");
}

// Two facing triangles; subdivided with a large max_edge this gives exactly
// two patches, the smallest scene with real transport.
inline TriangleMesh facing_triangles_mesh() {
  std::istringstream in(
      "v 0 0 0\nv 0 1 0\nv 0 0 1\n"
      "v 1 0 0\nv 1 0 1\nv 1 1 0\n"
      "g a\nf 1 2 3\n"
      "g b\nf 4 5 6\n");
  return parse_mesh(in, "<triangles>");
}

struct TestScene {
  PatchSet patches;
  DirectionGrid grid;
  BsdfMatrices comps;
  TransportOperators ops;

  RenderInputs inputs() const { return RenderInputs{&patches, &grid, &ops, &comps}; }
};

inline TestScene make_scene(const TriangleMesh& mesh, double max_edge, int n_ele, int n_azi,
                            PrecomputeConfig pc = {}) {
  TestScene s;
  s.patches = subdivide(mesh, max_edge);
  s.grid = build_direction_grid(n_ele, n_azi);
  s.comps = bsdf_material_matrices(s.grid);
  s.ops = precompute_transport(s.patches, s.grid, pc);
  return s;
}

inline double rel_l2(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    num += d * d;
    den += b[i] * b[i];
  }
  return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

}  // namespace dart::testing
