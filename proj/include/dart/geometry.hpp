// Mesh ingestion, patch subdivision, and the equal-solid-angle direction grid.
//
// Input primitives are triangles and parallelogram quads. Quads subdivide into
// a grid of cells, each cell split into four triangles by its diagonals;
// triangles split recursively at edge midpoints. All children inherit the
// parent primitive's local frame so their direction grids stay aligned.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "dart/common.hpp"

namespace dart {

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> faces;  // triangle primitives
  std::vector<int> face_group;
  std::vector<std::array<int, 4>> quads;  // parallelogram primitives
  std::vector<int> quad_group;
  std::vector<std::string> group_names;

  std::size_t primitive_count() const { return faces.size() + quads.size(); }

  double total_area() const {
    double a = 0.0;
    for (const auto& f : faces)
      a += 0.5 * norm(cross(vertices[f[1]] - vertices[f[0]], vertices[f[2]] - vertices[f[0]]));
    for (const auto& q : quads)
      a += norm(cross(vertices[q[1]] - vertices[q[0]], vertices[q[3]] - vertices[q[0]]));
    return a;
  }
};

struct Patch {
  Vec3 v0, v1, v2;
  Vec3 normal;         // unit, from the parent primitive winding
  Vec3 tan_u, tan_v;   // local frame; (tan_u, tan_v, normal) is orthonormal
  double area = 0.0;
  int group = 0;
};

struct PatchSet {
  std::vector<Patch> patches;
  int n_groups = 0;
  std::vector<std::string> group_names;
  Vec3 bbox_min, bbox_max;

  int size() const { return static_cast<int>(patches.size()); }

  double total_area() const {
    double a = 0.0;
    for (const auto& p : patches) a += p.area;
    return a;
  }

  Vec3 centroid(int i) const {
    const Patch& p = patches[i];
    return (p.v0 + p.v1 + p.v2) / 3.0;
  }

  bool strictly_inside_bbox(const Vec3& p, double margin = 1e-9) const {
    return p.x > bbox_min.x + margin && p.x < bbox_max.x - margin &&
           p.y > bbox_min.y + margin && p.y < bbox_max.y - margin &&
           p.z > bbox_min.z + margin && p.z < bbox_max.z - margin;
  }

  // Direction in world coordinates from components in patch i's local frame.
  Vec3 to_world(int i, const Vec3& local) const {
    const Patch& p = patches[i];
    return p.tan_u * local.x + p.tan_v * local.y + p.normal * local.z;
  }

  Vec3 to_local(int i, const Vec3& world) const {
    const Patch& p = patches[i];
    return {dot(world, p.tan_u), dot(world, p.tan_v), dot(world, p.normal)};
  }
};

// Equal-solid-angle partition of the sphere: cos-elevation z is split into
// n_ele uniform slabs of [-1, 1] and azimuth into n_azi uniform sectors, so
// every bin subtends exactly 4*pi / (n_ele * n_azi). Bin intervals are
// half-open at their starting boundary: z in [1 - 2k/N, 1 - 2(k+1)/N) and
// phi in [2*pi*k/N, 2*pi*(k+1)/N).
struct DirectionGrid {
  int n_ele = 0;
  int n_azi = 0;

  int n_dir() const { return n_ele * n_azi; }
  double bin_solid_angle() const { return kFourPi / n_dir(); }

  double z_hi(int e) const { return 1.0 - 2.0 * e / n_ele; }
  double z_lo(int e) const { return 1.0 - 2.0 * (e + 1) / n_ele; }
  double phi_lo(int a) const { return kTwoPi * a / n_azi; }
  double phi_hi(int a) const { return kTwoPi * (a + 1) / n_azi; }

  int bin_index(int e, int a) const { return e * n_azi + a; }
  int ele_of(int bin) const { return bin / n_azi; }
  int azi_of(int bin) const { return bin % n_azi; }

  int bin_of_local(const Vec3& d) const {
    double z = std::clamp(d.z, -1.0, 1.0);
    int e = static_cast<int>(std::floor((1.0 - z) * n_ele / 2.0));
    e = std::clamp(e, 0, n_ele - 1);
    // signed zeros would flip atan2 to -pi exactly at the poles
    double phi = (d.x == 0.0 && d.y == 0.0) ? 0.0 : std::atan2(d.y, d.x);
    if (phi < 0.0) phi += kTwoPi;
    int a = static_cast<int>(std::floor(phi / kTwoPi * n_azi));
    a = std::clamp(a, 0, n_azi - 1);
    return bin_index(e, a);
  }

  Vec3 bin_center_local(int bin) const {
    int e = ele_of(bin), a = azi_of(bin);
    double z = 1.0 - 2.0 * (e + 0.5) / n_ele;
    double phi = kTwoPi * (a + 0.5) / n_azi;
    double s = std::sqrt(std::max(0.0, 1.0 - z * z));
    return {s * std::cos(phi), s * std::sin(phi), z};
  }

  Vec3 from_zphi(double z, double phi) const {
    double s = std::sqrt(std::max(0.0, 1.0 - z * z));
    return {s * std::cos(phi), s * std::sin(phi), z};
  }

  // Side of a bin relative to the local normal (+1 above, -1 below). Only
  // meaningful when n_ele is even, so bins never straddle z = 0.
  int side_of(int bin) const { return z_hi(ele_of(bin)) + z_lo(ele_of(bin)) > 0.0 ? +1 : -1; }
};

inline DirectionGrid build_direction_grid(int n_ele, int n_azi) {
  require(n_ele >= 1 && n_azi >= 1, "direction grid needs n_ele >= 1 and n_azi >= 1");
  return DirectionGrid{n_ele, n_azi};
}

inline int classify_direction(const DirectionGrid& grid, const PatchSet& ps, int patch,
                              const Vec3& world_dir) {
  return grid.bin_of_local(ps.to_local(patch, world_dir));
}

inline Vec3 bin_center_world(const DirectionGrid& grid, const PatchSet& ps, int patch, int bin) {
  return ps.to_world(patch, grid.bin_center_local(bin));
}

// ---------------------------------------------------------------------------
// Mesh file parsing. Line-oriented UTF-8 text, units in meters:
//   v x y z        vertex
//   f i j k [l]    1-based face (triangle, or parallelogram quad)
//   g name         starts a group applied to subsequent faces
//   #              comment
// ---------------------------------------------------------------------------

inline TriangleMesh parse_mesh(std::istream& in, const std::string& origin) {
  TriangleMesh mesh;
  std::map<std::string, int> group_ids;
  int current_group = -1;
  auto group_for = [&](const std::string& name) {
    auto it = group_ids.find(name);
    if (it != group_ids.end()) return it->second;
    int id = static_cast<int>(mesh.group_names.size());
    group_ids.emplace(name, id);
    mesh.group_names.push_back(name);
    return id;
  };

  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string tok;
    if (!(ls >> tok) || tok[0] == '#') continue;
    if (tok == "v") {
      Vec3 v;
      if (!(ls >> v.x >> v.y >> v.z))
        fail(cat(origin, ":", lineno, ": malformed vertex line"));
      mesh.vertices.push_back(v);
    } else if (tok == "f") {
      std::vector<int> idx;
      int i;
      while (ls >> i) idx.push_back(i);
      if (idx.size() != 3 && idx.size() != 4)
        fail(cat(origin, ":", lineno, ": face needs 3 or 4 indices"));
      for (int& k : idx) {
        if (k < 1 || k > static_cast<int>(mesh.vertices.size()))
          fail(cat(origin, ":", lineno, ": face index ", k, " out of range (",
                   mesh.vertices.size(), " vertices)"));
        k -= 1;
      }
      if (current_group < 0) current_group = group_for("default");
      if (idx.size() == 3) {
        mesh.faces.push_back({idx[0], idx[1], idx[2]});
        mesh.face_group.push_back(current_group);
      } else {
        mesh.quads.push_back({idx[0], idx[1], idx[2], idx[3]});
        mesh.quad_group.push_back(current_group);
      }
    } else if (tok == "g") {
      std::string name;
      if (!(ls >> name)) fail(cat(origin, ":", lineno, ": group line needs a name"));
      current_group = group_for(name);
    } else {
      fail(cat(origin, ":", lineno, ": unknown directive '", tok, "'"));
    }
  }

  // Validate primitives: no degenerate faces, quads must be parallelograms.
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const auto& t = mesh.faces[f];
    double a = 0.5 * norm(cross(mesh.vertices[t[1]] - mesh.vertices[t[0]],
                                mesh.vertices[t[2]] - mesh.vertices[t[0]]));
    if (!(a > 1e-14)) fail(cat(origin, ": degenerate face ", f, " (area ", a, ")"));
  }
  for (std::size_t q = 0; q < mesh.quads.size(); ++q) {
    const auto& v = mesh.quads[q];
    Vec3 d = (mesh.vertices[v[0]] + mesh.vertices[v[2]]) - (mesh.vertices[v[1]] + mesh.vertices[v[3]]);
    double scale = norm(mesh.vertices[v[2]] - mesh.vertices[v[0]]);
    if (norm(d) > 1e-9 * std::max(1.0, scale))
      fail(cat(origin, ": quad face ", q, " is not a parallelogram"));
    double a = norm(cross(mesh.vertices[v[1]] - mesh.vertices[v[0]],
                          mesh.vertices[v[3]] - mesh.vertices[v[0]]));
    if (!(a > 1e-14)) fail(cat(origin, ": degenerate quad ", q));
  }
  if (mesh.group_names.empty()) mesh.group_names.push_back("default");
  return mesh;
}

inline TriangleMesh load_mesh(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(cat("cannot open mesh file: ", path));
  return parse_mesh(in, path);
}

// ---------------------------------------------------------------------------
// Subdivision
// ---------------------------------------------------------------------------

namespace detail {

inline void emit_patch(PatchSet& out, const Vec3& a, const Vec3& b, const Vec3& c,
                       const Vec3& normal, const Vec3& tu, const Vec3& tv, int group) {
  Patch p;
  p.v0 = a;
  p.v1 = b;
  p.v2 = c;
  p.normal = normal;
  p.tan_u = tu;
  p.tan_v = tv;
  p.area = 0.5 * norm(cross(b - a, c - a));
  p.group = group;
  out.patches.push_back(p);
}

inline void split_triangle(PatchSet& out, const Vec3& a, const Vec3& b, const Vec3& c,
                           double max_edge, const Vec3& n, const Vec3& tu, const Vec3& tv,
                           int group, int depth) {
  double longest = std::max({norm(b - a), norm(c - b), norm(a - c)});
  if (longest <= max_edge || depth >= 12) {
    emit_patch(out, a, b, c, n, tu, tv, group);
    return;
  }
  Vec3 ab = (a + b) / 2.0, bc = (b + c) / 2.0, ca = (c + a) / 2.0;
  split_triangle(out, a, ab, ca, max_edge, n, tu, tv, group, depth + 1);
  split_triangle(out, ab, b, bc, max_edge, n, tu, tv, group, depth + 1);
  split_triangle(out, ca, bc, c, max_edge, n, tu, tv, group, depth + 1);
  split_triangle(out, ab, bc, ca, max_edge, n, tu, tv, group, depth + 1);
}

}  // namespace detail

inline PatchSet subdivide(const TriangleMesh& mesh, double max_edge) {
  require(max_edge > 0.0, "max_edge must be positive");
  PatchSet out;
  out.group_names = mesh.group_names;
  out.n_groups = static_cast<int>(mesh.group_names.size());

  for (std::size_t q = 0; q < mesh.quads.size(); ++q) {
    const auto& v = mesh.quads[q];
    Vec3 p0 = mesh.vertices[v[0]];
    Vec3 e1 = mesh.vertices[v[1]] - p0;
    Vec3 e2 = mesh.vertices[v[3]] - p0;
    Vec3 n = normalized(cross(e1, e2));
    Vec3 tu = normalized(e1);
    Vec3 tv = cross(n, tu);
    int group = mesh.quad_group[q];
    int n1 = std::max(1, static_cast<int>(std::ceil(norm(e1) / max_edge - 1e-12)));
    int n2 = std::max(1, static_cast<int>(std::ceil(norm(e2) / max_edge - 1e-12)));
    for (int i = 0; i < n1; ++i) {
      for (int j = 0; j < n2; ++j) {
        Vec3 c00 = p0 + e1 * (double(i) / n1) + e2 * (double(j) / n2);
        Vec3 c10 = p0 + e1 * (double(i + 1) / n1) + e2 * (double(j) / n2);
        Vec3 c11 = p0 + e1 * (double(i + 1) / n1) + e2 * (double(j + 1) / n2);
        Vec3 c01 = p0 + e1 * (double(i) / n1) + e2 * (double(j + 1) / n2);
        Vec3 ctr = (c00 + c10 + c11 + c01) / 4.0;
        // Both diagonals meet at the cell center: four triangles per cell.
        detail::emit_patch(out, c00, c10, ctr, n, tu, tv, group);
        detail::emit_patch(out, c10, c11, ctr, n, tu, tv, group);
        detail::emit_patch(out, c11, c01, ctr, n, tu, tv, group);
        detail::emit_patch(out, c01, c00, ctr, n, tu, tv, group);
      }
    }
  }

  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const auto& t = mesh.faces[f];
    Vec3 a = mesh.vertices[t[0]], b = mesh.vertices[t[1]], c = mesh.vertices[t[2]];
    Vec3 e1 = b - a, e2 = c - a;
    Vec3 n = normalized(cross(e1, e2));
    Vec3 tu = normalized(e1);
    Vec3 tv = cross(n, tu);
    detail::split_triangle(out, a, b, c, max_edge, n, tu, tv, mesh.face_group[f], 0);
  }

  require(!out.patches.empty(), "subdivision produced no patches");
  out.bbox_min = out.bbox_max = out.patches[0].v0;
  for (const auto& p : out.patches) {
    for (const Vec3& v : {p.v0, p.v1, p.v2}) {
      out.bbox_min.x = std::min(out.bbox_min.x, v.x);
      out.bbox_min.y = std::min(out.bbox_min.y, v.y);
      out.bbox_min.z = std::min(out.bbox_min.z, v.z);
      out.bbox_max.x = std::max(out.bbox_max.x, v.x);
      out.bbox_max.y = std::max(out.bbox_max.y, v.y);
      out.bbox_max.z = std::max(out.bbox_max.z, v.z);
    }
  }
  return out;
}

}  // namespace dart
