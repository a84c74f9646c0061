// Ray-scene intersection and the Monte Carlo sampling primitives shared by
// the precompute and transport stages. Intersection is brute force over all
// patches; scenes here are small simplified meshes.
#pragma once

#include <optional>
#include <vector>

#include "dart/geometry.hpp"
#include "dart/rng.hpp"

namespace dart {

struct Ray {
  Vec3 origin;
  Vec3 dir;  // unit
};

struct Hit {
  int patch = -1;
  Vec3 point;
  double distance = 0.0;
  int incident_bin = -1;  // bin of -dir in the hit patch's frame
};

namespace detail {

// Moller-Trumbore, two-sided (patches scatter and transmit on both sides).
inline bool ray_triangle(const Ray& r, const Patch& p, double& t_out) {
  Vec3 e1 = p.v1 - p.v0;
  Vec3 e2 = p.v2 - p.v0;
  Vec3 h = cross(r.dir, e2);
  double det = dot(e1, h);
  if (std::abs(det) < 1e-14) return false;  // parallel / in-plane
  double inv = 1.0 / det;
  Vec3 s = r.origin - p.v0;
  double u = dot(s, h) * inv;
  if (u < 0.0 || u > 1.0) return false;
  Vec3 q = cross(s, e1);
  double v = dot(r.dir, q) * inv;
  if (v < 0.0 || u + v > 1.0) return false;
  double t = dot(e2, q) * inv;
  if (t <= kRayEpsilon) return false;
  t_out = t;
  return true;
}

}  // namespace detail

// Nearest hit along the ray, or nothing if it escapes. Equal distances break
// toward the lower patch index (iteration order + strict improvement).
inline std::optional<Hit> intersect_first(const Ray& ray, const PatchSet& ps,
                                          const DirectionGrid& grid) {
  int best = -1;
  double best_t = 0.0;
  for (int i = 0; i < ps.size(); ++i) {
    double t;
    if (detail::ray_triangle(ray, ps.patches[i], t) && (best < 0 || t < best_t)) {
      best = i;
      best_t = t;
    }
  }
  if (best < 0) return std::nullopt;
  Hit h;
  h.patch = best;
  h.distance = best_t;
  h.point = ray.origin + ray.dir * best_t;
  h.incident_bin = classify_direction(grid, ps, best, -ray.dir);
  return h;
}

// True iff no patch intersects the open segment (a, b). Endpoints are
// excluded by the ray epsilon on both sides.
inline bool visible(const Vec3& a, const Vec3& b, const PatchSet& ps) {
  Vec3 d = b - a;
  double len = norm(d);
  require(len > 0.0, "visible() needs distinct endpoints");
  Ray r{a, d / len};
  for (int i = 0; i < ps.size(); ++i) {
    double t;
    if (detail::ray_triangle(r, ps.patches[i], t) && t < len - kRayEpsilon) return false;
  }
  return true;
}

// K jittered grid points on the triangle. The grid covers the enclosing
// parallelogram; points landing outside the triangle are flipped back inside
// (area preserving), so the result is uniform over the triangle.
inline std::vector<Vec3> sample_patch_points(const Patch& p, int K, std::uint64_t seed,
                                             int patch_index) {
  require(K >= 1, "sample_patch_points needs K >= 1");
  int g1 = static_cast<int>(std::floor(std::sqrt(static_cast<double>(K)) + 0.5));
  while (g1 > 1 && K % g1 != 0) --g1;
  int g2 = K / g1;
  Vec3 e1 = p.v1 - p.v0;
  Vec3 e2 = p.v2 - p.v0;
  std::vector<Vec3> pts;
  pts.reserve(K);
  for (int i = 0; i < g1; ++i) {
    for (int j = 0; j < g2; ++j) {
      Prng rng = Prng::keyed(seed, static_cast<std::uint64_t>(patch_index),
                             static_cast<std::uint64_t>(i * g2 + j));
      double u = (i + rng.u01()) / g1;
      double v = (j + rng.u01()) / g2;
      if (u + v > 1.0) {
        u = 1.0 - u;
        v = 1.0 - v;
      }
      pts.push_back(p.v0 + e1 * u + e2 * v);
    }
  }
  return pts;
}

struct DirectionSample {
  Vec3 dir;  // local frame
  int bin = 0;
};

// M directions stratified over the grid bins: per-bin counts differ by at
// most one (low bin indices take the remainder), each sample uniform within
// its bin's (z, phi) rectangle.
inline std::vector<DirectionSample> sample_directions_stratified(const DirectionGrid& grid, int M,
                                                                 std::uint64_t seed,
                                                                 std::uint64_t stream = 0) {
  require(M >= 1, "sample_directions_stratified needs M >= 1");
  int nd = grid.n_dir();
  std::vector<DirectionSample> out;
  out.reserve(M);
  int base = M / nd;
  int rem = M % nd;
  for (int b = 0; b < nd; ++b) {
    int count = base + (b < rem ? 1 : 0);
    int e = grid.ele_of(b), a = grid.azi_of(b);
    Prng rng = Prng::keyed(seed, stream, static_cast<std::uint64_t>(b));
    for (int s = 0; s < count; ++s) {
      double z = grid.z_hi(e) + (grid.z_lo(e) - grid.z_hi(e)) * rng.u01();
      double phi = grid.phi_lo(a) + (grid.phi_hi(a) - grid.phi_lo(a)) * rng.u01();
      out.push_back({grid.from_zphi(z, phi), b});
    }
  }
  return out;
}

}  // namespace dart
