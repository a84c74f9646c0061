#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"

using namespace dart;
using dart::testing::box_mesh;

TEST_CASE("ray from cube center hits the +x wall at half the width", "[raytrace]") {
  PatchSet ps = subdivide(box_mesh(1, 1, 1), 1.0);
  DirectionGrid g = build_direction_grid(2, 2);
  auto hit = intersect_first(Ray{{0.5, 0.5, 0.5}, {1, 0, 0}}, ps, g);
  REQUIRE(hit.has_value());
  CHECK(hit->distance == Catch::Approx(0.5).margin(1e-12));
  CHECK(ps.patches[hit->patch].normal.x == Catch::Approx(-1.0));
  // incident bin holds the back-toward-origin direction
  Vec3 local = ps.to_local(hit->patch, Vec3{-1, 0, 0});
  CHECK(hit->incident_bin == g.bin_of_local(local));
}

TEST_CASE("ray pointing away from a closed cube escapes", "[raytrace]") {
  PatchSet ps = subdivide(box_mesh(1, 1, 1), 1.0);
  DirectionGrid g = build_direction_grid(2, 2);
  CHECK_FALSE(intersect_first(Ray{{2.0, 0.5, 0.5}, {1, 0, 0}}, ps, g).has_value());
}

TEST_CASE("grazing a shared edge yields exactly one hit, lower index", "[raytrace]") {
  std::istringstream in(
      "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\n"
      "f 1 2 3\nf 2 4 3\n");
  PatchSet ps = subdivide(parse_mesh(in, "<pair>"), 10.0);
  REQUIRE(ps.size() == 2);
  DirectionGrid g = build_direction_grid(2, 2);
  // straight down onto the midpoint of the shared diagonal edge
  auto hit = intersect_first(Ray{{0.5, 0.5, 1.0}, {0, 0, -1}}, ps, g);
  REQUIRE(hit.has_value());
  CHECK(hit->patch == 0);
  CHECK(hit->distance == Catch::Approx(1.0));
}

TEST_CASE("visibility in an empty box interior", "[raytrace]") {
  PatchSet ps = subdivide(box_mesh(2, 2, 2), 2.0);
  CHECK(visible({0.3, 0.3, 0.3}, {1.7, 1.6, 1.5}, ps));
}

TEST_CASE("a full-height dividing wall blocks visibility", "[raytrace]") {
  // wall x=1 spanning the whole box cross-section
  std::istringstream in(
      "v 1 0 0\nv 1 2 0\nv 1 2 2\nv 1 0 2\n"
      "f 1 2 3 4\n");
  PatchSet ps = subdivide(parse_mesh(in, "<wall>"), 5.0);
  CHECK_FALSE(visible({0.5, 1.0, 1.0}, {1.5, 1.0, 1.0}, ps));
  CHECK(visible({0.5, 1.0, 1.0}, {0.5, 1.5, 1.0}, ps));
}

TEST_CASE("endpoint on a wall surface does not occlude", "[raytrace]") {
  std::istringstream in(
      "v 1 0 0\nv 1 2 0\nv 1 2 2\nv 1 0 2\n"
      "f 1 2 3 4\n");
  PatchSet ps = subdivide(parse_mesh(in, "<wall>"), 5.0);
  CHECK(visible({1.0, 1.0, 1.0}, {0.5, 1.0, 1.0}, ps));
}

TEST_CASE("single patch point lands inside the triangle", "[raytrace]") {
  Patch p = subdivide(dart::testing::facing_triangles_mesh(), 10.0).patches[0];
  auto pts = sample_patch_points(p, 1, 7, 0);
  REQUIRE(pts.size() == 1);
  Vec3 e1 = p.v1 - p.v0, e2 = p.v2 - p.v0;
  Vec3 d = pts[0] - p.v0;
  // 2D barycentric via the local frame
  double u = dot(d, e1) / dot(e1, e1);
  double v = dot(d, e2) / dot(e2, e2);
  CHECK(u >= 0.0);
  CHECK(v >= 0.0);
  CHECK(u + v <= 1.0 + 1e-12);
}

TEST_CASE("100 patch points satisfy barycentric bounds", "[raytrace]") {
  Patch p = subdivide(dart::testing::facing_triangles_mesh(), 10.0).patches[0];
  auto pts = sample_patch_points(p, 100, 11, 0);
  REQUIRE(pts.size() == 100);
  Vec3 e1 = p.v1 - p.v0, e2 = p.v2 - p.v0;
  for (const auto& pt : pts) {
    Vec3 d = pt - p.v0;
    double u = dot(d, e1) / dot(e1, e1);
    double v = dot(d, e2) / dot(e2, e2);
    CHECK(u >= -1e-12);
    CHECK(v >= -1e-12);
    CHECK(u + v <= 1.0 + 1e-12);
  }
}

TEST_CASE("patch point cloud mean approaches the centroid", "[raytrace]") {
  Patch p = subdivide(dart::testing::facing_triangles_mesh(), 10.0).patches[0];
  auto pts = sample_patch_points(p, 10000, 3, 0);
  Vec3 mean{};
  for (const auto& pt : pts) mean += pt;
  mean = mean / static_cast<double>(pts.size());
  Vec3 centroid = (p.v0 + p.v1 + p.v2) / 3.0;
  double scale = std::sqrt(p.area);
  CHECK(norm(mean - centroid) / scale < 0.02);
}

TEST_CASE("stratified directions: one sample per bin when M = N_dir", "[raytrace]") {
  DirectionGrid g = build_direction_grid(4, 4);
  auto dirs = sample_directions_stratified(g, g.n_dir(), 5);
  REQUIRE(dirs.size() == 16);
  std::vector<int> count(16, 0);
  for (const auto& d : dirs) count[d.bin]++;
  for (int c : count) CHECK(c == 1);
}

TEST_CASE("stratified directions: per-bin counts differ by at most one", "[raytrace]") {
  DirectionGrid g = build_direction_grid(12, 12);
  auto dirs = sample_directions_stratified(g, 4096, 5);
  std::vector<int> count(g.n_dir(), 0);
  for (const auto& d : dirs) count[d.bin]++;
  auto [mn, mx] = std::minmax_element(count.begin(), count.end());
  CHECK(*mx - *mn <= 1);
}

TEST_CASE("stratified directions classify back into their bin", "[raytrace]") {
  DirectionGrid g = build_direction_grid(6, 8);
  auto dirs = sample_directions_stratified(g, 960, 17);
  for (const auto& d : dirs) {
    CHECK(g.bin_of_local(d.dir) == d.bin);
    CHECK(norm(d.dir) == Catch::Approx(1.0).margin(1e-12));
  }
}

TEST_CASE("stratified direction cloud is balanced on the sphere", "[raytrace]") {
  DirectionGrid g = build_direction_grid(8, 8);
  auto dirs = sample_directions_stratified(g, 100000, 23);
  Vec3 mean{};
  for (const auto& d : dirs) mean += d.dir;
  mean = mean / static_cast<double>(dirs.size());
  CHECK(norm(mean) < 0.01);
}

TEST_CASE("intersect_first and visible are consistent", "[raytrace]") {
  PatchSet ps = subdivide(box_mesh(2, 2, 2), 1.0);
  DirectionGrid g = build_direction_grid(2, 2);
  Prng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    Vec3 a{0.1 + 1.8 * rng.u01(), 0.1 + 1.8 * rng.u01(), 0.1 + 1.8 * rng.u01()};
    Vec3 b{0.1 + 1.8 * rng.u01(), 0.1 + 1.8 * rng.u01(), 0.1 + 1.8 * rng.u01()};
    double len = norm(b - a);
    if (len < 1e-6) continue;
    auto hit = intersect_first(Ray{a, (b - a) / len}, ps, g);
    bool vis = visible(a, b, ps);
    bool blocked = hit && hit->distance < len - kRayEpsilon;
    CHECK(vis == !blocked);
  }
}

TEST_CASE("every interior ray hits a closed scene", "[raytrace]") {
  PatchSet ps = subdivide(box_mesh(1.5, 1, 2), 1.0);
  DirectionGrid g = build_direction_grid(4, 4);
  auto dirs = sample_directions_stratified(g, 500, 31);
  for (const auto& d : dirs)
    CHECK(intersect_first(Ray{{0.7, 0.5, 1.0}, d.dir}, ps, g).has_value());
}
