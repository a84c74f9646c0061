#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"

using namespace dart;
using dart::testing::box_mesh;
using dart::testing::box_mesh_text;

namespace {

// Two coupled rooms built from published-style floor-plan dimensions:
// RoomA 4x3x2.5, RoomB 3x3x2.5, divider at x=4 with a 1x2 doorway.
// Wall areas by hand: 12+12+7.5+10+10 (A) + 9+9+7.5+7.5+7.5 (B) + 5.5 = 97.5.
const char* kTwoRoomMesh = R"(
v 0 0 0
v 4 0 0
v 4 3 0
v 0 3 0
v 0 0 2.5
v 4 0 2.5
v 4 3 2.5
v 0 3 2.5
v 7 0 0
v 7 3 0
v 7 0 2.5
v 7 3 2.5
g floorA
f 1 2 3 4
g ceilingA
f 5 8 7 6
g westA
f 1 4 8 5
g northA
f 4 3 7 8
g southA
f 1 5 6 2
g floorB
f 2 9 10 3
g ceilingB
f 6 7 12 11
g eastB
f 9 11 12 10
g northB
f 3 10 12 7
g southB
f 2 6 11 9
v 4 1 0
v 4 2 0
v 4 1 2
v 4 2 2
v 4 1 2.5
v 4 2 2.5
g divider
f 2 13 17 6
f 14 3 7 18
f 15 16 18 17
)";

}  // namespace

TEST_CASE("cube file with 12 triangle faces parses to one group", "[geometry]") {
  std::string text =
      "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\n"
      "v 0 0 1\nv 1 0 1\nv 1 1 1\nv 0 1 1\n"
      "f 1 2 3\nf 1 3 4\n"
      "f 5 7 6\nf 5 8 7\n"
      "f 1 4 8\nf 1 8 5\n"
      "f 2 6 7\nf 2 7 3\n"
      "f 1 5 6\nf 1 6 2\n"
      "f 4 3 7\nf 4 7 8\n";
  std::istringstream in(text);
  TriangleMesh mesh = parse_mesh(in, "<cube>");
  CHECK(mesh.faces.size() == 12);
  CHECK(mesh.quads.empty());
  CHECK(mesh.group_names.size() == 1);
  CHECK(mesh.total_area() == Catch::Approx(6.0));
}

TEST_CASE("face index out of range is rejected with the offending index", "[geometry]") {
  std::istringstream in("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 99\n");
  try {
    parse_mesh(in, "<bad>");
    FAIL("expected parse error");
  } catch (const std::runtime_error& e) {
    std::string msg = e.what();
    CHECK(msg.find("99") != std::string::npos);
    CHECK(msg.find(":4") != std::string::npos);  // line number
  }
}

TEST_CASE("degenerate face is rejected", "[geometry]") {
  std::istringstream in("v 0 0 0\nv 1 0 0\nv 2 0 0\nf 1 2 3\n");
  CHECK_THROWS(parse_mesh(in, "<degen>"));
}

TEST_CASE("non-parallelogram quad is rejected", "[geometry]") {
  std::istringstream in("v 0 0 0\nv 1 0 0\nv 1 1 0\nv -0.5 0.7 0\nf 1 2 3 4\n");
  CHECK_THROWS(parse_mesh(in, "<trap>"));
}

TEST_CASE("two-room floor-plan mesh: per-wall groups and hand-checked area", "[geometry]") {
  std::istringstream in(kTwoRoomMesh);
  TriangleMesh mesh = parse_mesh(in, "<tworoom>");
  CHECK(mesh.group_names.size() == 11);
  CHECK(mesh.total_area() == Catch::Approx(97.5).epsilon(1e-9));
  PatchSet ps = subdivide(mesh, 1.0);
  CHECK(ps.total_area() == Catch::Approx(97.5).epsilon(1e-6));
  for (const auto& p : ps.patches) {
    CHECK(p.area > 0.0);
    CHECK(norm(p.normal) == Catch::Approx(1.0).margin(1e-9));
    CHECK(p.group >= 0);
    CHECK(p.group < 11);
  }
}

TEST_CASE("unit square quad at max_edge 1 gives four triangles", "[geometry]") {
  std::istringstream in("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n");
  TriangleMesh mesh = parse_mesh(in, "<sq>");
  PatchSet ps = subdivide(mesh, 1.0);
  CHECK(ps.size() == 4);
  CHECK(ps.total_area() == Catch::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("2x1 rectangle at max_edge 1 gives two cells, eight triangles", "[geometry]") {
  std::istringstream in("v 0 0 0\nv 2 0 0\nv 2 1 0\nv 0 1 0\nf 1 2 3 4\n");
  TriangleMesh mesh = parse_mesh(in, "<rect>");
  PatchSet ps = subdivide(mesh, 1.0);
  CHECK(ps.size() == 8);
  CHECK(ps.total_area() == Catch::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("unit cube at max_edge 0.5 gives 96 triangles with conserved area", "[geometry]") {
  TriangleMesh mesh = box_mesh(1, 1, 1);
  PatchSet ps = subdivide(mesh, 0.5);
  CHECK(ps.size() == 96);
  CHECK(ps.total_area() == Catch::Approx(6.0).epsilon(1e-6));
}

TEST_CASE("triangle primitives subdivide by midpoint splits", "[geometry]") {
  std::istringstream in("v 0 0 0\nv 2 0 0\nv 0 2 0\nf 1 2 3\n");
  TriangleMesh mesh = parse_mesh(in, "<tri>");
  PatchSet one = subdivide(mesh, 3.0);
  CHECK(one.size() == 1);
  std::istringstream in2("v 0 0 0\nv 2 0 0\nv 0 2 0\nf 1 2 3\n");
  PatchSet four = subdivide(parse_mesh(in2, "<tri>"), 1.5);
  CHECK(four.size() == 4);
  CHECK(four.total_area() == Catch::Approx(2.0).epsilon(1e-12));
  // children share the parent frame
  for (const auto& p : four.patches) {
    CHECK(dot(p.normal, Vec3{0, 0, 1}) == Catch::Approx(1.0));
    CHECK(dot(p.tan_u, four.patches[0].tan_u) == Catch::Approx(1.0));
  }
}

TEST_CASE("direction grid: 12x12 gives 144 equal bins", "[geometry]") {
  DirectionGrid g = build_direction_grid(12, 12);
  CHECK(g.n_dir() == 144);
  CHECK(g.bin_solid_angle() == Catch::Approx(kFourPi / 144.0));
}

TEST_CASE("direction grid: single bin covers the sphere", "[geometry]") {
  DirectionGrid g = build_direction_grid(1, 1);
  CHECK(g.n_dir() == 1);
  CHECK(g.bin_solid_angle() == Catch::Approx(kFourPi));
  CHECK(g.bin_of_local(Vec3{0, 0, 1}) == 0);
  CHECK(g.bin_of_local(Vec3{0, 0, -1}) == 0);
}

TEST_CASE("direction grid: 8x8 solid angles sum to 4pi by quadrature", "[geometry]") {
  DirectionGrid g = build_direction_grid(8, 8);
  // z-slabs are uniform and azimuth sectors uniform, so the quadrature is a
  // direct product sum.
  double total = 0.0;
  for (int e = 0; e < g.n_ele; ++e)
    for (int a = 0; a < g.n_azi; ++a)
      total += (g.z_hi(e) - g.z_lo(e)) * (g.phi_hi(a) - g.phi_lo(a));
  CHECK(total == Catch::Approx(kFourPi).margin(1e-9));
  // equal-area: every bin identical
  double ref = (g.z_hi(0) - g.z_lo(0)) * (g.phi_hi(0) - g.phi_lo(0));
  for (int e = 0; e < g.n_ele; ++e) {
    double w = (g.z_hi(e) - g.z_lo(e)) * (g.phi_hi(0) - g.phi_lo(0));
    CHECK(w / ref == Catch::Approx(1.0).margin(1e-12));
  }
}

TEST_CASE("bin centers classify back to their own bin", "[geometry]") {
  for (auto [ne, na] : {std::pair{4, 4}, {12, 12}, {3, 5}}) {
    DirectionGrid g = build_direction_grid(ne, na);
    for (int b = 0; b < g.n_dir(); ++b) CHECK(g.bin_of_local(g.bin_center_local(b)) == b);
  }
}

TEST_CASE("classification in a rotated patch frame round-trips", "[geometry]") {
  TriangleMesh mesh = box_mesh(2, 3, 2.5);
  PatchSet ps = subdivide(mesh, 5.0);
  DirectionGrid g = build_direction_grid(4, 4);
  for (int i = 0; i < ps.size(); ++i) {
    for (int b = 0; b < g.n_dir(); ++b) {
      Vec3 world = bin_center_world(g, ps, i, b);
      CHECK(classify_direction(g, ps, i, world) == b);
    }
  }
}

TEST_CASE("boundary directions use half-open intervals", "[geometry]") {
  DirectionGrid g = build_direction_grid(4, 4);
  // z exactly on the first interior boundary belongs to the bin that starts
  // there; phi = 0 belongs to azimuth bin 0.
  double zb = 1.0 - 2.0 / 4.0;  // boundary between elevation rows 0 and 1
  Vec3 d = g.from_zphi(zb, 0.0);
  CHECK(g.ele_of(g.bin_of_local(d)) == 1);
  CHECK(g.azi_of(g.bin_of_local(d)) == 0);
}
