#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"

using namespace dart;
using dart::testing::box_mesh;
using dart::testing::make_scene;
using dart::testing::rel_l2;

namespace {

PrecomputeConfig small_pc() {
  PrecomputeConfig pc;
  pc.points_per_patch = 8;
  pc.dirs_per_point = 1024;
  pc.gi_samples = 20000;
  return pc;
}

}  // namespace

TEST_CASE("isotropic injection in a closed cube aggregates to unit power", "[transport]") {
  auto s = make_scene(box_mesh(2, 2, 2), 1.0, 4, 4, small_pc());
  SourceConfig src;
  src.pos = {1.0, 1.0, 1.0};
  src.n_ray = 10000;
  InjectionData inj = measure_injection(src, s.patches, s.grid, s.ops, 16, 8.0, 77);
  // isotropic kappa = 1: total power = hit fraction
  std::vector<double> kappa(16, 1.0);
  double total = 0.0;
  for (std::uint32_t idx = 0; idx < s.ops.n_rad(); ++idx)
    if (inj.support[idx]) total += inj.power(idx, kappa);
  CHECK(total == Catch::Approx(1.0).margin(0.02));
  CHECK(inj.hit_fraction == Catch::Approx(1.0).margin(0.02));
}

TEST_CASE("fully absorbing materials give zero initial radiance", "[transport]") {
  auto s = make_scene(box_mesh(1, 1, 1), 1.0, 2, 2, small_pc());
  MaterialModel m = make_material_model(Variant::NP, s.patches, 4, ComponentMask::parse("all"));
  for (auto& v : m.alpha_logit) v = -80.0;
  SourceConfig src;
  src.pos = {0.5, 0.5, 0.5};
  src.n_ray = 2000;
  ReceiverConfig rcv;
  rcv.pos = {0.4, 0.6, 0.5};
  rcv.n_ray = 2000;
  InjectionData inj = measure_injection(src, s.patches, s.grid, s.ops, m.n_kappa(), m.lambda, 5);
  DetectionData det = measure_detection(rcv, s.patches, s.grid, s.ops, 6);
  auto setup = make_solve_setup(s.inputs(), inj, det, true);
  SparseOperator mat = realize_global(m, s.comps, setup.map);
  auto inc = incident_radiance(s.inputs(), inj, setup.lists, m);
  RealMatrix l0 = initial_radiance(setup.map.n_red, setup.lists, mat, inc, 64);
  // alpha = sigmoid(-80) is denormal-tiny rather than an exact zero
  for (double v : l0.a) CHECK(v <= 1e-30);
}

TEST_CASE("scaling the room doubles areas and halves incident radiance", "[transport]") {
  double k = std::sqrt(2.0);
  auto s1 = make_scene(box_mesh(1, 1, 1), 2.0, 2, 2, small_pc());
  auto s2 = make_scene(box_mesh(k, k, k), 2.0, 2, 2, small_pc());
  MaterialModel m = make_material_model(Variant::NP, s1.patches, 4, ComponentMask::parse("all"));
  SourceConfig src1, src2;
  src1.pos = {0.5, 0.5, 0.5};
  src2.pos = {0.5 * k, 0.5 * k, 0.5 * k};
  src1.n_ray = src2.n_ray = 4000;
  InjectionData i1 = measure_injection(src1, s1.patches, s1.grid, s1.ops, m.n_kappa(), m.lambda, 9);
  InjectionData i2 = measure_injection(src2, s2.patches, s2.grid, s2.ops, m.n_kappa(), m.lambda, 9);
  // identical ray set and hit pattern; only the integrated geometry scales
  ReductionMap id1 = ReductionMap::identity(s1.ops.n_rad());
  PairLists l1 = make_pair_lists(id1, i1, DetectionData{std::vector<std::uint8_t>(s1.ops.n_rad(), 0),
                                                        {}, {}, {}, 0.0, 1});
  PairLists l2 = make_pair_lists(id1, i2, DetectionData{std::vector<std::uint8_t>(s2.ops.n_rad(), 0),
                                                        {}, {}, {}, 0.0, 1});
  REQUIRE(l1.inc_idx.size() == l2.inc_idx.size());
  auto inc1 = incident_radiance(s1.inputs(), i1, l1, m);
  auto inc2 = incident_radiance(s2.inputs(), i2, l2, m);
  for (std::size_t t = 0; t < inc1.size(); ++t)
    CHECK(inc2[t] == Catch::Approx(0.5 * inc1[t]).epsilon(1e-9));
}

TEST_CASE("source and receiver positions must be strictly interior", "[transport]") {
  auto s = make_scene(box_mesh(1, 1, 1), 1.0, 2, 2, small_pc());
  SourceConfig src;
  src.pos = {1.5, 0.5, 0.5};  // outside the room
  src.n_ray = 100;
  CHECK_THROWS(measure_injection(src, s.patches, s.grid, s.ops, 8, 8.0, 1));
  src.pos = {1.0, 0.5, 0.5};  // exactly on a wall
  CHECK_THROWS(measure_injection(src, s.patches, s.grid, s.ops, 8, 8.0, 1));
  ReceiverConfig rcv;
  rcv.pos = {0.5, -0.2, 0.5};
  rcv.n_ray = 100;
  CHECK_THROWS(measure_detection(rcv, s.patches, s.grid, s.ops, 2));
}

TEST_CASE("detection of a zero radiance field is silent", "[transport]") {
  PairLists lists;
  lists.det_idx = {0};
  lists.det_w = {2.0};
  lists.det_delay = {3.0};
  lists.det_weight = {1.0};
  RealMatrix radiance(1, 32);
  auto el = detect_time(lists, radiance);
  for (double v : el) CHECK(v == 0.0);
}

TEST_CASE("detection shifts and scales a single radiance impulse", "[transport]") {
  PairLists lists;
  lists.det_idx = {0};
  lists.det_w = {0.75};
  lists.det_delay = {3.0};
  lists.det_weight = {frac_delay_weight(3.0)};
  RealMatrix radiance(1, 32);
  radiance.at(0, 5) = 1.0;
  auto el = detect_time(lists, radiance);
  for (int n = 0; n < 32; ++n) CHECK(el[n] == Catch::Approx(n == 8 ? 0.75 : 0.0));
}

TEST_CASE("detection weights of a closed cube sum to 4 pi", "[transport]") {
  auto s = make_scene(box_mesh(2, 2, 2), 1.0, 4, 4, small_pc());
  ReceiverConfig rcv;
  rcv.pos = {1.0, 1.1, 0.9};
  rcv.n_ray = 10000;
  DetectionData det = measure_detection(rcv, s.patches, s.grid, s.ops, 13);
  CHECK(det.weight_sum == Catch::Approx(kFourPi).epsilon(0.02));
}

TEST_CASE("direct arrival energy and delay at one meter", "[transport]") {
  auto ps = subdivide(box_mesh(4, 4, 4), 4.0);
  SourceConfig src;
  src.pos = {1.0, 2.0, 2.0};
  ReceiverConfig rcv;
  rcv.pos = {2.0, 2.0, 2.0};
  DirectArrival da = direct_arrival(src, rcv, ps);
  REQUIRE(da.visible);
  std::vector<double> kappa(8, 1.0);
  CHECK(da.value(kappa, 8.0) == Catch::Approx(1.0 / kFourPi));
  double delay = 1.0 / (kSpeedOfSound * kRadianceDt);
  CHECK(delay == Catch::Approx(2.915).margin(0.001));
  CHECK(da.n0 == 2);
  CHECK(da.w0 == Catch::Approx(std::ceil(delay) - delay));
}

TEST_CASE("direct arrival follows the inverse square law exactly", "[transport]") {
  auto ps = subdivide(box_mesh(10, 10, 10), 10.0);
  SourceConfig src;
  src.pos = {1.0, 5.0, 5.0};
  ReceiverConfig r1, r2;
  r1.pos = {2.0, 5.0, 5.0};
  r2.pos = {3.0, 5.0, 5.0};  // doubled distance
  std::vector<double> kappa(8, 1.0);
  DirectArrival d1 = direct_arrival(src, r1, ps);
  DirectArrival d2 = direct_arrival(src, r2, ps);
  CHECK(d2.value(kappa, 8.0) == d1.value(kappa, 8.0) / 4.0);
}

TEST_CASE("an occluding wall silences the direct arrival", "[transport]") {
  std::istringstream in(
      "v 1 0 0\nv 1 2 0\nv 1 2 2\nv 1 0 2\n"
      "v 0 0 0\nv 2 0 0\nv 2 2 0\nv 0 2 0\n"
      "v 0 0 2\nv 2 0 2\nv 2 2 2\nv 0 2 2\n"
      "f 1 2 3 4\n"
      "f 5 6 7 8\nf 9 12 11 10\n");
  auto ps = subdivide(parse_mesh(in, "<occ>"), 5.0);
  SourceConfig src;
  src.pos = {0.5, 1.0, 1.0};
  ReceiverConfig rcv;
  rcv.pos = {1.5, 1.0, 1.0};
  DirectArrival da = direct_arrival(src, rcv, ps);
  CHECK_FALSE(da.visible);
  std::vector<double> kappa(8, 1.0);
  CHECK(da.value(kappa, 8.0) == 0.0);
}

TEST_CASE("coincident source and receiver are rejected", "[transport]") {
  auto ps = subdivide(box_mesh(1, 1, 1), 1.0);
  SourceConfig src;
  src.pos = {0.5, 0.5, 0.5};
  ReceiverConfig rcv;
  rcv.pos = {0.5, 0.5, 0.5};
  CHECK_THROWS(direct_arrival(src, rcv, ps));
}

TEST_CASE("a fully absorbing room renders the direct arrival only", "[transport]") {
  auto s = make_scene(box_mesh(2, 2, 2), 1.0, 2, 2, small_pc());
  MaterialModel m = make_material_model(Variant::NP, s.patches, 4, ComponentMask::parse("all"));
  for (auto& v : m.alpha_logit) v = -80.0;
  m.log_gain = std::log(1.7);
  SourceConfig src;
  src.pos = {0.6, 1.0, 1.0};
  src.n_ray = 2000;
  ReceiverConfig rcv;
  rcv.pos = {1.4, 1.0, 1.0};
  rcv.n_ray = 2000;
  SolverConfig cfg;
  cfg.T = 64;
  cfg.n_order = 10;
  Echogram eg = render(s.inputs(), m, src, rcv, cfg, 21);
  DirectArrival da = direct_arrival(src, rcv, s.patches);
  std::vector<double> expect(64, 0.0);
  double v = da.value(m.kappa, m.lambda) * m.gain();
  expect[da.n0] += da.w0 * v;
  expect[da.n0 + 1] += (1.0 - da.w0) * v;
  for (int n = 0; n < 64; ++n) CHECK(eg.e[n] == Catch::Approx(expect[n]).margin(1e-15));
}

TEST_CASE("radiance reduction is lossless for the rendered echogram", "[transport]") {
  auto s = make_scene(box_mesh(1.5, 1.2, 1.0), 0.8, 4, 4, small_pc());
  MaterialModel m = make_material_model(Variant::P, s.patches, 16,
                                        ComponentMask::parse("reflection-only"));
  SourceConfig src;
  src.pos = {0.5, 0.6, 0.5};
  src.n_ray = 3000;
  ReceiverConfig rcv;
  rcv.pos = {1.0, 0.6, 0.5};
  rcv.n_ray = 3000;
  SolverConfig cfg;
  cfg.T = 128;
  cfg.n_order = 20;
  Echogram with = render(s.inputs(), m, src, rcv, cfg, 33, /*use_reduction=*/true);
  Echogram without = render(s.inputs(), m, src, rcv, cfg, 33, /*use_reduction=*/false);
  CHECK(rel_l2(with.e, without.e) <= 1e-12);
}

TEST_CASE("transmission components carry energy through an occluding wall", "[transport]") {
  // a single wall between source and receiver: the direct path is blocked,
  // so any detected energy must cross the wall via the material operator
  std::istringstream in(
      "v 1 -1 -1\nv 1 1 -1\nv 1 1 1\nv 1 -1 1\n"
      "v -2 -2 -2\nv 2 -2 -2\nv 2 2 -2\nv -2 2 -2\n"  // far floor keeps the bbox open
      "f 1 2 3 4\nf 5 6 7 8\n");
  auto s = make_scene(parse_mesh(in, "<wall>"), 5.0, 2, 2, small_pc());
  SourceConfig src;
  src.pos = {0.0, 0.0, 0.0};
  src.n_ray = 4000;
  ReceiverConfig rcv;
  rcv.pos = {1.9, 0.0, 0.0};
  rcv.n_ray = 4000;
  SolverConfig cfg;
  cfg.T = 64;
  cfg.n_order = 4;
  REQUIRE_FALSE(direct_arrival(src, rcv, s.patches).visible);

  auto render_with = [&](std::vector<int> comps) {
    MaterialModel m = make_material_model(Variant::P, s.patches, 4,
                                          ComponentMask{std::move(comps)});
    // quads subdivide in order: patches 0..3 are the wall, 4..7 the helper
    // floor, which is made absorbing so it cannot route energy around
    for (int p = 0; p < 4; ++p) m.alpha_logit[p] = 3.0;  // alpha ~ 0.95
    for (int p = 4; p < 8; ++p) m.alpha_logit[p] = -60.0;
    return render(s.inputs(), m, src, rcv, cfg, 7);
  };
  Echogram through = render_with({kSpecularTransmission, kDiffuseTransmission});
  Echogram blocked = render_with({kSpecularReflection, kDiffuseReflection});
  CHECK(through.energy() > 1e-4);
  CHECK(blocked.energy() < 1e-9 * through.energy());
}

TEST_CASE("render nonnegativity and determinism under a fixed seed", "[transport]") {
  auto s = make_scene(box_mesh(1, 1, 1), 1.0, 2, 2, small_pc());
  MaterialModel m = make_material_model(Variant::NP, s.patches, 4, ComponentMask::parse("all"));
  SourceConfig src;
  src.pos = {0.4, 0.5, 0.6};
  src.n_ray = 2000;
  ReceiverConfig rcv;
  rcv.pos = {0.6, 0.5, 0.4};
  rcv.n_ray = 2000;
  SolverConfig cfg;
  cfg.T = 64;
  cfg.n_order = 15;
  Echogram a = render(s.inputs(), m, src, rcv, cfg, 3);
  Echogram b = render(s.inputs(), m, src, rcv, cfg, 3);
  CHECK(a.e == b.e);
  for (double v : a.e) CHECK(v >= 0.0);
}

TEST_CASE("opt-in 32-bit solve stays within the relaxed tolerance", "[transport]") {
  auto s = make_scene(box_mesh(1.5, 1.2, 1.0), 0.8, 4, 4, small_pc());
  MaterialModel m = make_material_model(Variant::P, s.patches, 16,
                                        ComponentMask::parse("reflection-only"));
  for (auto& v : m.alpha_logit) v = 1.0;
  SourceConfig src;
  src.pos = {0.5, 0.6, 0.5};
  src.n_ray = 3000;
  ReceiverConfig rcv;
  rcv.pos = {1.0, 0.6, 0.5};
  rcv.n_ray = 3000;
  SolverConfig cfg;
  cfg.T = 128;
  cfg.gamma = 1e-2;
  cfg.n_order = 25;
  Echogram wide = render(s.inputs(), m, src, rcv, cfg, 9);
  cfg.fast_f32 = true;
  Echogram narrow = render(s.inputs(), m, src, rcv, cfg, 9);
  CHECK(rel_l2(narrow.e, wide.e) <= 1e-4);
}

TEST_CASE("default solver configuration covers 0.32 seconds", "[transport]") {
  SolverConfig cfg;
  CHECK(cfg.T == 320);
  CHECK(cfg.T * cfg.dt == Catch::Approx(0.32));
  CHECK(cfg.gamma == Catch::Approx(1e-3));
  CHECK(cfg.n_order == 40);
}

TEST_CASE("echogram files round-trip in both formats", "[transport]") {
  Echogram eg;
  Prng rng(14);
  for (int i = 0; i < 50; ++i) eg.e.push_back(rng.u01());
  write_echogram_csv("tmp_echo.csv", eg);
  Echogram csv = read_echogram_csv("tmp_echo.csv");
  REQUIRE(csv.e.size() == eg.e.size());
  for (std::size_t i = 0; i < eg.e.size(); ++i)
    CHECK(csv.e[i] == Catch::Approx(eg.e[i]).epsilon(1e-15));
  write_echogram_binary("tmp_echo.bin", eg);
  Echogram bin = read_echogram_binary("tmp_echo.bin");
  CHECK(bin.e == eg.e);
  std::remove("tmp_echo.csv");
  std::remove("tmp_echo.bin");
}

TEST_CASE("manifests parse all eleven fields", "[transport]") {
  std::ofstream out("tmp_manifest.txt");
  out << "# comment\n";
  out << "m0, 0.5, 0.5, 0.5, 0, 0, 1, 1.5, 0.5, 0.5, echo0.csv\n";
  out << "m1, 0.25, 0.5, 0.75, 1, 0, 0, 1.0, 1.0, 0.5, echo1.csv\n";
  out.close();
  auto rows = read_manifest("tmp_manifest.txt");
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].id == "m0");
  CHECK(rows[0].src.pos.x == 0.5);
  CHECK(rows[0].src.orient.z == 1.0);
  CHECK(rows[1].rcv.pos.x == 1.0);
  CHECK(rows[1].echogram_path == "echo1.csv");
  std::remove("tmp_manifest.txt");
}
