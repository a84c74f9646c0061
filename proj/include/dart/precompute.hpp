// Geometry-dependent transport operators: the mean-visibility matrix, the
// propagation delay bank (shared rays), the integrated geometry, the four
// analytic BSDF material matrices, and the radiance reduction map.
//
// Radiance indices flatten as idx = patch * n_dir + bin. The visibility
// operator maps source radiance (column) to incident radiance (row):
// V[(i,l), (h,j)] = fraction of rays shot from patch i in bin l that land on
// patch h with the back-toward-origin direction classified in bin j.
#pragma once

#include <array>
#include <cstdio>
#include <cstring>
#include <numeric>

#include "dart/raytrace.hpp"
#include "dart/sparse.hpp"
#include "dart/threads.hpp"

namespace dart {

struct DelayBank {
  // Per radiance index: fractional delay in samples and the linear weight of
  // the floor tap; valid == 0 marks bins with no hitting rays.
  std::vector<double> delay;
  std::vector<double> weight;
  std::vector<std::uint8_t> valid;

  std::size_t size() const { return delay.size(); }
};

inline double frac_delay_weight(double d) { return std::ceil(d) - d; }

struct IntegratedGeometry {
  // Unit-area values per local bin; G(i, l) = patch_area[i] * unit[l].
  std::vector<double> unit;
  double value(double area, int bin) const { return area * unit[bin]; }
};

struct TransportOperators {
  int n_pat = 0;
  int n_ele = 0;
  int n_azi = 0;
  SparseOperator visibility;  // full index space, rows = incident, cols = source
  DelayBank delays;           // full index space, per source radiance index
  IntegratedGeometry gi;
  std::vector<double> patch_area;
  std::uint64_t rays_total = 0;
  std::uint64_t rays_hit = 0;

  int n_dir() const { return n_ele * n_azi; }
  std::uint32_t n_rad() const { return static_cast<std::uint32_t>(n_pat) * n_dir(); }
};

struct PrecomputeConfig {
  int points_per_patch = 100;  // K
  int dirs_per_point = 4096;   // M
  int gi_samples = 10000;
  std::uint64_t seed = 1;
  double speed_of_sound = kSpeedOfSound;
  double dt = kRadianceDt;
};

// Single pass building the visibility matrix and the delay bank from the
// same rays. Accumulation is per patch, merged in patch order, so the result
// does not depend on the worker count.
inline TransportOperators precompute_transport(const PatchSet& ps, const DirectionGrid& grid,
                                               const PrecomputeConfig& cfg) {
  require(cfg.points_per_patch >= 1 && cfg.dirs_per_point >= 1, "sampling counts must be >= 1");
  const int n_pat = ps.size();
  const int n_dir = grid.n_dir();
  const std::uint32_t n_rad = static_cast<std::uint32_t>(n_pat) * n_dir;

  struct PatchAccum {
    std::vector<CooEntry> entries;           // (incident row, source col, count)
    std::vector<double> dist_sum;            // per local source bin
    std::vector<std::uint32_t> hit_count;    // per local source bin
    std::vector<std::uint32_t> shot_count;   // per local source bin
    std::uint64_t rays = 0, hits = 0;
  };
  std::vector<PatchAccum> acc(n_pat);

  parallel_chunks(n_pat, [&](int, std::size_t begin, std::size_t end) {
    for (std::size_t ip = begin; ip < end; ++ip) {
      int i = static_cast<int>(ip);
      PatchAccum& a = acc[i];
      a.dist_sum.assign(n_dir, 0.0);
      a.hit_count.assign(n_dir, 0);
      a.shot_count.assign(n_dir, 0);
      std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint32_t> counts;
      auto pts = sample_patch_points(ps.patches[i], cfg.points_per_patch, cfg.seed, i);
      for (std::size_t kp = 0; kp < pts.size(); ++kp) {
        auto dirs = sample_directions_stratified(
            grid, cfg.dirs_per_point, cfg.seed,
            (static_cast<std::uint64_t>(i) << 20) + kp + 1);
        for (const auto& ds : dirs) {
          a.rays++;
          a.shot_count[ds.bin]++;
          Ray ray{pts[kp], ps.to_world(i, ds.dir)};
          auto hit = intersect_first(ray, ps, grid);
          if (!hit) continue;
          a.hits++;
          a.dist_sum[ds.bin] += hit->distance;
          a.hit_count[ds.bin]++;
          std::uint32_t row = static_cast<std::uint32_t>(hit->patch) * n_dir + hit->incident_bin;
          std::uint32_t col = static_cast<std::uint32_t>(i) * n_dir + ds.bin;
          counts[{row, col}]++;
        }
      }
      a.entries.reserve(counts.size());
      for (const auto& [key, cnt] : counts)
        a.entries.push_back({key.first, key.second, static_cast<double>(cnt)});
    }
  });

  TransportOperators ops;
  ops.n_pat = n_pat;
  ops.n_ele = grid.n_ele;
  ops.n_azi = grid.n_azi;
  ops.patch_area.resize(n_pat);
  for (int i = 0; i < n_pat; ++i) ops.patch_area[i] = ps.patches[i].area;

  std::vector<CooEntry> all;
  ops.delays.delay.assign(n_rad, 0.0);
  ops.delays.weight.assign(n_rad, 0.0);
  ops.delays.valid.assign(n_rad, 0);
  const double inv_cdt = 1.0 / (cfg.speed_of_sound * cfg.dt);
  for (int i = 0; i < n_pat; ++i) {
    const PatchAccum& a = acc[i];
    ops.rays_total += a.rays;
    ops.rays_hit += a.hits;
    for (const auto& e : a.entries) {
      double denom = static_cast<double>(a.shot_count[e.col % n_dir]);
      all.push_back({e.row, e.col, e.val / denom});
    }
    for (int l = 0; l < n_dir; ++l) {
      if (a.hit_count[l] == 0) continue;
      std::uint32_t idx = static_cast<std::uint32_t>(i) * n_dir + l;
      double d = a.dist_sum[l] / a.hit_count[l] * inv_cdt;
      // Instantaneous kernel entries would break the causal time-domain
      // recursion; clamp to one sample.
      if (d < 1.0) d = 1.0;
      ops.delays.delay[idx] = d;
      ops.delays.weight[idx] = frac_delay_weight(d);
      ops.delays.valid[idx] = 1;
    }
  }
  ops.visibility = SparseOperator::from_coo(n_rad, n_rad, std::move(all));

  // Integrated geometry: one MC pass per grid orientation, unit patch area.
  ops.gi.unit.assign(n_dir, 0.0);
  auto dirs = sample_directions_stratified(grid, cfg.gi_samples, cfg.seed, 0xabcdefull);
  for (const auto& ds : dirs) ops.gi.unit[ds.bin] += std::abs(ds.dir.z);
  for (double& v : ops.gi.unit) v *= kFourPi / cfg.gi_samples;
  return ops;
}

// ---------------------------------------------------------------------------
// Analytic BSDF material matrices (per-patch-frame templates, row = outgoing
// bin, col = incident bin, toward-source direction convention on both sides).
// Each matrix has unit row sums, so alpha keeps its meaning as the fraction
// of incident radiance re-emitted.
// ---------------------------------------------------------------------------

enum BsdfComponent : int {
  kDiffuseReflection = 0,
  kDiffuseTransmission = 1,
  kSpecularReflection = 2,
  kSpecularTransmission = 3,
};

struct BsdfMatrices {
  int n_dir = 0;
  std::array<std::vector<double>, 4> mats;  // dense n_dir x n_dir, [out * n_dir + in]

  const std::vector<double>& operator[](int c) const { return mats[c]; }
};

inline int mirror_bin(const DirectionGrid& g, int bin) {
  // Specular reflection: same elevation, azimuth rotated by pi.
  int e = g.ele_of(bin), a = g.azi_of(bin);
  return g.bin_index(e, (a + g.n_azi / 2) % g.n_azi);
}

inline int antipodal_bin(const DirectionGrid& g, int bin) {
  // Specular transmission: the ray continues straight through.
  int e = g.ele_of(bin), a = g.azi_of(bin);
  return g.bin_index(g.n_ele - 1 - e, (a + g.n_azi / 2) % g.n_azi);
}

inline BsdfMatrices bsdf_material_matrices(const DirectionGrid& grid) {
  require(grid.n_ele % 2 == 0 && grid.n_azi % 2 == 0,
          "analytic BSDF matrices need even n_ele and n_azi");
  const int nd = grid.n_dir();
  BsdfMatrices out;
  out.n_dir = nd;
  for (auto& m : out.mats) m.assign(static_cast<std::size_t>(nd) * nd, 0.0);

  // Cosine-weighted solid angle of each incident bin: integral of |z| over
  // the bin. Summed over one hemisphere this is exactly pi, which makes the
  // diffuse rows lossless after the 1/pi BSDF factor.
  std::vector<double> cosw(nd);
  for (int b = 0; b < nd; ++b) {
    int e = grid.ele_of(b);
    double zh = grid.z_hi(e), zl = grid.z_lo(e);
    cosw[b] = (kTwoPi / grid.n_azi) * std::abs(zh * zh - zl * zl) / 2.0;
  }

  for (int in = 0; in < nd; ++in) {
    for (int outb = 0; outb < nd; ++outb) {
      bool same_side = grid.side_of(in) == grid.side_of(outb);
      if (same_side) out.mats[kDiffuseReflection][outb * nd + in] = cosw[in] / kPi;
      else out.mats[kDiffuseTransmission][outb * nd + in] = cosw[in] / kPi;
    }
    out.mats[kSpecularReflection][mirror_bin(grid, in) * nd + in] = 1.0;
    out.mats[kSpecularTransmission][antipodal_bin(grid, in) * nd + in] = 1.0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reduction: drop radiance indices that can neither receive energy (no
// visibility row, no injection support) nor send it (no visibility column,
// no detection support).
// ---------------------------------------------------------------------------

struct ReductionMap {
  std::vector<std::int32_t> full_to_red;   // -1 when dropped
  std::vector<std::uint32_t> red_to_full;
  std::uint32_t n_red = 0;
  std::uint32_t n_full = 0;

  static ReductionMap identity(std::uint32_t n) {
    ReductionMap m;
    m.n_full = m.n_red = n;
    m.full_to_red.resize(n);
    m.red_to_full.resize(n);
    for (std::uint32_t i = 0; i < n; ++i) {
      m.full_to_red[i] = static_cast<std::int32_t>(i);
      m.red_to_full[i] = i;
    }
    return m;
  }
};

inline ReductionMap build_reduction(const SparseOperator& vis,
                                    const std::vector<std::uint8_t>& inj_support,
                                    const std::vector<std::uint8_t>& det_support) {
  const std::uint32_t n = vis.rows;
  std::vector<std::uint8_t> receives(n, 0), sends(n, 0);
  for (std::uint32_t r = 0; r < n; ++r) {
    if (vis.row_ptr[r + 1] > vis.row_ptr[r]) receives[r] = 1;
    for (std::uint32_t e = vis.row_ptr[r]; e < vis.row_ptr[r + 1]; ++e) sends[vis.col_idx[e]] = 1;
  }
  if (!inj_support.empty())
    for (std::uint32_t i = 0; i < n; ++i) receives[i] |= inj_support[i];
  if (!det_support.empty())
    for (std::uint32_t i = 0; i < n; ++i) sends[i] |= det_support[i];

  ReductionMap map;
  map.n_full = n;
  map.full_to_red.assign(n, -1);
  for (std::uint32_t i = 0; i < n; ++i) {
    if (receives[i] || sends[i]) {
      map.full_to_red[i] = static_cast<std::int32_t>(map.red_to_full.size());
      map.red_to_full.push_back(i);
    }
  }
  map.n_red = static_cast<std::uint32_t>(map.red_to_full.size());
  return map;
}

inline SparseOperator reduce_operator(const SparseOperator& op, const ReductionMap& map) {
  std::vector<CooEntry> entries;
  entries.reserve(op.nnz());
  for (std::uint32_t r = 0; r < op.rows; ++r) {
    std::int32_t rr = map.full_to_red[r];
    if (rr < 0) continue;
    for (std::uint32_t e = op.row_ptr[r]; e < op.row_ptr[r + 1]; ++e) {
      std::int32_t cc = map.full_to_red[op.col_idx[e]];
      if (cc < 0) continue;
      entries.push_back({static_cast<std::uint32_t>(rr), static_cast<std::uint32_t>(cc), op.val[e]});
    }
  }
  return SparseOperator::from_coo(map.n_red, map.n_red, std::move(entries));
}

inline DelayBank reduce_delays(const DelayBank& bank, const ReductionMap& map) {
  DelayBank out;
  out.delay.resize(map.n_red);
  out.weight.resize(map.n_red);
  out.valid.resize(map.n_red);
  for (std::uint32_t r = 0; r < map.n_red; ++r) {
    std::uint32_t f = map.red_to_full[r];
    out.delay[r] = bank.delay[f];
    out.weight[r] = bank.weight[f];
    out.valid[r] = bank.valid[f];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Operator cache: magic header, dimensions, then index arrays and
// little-endian f32 entry values.
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void put(std::string& buf, T v) {
  buf.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(const std::string& buf, std::size_t& off) {
  T v;
  require(off + sizeof(T) <= buf.size(), "cache file truncated");
  std::memcpy(&v, buf.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

}  // namespace detail

inline std::string serialize_cache(const TransportOperators& ops) {
  std::string buf;
  buf.append("DARTOPS1");
  detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(ops.n_pat));
  detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(ops.n_ele));
  detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(ops.n_azi));
  detail::put<std::uint64_t>(buf, ops.rays_total);
  detail::put<std::uint64_t>(buf, ops.rays_hit);
  const SparseOperator& v = ops.visibility;
  detail::put<std::uint32_t>(buf, v.rows);
  detail::put<std::uint32_t>(buf, v.cols);
  detail::put<std::uint64_t>(buf, static_cast<std::uint64_t>(v.nnz()));
  for (auto p : v.row_ptr) detail::put<std::uint32_t>(buf, p);
  for (auto c : v.col_idx) detail::put<std::uint32_t>(buf, c);
  for (auto x : v.val) detail::put<float>(buf, static_cast<float>(x));
  for (std::uint32_t i = 0; i < ops.n_rad(); ++i) {
    detail::put<float>(buf, static_cast<float>(ops.delays.delay[i]));
    detail::put<std::uint8_t>(buf, ops.delays.valid[i]);
  }
  for (double g : ops.gi.unit) detail::put<float>(buf, static_cast<float>(g));
  for (double a : ops.patch_area) detail::put<float>(buf, static_cast<float>(a));
  return buf;
}

inline TransportOperators deserialize_cache(const std::string& buf) {
  require(buf.size() >= 8 && buf.compare(0, 8, "DARTOPS1") == 0, "bad cache magic");
  std::size_t off = 8;
  TransportOperators ops;
  ops.n_pat = detail::take<std::uint32_t>(buf, off);
  ops.n_ele = detail::take<std::uint32_t>(buf, off);
  ops.n_azi = detail::take<std::uint32_t>(buf, off);
  ops.rays_total = detail::take<std::uint64_t>(buf, off);
  ops.rays_hit = detail::take<std::uint64_t>(buf, off);
  SparseOperator& v = ops.visibility;
  v.rows = detail::take<std::uint32_t>(buf, off);
  v.cols = detail::take<std::uint32_t>(buf, off);
  std::uint64_t nnz = detail::take<std::uint64_t>(buf, off);
  v.row_ptr.resize(v.rows + 1);
  for (auto& p : v.row_ptr) p = detail::take<std::uint32_t>(buf, off);
  v.col_idx.resize(nnz);
  for (auto& c : v.col_idx) c = detail::take<std::uint32_t>(buf, off);
  v.val.resize(nnz);
  for (auto& x : v.val) x = detail::take<float>(buf, off);
  std::uint32_t n_rad = ops.n_rad();
  ops.delays.delay.resize(n_rad);
  ops.delays.weight.resize(n_rad);
  ops.delays.valid.resize(n_rad);
  for (std::uint32_t i = 0; i < n_rad; ++i) {
    ops.delays.delay[i] = detail::take<float>(buf, off);
    ops.delays.valid[i] = detail::take<std::uint8_t>(buf, off);
    ops.delays.weight[i] = frac_delay_weight(ops.delays.delay[i]);
  }
  ops.gi.unit.resize(ops.n_ele * ops.n_azi);
  for (auto& g : ops.gi.unit) g = detail::take<float>(buf, off);
  ops.patch_area.resize(ops.n_pat);
  for (auto& a : ops.patch_area) a = detail::take<float>(buf, off);
  return ops;
}

inline void save_cache(const std::string& path, const TransportOperators& ops) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(cat("cannot write cache file: ", path));
  std::string buf = serialize_cache(ops);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

inline TransportOperators load_cache(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(cat("cannot open cache file: ", path));
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_cache(buf);
}

}  // namespace dart
