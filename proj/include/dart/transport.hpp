// Source injection, receiver detection, direct arrival, and full echogram
// assembly, plus the echogram and measurement manifest file formats.
//
// Injection and detection shoot stratified rays once per (endpoint, seed);
// the geometric aggregates they produce are reused across material updates.
// Directivity enters linearly: the per-bin power is (kappa-weight row) dot
// kappa, which keeps the gradient path exact.
#pragma once

#include <optional>

#include "dart/materials.hpp"
#include "dart/spectral.hpp"

namespace dart {

struct SourceConfig {
  Vec3 pos;
  Vec3 orient{0.0, 0.0, 1.0};
  int n_ray = 10000;
};

struct ReceiverConfig {
  Vec3 pos;
  Vec3 orient{0.0, 0.0, 1.0};
  int n_ray = 10000;
};

struct Echogram {
  std::vector<double> e;  // length T, nonnegative
  double dt = kRadianceDt;

  int length() const { return static_cast<int>(e.size()); }
  double energy() const {
    double s = 0.0;
    for (double v : e) s += v;
    return s;
  }
};

// Energy decay curve: suffix sums of the echogram.
inline std::vector<double> edc_curve(const std::vector<double>& e) {
  std::vector<double> out(e.size());
  double acc = 0.0;
  for (std::size_t n = e.size(); n-- > 0;) {
    acc += e[n];
    out[n] = acc;
  }
  return out;
}

// Geometry-only injection aggregates over the full incident index space.
struct InjectionData {
  std::vector<std::uint8_t> support;    // incident index hit by some ray
  std::vector<double> kappa_acc;        // n_rad x n_kappa, row dot kappa = sum of ray gains
  std::vector<double> delay;            // mean source->patch delay (samples)
  std::vector<double> delay_weight;
  double hit_fraction = 0.0;
  int n_ray = 0;
  int n_kappa = 0;

  // Monte Carlo power estimate for one incident index given directivity.
  double power(std::uint32_t idx, const std::vector<double>& kappa) const {
    const double* row = kappa_acc.data() + static_cast<std::size_t>(idx) * n_kappa;
    double s = 0.0;
    for (int k = 0; k < n_kappa; ++k) s += row[k] * kappa[k];
    return s / n_ray;
  }
};

struct DetectionData {
  std::vector<std::uint8_t> support;  // outgoing index seen by the receiver
  std::vector<double> weight;         // W = 4*pi/N_ray * hits (isotropic receiver)
  std::vector<double> delay;          // mean patch->receiver delay (samples)
  std::vector<double> delay_weight;
  double weight_sum = 0.0;
  int n_ray = 0;
};

inline InjectionData measure_injection(const SourceConfig& src, const PatchSet& ps,
                                       const DirectionGrid& grid,
                                       const TransportOperators& ops, int n_kappa,
                                       double lambda, std::uint64_t seed) {
  require(ps.strictly_inside_bbox(src.pos), "source position must be strictly interior");
  const int nd = grid.n_dir();
  const std::uint32_t n_rad = ops.n_rad();
  InjectionData inj;
  inj.n_ray = src.n_ray;
  inj.n_kappa = n_kappa;
  inj.support.assign(n_rad, 0);
  inj.kappa_acc.assign(static_cast<std::size_t>(n_rad) * n_kappa, 0.0);
  inj.delay.assign(n_rad, 0.0);
  inj.delay_weight.assign(n_rad, 0.0);
  std::vector<double> dist_sum(n_rad, 0.0);
  std::vector<std::uint32_t> hit_cnt(n_rad, 0);
  Vec3 o = normalized(src.orient);

  DirectionGrid world_grid = grid;  // same resolution, identity frame
  auto dirs = sample_directions_stratified(world_grid, src.n_ray, seed, 1001);
  std::vector<double> wrow(n_kappa);
  std::uint64_t hits = 0;
  const double inv_cdt = 1.0 / (kSpeedOfSound * kRadianceDt);
  for (const auto& ds : dirs) {
    Ray ray{src.pos, ds.dir};
    auto hit = intersect_first(ray, ps, grid);
    if (!hit) continue;
    ++hits;
    std::uint32_t idx = static_cast<std::uint32_t>(hit->patch) * nd + hit->incident_bin;
    inj.support[idx] = 1;
    double theta = std::acos(std::clamp(dot(ds.dir, o), -1.0, 1.0));
    directivity_weights(theta, n_kappa, lambda, wrow.data());
    double* row = inj.kappa_acc.data() + static_cast<std::size_t>(idx) * n_kappa;
    for (int k = 0; k < n_kappa; ++k) row[k] += wrow[k];
    dist_sum[idx] += hit->distance;
    hit_cnt[idx]++;
  }
  inj.hit_fraction = static_cast<double>(hits) / src.n_ray;
  for (std::uint32_t idx = 0; idx < n_rad; ++idx) {
    if (hit_cnt[idx] == 0) continue;
    double d = dist_sum[idx] / hit_cnt[idx] * inv_cdt;
    inj.delay[idx] = d;
    inj.delay_weight[idx] = frac_delay_weight(d);
  }
  return inj;
}

inline DetectionData measure_detection(const ReceiverConfig& rcv, const PatchSet& ps,
                                       const DirectionGrid& grid,
                                       const TransportOperators& ops, std::uint64_t seed) {
  require(ps.strictly_inside_bbox(rcv.pos), "receiver position must be strictly interior");
  const int nd = grid.n_dir();
  const std::uint32_t n_rad = ops.n_rad();
  DetectionData det;
  det.n_ray = rcv.n_ray;
  det.support.assign(n_rad, 0);
  det.weight.assign(n_rad, 0.0);
  det.delay.assign(n_rad, 0.0);
  det.delay_weight.assign(n_rad, 0.0);
  std::vector<double> dist_sum(n_rad, 0.0);
  std::vector<std::uint32_t> hit_cnt(n_rad, 0);

  DirectionGrid world_grid = grid;
  auto dirs = sample_directions_stratified(world_grid, rcv.n_ray, seed, 2002);
  const double inv_cdt = 1.0 / (kSpeedOfSound * kRadianceDt);
  const double w_ray = kFourPi / rcv.n_ray;  // receiver directivity is isotropic
  for (const auto& ds : dirs) {
    Ray ray{rcv.pos, ds.dir};
    auto hit = intersect_first(ray, ps, grid);
    if (!hit) continue;
    std::uint32_t idx = static_cast<std::uint32_t>(hit->patch) * nd + hit->incident_bin;
    det.support[idx] = 1;
    det.weight[idx] += w_ray;
    dist_sum[idx] += hit->distance;
    hit_cnt[idx]++;
  }
  for (std::uint32_t idx = 0; idx < n_rad; ++idx) {
    det.weight_sum += det.weight[idx];
    if (hit_cnt[idx] == 0) continue;
    double d = dist_sum[idx] / hit_cnt[idx] * inv_cdt;
    det.delay[idx] = d;
    det.delay_weight[idx] = frac_delay_weight(d);
  }
  return det;
}

// Direct source-to-receiver arrival: two-tap impulse at the propagation
// delay, inverse-square spreading, zero when occluded.
struct DirectArrival {
  bool visible = false;
  double base = 0.0;   // 1 / (4 pi d^2), receiver gain folded in
  double theta = 0.0;  // angle between source orientation and the s->r line
  int n0 = 0;
  double w0 = 0.0;  // floor-tap weight

  double value(const std::vector<double>& kappa, double lambda) const {
    if (!visible) return 0.0;
    std::vector<double> w(kappa.size());
    directivity_weights(theta, static_cast<int>(kappa.size()), lambda, w.data());
    double g = 0.0;
    for (std::size_t k = 0; k < kappa.size(); ++k) g += w[k] * kappa[k];
    return base * g;
  }
};

inline DirectArrival direct_arrival(const SourceConfig& src, const ReceiverConfig& rcv,
                                    const PatchSet& ps) {
  Vec3 d = rcv.pos - src.pos;
  double dist = norm(d);
  require(dist > 0.0, "source and receiver must not coincide");
  DirectArrival da;
  da.visible = visible(src.pos, rcv.pos, ps);
  if (!da.visible) return da;
  da.base = 1.0 / (kFourPi * dist * dist);
  da.theta = std::acos(std::clamp(dot(d / dist, normalized(src.orient)), -1.0, 1.0));
  double delay = dist / (kSpeedOfSound * kRadianceDt);
  da.n0 = static_cast<int>(std::floor(delay));
  da.w0 = frac_delay_weight(delay);
  return da;
}

// ---------------------------------------------------------------------------
// Full forward pipeline.
// ---------------------------------------------------------------------------

struct RenderInputs {
  const PatchSet* patches = nullptr;
  const DirectionGrid* grid = nullptr;
  const TransportOperators* ops = nullptr;
  const BsdfMatrices* comps = nullptr;
};

// Per-measurement index lists against a (possibly shared) reduction map.
struct PairLists {
  std::vector<std::uint32_t> inc_idx;   // reduced incident indices with power
  std::vector<std::uint32_t> inc_full;  // matching full-space indices
  std::vector<double> inc_delay;
  std::vector<double> inc_weight;
  std::vector<std::uint32_t> det_idx;  // reduced outgoing indices seen by receiver
  std::vector<double> det_w;
  std::vector<double> det_delay;
  std::vector<double> det_weight;
};

inline PairLists make_pair_lists(const ReductionMap& map, const InjectionData& inj,
                                 const DetectionData& det) {
  PairLists s;
  for (std::uint32_t f = 0; f < map.n_full; ++f) {
    std::int32_t r = map.full_to_red[f];
    if (r < 0) continue;
    if (inj.support[f]) {
      s.inc_idx.push_back(static_cast<std::uint32_t>(r));
      s.inc_full.push_back(f);
      s.inc_delay.push_back(inj.delay[f]);
      s.inc_weight.push_back(inj.delay_weight[f]);
    }
    if (det.support[f]) {
      s.det_idx.push_back(static_cast<std::uint32_t>(r));
      s.det_w.push_back(det.weight[f]);
      s.det_delay.push_back(det.delay[f]);
      s.det_weight.push_back(det.delay_weight[f]);
    }
  }
  return s;
}

// Reduced-space operators shared by the spectral path and the oracle.
struct SolveSetup {
  ReductionMap map;
  SparseOperator vis_r;
  DelayBank delays_r;
  PairLists lists;
};

inline SolveSetup make_solve_setup(const RenderInputs& in, const InjectionData& inj,
                                   const DetectionData& det, bool use_reduction) {
  SolveSetup s;
  const std::uint32_t n_rad = in.ops->n_rad();
  s.map = use_reduction ? build_reduction(in.ops->visibility, inj.support, det.support)
                        : ReductionMap::identity(n_rad);
  s.vis_r = reduce_operator(in.ops->visibility, s.map);
  s.delays_r = reduce_delays(in.ops->delays, s.map);
  s.lists = make_pair_lists(s.map, inj, det);
  return s;
}

// Incident radiance reaching each reduced index: MC power / integrated
// geometry, for the current directivity parameters.
inline std::vector<double> incident_radiance(const RenderInputs& in, const InjectionData& inj,
                                             const PairLists& s,
                                             const MaterialModel& model) {
  const int nd = in.grid->n_dir();
  std::vector<double> inc(s.inc_idx.size());
  for (std::size_t t = 0; t < s.inc_idx.size(); ++t) {
    std::uint32_t full = s.inc_full[t];
    int patch = static_cast<int>(full) / nd;
    int bin = static_cast<int>(full) % nd;
    double g = in.ops->gi.value(in.ops->patch_area[patch], bin);
    inc[t] = inj.power(full, model.kappa) / g;
  }
  return inc;
}

// L0[n]: one material application on the delayed incident radiance.
inline RealMatrix initial_radiance(std::uint32_t n_red, const PairLists& s,
                                   const SparseOperator& mat_r, const std::vector<double>& inc,
                                   int T) {
  RealMatrix l0(n_red, T);
  // Column-oriented: for each incident index, spread through the material
  // column into both delay taps.
  std::vector<std::vector<std::pair<std::uint32_t, double>>> cols(n_red);
  for (std::uint32_t r = 0; r < mat_r.rows; ++r)
    for (std::uint32_t e = mat_r.row_ptr[r]; e < mat_r.row_ptr[r + 1]; ++e)
      cols[mat_r.col_idx[e]].push_back({r, mat_r.val[e]});
  for (std::size_t t = 0; t < s.inc_idx.size(); ++t) {
    int n0 = static_cast<int>(std::floor(s.inc_delay[t]));
    int n1 = static_cast<int>(std::ceil(s.inc_delay[t]));
    double w0 = s.inc_weight[t] * inc[t];
    double w1 = (1.0 - s.inc_weight[t]) * inc[t];
    if (n0 >= T) continue;  // beyond the render window
    for (const auto& [row, v] : cols[s.inc_idx[t]]) {
      l0.at(row, n0) += v * w0;
      if (n1 < T) l0.at(row, n1) += v * w1;
    }
  }
  return l0;
}

// Weighted delayed sum of the radiance signals at the receiver.
inline std::vector<double> detect_time(const PairLists& s, const RealMatrix& radiance) {
  const int T = static_cast<int>(radiance.cols);
  std::vector<double> el(T, 0.0);
  for (std::size_t t = 0; t < s.det_idx.size(); ++t) {
    const double* row = radiance.row(s.det_idx[t]);
    int n0 = static_cast<int>(std::floor(s.det_delay[t]));
    int n1 = static_cast<int>(std::ceil(s.det_delay[t]));
    double w0 = s.det_w[t] * s.det_weight[t];
    double w1 = s.det_w[t] * (1.0 - s.det_weight[t]);
    for (int n = n0; n < T; ++n) el[n] += w0 * row[n - n0];
    for (int n = n1; n < T; ++n) el[n] += w1 * row[n - n1];
  }
  return el;
}

inline void add_direct_arrival(std::vector<double>& e, const DirectArrival& da,
                               const MaterialModel& model) {
  double v = da.value(model.kappa, model.lambda);
  if (v == 0.0) return;
  if (da.n0 < static_cast<int>(e.size())) e[da.n0] += da.w0 * v;
  if (da.n0 + 1 < static_cast<int>(e.size())) e[da.n0 + 1] += (1.0 - da.w0) * v;
}

inline Echogram render(const RenderInputs& in, const MaterialModel& model,
                       const SourceConfig& src, const ReceiverConfig& rcv,
                       const SolverConfig& cfg, std::uint64_t seed,
                       bool use_reduction = true) {
  cfg.validate();
  InjectionData inj = measure_injection(src, *in.patches, *in.grid, *in.ops, model.n_kappa(),
                                        model.lambda, seed);
  DetectionData det = measure_detection(rcv, *in.patches, *in.grid, *in.ops, seed + 1);
  SolveSetup s = make_solve_setup(in, inj, det, use_reduction);
  SparseOperator mat_r = realize_global(model, *in.comps, s.map);
  std::vector<double> inc = incident_radiance(in, inj, s.lists, model);
  RealMatrix l0 = initial_radiance(s.map.n_red, s.lists, mat_r, inc, cfg.T);
  SpectralField l0_spec = damped_forward_transform(l0, cfg.gamma);
  ComplexMatrix dsp = delay_spectra(s.delays_r, cfg.gamma, cfg.T);
  SpectralField solved = series_solve(l0_spec, dsp, s.vis_r, mat_r, cfg.n_order, cfg.fast_f32);
  RealMatrix radiance = to_time(solved, cfg.fast_f32 ? 1e-2 : 1e-6);
  Echogram out;
  out.dt = cfg.dt;
  out.e = detect_time(s.lists, radiance);
  DirectArrival da = direct_arrival(src, rcv, *in.patches);
  add_direct_arrival(out.e, da, model);
  double g = model.gain();
  for (double& v : out.e) v *= g;
  return out;
}

// ---------------------------------------------------------------------------
// Echogram files and measurement manifests.
// ---------------------------------------------------------------------------

inline void write_echogram_csv(const std::string& path, const Echogram& eg) {
  std::ofstream out(path);
  if (!out) fail(cat("cannot write echogram: ", path));
  out << "n,time_ms,energy\n";
  out.precision(17);
  for (int n = 0; n < eg.length(); ++n)
    out << n << "," << n * eg.dt * 1000.0 << "," << eg.e[n] << "\n";
}

inline Echogram read_echogram_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(cat("cannot open echogram: ", path));
  Echogram eg;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::size_t p1 = line.find(','), p2 = line.find(',', p1 + 1);
    require(p1 != std::string::npos && p2 != std::string::npos, cat("bad echogram row in ", path));
    eg.e.push_back(std::stod(line.substr(p2 + 1)));
  }
  return eg;
}

inline void write_echogram_binary(const std::string& path, const Echogram& eg) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(cat("cannot write echogram: ", path));
  std::string buf;
  detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(eg.length()));
  for (double v : eg.e) detail::put<double>(buf, v);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

inline Echogram read_echogram_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(cat("cannot open echogram: ", path));
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t off = 0;
  std::uint32_t T = detail::take<std::uint32_t>(buf, off);
  Echogram eg;
  eg.e.resize(T);
  for (auto& v : eg.e) v = detail::take<double>(buf, off);
  return eg;
}

// One measurement per line:
// id, src_x, src_y, src_z, src_ox, src_oy, src_oz, rcv_x, rcv_y, rcv_z, path
struct Measurement {
  std::string id;
  SourceConfig src;
  ReceiverConfig rcv;
  std::string echogram_path;
};

inline std::vector<Measurement> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(cat("cannot open manifest: ", path));
  std::vector<Measurement> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> f;
    std::size_t pos = 0;
    while (pos <= line.size()) {
      std::size_t c = line.find(',', pos);
      if (c == std::string::npos) c = line.size();
      std::string tok = line.substr(pos, c - pos);
      std::size_t a = tok.find_first_not_of(" \t");
      std::size_t b = tok.find_last_not_of(" \t\r");
      f.push_back(a == std::string::npos ? "" : tok.substr(a, b - a + 1));
      pos = c + 1;
    }
    require(f.size() == 11, cat(path, ":", lineno, ": manifest row needs 11 fields, got ", f.size()));
    Measurement m;
    m.id = f[0];
    m.src.pos = {std::stod(f[1]), std::stod(f[2]), std::stod(f[3])};
    m.src.orient = {std::stod(f[4]), std::stod(f[5]), std::stod(f[6])};
    m.rcv.pos = {std::stod(f[7]), std::stod(f[8]), std::stod(f[9])};
    m.echogram_path = f[10];
    rows.push_back(m);
  }
  return rows;
}

}  // namespace dart
