// Brute-force time-domain reference solver. Shares every operator with the
// spectral engine; only the solve differs, so cross-engine agreement checks
// exactly the frequency-domain machinery. Single-threaded on purpose.
#pragma once

#include "dart/transport.hpp"

namespace dart {

inline constexpr std::uint32_t kOracleMaxRadiances = 2000;

// Order-truncated evaluation of the discrete reflection recursion over a
// horizon of T_oracle samples. n_order < 0 runs the unlimited fixed-point
// recursion instead (valid because every kernel delay is >= 1 sample).
inline RealMatrix time_domain_solve(const RealMatrix& l0, const SparseOperator& vis,
                                    const SparseOperator& mat, const DelayBank& delays,
                                    int n_order, int T_oracle) {
  const std::uint32_t n = static_cast<std::uint32_t>(l0.rows);
  require(vis.rows == n && mat.rows == n, "oracle dimension mismatch");
  std::vector<std::uint8_t> used(n, 0);
  for (std::uint32_t r = 0; r < n; ++r)
    for (std::uint32_t e = vis.row_ptr[r]; e < vis.row_ptr[r + 1]; ++e) used[vis.col_idx[e]] = 1;
  for (std::uint32_t c = 0; c < n; ++c)
    if (used[c])
      require(delays.valid[c] && std::floor(delays.delay[c]) >= 1.0,
              "instantaneous kernel entry; oracle recursion needs delays >= 1");
  const int T = T_oracle;
  RealMatrix total(n, T);
  for (std::uint32_t r = 0; r < n; ++r)
    for (std::size_t t = 0; t < std::min<std::size_t>(l0.cols, T); ++t)
      total.at(r, t) = l0.at(r, t);

  if (n_order < 0) {
    // Fixed point: everything at sample m < t is final when t is computed.
    RealMatrix rad = total;
    std::vector<double> inc(n);
    for (int t = 0; t < T; ++t) {
      std::fill(inc.begin(), inc.end(), 0.0);
      for (std::uint32_t r = 0; r < n; ++r) {
        double acc = 0.0;
        for (std::uint32_t e = vis.row_ptr[r]; e < vis.row_ptr[r + 1]; ++e) {
          std::uint32_t c = vis.col_idx[e];
          int n0 = static_cast<int>(std::floor(delays.delay[c]));
          int n1 = static_cast<int>(std::ceil(delays.delay[c]));
          double v = 0.0;
          if (t - n0 >= 0) v += delays.weight[c] * rad.at(c, t - n0);
          if (t - n1 >= 0) v += (1.0 - delays.weight[c]) * rad.at(c, t - n1);
          acc += vis.val[e] * v;
        }
        inc[r] = acc;
      }
      for (std::uint32_t r = 0; r < n; ++r) {
        double acc = 0.0;
        for (std::uint32_t e = mat.row_ptr[r]; e < mat.row_ptr[r + 1]; ++e)
          acc += mat.val[e] * inc[mat.col_idx[e]];
        rad.at(r, t) += acc;
      }
    }
    return rad;
  }

  // Order-by-order: per order, delayed spread through V then through M.
  RealMatrix prev = total;  // order 0
  RealMatrix incm(n, T), next(n, T);
  for (int k = 1; k <= n_order; ++k) {
    std::fill(incm.a.begin(), incm.a.end(), 0.0);
    for (std::uint32_t r = 0; r < n; ++r) {
      double* dst = incm.row(r);
      for (std::uint32_t e = vis.row_ptr[r]; e < vis.row_ptr[r + 1]; ++e) {
        std::uint32_t c = vis.col_idx[e];
        const double* src = prev.row(c);
        int n0 = static_cast<int>(std::floor(delays.delay[c]));
        int n1 = static_cast<int>(std::ceil(delays.delay[c]));
        double w0 = vis.val[e] * delays.weight[c];
        double w1 = vis.val[e] * (1.0 - delays.weight[c]);
        for (int t = n0; t < T; ++t) dst[t] += w0 * src[t - n0];
        for (int t = n1; t < T; ++t) dst[t] += w1 * src[t - n1];
      }
    }
    std::fill(next.a.begin(), next.a.end(), 0.0);
    for (std::uint32_t r = 0; r < n; ++r) {
      double* dst = next.row(r);
      for (std::uint32_t e = mat.row_ptr[r]; e < mat.row_ptr[r + 1]; ++e) {
        const double* src = incm.row(mat.col_idx[e]);
        double v = mat.val[e];
        for (int t = 0; t < T; ++t) dst[t] += v * src[t];
      }
    }
    for (std::size_t i = 0; i < total.a.size(); ++i) total.a[i] += next.a[i];
    std::swap(prev, next);
  }
  return total;
}

// Reference echogram: identical Monte Carlo aggregates and operators as
// render(), solved in the time domain over a 4T horizon and cut to T.
inline Echogram echogram_oracle(const RenderInputs& in, const MaterialModel& model,
                                const SourceConfig& src, const ReceiverConfig& rcv,
                                const SolverConfig& cfg, std::uint64_t seed,
                                int horizon_factor = 4) {
  cfg.validate();
  InjectionData inj = measure_injection(src, *in.patches, *in.grid, *in.ops, model.n_kappa(),
                                        model.lambda, seed);
  DetectionData det = measure_detection(rcv, *in.patches, *in.grid, *in.ops, seed + 1);
  SolveSetup s = make_solve_setup(in, inj, det, true);
  require(s.map.n_red <= kOracleMaxRadiances,
          cat("oracle size guard: ", s.map.n_red, " > ", kOracleMaxRadiances));
  SparseOperator mat_r = realize_global(model, *in.comps, s.map);
  std::vector<double> inc = incident_radiance(in, inj, s.lists, model);
  const int T_o = horizon_factor * cfg.T;
  RealMatrix l0 = initial_radiance(s.map.n_red, s.lists, mat_r, inc, T_o);
  RealMatrix radiance = time_domain_solve(l0, s.vis_r, mat_r, s.delays_r, cfg.n_order, T_o);
  std::vector<double> el = detect_time(s.lists, radiance);
  Echogram out;
  out.dt = cfg.dt;
  out.e.assign(el.begin(), el.begin() + cfg.T);
  DirectArrival da = direct_arrival(src, rcv, *in.patches);
  add_direct_arrival(out.e, da, model);
  double g = model.gain();
  for (double& v : out.e) v *= g;
  return out;
}

}  // namespace dart
