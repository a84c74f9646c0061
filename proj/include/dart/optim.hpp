// Losses, hand-derived reverse-mode gradients through the full render
// pipeline, and the AdamW training loop with a cosine-annealed rate.
//
// The pipeline is a short fixed chain, so each operation carries its own
// adjoint instead of a general tape:
//   parameters -> realized materials -> L0 -> damped FFT -> series ->
//   inverse FFT -> detection -> gain -> losses
// Monte Carlo geometry (ray hits, visibility, delays, integrated geometry)
// is constant; directivity enters linearly through per-bin weight rows, so
// kappa keeps an exact gradient path.
#pragma once

#include <functional>
#include <limits>

#include "dart/oracle.hpp"

namespace dart {

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

struct LossBreakdown {
  double nmse = 0.0;
  double edc = 0.0;
  double object = 0.0;
  double symmetry = 0.0;
  double total = 0.0;
};

struct LossWeights {
  double nmse = 1.0, edc = 1.0, object = 1.0, symmetry = 1.0;
};

inline double loss_nmse(const Echogram& pred, const Echogram& truth) {
  require(pred.length() == truth.length(), "loss_nmse length mismatch");
  double num = 0.0, den = 0.0;
  for (int n = 0; n < pred.length(); ++n) {
    double d = pred.e[n] - truth.e[n];
    num += d * d;
    den += truth.e[n] * truth.e[n];
  }
  require(den > 0.0, "loss_nmse: all-zero ground truth");
  return num / den;
}

inline double loss_edc(const Echogram& pred, const Echogram& truth) {
  require(pred.length() == truth.length(), "loss_edc length mismatch");
  auto ep = edc_curve(pred.e);
  auto et = edc_curve(truth.e);
  double num = 0.0, den = 0.0;
  for (std::size_t n = 0; n < ep.size(); ++n) {
    num += std::abs(ep[n] - et[n]);
    den += std::abs(et[n]);
  }
  require(den > 0.0, "loss_edc: all-zero ground truth");
  return num / den;
}

// Mean L1 deviation of each patch's realized matrix from its group mean.
inline double loss_object(const std::vector<std::vector<double>>& dense,
                          const std::vector<int>& group_of, int n_groups) {
  if (dense.empty()) return 0.0;
  const std::size_t sz = dense[0].size();
  std::vector<std::vector<double>> mean(n_groups, std::vector<double>(sz, 0.0));
  std::vector<int> count(n_groups, 0);
  for (std::size_t p = 0; p < dense.size(); ++p) {
    count[group_of[p]]++;
    for (std::size_t e = 0; e < sz; ++e) mean[group_of[p]][e] += dense[p][e];
  }
  for (int g = 0; g < n_groups; ++g)
    if (count[g] > 0)
      for (double& v : mean[g]) v /= count[g];
  double sum = 0.0;
  for (std::size_t p = 0; p < dense.size(); ++p)
    for (std::size_t e = 0; e < sz; ++e) sum += std::abs(dense[p][e] - mean[group_of[p]][e]);
  return sum / (static_cast<double>(dense.size()) * sz);
}

// Azimuth rotation / flip applied to both incident and outgoing indices.
struct SymmetrySpec {
  enum Mode { kNone, kSampled, kFull };
  Mode mode = kFull;
  int j_rot = 0;
  int j_flip = 0;
};

namespace detail {

// index of the matrix entry whose azimuths are remapped by fn
template <typename Fn>
inline std::size_t remap_entry(const DirectionGrid& g, int out_bin, int in_bin, Fn&& fn) {
  int eo = g.ele_of(out_bin), ao = g.azi_of(out_bin);
  int ei = g.ele_of(in_bin), ai = g.azi_of(in_bin);
  int nb = g.bin_index(eo, fn(ao));
  int ni = g.bin_index(ei, fn(ai));
  return static_cast<std::size_t>(nb) * g.n_dir() + ni;
}

}  // namespace detail

// One symmetry term: ||P_j(M) - M||_1 summed over entries, where P_j remaps
// azimuth indices on both sides. rotate: a -> (a - j) mod N reads the source
// of a shift by j; flip: a -> (j - a) mod N.
inline double symmetry_term(const std::vector<double>& m, const DirectionGrid& g, int j,
                            bool flip, std::vector<double>* adj) {
  const int nd = g.n_dir();
  const int na = g.n_azi;
  double sum = 0.0;
  for (int ob = 0; ob < nd; ++ob) {
    for (int ib = 0; ib < nd; ++ib) {
      std::size_t src = detail::remap_entry(g, ob, ib, [&](int a) {
        return flip ? ((j - a) % na + na) % na : ((a - j) % na + na) % na;
      });
      std::size_t dst = static_cast<std::size_t>(ob) * nd + ib;
      double d = m[src] - m[dst];
      sum += std::abs(d);
      if (adj) {
        double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
        (*adj)[src] += s;
        (*adj)[dst] -= s;
      }
    }
  }
  return sum;
}

inline double loss_symmetry(const std::vector<std::vector<double>>& dense,
                            const DirectionGrid& g, const SymmetrySpec& spec,
                            std::vector<std::vector<double>>* adj = nullptr) {
  if (spec.mode == SymmetrySpec::kNone || dense.empty()) return 0.0;
  const double norm =
      1.0 / (static_cast<double>(dense.size()) * dense[0].size());
  double total = 0.0;
  auto add = [&](int j, bool flip, double weight) {
    for (std::size_t p = 0; p < dense.size(); ++p) {
      std::vector<double> local;
      std::vector<double>* ap = nullptr;
      if (adj) {
        local.assign(dense[p].size(), 0.0);
        ap = &local;
      }
      total += weight * norm * symmetry_term(dense[p], g, j, flip, ap);
      if (adj)
        for (std::size_t e = 0; e < local.size(); ++e) (*adj)[p][e] += weight * norm * local[e];
    }
  };
  if (spec.mode == SymmetrySpec::kSampled) {
    add(spec.j_rot, false, 1.0);
    add(spec.j_flip, true, 1.0);
  } else {
    for (int j = 0; j < g.n_azi; ++j) {
      add(j, false, 1.0 / g.n_azi);
      add(j, true, 1.0 / g.n_azi);
    }
  }
  return total;
}

// ---------------------------------------------------------------------------
// Parameter gradients
// ---------------------------------------------------------------------------

struct ParamGrads {
  std::vector<double> alpha_logit;
  std::vector<double> z_logit;
  std::vector<double> beta_logit;
  std::vector<double> kappa;
  double log_gain = 0.0;

  static ParamGrads zeros_like(const MaterialModel& m) {
    ParamGrads g;
    g.alpha_logit.assign(m.alpha_logit.size(), 0.0);
    g.z_logit.assign(m.z_logit.size(), 0.0);
    g.beta_logit.assign(m.beta_logit.size(), 0.0);
    g.kappa.assign(m.kappa.size(), 0.0);
    return g;
  }

  void add(const ParamGrads& o) {
    for (std::size_t i = 0; i < alpha_logit.size(); ++i) alpha_logit[i] += o.alpha_logit[i];
    for (std::size_t i = 0; i < z_logit.size(); ++i) z_logit[i] += o.z_logit[i];
    for (std::size_t i = 0; i < beta_logit.size(); ++i) beta_logit[i] += o.beta_logit[i];
    for (std::size_t i = 0; i < kappa.size(); ++i) kappa[i] += o.kappa[i];
    log_gain += o.log_gain;
  }

  bool finite() const {
    auto ok = [](const std::vector<double>& v) {
      for (double x : v)
        if (!std::isfinite(x)) return false;
      return true;
    };
    return ok(alpha_logit) && ok(z_logit) && ok(beta_logit) && ok(kappa) &&
           std::isfinite(log_gain);
  }
};

// Dense per-patch realization for every patch (the per-patch matrices also
// feed the regularizers and the parameter pullback).
inline std::vector<std::vector<double>> realize_all_dense(const MaterialModel& m,
                                                          const BsdfMatrices& comps) {
  std::vector<std::vector<double>> dense(m.n_pat);
  for (int p = 0; p < m.n_pat; ++p) dense[p] = realize_patch(m, comps, p);
  return dense;
}

inline SparseOperator realize_global_from_dense(const std::vector<std::vector<double>>& dense,
                                                const ReductionMap& map, int nd) {
  std::vector<CooEntry> entries;
  for (std::uint32_t r = 0; r < map.n_red; ++r) {
    std::uint32_t full_out = map.red_to_full[r];
    int patch = static_cast<int>(full_out) / nd;
    int out_bin = static_cast<int>(full_out) % nd;
    for (int l = 0; l < nd; ++l) {
      std::int32_t cc = map.full_to_red[static_cast<std::uint32_t>(patch) * nd + l];
      if (cc < 0) continue;
      double v = dense[patch][static_cast<std::size_t>(out_bin) * nd + l];
      if (v != 0.0) entries.push_back({r, static_cast<std::uint32_t>(cc), v});
    }
  }
  return SparseOperator::from_coo(map.n_red, map.n_red, std::move(entries));
}

// Pull a dense per-patch matrix adjoint back to the unconstrained parameters.
inline void pull_back_dense(const MaterialModel& m, const BsdfMatrices& comps,
                            const std::vector<std::vector<double>>& dense,
                            const std::vector<std::vector<double>>& d_dense, ParamGrads& g) {
  const int nd = m.n_dir;
  for (int p = 0; p < m.n_pat; ++p) {
    int blk = m.block_of[p];
    double logit = m.alpha_logit[blk];
    double sig = sigmoid(logit);
    double a = kAlphaMax * sig;
    double d_alpha = 0.0;
    if (m.variant == Variant::NP) {
      for (int k = 0; k < nd; ++k) {
        const double* drow = d_dense[p].data() + static_cast<std::size_t>(k) * nd;
        const double* mrow = dense[p].data() + static_cast<std::size_t>(k) * nd;
        // dense = alpha * softmax(z_row); recover s = dense / alpha
        double dot_ds_s = 0.0;
        for (int l = 0; l < nd; ++l) {
          d_alpha += drow[l] * (mrow[l] / a);
          dot_ds_s += drow[l] * a * (mrow[l] / a);
        }
        double* gz = g.z_logit.data() +
                     (static_cast<std::size_t>(blk) * nd + k) * nd;
        for (int l = 0; l < nd; ++l) {
          double s = mrow[l] / a;
          gz[l] += s * (drow[l] * a - dot_ds_s);
        }
      }
    } else {
      auto w = beta_weights(m, blk);
      const int nc = m.components.count();
      std::vector<double> d_beta(nc, 0.0);
      for (int c = 0; c < nc; ++c) {
        const auto& comp = comps[m.components.active[c]];
        double s = 0.0;
        for (std::size_t e = 0; e < comp.size(); ++e) s += d_dense[p][e] * comp[e];
        d_beta[c] = a * s;
      }
      for (std::size_t e = 0; e < dense[p].size(); ++e)
        d_alpha += d_dense[p][e] * (dense[p][e] / a);
      double dot_db_b = 0.0;
      for (int c = 0; c < nc; ++c) dot_db_b += d_beta[c] * w[c];
      for (int c = 0; c < nc; ++c)
        g.beta_logit[static_cast<std::size_t>(blk) * nc + c] += w[c] * (d_beta[c] - dot_db_b);
    }
    g.alpha_logit[blk] += d_alpha * kAlphaMax * sig * (1.0 - sig);
  }
}

// ---------------------------------------------------------------------------
// Prepared measurement data and the shared reduced-space solve context.
// ---------------------------------------------------------------------------

struct PreparedPair {
  InjectionData inj;
  DetectionData det;
  DirectArrival da;
  Echogram truth;
  PairLists lists;
};

struct SharedSolve {
  ReductionMap map;
  SparseOperator vis_r;
  SparseOperator vis_r_t;  // transpose, for the adjoint sweep
  DelayBank delays_r;
  ComplexMatrix delay_spec;
};

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t s = seed ^ (salt * 0x9e3779b97f4a7c15ull + 0x7f4a7c15ull);
  return detail::splitmix64(s);
}

inline SparseOperator transpose_op(const SparseOperator& a) {
  std::vector<CooEntry> entries;
  entries.reserve(a.nnz());
  for (std::uint32_t r = 0; r < a.rows; ++r)
    for (std::uint32_t e = a.row_ptr[r]; e < a.row_ptr[r + 1]; ++e)
      entries.push_back({a.col_idx[e], r, a.val[e]});
  return SparseOperator::from_coo(a.cols, a.rows, std::move(entries));
}

// Measures injection/detection for every pair, unions the supports, and
// builds one reduction shared by the whole dataset (lossless for each pair).
inline SharedSolve build_shared_solve(const RenderInputs& in,
                                      std::vector<PreparedPair>& pairs,
                                      const std::vector<Measurement>& ms,
                                      const SolverConfig& cfg, int n_kappa, double lambda,
                                      std::uint64_t seed) {
  const std::uint32_t n_rad = in.ops->n_rad();
  std::vector<std::uint8_t> inj_support(n_rad, 0), det_support(n_rad, 0);
  pairs.resize(ms.size());
  for (std::size_t i = 0; i < ms.size(); ++i) {
    pairs[i].inj = measure_injection(ms[i].src, *in.patches, *in.grid, *in.ops, n_kappa, lambda,
                                     derive_seed(seed, 2 * i));
    pairs[i].det = measure_detection(ms[i].rcv, *in.patches, *in.grid, *in.ops,
                                     derive_seed(seed, 2 * i + 1));
    pairs[i].da = direct_arrival(ms[i].src, ms[i].rcv, *in.patches);
    for (std::uint32_t f = 0; f < n_rad; ++f) {
      inj_support[f] |= pairs[i].inj.support[f];
      det_support[f] |= pairs[i].det.support[f];
    }
  }
  SharedSolve sh;
  sh.map = build_reduction(in.ops->visibility, inj_support, det_support);
  sh.vis_r = reduce_operator(in.ops->visibility, sh.map);
  sh.vis_r_t = transpose_op(sh.vis_r);
  sh.delays_r = reduce_delays(in.ops->delays, sh.map);
  sh.delay_spec = delay_spectra(sh.delays_r, cfg.gamma, cfg.T);
  for (std::size_t i = 0; i < ms.size(); ++i)
    pairs[i].lists = make_pair_lists(sh.map, pairs[i].inj, pairs[i].det);
  return sh;
}

// ---------------------------------------------------------------------------
// Forward pass (optionally keeping what the adjoint sweep needs).
// ---------------------------------------------------------------------------

struct ForwardState {
  std::vector<std::vector<double>> dense;
  SparseOperator mat_r;
  SparseOperator mat_r_t;
  std::vector<double> inc;
  RealMatrix l0;
  SpectralField l0_spec;
  SpectralField solved;
  RealMatrix radiance;                  // after clamping
  std::vector<std::uint8_t> clamped;    // entries zeroed by the clamp
  Echogram pred;
};

inline void forward_pass(const RenderInputs& in, const MaterialModel& model,
                         const SharedSolve& sh, const PreparedPair& pair,
                         const SolverConfig& cfg, ForwardState& fs, bool keep_tape) {
  const int T = cfg.T;
  require(sh.delay_spec.cols == static_cast<std::size_t>(cfg.n_freq()),
          "SharedSolve was built for a different solver configuration");
  fs.dense = realize_all_dense(model, *in.comps);
  fs.mat_r = realize_global_from_dense(fs.dense, sh.map, model.n_dir);
  if (keep_tape) fs.mat_r_t = transpose_op(fs.mat_r);
  fs.inc = incident_radiance(in, pair.inj, pair.lists, model);
  fs.l0 = initial_radiance(sh.map.n_red, pair.lists, fs.mat_r, fs.inc, T);
  fs.l0_spec = damped_forward_transform(fs.l0, cfg.gamma);
  fs.solved = series_solve(fs.l0_spec, sh.delay_spec, sh.vis_r, fs.mat_r, cfg.n_order);

  // Inverse transform with the compensation window, tracking clamped entries.
  const std::uint32_t n = sh.map.n_red;
  fs.radiance = RealMatrix(n, T);
  fs.clamped.assign(static_cast<std::size_t>(n) * T, 0);
  auto w = damping_window(T, cfg.gamma);
  parallel_chunks(n, [&](int, std::size_t b, std::size_t e) {
    Fft plan(T);
    std::vector<double> buf(T);
    for (std::size_t r = b; r < e; ++r) {
      irfft(plan, fs.solved.a.row(r), T, buf.data());
      double* y = fs.radiance.row(r);
      for (int t = 0; t < T; ++t) y[t] = buf[t] / w[t];
    }
  });
  double peak = 0.0;
  for (double v : fs.radiance.a) peak = std::max(peak, std::abs(v));
  double floor_tol = -1e-6 * peak;
  for (std::size_t i = 0; i < fs.radiance.a.size(); ++i) {
    if (fs.radiance.a[i] < 0.0) {
      require(fs.radiance.a[i] >= floor_tol, "negative radiance beyond noise tolerance");
      fs.radiance.a[i] = 0.0;
      fs.clamped[i] = 1;
    }
  }

  fs.pred.dt = cfg.dt;
  fs.pred.e = detect_time(pair.lists, fs.radiance);
  add_direct_arrival(fs.pred.e, pair.da, model);
  double g = model.gain();
  for (double& v : fs.pred.e) v *= g;
}

inline Echogram forward_echogram(const RenderInputs& in, const MaterialModel& model,
                                 const SharedSolve& sh, const PreparedPair& pair,
                                 const SolverConfig& cfg) {
  ForwardState fs;
  forward_pass(in, model, sh, pair, cfg, fs, false);
  return fs.pred;
}

inline LossBreakdown compute_losses(const Echogram& pred, const Echogram& truth,
                                    const std::vector<std::vector<double>>& dense,
                                    const std::vector<int>& group_of, int n_groups,
                                    const DirectionGrid& grid, Variant variant,
                                    const SymmetrySpec& sym, const LossWeights& w,
                                    std::vector<std::vector<double>>* sym_adj = nullptr) {
  LossBreakdown lb;
  lb.nmse = w.nmse * loss_nmse(pred, truth);
  lb.edc = w.edc * loss_edc(pred, truth);
  lb.object = w.object * loss_object(dense, group_of, n_groups);
  if (variant == Variant::NP)
    lb.symmetry = w.symmetry * loss_symmetry(dense, grid, sym, sym_adj);
  lb.total = lb.nmse + lb.edc + lb.object + lb.symmetry;
  return lb;
}

struct GradientResult {
  LossBreakdown losses;
  ParamGrads grads;
  Echogram pred;
};

// Full reverse-mode sweep for one measurement.
inline GradientResult gradient(const RenderInputs& in, const MaterialModel& model,
                               const SharedSolve& sh, const PreparedPair& pair,
                               const SolverConfig& cfg, const SymmetrySpec& sym,
                               const LossWeights& weights = {}) {
  cfg.validate();
  const int T = cfg.T;
  const int nf = cfg.n_freq();
  const std::uint32_t n = sh.map.n_red;
  const int nd = model.n_dir;

  ForwardState fs;
  forward_pass(in, model, sh, pair, cfg, fs, true);

  GradientResult res;
  res.pred = fs.pred;
  res.grads = ParamGrads::zeros_like(model);

  std::vector<int> group_of(model.n_pat);
  for (int p = 0; p < model.n_pat; ++p) group_of[p] = in.patches->patches[p].group;
  int n_groups = in.patches->n_groups;

  // --- losses and their adjoint on the predicted echogram -----------------
  std::vector<std::vector<double>> d_dense(model.n_pat,
                                           std::vector<double>(static_cast<std::size_t>(nd) * nd, 0.0));
  res.losses = compute_losses(fs.pred, pair.truth, fs.dense, group_of, n_groups, *in.grid,
                              model.variant, sym, weights, &d_dense);
  // loss_symmetry writes an unweighted adjoint; scale it before anything
  // else accumulates into d_dense.
  if (weights.symmetry != 1.0)
    for (auto& dd : d_dense)
      for (double& v : dd) v *= weights.symmetry;

  const auto& truth = pair.truth.e;
  std::vector<double> d_pred(T, 0.0);
  {
    double den2 = 0.0;
    for (double v : truth) den2 += v * v;
    for (int t = 0; t < T; ++t)
      d_pred[t] += weights.nmse * 2.0 * (fs.pred.e[t] - truth[t]) / den2;
    auto ep = edc_curve(fs.pred.e);
    auto et = edc_curve(truth);
    double den1 = 0.0;
    for (double v : et) den1 += std::abs(v);
    double running = 0.0;
    for (int t = 0; t < T; ++t) {
      double d = ep[t] - et[t];
      running += weights.edc * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) / den1;
      d_pred[t] += running;
    }
  }

  // --- object loss adjoint (sign minus group-mean of signs) ---------------
  {
    const std::size_t sz = static_cast<std::size_t>(nd) * nd;
    const double norm = weights.object / (static_cast<double>(model.n_pat) * sz);
    std::vector<std::vector<double>> mean(n_groups, std::vector<double>(sz, 0.0));
    std::vector<int> count(n_groups, 0);
    for (int p = 0; p < model.n_pat; ++p) {
      count[group_of[p]]++;
      for (std::size_t e = 0; e < sz; ++e) mean[group_of[p]][e] += fs.dense[p][e];
    }
    for (int g = 0; g < n_groups; ++g)
      if (count[g] > 0)
        for (double& v : mean[g]) v /= count[g];
    std::vector<std::vector<double>> sgn(model.n_pat, std::vector<double>(sz, 0.0));
    std::vector<std::vector<double>> sgn_sum(n_groups, std::vector<double>(sz, 0.0));
    for (int p = 0; p < model.n_pat; ++p) {
      for (std::size_t e = 0; e < sz; ++e) {
        double d = fs.dense[p][e] - mean[group_of[p]][e];
        sgn[p][e] = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
        sgn_sum[group_of[p]][e] += sgn[p][e];
      }
    }
    for (int p = 0; p < model.n_pat; ++p)
      for (std::size_t e = 0; e < sz; ++e)
        d_dense[p][e] += norm * (sgn[p][e] - sgn_sum[group_of[p]][e] / count[group_of[p]]);
  }

  // --- gain and direct arrival ---------------------------------------------
  double g = model.gain();
  for (int t = 0; t < T; ++t) res.grads.log_gain += d_pred[t] * fs.pred.e[t];
  std::vector<double> d_base(T);  // adjoint of E_L + E_D
  for (int t = 0; t < T; ++t) d_base[t] = g * d_pred[t];
  if (pair.da.visible) {
    double dv = 0.0;
    if (pair.da.n0 < T) dv += pair.da.w0 * d_base[pair.da.n0];
    if (pair.da.n0 + 1 < T) dv += (1.0 - pair.da.w0) * d_base[pair.da.n0 + 1];
    std::vector<double> wrow(model.n_kappa());
    directivity_weights(pair.da.theta, model.n_kappa(), model.lambda, wrow.data());
    for (int k = 0; k < model.n_kappa(); ++k)
      res.grads.kappa[k] += dv * pair.da.base * wrow[k];
  }

  // --- detection adjoint: radiance signals ---------------------------------
  RealMatrix d_rad(n, T);
  const auto& L = pair.lists;
  for (std::size_t t = 0; t < L.det_idx.size(); ++t) {
    double* drow = d_rad.row(L.det_idx[t]);
    int n0 = static_cast<int>(std::floor(L.det_delay[t]));
    int n1 = static_cast<int>(std::ceil(L.det_delay[t]));
    double w0 = L.det_w[t] * L.det_weight[t];
    double w1 = L.det_w[t] * (1.0 - L.det_weight[t]);
    for (int m = n0; m < T; ++m) drow[m - n0] += w0 * d_base[m];
    for (int m = n1; m < T; ++m) drow[m - n1] += w1 * d_base[m];
  }
  for (std::size_t i = 0; i < d_rad.a.size(); ++i)
    if (fs.clamped[i]) d_rad.a[i] = 0.0;

  // --- inverse-transform adjoint: spectrum of the solved field -------------
  ComplexMatrix d_solved(n, nf);
  auto win = damping_window(T, cfg.gamma);
  parallel_chunks(n, [&](int, std::size_t b, std::size_t e) {
    Fft plan(T);
    std::vector<double> buf(T);
    std::vector<c64> spec(nf);
    for (std::size_t r = b; r < e; ++r) {
      const double* dr = d_rad.row(r);
      for (int t = 0; t < T; ++t) buf[t] = dr[t] / win[t];
      rfft(plan, buf.data(), T, spec.data());
      c64* out = d_solved.row(r);
      for (int f = 0; f < nf; ++f) {
        double cf = (f == 0 || f == T / 2) ? 1.0 : 2.0;
        out[f] = spec[f] * (cf / T);
      }
    }
  });

  // --- series adjoint per frequency bin ------------------------------------
  // Recomputes the per-order states, accumulates material-entry gradients
  // per chunk (merged in chunk order), and emits the adjoint of the L0
  // spectrum.
  ComplexMatrix d_l0_spec(n, nf);
  std::vector<std::vector<double>> gmat_chunks(kParallelChunks);
  parallel_chunks(nf, [&](int chunk, std::size_t fb, std::size_t fe) {
    std::vector<double>& gmat = gmat_chunks[chunk];
    gmat.assign(fs.mat_r.nnz(), 0.0);
    const int N = cfg.n_order;
    std::vector<std::vector<c64>> u(N + 1, std::vector<c64>(n));
    std::vector<c64> tmp(n), tmp2(n), ubar(n), wvec(n);
    for (std::size_t f = fb; f < fe; ++f) {
      for (std::uint32_t r = 0; r < n; ++r) u[0][r] = fs.l0_spec.a.at(r, f);
      for (int k = 1; k <= N; ++k) {
        for (std::uint32_t r = 0; r < n; ++r) tmp[r] = sh.delay_spec.at(r, f) * u[k - 1][r];
        sh.vis_r.matvec(tmp.data(), tmp2.data());
        fs.mat_r.matvec(tmp2.data(), u[k].data());
      }
      for (std::uint32_t r = 0; r < n; ++r) ubar[r] = d_solved.at(r, f);
      for (int k = N; k >= 1; --k) {
        for (std::uint32_t r = 0; r < n; ++r) tmp[r] = sh.delay_spec.at(r, f) * u[k - 1][r];
        sh.vis_r.matvec(tmp.data(), wvec.data());
        for (std::uint32_t r = 0; r < n; ++r) {
          c64 ub = ubar[r];
          for (std::uint32_t e = fs.mat_r.row_ptr[r]; e < fs.mat_r.row_ptr[r + 1]; ++e) {
            const c64& wc = wvec[fs.mat_r.col_idx[e]];
            gmat[e] += ub.real() * wc.real() + ub.imag() * wc.imag();
          }
        }
        fs.mat_r_t.matvec(ubar.data(), tmp.data());
        sh.vis_r_t.matvec(tmp.data(), tmp2.data());
        for (std::uint32_t r = 0; r < n; ++r)
          ubar[r] = d_solved.at(r, f) + std::conj(sh.delay_spec.at(r, f)) * tmp2[r];
      }
      for (std::uint32_t r = 0; r < n; ++r) d_l0_spec.at(r, f) = ubar[r];
    }
  });
  std::vector<double> gmat(fs.mat_r.nnz(), 0.0);
  for (const auto& chunk : gmat_chunks)
    if (!chunk.empty())
      for (std::size_t e = 0; e < gmat.size(); ++e) gmat[e] += chunk[e];

  // --- forward-transform adjoint: back to the L0 time signals --------------
  RealMatrix d_l0(n, T);
  parallel_chunks(n, [&](int, std::size_t b, std::size_t e) {
    Fft plan(T);
    std::vector<c64> buf(T);
    for (std::size_t r = b; r < e; ++r) {
      const c64* src = d_l0_spec.row(r);
      for (int f = 0; f < nf; ++f) buf[f] = src[f];
      for (int f = nf; f < T; ++f) buf[f] = c64{0.0, 0.0};
      plan.inverse_unscaled(buf.data());
      double* dst = d_l0.row(r);
      for (int t = 0; t < T; ++t) dst[t] = win[t] * buf[t].real();
    }
  });

  // --- injection adjoint: material entries and incident radiance -----------
  std::vector<std::vector<std::pair<std::uint32_t, std::uint32_t>>> cols(n);
  for (std::uint32_t r = 0; r < fs.mat_r.rows; ++r)
    for (std::uint32_t e = fs.mat_r.row_ptr[r]; e < fs.mat_r.row_ptr[r + 1]; ++e)
      cols[fs.mat_r.col_idx[e]].push_back({r, e});
  std::vector<double> d_inc(L.inc_idx.size(), 0.0);
  for (std::size_t t = 0; t < L.inc_idx.size(); ++t) {
    int n0 = static_cast<int>(std::floor(L.inc_delay[t]));
    int n1 = static_cast<int>(std::ceil(L.inc_delay[t]));
    double w0 = L.inc_weight[t];
    double w1 = 1.0 - w0;
    if (n0 >= T) continue;
    for (const auto& [row, e] : cols[L.inc_idx[t]]) {
      double d = w0 * d_l0.at(row, n0) + (n1 < T ? w1 * d_l0.at(row, n1) : 0.0);
      gmat[e] += d * fs.inc[t];
      d_inc[t] += d * fs.mat_r.val[e];
    }
  }
  for (std::size_t t = 0; t < L.inc_idx.size(); ++t) {
    std::uint32_t full = L.inc_full[t];
    int patch = static_cast<int>(full) / nd;
    int bin = static_cast<int>(full) % nd;
    double gi = in.ops->gi.value(in.ops->patch_area[patch], bin);
    const double* row = pair.inj.kappa_acc.data() + static_cast<std::size_t>(full) * pair.inj.n_kappa;
    double scale = d_inc[t] / (pair.inj.n_ray * gi);
    for (int k = 0; k < pair.inj.n_kappa; ++k) res.grads.kappa[k] += scale * row[k];
  }

  // --- material-entry gradients back onto the dense per-patch matrices -----
  for (std::uint32_t r = 0; r < fs.mat_r.rows; ++r) {
    std::uint32_t full_out = sh.map.red_to_full[r];
    int patch = static_cast<int>(full_out) / nd;
    int out_bin = static_cast<int>(full_out) % nd;
    for (std::uint32_t e = fs.mat_r.row_ptr[r]; e < fs.mat_r.row_ptr[r + 1]; ++e) {
      int in_bin = static_cast<int>(sh.map.red_to_full[fs.mat_r.col_idx[e]]) % nd;
      d_dense[patch][static_cast<std::size_t>(out_bin) * nd + in_bin] += gmat[e];
    }
  }

  pull_back_dense(model, *in.comps, fs.dense, d_dense, res.grads);
  require(res.grads.finite(), "non-finite gradient");
  return res;
}

// Loss-only evaluation (used by validation and finite-difference checks).
inline LossBreakdown evaluate(const RenderInputs& in, const MaterialModel& model,
                              const SharedSolve& sh, const PreparedPair& pair,
                              const SolverConfig& cfg, const SymmetrySpec& sym,
                              const LossWeights& weights = {}) {
  ForwardState fs;
  forward_pass(in, model, sh, pair, cfg, fs, false);
  std::vector<int> group_of(model.n_pat);
  for (int p = 0; p < model.n_pat; ++p) group_of[p] = in.patches->patches[p].group;
  return compute_losses(fs.pred, pair.truth, fs.dense, group_of, in.patches->n_groups, *in.grid,
                        model.variant, sym, weights);
}

// ---------------------------------------------------------------------------
// AdamW with decoupled weight decay (decay only on the unconstrained logits)
// and a cosine-annealed learning rate.
// ---------------------------------------------------------------------------

struct FitConfig {
  int steps = 25000;
  double lr = 1e-2;
  double weight_decay = 1e-2;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int val_interval = 0;  // 0: steps / 25
  std::uint64_t seed = 1;
  LossWeights weights;
  bool sampled_symmetry = true;  // one random shift per step; tests use full
};

inline double cosine_lr(double base, int step, int total) {
  if (total <= 0) return base;
  return base * 0.5 * (1.0 + std::cos(kPi * static_cast<double>(step) / total));
}

class AdamW {
 public:
  AdamW(const MaterialModel& model, const FitConfig& cfg)
      : cfg_(cfg), m_(ParamGrads::zeros_like(model)), v_(ParamGrads::zeros_like(model)) {}

  void step(MaterialModel& model, const ParamGrads& g, double lr) {
    ++t_;
    update(model.alpha_logit, g.alpha_logit, m_.alpha_logit, v_.alpha_logit, lr, true);
    update(model.z_logit, g.z_logit, m_.z_logit, v_.z_logit, lr, true);
    update(model.beta_logit, g.beta_logit, m_.beta_logit, v_.beta_logit, lr, true);
    update(model.kappa, g.kappa, m_.kappa, v_.kappa, lr, false);
    scalar_update(model.log_gain, g.log_gain, m_.log_gain, v_.log_gain, lr);
  }

 private:
  void update(std::vector<double>& p, const std::vector<double>& g, std::vector<double>& m,
              std::vector<double>& v, double lr, bool decay) {
    double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      double mh = m[i] / bc1;
      double vh = v[i] / bc2;
      p[i] -= lr * mh / (std::sqrt(vh) + cfg_.eps);
      if (decay) p[i] -= lr * cfg_.weight_decay * p[i];
    }
  }

  void scalar_update(double& p, double g, double& m, double& v, double lr) {
    double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
    v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g * g;
    p -= lr * (m / bc1) / (std::sqrt(v / bc2) + cfg_.eps);
  }

  FitConfig cfg_;
  ParamGrads m_, v_;
  int t_ = 0;
};

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainLogRow {
  int step = 0;
  double lr = 0.0, nmse = 0.0, edc = 0.0, object = 0.0, symmetry = 0.0, total = 0.0,
         val_l1 = 0.0;
};

struct FitResult {
  MaterialModel best;
  MaterialModel final;
  std::vector<TrainLogRow> log;
  double best_val = 0.0;
  int best_step = -1;
  double initial_total = 0.0;
  double final_total = 0.0;
};

inline double validation_l1(const RenderInputs& in, const MaterialModel& model,
                            const SharedSolve& sh, const std::vector<PreparedPair>& val,
                            const SolverConfig& cfg) {
  double sum = 0.0;
  for (const auto& pair : val) {
    Echogram pred = forward_echogram(in, model, sh, pair, cfg);
    for (int t = 0; t < pred.length(); ++t) sum += std::abs(pred.e[t] - pair.truth.e[t]);
  }
  return val.empty() ? 0.0 : sum / val.size();
}

inline FitResult fit(const RenderInputs& in, MaterialModel model,
                     const SharedSolve& sh, const std::vector<PreparedPair>& train,
                     const std::vector<PreparedPair>& val, const SolverConfig& cfg,
                     const FitConfig& fcfg) {
  require(!train.empty(), "fit needs at least one training measurement");
  FitResult res;
  res.best = model;
  if (fcfg.steps == 0) {
    res.final = model;
    return res;
  }
  AdamW opt(model, fcfg);
  int val_every = fcfg.val_interval > 0 ? fcfg.val_interval
                                        : std::max(1, fcfg.steps / 25);
  // Shuffled epochs over the measurements, one per step.
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Prng shuffle_rng = Prng::keyed(fcfg.seed, 0xf17);
  Prng sym_rng = Prng::keyed(fcfg.seed, 0x517);
  auto reshuffle = [&]() {
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);
  };
  reshuffle();

  res.best_val = std::numeric_limits<double>::infinity();
  for (int step = 0; step < fcfg.steps; ++step) {
    if (step > 0 && step % train.size() == 0) reshuffle();
    std::size_t which = order[step % train.size()];
    SymmetrySpec sym;
    if (model.variant == Variant::NP) {
      sym.mode = fcfg.sampled_symmetry ? SymmetrySpec::kSampled : SymmetrySpec::kFull;
      sym.j_rot = static_cast<int>(sym_rng.below(in.grid->n_azi));
      sym.j_flip = static_cast<int>(sym_rng.below(in.grid->n_azi));
    } else {
      sym.mode = SymmetrySpec::kNone;
    }
    double lr = cosine_lr(fcfg.lr, step, fcfg.steps);
    GradientResult gr = gradient(in, model, sh, train[which], cfg, sym, fcfg.weights);
    if (!std::isfinite(gr.losses.total))
      fail(cat("divergence (non-finite loss) at step ", step));
    if (step == 0) res.initial_total = gr.losses.total;
    res.final_total = gr.losses.total;
    opt.step(model, gr.grads, lr);

    if ((step + 1) % val_every == 0 || step + 1 == fcfg.steps) {
      double vl1 = validation_l1(in, model, sh, val, cfg);
      res.log.push_back({step + 1, lr, gr.losses.nmse, gr.losses.edc, gr.losses.object,
                         gr.losses.symmetry, gr.losses.total, vl1});
      if (vl1 < res.best_val) {
        res.best_val = vl1;
        res.best = model;
        res.best_step = step + 1;
      }
    }
  }
  res.final = model;
  if (res.best_step < 0) res.best = model;
  return res;
}

inline void write_training_log(const std::string& path, const std::vector<TrainLogRow>& rows) {
  std::ofstream out(path);
  if (!out) fail(cat("cannot write training log: ", path));
  out << "step,lr,nmse,edc,object,symmetry,total,val_l1\n";
  out.precision(12);
  for (const auto& r : rows)
    out << r.step << "," << r.lr << "," << r.nmse << "," << r.edc << "," << r.object << ","
        << r.symmetry << "," << r.total << "," << r.val_l1 << "\n";
}

}  // namespace dart
