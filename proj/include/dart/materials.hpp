// Learnable per-patch material operators. Two parameterizations:
//   NP: alpha_i * row-stochastic matrix realized by a per-outgoing-row
//       softmax over incident bins.
//   P:  alpha_i * convex combination (softmax weights) of the fixed analytic
//       BSDF component matrices.
// Both keep every constraint satisfied for any unconstrained parameter
// value. A shared axially symmetric source directivity and a log-gain
// complete the parameter set.
#pragma once

#include <array>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "dart/precompute.hpp"

namespace dart {

enum class Variant : std::uint8_t { NP = 0, P = 1 };

// alpha stays strictly below 1 so the reflection series is summable.
inline constexpr double kAlphaMax = 0.999;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct ComponentMask {
  std::vector<int> active;  // indices into BsdfMatrices

  static ComponentMask parse(const std::string& name) {
    if (name == "all")
      return {{kDiffuseReflection, kDiffuseTransmission, kSpecularReflection,
               kSpecularTransmission}};
    if (name == "reflection-only") return {{kDiffuseReflection, kSpecularReflection}};
    if (name == "specular-only") return {{kSpecularReflection}};
    if (name == "diffuse-only") return {{kDiffuseReflection}};
    fail(cat("unknown component set: ", name,
             " (expected all|reflection-only|specular-only|diffuse-only)"));
  }

  int count() const { return static_cast<int>(active.size()); }
};

struct MaterialModel {
  Variant variant = Variant::NP;
  int n_pat = 0;
  int n_dir = 0;
  bool shared = false;            // parameters per group instead of per patch
  std::vector<int> block_of;      // patch -> parameter block
  int n_blocks = 0;

  std::vector<double> alpha_logit;  // per block
  std::vector<double> z_logit;      // NP: per block, n_dir*n_dir, [out*n_dir+in]
  std::vector<double> beta_logit;   // P: per block, one per active component
  ComponentMask components;

  std::vector<double> kappa;  // source directivity intensities over [0, pi]
  double lambda = 8.0;
  double log_gain = 0.0;  // g = exp(log_gain)

  double alpha(int patch) const { return kAlphaMax * sigmoid(alpha_logit[block_of[patch]]); }
  double gain() const { return std::exp(log_gain); }

  int n_kappa() const { return static_cast<int>(kappa.size()); }
};

inline MaterialModel make_material_model(Variant variant, const PatchSet& ps, int n_dir,
                                         const ComponentMask& mask, bool shared = false,
                                         int n_kappa = 128) {
  MaterialModel m;
  m.variant = variant;
  m.n_pat = ps.size();
  m.n_dir = n_dir;
  m.shared = shared;
  m.components = mask;
  m.block_of.resize(m.n_pat);
  for (int i = 0; i < m.n_pat; ++i) m.block_of[i] = shared ? ps.patches[i].group : i;
  m.n_blocks = shared ? ps.n_groups : m.n_pat;
  m.alpha_logit.assign(m.n_blocks, 0.0);  // alpha = 0.4995, near the 0.5 init
  if (variant == Variant::NP)
    m.z_logit.assign(static_cast<std::size_t>(m.n_blocks) * n_dir * n_dir, 0.0);
  else
    m.beta_logit.assign(static_cast<std::size_t>(m.n_blocks) * mask.count(), 0.0);
  m.kappa.assign(n_kappa, 1.0);  // isotropic start
  m.log_gain = 0.0;
  return m;
}

// Realized softmax weights over incident bins for one outgoing row (NP).
inline void np_row_softmax(const double* z_row, int n, double* out) {
  double mx = z_row[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, z_row[i]);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    out[i] = std::exp(z_row[i] - mx);
    sum += out[i];
  }
  for (int i = 0; i < n; ++i) out[i] /= sum;
}

inline std::vector<double> beta_weights(const MaterialModel& m, int block) {
  int nc = m.components.count();
  std::vector<double> w(nc);
  np_row_softmax(m.beta_logit.data() + static_cast<std::size_t>(block) * nc, nc, w.data());
  return w;
}

// Dense n_dir x n_dir realized matrix for one patch, [out * n_dir + in].
inline std::vector<double> realize_patch(const MaterialModel& m, const BsdfMatrices& comps,
                                         int patch) {
  const int nd = m.n_dir;
  std::vector<double> out(static_cast<std::size_t>(nd) * nd, 0.0);
  int blk = m.block_of[patch];
  double a = m.alpha(patch);
  if (m.variant == Variant::NP) {
    const double* z = m.z_logit.data() + static_cast<std::size_t>(blk) * nd * nd;
    for (int k = 0; k < nd; ++k) {
      np_row_softmax(z + static_cast<std::size_t>(k) * nd, nd, out.data() + static_cast<std::size_t>(k) * nd);
      for (int l = 0; l < nd; ++l) out[static_cast<std::size_t>(k) * nd + l] *= a;
    }
  } else {
    auto w = beta_weights(m, blk);
    for (int c = 0; c < m.components.count(); ++c) {
      const auto& comp = comps[m.components.active[c]];
      double s = a * w[c];
      for (std::size_t e = 0; e < out.size(); ++e) out[e] += s * comp[e];
    }
  }
  return out;
}

// Global material operator on the reduced index set: block diagonal over
// patches, row = outgoing radiance, col = incident radiance.
inline SparseOperator realize_global(const MaterialModel& m, const BsdfMatrices& comps,
                                     const ReductionMap& map) {
  const int nd = m.n_dir;
  std::vector<CooEntry> entries;
  std::vector<double> dense;
  int last_patch = -1;
  for (std::uint32_t r = 0; r < map.n_red; ++r) {
    std::uint32_t full_out = map.red_to_full[r];
    int patch = static_cast<int>(full_out) / nd;
    int out_bin = static_cast<int>(full_out) % nd;
    if (patch != last_patch) {
      dense = realize_patch(m, comps, patch);
      last_patch = patch;
    }
    for (int l = 0; l < nd; ++l) {
      std::int32_t cc = map.full_to_red[static_cast<std::uint32_t>(patch) * nd + l];
      if (cc < 0) continue;
      double v = dense[static_cast<std::size_t>(out_bin) * nd + l];
      if (v != 0.0)
        entries.push_back({r, static_cast<std::uint32_t>(cc), v});
    }
  }
  return SparseOperator::from_coo(map.n_red, map.n_red, std::move(entries));
}

// ---------------------------------------------------------------------------
// Axially symmetric directivity: intensity kappa_k on angle bins phi_k in
// [0, pi], interpolated with softmax weights exp(-lambda |theta - phi_k|).
// The printed weight uses +lambda, which would emphasize the most distant
// bins; the interpolating sign is implemented.
// ---------------------------------------------------------------------------

inline void directivity_weights(double theta, int n_kappa, double lambda, double* w) {
  double sum = 0.0;
  for (int k = 0; k < n_kappa; ++k) {
    double phi = kPi * k / (n_kappa - 1);
    w[k] = std::exp(-lambda * std::abs(theta - phi));
    sum += w[k];
  }
  for (int k = 0; k < n_kappa; ++k) w[k] /= sum;
}

inline double directivity_gain(const Vec3& dir, const Vec3& orientation,
                               const std::vector<double>& kappa, double lambda) {
  double c = std::clamp(dot(normalized(dir), normalized(orientation)), -1.0, 1.0);
  double theta = std::acos(c);
  std::vector<double> w(kappa.size());
  directivity_weights(theta, static_cast<int>(kappa.size()), lambda, w.data());
  double g = 0.0;
  for (std::size_t k = 0; k < kappa.size(); ++k) g += w[k] * kappa[k];
  return g;
}

// ---------------------------------------------------------------------------
// Checkpoint serialization and the per-patch alpha text export.
// ---------------------------------------------------------------------------

inline std::string serialize_checkpoint(const MaterialModel& m) {
  std::string buf;
  buf.append("DARTCKP1");
  detail::put<std::uint8_t>(buf, static_cast<std::uint8_t>(m.variant));
  detail::put<std::uint8_t>(buf, m.shared ? 1 : 0);
  detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(m.n_pat));
  detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(m.n_dir));
  detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(m.n_blocks));
  detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(m.components.count()));
  for (int c : m.components.active) detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(c));
  for (int b : m.block_of) detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(b));
  detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(m.kappa.size()));
  detail::put<double>(buf, m.lambda);
  detail::put<double>(buf, m.log_gain);
  for (double v : m.alpha_logit) detail::put<double>(buf, v);
  for (double v : m.z_logit) detail::put<double>(buf, v);
  for (double v : m.beta_logit) detail::put<double>(buf, v);
  for (double v : m.kappa) detail::put<double>(buf, v);
  return buf;
}

inline MaterialModel deserialize_checkpoint(const std::string& buf) {
  require(buf.size() >= 8 && buf.compare(0, 8, "DARTCKP1") == 0, "bad checkpoint magic");
  std::size_t off = 8;
  MaterialModel m;
  m.variant = static_cast<Variant>(detail::take<std::uint8_t>(buf, off));
  m.shared = detail::take<std::uint8_t>(buf, off) != 0;
  m.n_pat = detail::take<std::uint32_t>(buf, off);
  m.n_dir = detail::take<std::uint32_t>(buf, off);
  m.n_blocks = detail::take<std::uint32_t>(buf, off);
  std::uint32_t nc = detail::take<std::uint32_t>(buf, off);
  m.components.active.resize(nc);
  for (auto& c : m.components.active) c = detail::take<std::uint32_t>(buf, off);
  m.block_of.resize(m.n_pat);
  for (auto& b : m.block_of) b = detail::take<std::uint32_t>(buf, off);
  std::uint32_t nk = detail::take<std::uint32_t>(buf, off);
  m.lambda = detail::take<double>(buf, off);
  m.log_gain = detail::take<double>(buf, off);
  m.alpha_logit.resize(m.n_blocks);
  for (auto& v : m.alpha_logit) v = detail::take<double>(buf, off);
  if (m.variant == Variant::NP) {
    m.z_logit.resize(static_cast<std::size_t>(m.n_blocks) * m.n_dir * m.n_dir);
    for (auto& v : m.z_logit) v = detail::take<double>(buf, off);
  } else {
    m.beta_logit.resize(static_cast<std::size_t>(m.n_blocks) * nc);
    for (auto& v : m.beta_logit) v = detail::take<double>(buf, off);
  }
  m.kappa.resize(nk);
  for (auto& v : m.kappa) v = detail::take<double>(buf, off);
  return m;
}

inline void save_checkpoint(const std::string& path, const MaterialModel& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(cat("cannot write checkpoint: ", path));
  std::string buf = serialize_checkpoint(m);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

inline MaterialModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(cat("cannot open checkpoint: ", path));
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(buf);
}

inline void export_alpha_text(const std::string& path, const MaterialModel& m,
                              const PatchSet& ps) {
  std::ofstream out(path);
  if (!out) fail(cat("cannot write alpha export: ", path));
  out << "patch,group,alpha\n";
  for (int i = 0; i < m.n_pat; ++i)
    out << i << "," << ps.patches[i].group << "," << m.alpha(i) << "\n";
}

}  // namespace dart
