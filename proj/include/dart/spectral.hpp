// Frequency-domain radiance engine: damped sampling outside the unit circle,
// truncated reflection series via two sparse products per order, and
// time-domain recovery with the compensating window.
//
// Sampling at z = gamma^(-1/T) * exp(2*pi*j*f/T) equals windowing time
// signals by gamma^(n/T) before a plain length-T transform; tails beyond T
// fold back attenuated by gamma, gamma^2, ...
#pragma once

#include "dart/fft.hpp"
#include "dart/precompute.hpp"
#include "dart/threads.hpp"

namespace dart {

struct SolverConfig {
  int T = 320;
  double gamma = 1e-3;  // (0, 1]; 1 means sampling on the unit circle
  int n_order = 40;
  double dt = kRadianceDt;
  bool fast_f32 = false;  // opt-in 32-bit series recursion (render only)

  int n_freq() const { return T / 2 + 1; }

  void validate() const {
    require(T >= 2 && T % 2 == 0, "T must be even and >= 2");
    require(gamma > 0.0 && gamma <= 1.0, "gamma must be in (0, 1]");
    require(n_order >= 0, "n_order must be >= 0");
  }
};

struct SpectralField {
  ComplexMatrix a;  // rows x n_freq
  int T = 0;
  double gamma = 1.0;
};

inline std::vector<double> damping_window(int T, double gamma) {
  std::vector<double> w(T);
  for (int n = 0; n < T; ++n) w[n] = std::pow(gamma, static_cast<double>(n) / T);
  return w;
}

// FFT of the gamma^(n/T)-windowed rows.
inline SpectralField damped_forward_transform(const RealMatrix& time, double gamma) {
  const int T = static_cast<int>(time.cols);
  const int nf = T / 2 + 1;
  SpectralField out;
  out.T = T;
  out.gamma = gamma;
  out.a = ComplexMatrix(time.rows, nf);
  auto w = damping_window(T, gamma);
  parallel_chunks(time.rows, [&](int, std::size_t b, std::size_t e) {
    Fft plan(T);
    std::vector<double> buf(T);
    for (std::size_t r = b; r < e; ++r) {
      const double* x = time.row(r);
      for (int n = 0; n < T; ++n) buf[n] = w[n] * x[n];
      rfft(plan, buf.data(), T, out.a.row(r));
    }
  });
  return out;
}

// Spectra of the two-tap fractional delays, windowed by the same damping:
// a * gamma^(n0/T) e^(-2 pi j f n0 / T) + (1-a) * gamma^(n1/T) e^(..n1..).
inline ComplexMatrix delay_spectra(const DelayBank& bank, double gamma, int T) {
  const int nf = T / 2 + 1;
  ComplexMatrix out(bank.size(), nf);
  for (std::size_t r = 0; r < bank.size(); ++r) {
    c64* row = out.row(r);
    if (!bank.valid[r]) {
      std::fill(row, row + nf, c64{0.0, 0.0});
      continue;
    }
    double d = bank.delay[r];
    require(d < T, cat("delay ", d, " >= T = ", T, " would wrap"));
    double n0 = std::floor(d), n1 = std::ceil(d);
    double a = bank.weight[r];
    double g0 = a * std::pow(gamma, n0 / T);
    double g1 = (1.0 - a) * std::pow(gamma, n1 / T);
    for (int f = 0; f < nf; ++f) {
      double w0 = -kTwoPi * f * n0 / T;
      double w1 = -kTwoPi * f * n1 / T;
      row[f] = g0 * c64(std::cos(w0), std::sin(w0)) + g1 * c64(std::cos(w1), std::sin(w1));
    }
  }
  return out;
}

// Truncated series: order k adds M (V (D .* previous)) per frequency bin.
// Bins are independent; each runs in fixed order within its chunk, so the
// result is identical for any thread count or bin permutation. The
// optional 32-bit path trades ~1e-5 relative accuracy for speed; the
// training path always solves in 64-bit for gradient-check fidelity.
inline SpectralField series_solve(const SpectralField& l0, const ComplexMatrix& delay_spec,
                                  const SparseOperator& vis, const SparseOperator& mat,
                                  int n_order, bool fast_f32 = false) {
  const std::uint32_t n = static_cast<std::uint32_t>(l0.a.rows);
  require(vis.rows == n && vis.cols == n && mat.rows == n && mat.cols == n,
          "series_solve dimension mismatch");
  require(delay_spec.rows == n && delay_spec.cols == l0.a.cols, "delay spectra shape mismatch");
  const std::size_t nf = l0.a.cols;
  SpectralField out;
  out.T = l0.T;
  out.gamma = l0.gamma;
  out.a = ComplexMatrix(n, nf);

  if (fast_f32) {
    using c32 = std::complex<float>;
    std::vector<float> vis_val(vis.val.begin(), vis.val.end());
    std::vector<float> mat_val(mat.val.begin(), mat.val.end());
    auto matvec32 = [n](const SparseOperator& op, const std::vector<float>& val, const c32* x,
                        c32* y) {
      for (std::uint32_t r = 0; r < n; ++r) {
        c32 s{0.0f, 0.0f};
        for (std::uint32_t e = op.row_ptr[r]; e < op.row_ptr[r + 1]; ++e)
          s += val[e] * x[op.col_idx[e]];
        y[r] = s;
      }
    };
    parallel_chunks(nf, [&](int, std::size_t fb, std::size_t fe) {
      std::vector<c32> cur(n), tmp(n), acc(n), dcol(n);
      for (std::size_t f = fb; f < fe; ++f) {
        for (std::uint32_t r = 0; r < n; ++r) {
          cur[r] = static_cast<c32>(l0.a.at(r, f));
          acc[r] = cur[r];
          dcol[r] = static_cast<c32>(delay_spec.at(r, f));
        }
        for (int k = 1; k <= n_order; ++k) {
          for (std::uint32_t r = 0; r < n; ++r) cur[r] *= dcol[r];
          matvec32(vis, vis_val, cur.data(), tmp.data());
          matvec32(mat, mat_val, tmp.data(), cur.data());
          for (std::uint32_t r = 0; r < n; ++r) acc[r] += cur[r];
        }
        for (std::uint32_t r = 0; r < n; ++r) out.a.at(r, f) = acc[r];
      }
    });
    return out;
  }

  parallel_chunks(nf, [&](int, std::size_t fb, std::size_t fe) {
    std::vector<c64> cur(n), tmp(n), acc(n);
    for (std::size_t f = fb; f < fe; ++f) {
      for (std::uint32_t r = 0; r < n; ++r) {
        cur[r] = l0.a.at(r, f);
        acc[r] = cur[r];
      }
      for (int k = 1; k <= n_order; ++k) {
        for (std::uint32_t r = 0; r < n; ++r) cur[r] *= delay_spec.at(r, f);
        vis.matvec(cur.data(), tmp.data());
        mat.matvec(tmp.data(), cur.data());
        for (std::uint32_t r = 0; r < n; ++r) acc[r] += cur[r];
      }
      for (std::uint32_t r = 0; r < n; ++r) out.a.at(r, f) = acc[r];
    }
  });
  return out;
}

// Inverse transform with the gamma^(-n/T) compensation. Negative values are
// numerical noise and are clamped; anything below floor_rel times the peak
// means the solve itself is wrong. The 32-bit fast path passes a wider
// floor, since the compensation window amplifies its rounding noise by up
// to 1/gamma at the last sample.
inline RealMatrix to_time(const SpectralField& field, double floor_rel = 1e-6) {
  const int T = field.T;
  RealMatrix out(field.a.rows, T);
  auto w = damping_window(T, field.gamma);
  parallel_chunks(field.a.rows, [&](int, std::size_t b, std::size_t e) {
    Fft plan(T);
    std::vector<double> buf(T);
    for (std::size_t r = b; r < e; ++r) {
      irfft(plan, field.a.row(r), T, buf.data());
      double* y = out.row(r);
      for (int n = 0; n < T; ++n) y[n] = buf[n] / w[n];
    }
  });
  double peak = 0.0;
  for (double v : out.a) peak = std::max(peak, std::abs(v));
  double floor_tol = -floor_rel * peak;
  for (double& v : out.a) {
    if (v < 0.0) {
      require(v >= floor_tol, cat("negative time-domain radiance ", v,
                                  " exceeds the noise tolerance; solver bug"));
      v = 0.0;
    }
  }
  return out;
}

}  // namespace dart
