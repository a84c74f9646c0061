// Self-contained mixed-radix FFT (recursive Cooley-Tukey, naive kernel for
// prime factors). Transform sizes here are small (T = 320 by default), so a
// planless implementation with a cached twiddle table is plenty.
#pragma once

#include <cstddef>
#include <vector>

#include "dart/common.hpp"

namespace dart {

class Fft {
 public:
  explicit Fft(std::size_t n) : n_(n) {
    require(n >= 1, "fft size must be >= 1");
    tw_.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      double ang = -kTwoPi * static_cast<double>(k) / static_cast<double>(n);
      tw_[k] = c64(std::cos(ang), std::sin(ang));
    }
    scratch_.resize(n);
  }

  std::size_t size() const { return n_; }

  void forward(c64* x) { rec(x, scratch_.data(), n_, 1, false); }

  // Unscaled inverse; divide by n for the true inverse transform.
  void inverse_unscaled(c64* x) { rec(x, scratch_.data(), n_, 1, true); }

  void inverse(c64* x) {
    inverse_unscaled(x);
    double s = 1.0 / static_cast<double>(n_);
    for (std::size_t i = 0; i < n_; ++i) x[i] *= s;
  }

 private:
  c64 tw(std::size_t idx, bool inv) const {
    c64 w = tw_[idx % n_];
    return inv ? std::conj(w) : w;
  }

  static std::size_t smallest_factor(std::size_t n) {
    for (std::size_t p = 2; p * p <= n; ++p)
      if (n % p == 0) return p;
    return n;
  }

  // In-place on a strided view backed by a gather into contiguous scratch.
  void rec(c64* x, c64* scratch, std::size_t n, std::size_t root_stride, bool inv) {
    if (n == 1) return;
    std::size_t p = smallest_factor(n);
    std::size_t m = n / p;
    if (m > 1) {
      // Decimate in time: p interleaved sub-sequences, each of length m.
      for (std::size_t j = 0; j < p; ++j)
        for (std::size_t t = 0; t < m; ++t) scratch[j * m + t] = x[j + p * t];
      for (std::size_t j = 0; j < p; ++j)
        rec(scratch + j * m, x, m, root_stride * p, inv);
      for (std::size_t k = 0; k < n; ++k) {
        c64 acc{0.0, 0.0};
        for (std::size_t j = 0; j < p; ++j)
          acc += tw((j * k % n) * root_stride, inv) * scratch[j * m + k % m];
        x[k] = acc;
      }
    } else {
      // Prime length: naive DFT.
      for (std::size_t k = 0; k < n; ++k) {
        c64 acc{0.0, 0.0};
        for (std::size_t j = 0; j < n; ++j) acc += tw((j * k % n) * root_stride, inv) * x[j];
        scratch[k] = acc;
      }
      for (std::size_t k = 0; k < n; ++k) x[k] = scratch[k];
    }
  }

  std::size_t n_;
  std::vector<c64> tw_;
  std::vector<c64> scratch_;
};

// Real-input FFT; returns the first floor(n/2)+1 bins.
inline void rfft(Fft& plan, const double* x, std::size_t n, c64* out) {
  std::vector<c64> buf(n);
  for (std::size_t i = 0; i < n; ++i) buf[i] = c64(x[i], 0.0);
  plan.forward(buf.data());
  std::size_t nf = n / 2 + 1;
  for (std::size_t f = 0; f < nf; ++f) out[f] = buf[f];
}

// Inverse of rfft for even n: expands conjugate symmetry and returns the real
// part of the inverse transform.
inline void irfft(Fft& plan, const c64* spec, std::size_t n, double* out) {
  std::vector<c64> buf(n);
  std::size_t nf = n / 2 + 1;
  for (std::size_t f = 0; f < nf; ++f) buf[f] = spec[f];
  for (std::size_t f = nf; f < n; ++f) buf[f] = std::conj(spec[n - f]);
  plan.inverse(buf.data());
  for (std::size_t i = 0; i < n; ++i) out[i] = buf[i].real();
}

}  // namespace dart
