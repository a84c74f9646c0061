// Echogram extraction from impulse responses and the evaluation metrics:
// sample-level L1, T60 (percent error), EDT (seconds), C50 (dB).
#pragma once

#include <optional>

#include "dart/transport.hpp"

namespace dart {

struct ImpulseResponse {
  std::vector<double> samples;  // pressure amplitude at 16 kHz
  double sample_rate = 16000.0;
};

inline constexpr int kIrPerBin = 16;  // 16 kHz -> 1 kHz energy bins

// E[n] = sum of ir^2 over 16 consecutive samples; zero-padded to a full bin,
// then truncated or padded to length T (T <= 0 keeps the natural length).
inline Echogram echogram_from_ir(const ImpulseResponse& ir, int T = 0) {
  require(!ir.samples.empty(), "empty impulse response");
  std::size_t nbins = (ir.samples.size() + kIrPerBin - 1) / kIrPerBin;
  Echogram eg;
  eg.e.assign(nbins, 0.0);
  for (std::size_t m = 0; m < ir.samples.size(); ++m)
    eg.e[m / kIrPerBin] += ir.samples[m] * ir.samples[m];
  if (T > 0) eg.e.resize(T, 0.0);
  return eg;
}

// Least-squares line fit of the EDC (in dB) over a decay window, returning
// the decay time extrapolated to 60 dB; nullopt when the curve never reaches
// the window.
namespace detail {

inline std::optional<double> decay_fit_seconds(const std::vector<double>& edc_db, double dt,
                                               double db_from, double db_to) {
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  int count = 0;
  bool reached = false;  // the decay must span the whole window to count
  for (std::size_t n = 0; n < edc_db.size(); ++n) {
    double v = edc_db[n];
    if (!std::isfinite(v) || v < db_to) {
      if (v < db_to) reached = true;
      break;
    }
    if (v > db_from) continue;
    if (v <= db_to) reached = true;
    double x = n * dt;
    sx += x;
    sy += v;
    sxx += x * x;
    sxy += x * v;
    ++count;
  }
  if (!reached || count < 2) return std::nullopt;
  double denom = count * sxx - sx * sx;
  if (denom == 0.0) return std::nullopt;
  double slope = (count * sxy - sx * sy) / denom;  // dB per second
  if (slope >= 0.0) return std::nullopt;
  return -60.0 / slope;
}

inline std::vector<double> edc_db(const Echogram& e) {
  auto edc = edc_curve(e.e);
  std::vector<double> out(edc.size());
  double ref = edc.empty() ? 0.0 : edc[0];
  for (std::size_t n = 0; n < edc.size(); ++n)
    out[n] = (edc[n] > 0.0 && ref > 0.0) ? 10.0 * std::log10(edc[n] / ref)
                                         : -std::numeric_limits<double>::infinity();
  return out;
}

}  // namespace detail

// Schroeder-style reverberation time from the -5..-35 dB fit, with a
// -5..-25 dB fallback for short responses.
inline std::optional<double> t60(const Echogram& e) {
  auto db = detail::edc_db(e);
  if (auto fit = detail::decay_fit_seconds(db, e.dt, -5.0, -35.0)) return fit;
  return detail::decay_fit_seconds(db, e.dt, -5.0, -25.0);
}

// Early decay time: the 0..-10 dB fit extrapolated to the full 60 dB decay.
inline std::optional<double> edt(const Echogram& e) {
  auto db = detail::edc_db(e);
  return detail::decay_fit_seconds(db, e.dt, 0.0, -10.0);
}

// Early-to-late energy ratio at 50 ms; the boundary sample counts as early.
// +inf when the late part is empty (flagged by the caller via isfinite).
inline std::optional<double> c50(const Echogram& e) {
  int boundary = static_cast<int>(std::round(0.050 / e.dt));
  double early = 0.0, late = 0.0;
  for (int n = 0; n < e.length(); ++n) (n <= boundary ? early : late) += e.e[n];
  if (early + late <= 0.0) return std::nullopt;
  if (late == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(early / late);
}

struct MetricDistances {
  double l1 = 0.0;
  std::optional<double> t60_pct;  // |dT60| / T60_true * 100
  std::optional<double> edt_s;
  std::optional<double> c50_db;
};

inline MetricDistances compare(const Echogram& pred, const Echogram& truth) {
  require(pred.length() == truth.length(), "compare length mismatch");
  MetricDistances d;
  for (int n = 0; n < pred.length(); ++n) d.l1 += std::abs(pred.e[n] - truth.e[n]);
  auto tp = t60(pred), tt = t60(truth);
  if (tp && tt && *tt > 0.0) d.t60_pct = std::abs(*tp - *tt) / *tt * 100.0;
  auto ep = edt(pred), et = edt(truth);
  if (ep && et) d.edt_s = std::abs(*ep - *et);
  auto cp = c50(pred), ct = c50(truth);
  if (cp && ct && std::isfinite(*cp) && std::isfinite(*ct)) d.c50_db = std::abs(*cp - *ct);
  return d;
}

}  // namespace dart
