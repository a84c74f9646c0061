// Basic vector math, shared constants, and error helpers.
#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dart {

using c64 = std::complex<double>;

// Defaults fixed by the tested configuration: 343 m/s and a 1 kHz radiance
// rate, i.e. one sample per millisecond.
inline constexpr double kSpeedOfSound = 343.0;
inline constexpr double kRadianceDt = 1e-3;
inline constexpr double kRayEpsilon = 1e-7;  // self-intersection guard (meters)

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
  Vec3 operator-() const { return {-x, -y, -z}; }
  Vec3& operator+=(const Vec3& o) {
    x += o.x; y += o.y; z += o.z;
    return *this;
  }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }
inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3& v) { return std::sqrt(dot(v, v)); }
inline Vec3 normalized(const Vec3& v) {
  double n = norm(v);
  if (n <= 0.0) throw std::runtime_error("cannot normalize zero vector");
  return v / n;
}

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;
inline constexpr double kFourPi = 4.0 * kPi;

[[noreturn]] inline void fail(const std::string& msg) { throw std::runtime_error(msg); }

template <typename... Args>
std::string cat(Args&&... args) {
  std::ostringstream ss;
  (ss << ... << args);
  return ss.str();
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

// Dense row-major matrix of time signals (rows x T).
struct RealMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> a;

  RealMatrix() = default;
  RealMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}
  double* row(std::size_t r) { return a.data() + r * cols; }
  const double* row(std::size_t r) const { return a.data() + r * cols; }
  double& at(std::size_t r, std::size_t c) { return a[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return a[r * cols + c]; }
};

struct ComplexMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<c64> a;

  ComplexMatrix() = default;
  ComplexMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c) {}
  c64* row(std::size_t r) { return a.data() + r * cols; }
  const c64* row(std::size_t r) const { return a.data() + r * cols; }
  c64& at(std::size_t r, std::size_t c) { return a[r * cols + c]; }
  c64 at(std::size_t r, std::size_t c) const { return a[r * cols + c]; }
};

}  // namespace dart
