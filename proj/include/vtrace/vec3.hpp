#pragma once

#include <array>
#include <cmath>
#include <ostream>

namespace vtrace {

/// Point or direction in millimetres (world space).
struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  constexpr double operator[](int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }
  constexpr double& operator[](int axis) { return axis == 0 ? x : (axis == 1 ? y : z); }

  constexpr Vec3& operator+=(const Vec3& o) {
    x += o.x; y += o.y; z += o.z;
    return *this;
  }
  constexpr Vec3& operator-=(const Vec3& o) {
    x -= o.x; y -= o.y; z -= o.z;
    return *this;
  }
  constexpr Vec3& operator*=(double s) {
    x *= s; y *= s; z *= s;
    return *this;
  }

  friend constexpr Vec3 operator+(Vec3 a, const Vec3& b) { return a += b; }
  friend constexpr Vec3 operator-(Vec3 a, const Vec3& b) { return a -= b; }
  friend constexpr Vec3 operator-(const Vec3& a) { return {-a.x, -a.y, -a.z}; }
  friend constexpr Vec3 operator*(Vec3 a, double s) { return a *= s; }
  friend constexpr Vec3 operator*(double s, Vec3 a) { return a *= s; }
  friend constexpr Vec3 operator/(Vec3 a, double s) { return a *= (1.0 / s); }
  friend constexpr bool operator==(const Vec3&, const Vec3&) = default;

  friend std::ostream& operator<<(std::ostream& os, const Vec3& v) {
    return os << '(' << v.x << ", " << v.y << ", " << v.z << ')';
  }
};

constexpr double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

constexpr Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

inline double distance(const Vec3& a, const Vec3& b) { return norm(a - b); }

/// Returns the zero vector when `a` has (near) zero length.
inline Vec3 normalized(const Vec3& a) {
  const double n = norm(a);
  return n > 1e-12 ? a / n : Vec3{};
}

inline Vec3 hadamard(const Vec3& a, const Vec3& b) { return {a.x * b.x, a.y * b.y, a.z * b.z}; }

inline std::array<double, 3> to_array(const Vec3& v) { return {v.x, v.y, v.z}; }

inline Vec3 from_array(const std::array<double, 3>& a) { return {a[0], a[1], a[2]}; }

/// Two unit vectors spanning the plane perpendicular to `t`. The first one is
/// built from the world axis least aligned with `t`, so the frame is
/// deterministic.
inline std::array<Vec3, 2> perpendicular_frame(const Vec3& t) {
  const Vec3 tn = normalized(t);
  const Vec3 axes[3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  int best = 0;
  double best_abs = std::abs(dot(tn, axes[0]));
  for (int a = 1; a < 3; ++a) {
    const double d = std::abs(dot(tn, axes[a]));
    if (d < best_abs) {
      best_abs = d;
      best = a;
    }
  }
  const Vec3 u = normalized(axes[best] - tn * dot(axes[best], tn));
  const Vec3 v = cross(tn, u);
  return {u, v};
}

}  // namespace vtrace
