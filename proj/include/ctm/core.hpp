#pragma once

// Quaternion and small-vector numerics.
//
// Conventions used throughout the library:
//   - quaternions are Hamilton, scalar-first (w, x, y, z);
//   - a quaternion q_world maps sensor-frame vectors into the world frame,
//     v_world = q ⊗ [0, v] ⊗ q⁻¹;
//   - Euler angles are intrinsic z-y-x: q = qz(yaw) ⊗ qy(pitch) ⊗ qx(roll);
//   - quaternions returned by constructors and products are canonicalized
//     to w >= 0.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "ctm/error.hpp"

namespace ctm {

inline constexpr double kPi = std::numbers::pi;

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  constexpr Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  constexpr Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  constexpr Vec3 operator-() const { return {-x, -y, -z}; }
  constexpr Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  constexpr Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
  constexpr bool operator==(const Vec3&) const = default;

  constexpr double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
};

inline constexpr Vec3 operator*(double s, const Vec3& v) { return v * s; }

inline constexpr double dot(const Vec3& a, const Vec3& b) {
  return a.x * b.x + a.y * b.y + a.z * b.z;
}

inline constexpr Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

inline double norm(const Vec3& v) { return std::sqrt(dot(v, v)); }

inline Vec3 normalize(const Vec3& v) {
  const double n = norm(v);
  if (!(n > 0.0)) throw std::invalid_argument("ctm::normalize: zero-length vector");
  return v / n;
}

inline bool is_finite(const Vec3& v) {
  return std::isfinite(v.x) && std::isfinite(v.y) && std::isfinite(v.z);
}

/// Row-major 3x3 matrix. Columns are accessed with col().
struct Mat3 {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  constexpr double operator()(int r, int c) const { return m[static_cast<std::size_t>(r * 3 + c)]; }
  constexpr double& operator()(int r, int c) { return m[static_cast<std::size_t>(r * 3 + c)]; }

  static constexpr Mat3 from_columns(const Vec3& c0, const Vec3& c1, const Vec3& c2) {
    Mat3 r;
    r.m = {c0.x, c1.x, c2.x, c0.y, c1.y, c2.y, c0.z, c1.z, c2.z};
    return r;
  }

  constexpr Vec3 col(int c) const { return {(*this)(0, c), (*this)(1, c), (*this)(2, c)}; }

  constexpr Vec3 operator*(const Vec3& v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z, m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
  }

  constexpr Mat3 operator*(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double s = 0.0;
        for (int k = 0; k < 3; ++k) s += (*this)(i, k) * o(k, j);
        r(i, j) = s;
      }
    return r;
  }

  constexpr Mat3 transposed() const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r(i, j) = (*this)(j, i);
    return r;
  }

  constexpr double det() const {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
  }
};

struct Quat {
  double w = 1.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  static constexpr Quat identity() { return {1.0, 0.0, 0.0, 0.0}; }
  constexpr Vec3 vec() const { return {x, y, z}; }
  constexpr bool operator==(const Quat&) const = default;
};

struct Euler {
  double roll = 0.0;
  double pitch = 0.0;
  double yaw = 0.0;
};

inline double norm(const Quat& q) { return std::sqrt(q.w * q.w + q.x * q.x + q.y * q.y + q.z * q.z); }

/// Flips the sign so that w >= 0; q and -q are the same rotation.
inline constexpr Quat canonical(const Quat& q) {
  if (q.w < 0.0 || (q.w == 0.0 && (q.x < 0.0 || (q.x == 0.0 && (q.y < 0.0 || (q.y == 0.0 && q.z < 0.0))))))
    return {-q.w, -q.x, -q.y, -q.z};
  return q;
}

inline Quat normalized(const Quat& q) {
  const double n = norm(q);
  if (!(n > 0.0) || !std::isfinite(n)) throw std::invalid_argument("ctm::normalized: degenerate quaternion");
  return canonical(Quat{q.w / n, q.x / n, q.y / n, q.z / n});
}

/// Hamilton product, without renormalization or canonicalization.
inline constexpr Quat mul_raw(const Quat& a, const Quat& b) {
  return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
          a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
          a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
          a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
}

inline Quat quat_mul(const Quat& a, const Quat& b) { return normalized(mul_raw(a, b)); }

inline constexpr Quat conjugate(const Quat& q) { return {q.w, -q.x, -q.y, -q.z}; }

/// Inverse of a unit quaternion. The result is canonicalized, so the inverse
/// of (0,0,0,1) is reported as (0,0,0,1), which is the same rotation as
/// (0,0,0,-1).
inline constexpr Quat quat_inverse(const Quat& q) { return canonical(conjugate(q)); }

/// Sandwich product q ⊗ [0, v] ⊗ q⁻¹, expanded.
inline constexpr Vec3 rotate_vec(const Quat& q, const Vec3& v) {
  const Vec3 u{q.x, q.y, q.z};
  const Vec3 t = 2.0 * cross(u, v);
  return v + q.w * t + cross(u, t);
}

inline Quat quat_from_axis_angle(const Vec3& axis, double angle) {
  const Vec3 a = normalize(axis);
  const double h = 0.5 * angle;
  const double s = std::sin(h);
  return canonical(Quat{std::cos(h), a.x * s, a.y * s, a.z * s});
}

/// Exponential map of a rotation vector (axis * angle), exact for any size.
inline Quat quat_from_rotvec(const Vec3& rv) {
  const double angle = norm(rv);
  if (angle < 1e-300) return Quat::identity();
  const double h = 0.5 * angle;
  const double s = std::sin(h) / angle;
  return Quat{std::cos(h), rv.x * s, rv.y * s, rv.z * s};
}

/// Logarithm map: rotation vector of the shortest rotation equivalent to q.
inline Vec3 quat_to_rotvec(const Quat& q_in) {
  const Quat q = canonical(q_in);
  const double vn = norm(q.vec());
  if (vn < 1e-300) return {};
  const double angle = 2.0 * std::atan2(vn, q.w);
  return q.vec() * (angle / vn);
}

inline Mat3 quat_to_matrix(const Quat& q) {
  const double w = q.w, x = q.x, y = q.y, z = q.z;
  Mat3 r;
  r.m = {1 - 2 * (y * y + z * z), 2 * (x * y - w * z),     2 * (x * z + w * y),
         2 * (x * y + w * z),     1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y),     2 * (y * z + w * x),     1 - 2 * (x * x + y * y)};
  return r;
}

inline bool is_rotation(const Mat3& r, double tol = 1e-6) {
  const Mat3 rtr = r.transposed() * r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      if (std::abs(rtr(i, j) - (i == j ? 1.0 : 0.0)) > tol) return false;
  return std::abs(r.det() - 1.0) <= tol;
}

/// Shepperd's method. Throws std::invalid_argument for matrices that are not
/// proper rotations within 1e-6.
inline Quat quat_from_matrix(const Mat3& r) {
  if (!is_rotation(r)) throw std::invalid_argument("ctm::quat_from_matrix: not a rotation matrix");
  const double tr = r(0, 0) + r(1, 1) + r(2, 2);
  Quat q;
  if (tr > 0.0) {
    const double s = 2.0 * std::sqrt(1.0 + tr);
    q = {0.25 * s, (r(2, 1) - r(1, 2)) / s, (r(0, 2) - r(2, 0)) / s, (r(1, 0) - r(0, 1)) / s};
  } else if (r(0, 0) > r(1, 1) && r(0, 0) > r(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2));
    q = {(r(2, 1) - r(1, 2)) / s, 0.25 * s, (r(0, 1) + r(1, 0)) / s, (r(0, 2) + r(2, 0)) / s};
  } else if (r(1, 1) > r(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2));
    q = {(r(0, 2) - r(2, 0)) / s, (r(0, 1) + r(1, 0)) / s, 0.25 * s, (r(1, 2) + r(2, 1)) / s};
  } else {
    const double s = 2.0 * std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1));
    q = {(r(1, 0) - r(0, 1)) / s, (r(0, 2) + r(2, 0)) / s, (r(1, 2) + r(2, 1)) / s, 0.25 * s};
  }
  return normalized(q);
}

/// Wraps an angle into (-pi, pi].
inline double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  return a;
}

inline Quat euler_to_quat(const Euler& e) {
  const Quat qz{std::cos(0.5 * e.yaw), 0.0, 0.0, std::sin(0.5 * e.yaw)};
  const Quat qy{std::cos(0.5 * e.pitch), 0.0, std::sin(0.5 * e.pitch), 0.0};
  const Quat qx{std::cos(0.5 * e.roll), std::sin(0.5 * e.roll), 0.0, 0.0};
  return normalized(mul_raw(mul_raw(qz, qy), qx));
}

/// Intrinsic z-y-x decomposition. At gimbal lock (|pitch| = pi/2) roll is
/// set to 0 and the whole heading goes to yaw.
inline Euler quat_to_euler(const Quat& q_in) {
  const Quat q = canonical(q_in);
  const double sinp = 2.0 * (q.w * q.y - q.z * q.x);
  Euler e;
  if (std::abs(sinp) >= 1.0 - 1e-12) {
    e.pitch = std::copysign(kPi / 2.0, sinp);
    e.roll = 0.0;
    e.yaw = wrap_angle((sinp > 0.0 ? -2.0 : 2.0) * std::atan2(q.x, q.w));
    return e;
  }
  e.roll = wrap_angle(std::atan2(2.0 * (q.w * q.x + q.y * q.z), 1.0 - 2.0 * (q.x * q.x + q.y * q.y)));
  e.pitch = std::asin(sinp);
  e.yaw = wrap_angle(std::atan2(2.0 * (q.w * q.z + q.x * q.y), 1.0 - 2.0 * (q.y * q.y + q.z * q.z)));
  return e;
}

/// Rotation angle between two orientations, in [0, pi].
inline double angle_between(const Quat& a, const Quat& b) {
  const Quat d = mul_raw(conjugate(b), a);
  const double w = std::min(1.0, std::abs(d.w) / norm(d));
  return 2.0 * std::acos(w);
}

/// Sign-stable Euclidean distance min(|a - b|, |a + b|).
inline double quat_distance(const Quat& a, const Quat& b) {
  const double dm = std::sqrt((a.w - b.w) * (a.w - b.w) + (a.x - b.x) * (a.x - b.x) +
                              (a.y - b.y) * (a.y - b.y) + (a.z - b.z) * (a.z - b.z));
  const double dp = std::sqrt((a.w + b.w) * (a.w + b.w) + (a.x + b.x) * (a.x + b.x) +
                              (a.y + b.y) * (a.y + b.y) + (a.z + b.z) * (a.z + b.z));
  return std::min(dm, dp);
}

}  // namespace ctm
