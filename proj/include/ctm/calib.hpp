#pragma once

// Attitude estimation, gravity removal and the anatomical frame transforms.
//
// The attitude filter is a 6D complementary filter: exact strapdown
// integration of the gyro followed by a first-order inclination correction
// toward the measured gravity direction. Yaw is unobservable without a
// magnetometer and is never corrected; the anatomical calibration absorbs the
// arbitrary heading of the filter's world frame.

#include <cmath>
#include <optional>
#include <string>

#include "ctm/core.hpp"
#include "ctm/error.hpp"
#include "ctm/ingest.hpp"

namespace ctm {

inline constexpr double kGravity = 9.80665;

enum class SensorKind : std::uint8_t { Wrist, Trunk };

inline std::string_view sensor_name(SensorKind k) { return k == SensorKind::Wrist ? "wrist" : "trunk"; }

inline RawSample bias_correct(const RawSample& s, const Vec3& bias_accel, const Vec3& bias_gyro) {
  return {s.t, s.accel - bias_accel, s.gyro - bias_gyro};
}

struct AttitudeState {
  Quat q_world = Quat::identity();
  // Low-passed specific force in the world frame; drives the inclination
  // correction. With accel_tau = 0 it tracks the raw measurement.
  Vec3 accel_lp{0.0, 0.0, kGravity};
  double tau = 1.0;
  double accel_tau = 0.0;
};

/// Rotation taking the measured specific force onto world +z, yaw 0.
inline Quat tilt_from_accel(const Vec3& accel) {
  const double n = norm(accel);
  if (!(n > 1e-9)) return Quat::identity();
  const Vec3 a = accel / n;
  const Vec3 axis = cross(a, {0.0, 0.0, 1.0});
  const double s = norm(axis);
  const double c = a.z;
  if (s < 1e-12) return c > 0.0 ? Quat::identity() : Quat{0.0, 1.0, 0.0, 0.0};
  return quat_from_axis_angle(axis, std::atan2(s, c));
}

inline AttitudeState attitude_init(const Vec3& accel, double tau = 1.0, double accel_tau = 0.0) {
  AttitudeState st;
  st.q_world = tilt_from_accel(accel);
  st.accel_lp = rotate_vec(st.q_world, accel);
  st.tau = tau;
  st.accel_tau = accel_tau;
  return st;
}

/// One filter step. gyro and accel are sensor-frame measurements; dt in
/// (0, 0.1] seconds. A zero accel vector disables the correction for this
/// step.
inline AttitudeState attitude_update(const AttitudeState& st, const Vec3& gyro, const Vec3& accel, double dt) {
  if (!is_finite(gyro) || !is_finite(accel) || !std::isfinite(dt)) throw DataError("attitude_update: NaN input");
  if (!(dt > 0.0 && dt <= 0.1)) throw DataError("attitude_update: dt outside (0, 0.1]");
  AttitudeState out = st;
  Quat q = normalized(mul_raw(st.q_world, quat_from_rotvec(gyro * dt)));

  const double an = norm(accel);
  if (an > 1e-9 && st.tau > 0.0) {
    const Vec3 a_world = rotate_vec(q, accel);
    const double alpha = st.accel_tau > 0.0 ? dt / (st.accel_tau + dt) : 1.0;
    out.accel_lp = st.accel_lp + alpha * (a_world - st.accel_lp);
    const double ln = norm(out.accel_lp);
    if (ln > 1e-9) {
      const Vec3 a = out.accel_lp / ln;
      const Vec3 axis = cross(a, {0.0, 0.0, 1.0});  // horizontal by construction
      const double s = norm(axis);
      if (s > 1e-15) {
        const double err = std::atan2(s, a.z);
        const double gain = std::min(1.0, dt / st.tau);
        const Quat corr = quat_from_rotvec(axis * (gain * err / s));
        q = normalized(mul_raw(corr, q));
        out.accel_lp = rotate_vec(corr, out.accel_lp);
      }
    }
  }
  out.q_world = q;
  return out;
}

/// World-frame linear acceleration.
inline Vec3 remove_gravity(const Vec3& accel_sensor, const Quat& q_world) {
  return rotate_vec(q_world, accel_sensor) - Vec3{0.0, 0.0, kGravity};
}

/// Rotation from the anatomical (calibrated) frame to the filter world
/// frame, derived from the static calibration pose.
struct CalibFrame {
  Quat q_rot = Quat::identity();
  SensorKind kind = SensorKind::Wrist;
};

/// Local axis that points left-lateral in the calibration pose.
inline constexpr Vec3 lateral_axis(SensorKind kind) {
  return kind == SensorKind::Wrist ? Vec3{1.0, 0.0, 0.0} : Vec3{0.0, 1.0, 0.0};
}

inline Mat3 calibration_basis(const Quat& q0, SensorKind kind) {
  const Vec3 z{0.0, 0.0, 1.0};
  const Vec3 lat = rotate_vec(q0, lateral_axis(kind));
  const Vec3 xt = cross(lat, z);
  const double n = norm(xt);
  if (!(n > 1e-6)) throw DataError("anatomical_calibration: lateral axis parallel to vertical");
  const Vec3 x = xt / n;
  const Vec3 y = cross(z, x);
  return Mat3::from_columns(x, y, z);
}

inline CalibFrame anatomical_calibration(const Quat& q0, SensorKind kind) {
  return {quat_from_matrix(calibration_basis(q0, kind)), kind};
}

inline Quat apply_calibration(const Quat& q_world, const CalibFrame& cf) {
  return quat_mul(quat_inverse(cf.q_rot), q_world);
}

/// Quarter turn about z for patients calibrated with the arm resting on the
/// table.
inline Quat patient_pose_rotation() {
  const double h = std::sqrt(0.5);
  return {h, 0.0, 0.0, h};
}

inline Quat patient_pose_adjust(const Quat& q_calib_wrist) { return quat_mul(patient_pose_rotation(), q_calib_wrist); }

struct MirroredKinematics {
  Vec3 accel;
  Vec3 gyro;
};

/// Sagittal-plane reflection diag(1,-1,1); angular rates are pseudovectors
/// and pick up an extra sign.
inline constexpr MirroredKinematics mirror_kinematics(const Vec3& a, const Vec3& w) {
  return {{a.x, -a.y, a.z}, {-w.x, w.y, -w.z}};
}

/// Correction q_corr with q_corr ⊗ q0 = q_ref, or nullopt when q0 is already
/// within threshold of q_ref (sign-stable quaternion distance).
inline std::optional<Quat> trunk_alignment_correction(const Quat& q0, const Quat& q_ref, double threshold = 0.1) {
  if (quat_distance(q0, q_ref) <= threshold) return std::nullopt;
  return quat_mul(q_ref, quat_inverse(q0));
}

struct SensorBias {
  Vec3 accel;
  Vec3 gyro;
};

struct CalibConfig {
  SensorBias wrist_bias;
  SensorBias trunk_bias;
  double tau = 1.0;
  double accel_tau = 0.0;
  Quat q_ref = Quat::identity();
  double trunk_threshold = 0.1;
  bool trunk_correction = false;
  bool patient_pose = false;
  // Overrides the arm side stored with each recording when set.
  std::optional<ArmSide> arm;

  void validate() const {
    if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("calib: tau must be > 0");
    if (!(accel_tau >= 0.0)) throw ConfigError("calib: accel_tau must be >= 0");
    if (std::abs(norm(q_ref) - 1.0) > 1e-6) throw ConfigError("calib: q_ref must be a unit quaternion");
    if (!(trunk_threshold >= 0.0)) throw ConfigError("calib: trunk threshold must be >= 0");
  }
};

/// Per-sample kinematics of one sensor after bias removal, optional
/// mirroring, attitude estimation and anatomical calibration.
struct SensorKinematics {
  Vec3 accel_local;  // sensor frame, includes gravity
  Vec3 gyro_local;   // sensor frame
  Vec3 accel_cal;    // calibrated frame, gravity removed
  Vec3 gyro_cal;     // calibrated frame
  Quat q_cal;        // calibrated <- sensor
};

/// Stateful per-sensor chain. The first sample fixes the anatomical frame.
class SensorChain {
public:
  SensorChain(SensorKind kind, const CalibConfig& cfg, bool mirror)
      : kind_(kind), cfg_(cfg), mirror_(mirror),
        bias_(kind == SensorKind::Wrist ? cfg.wrist_bias : cfg.trunk_bias) {}

  SensorKind kind() const { return kind_; }
  bool started() const { return started_; }
  const AttitudeState& attitude() const { return att_; }
  const CalibFrame& frame() const { return frame_; }

  SensorKinematics push(const RawSample& raw) {
    RawSample s = bias_correct(raw, bias_.accel, bias_.gyro);
    if (mirror_) {
      const auto m = mirror_kinematics(s.accel, s.gyro);
      s.accel = m.accel;
      s.gyro = m.gyro;
    }
    if (!started_) {
      if (!is_finite(s.accel) || !is_finite(s.gyro)) throw DataError("SensorChain: NaN input");
      att_ = attitude_init(s.accel, cfg_.tau, cfg_.accel_tau);
      frame_ = anatomical_calibration(att_.q_world, kind_);
      adjust_ = Quat::identity();
      if (kind_ == SensorKind::Wrist && cfg_.patient_pose) adjust_ = patient_pose_rotation();
      if (kind_ == SensorKind::Trunk && cfg_.trunk_correction) {
        const Quat q0 = apply_calibration(att_.q_world, frame_);
        if (auto corr = trunk_alignment_correction(q0, cfg_.q_ref, cfg_.trunk_threshold)) adjust_ = *corr;
      }
      to_cal_ = quat_mul(adjust_, quat_inverse(frame_.q_rot));
      started_ = true;
    } else {
      const double dt = s.t - last_t_;
      att_ = attitude_update(att_, s.gyro, s.accel, dt);
    }
    last_t_ = s.t;

    SensorKinematics k;
    k.accel_local = s.accel;
    k.gyro_local = s.gyro;
    k.q_cal = quat_mul(to_cal_, att_.q_world);
    k.accel_cal = rotate_vec(to_cal_, remove_gravity(s.accel, att_.q_world));
    k.gyro_cal = rotate_vec(k.q_cal, s.gyro);
    return k;
  }

private:
  SensorKind kind_;
  CalibConfig cfg_;
  bool mirror_;
  SensorBias bias_;
  bool started_ = false;
  double last_t_ = 0.0;
  AttitudeState att_;
  CalibFrame frame_;
  Quat adjust_ = Quat::identity();
  Quat to_cal_ = Quat::identity();
};

inline bool should_mirror(const CalibConfig& cfg, const RecordingMeta& meta) {
  return cfg.arm.value_or(meta.arm) == ArmSide::Left;
}

}  // namespace ctm
