#pragma once

// Synthetic two-IMU recordings used as test substrate. The generator is a
// kinematic toy model, not clinical data: a trunk segment pivoting about the
// hip and a wrist reaching from the right shoulder, both expressed in an
// anatomical frame (x anterior, y left-lateral, z up) that is rotated by a
// random heading in the world frame.
//
// Every recording starts with a static Calib segment. Movement segments are
// whole reach cycles with phase s(t) = (1 - cos 2πt/P) / 2, so every segment
// starts and ends at rest. MovTC differs from MovNoTC only in two
// intensity-scaled terms: extra trunk flexion/lean, and attenuated arm
// extension. At intensity 0 both classes share one distribution.

#include <array>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ctm/core.hpp"
#include "ctm/error.hpp"
#include "ctm/ingest.hpp"

namespace ctm {

struct SynthConfig {
  int n_subjects = 10;
  double duration_s = 600.0;
  std::uint64_t seed = 7;
  double intensity = 0.8;
  double rate_hz = 120.0;
  double accel_noise_std = 0.05;  // m/s²
  double gyro_noise_std = 0.01;   // rad/s
  // Target time share of Calib, MovNoTC, MovTC.
  std::array<double, 3> class_share{0.3451, 0.4884, 0.1665};
  double calib_min_s = 3.0;
  double calib_max_s = 6.0;
  double cycle_min_s = 1.6;
  double cycle_max_s = 2.6;
  int cycles_min = 2;
  int cycles_max = 3;
  // Trunk flexion reached at full phase, degrees.
  double notc_trunk_pitch_max_deg = 4.0;
  double tc_trunk_pitch_deg = 18.0;
  // Fractional loss of arm extension at intensity 1.
  double tc_reach_attenuation = 0.45;

  void validate() const {
    if (n_subjects < 1) throw ConfigError("synth: n_subjects must be >= 1");
    if (!(duration_s > 0.0)) throw ConfigError("synth: duration must be > 0");
    if (!(intensity >= 0.0 && intensity <= 1.0)) throw ConfigError("synth: intensity must be in [0,1]");
    if (!(rate_hz > 0.0)) throw ConfigError("synth: rate must be > 0");
    if (accel_noise_std < 0.0 || gyro_noise_std < 0.0) throw ConfigError("synth: noise std must be >= 0");
    double s = 0.0;
    for (double c : class_share) {
      if (c < 0.0) throw ConfigError("synth: class shares must be >= 0");
      s += c;
    }
    if (!(s > 0.0)) throw ConfigError("synth: class shares sum to zero");
    if (!(calib_min_s > 0.0 && calib_max_s >= calib_min_s)) throw ConfigError("synth: bad calib segment range");
    if (!(cycle_min_s > 0.0 && cycle_max_s >= cycle_min_s)) throw ConfigError("synth: bad cycle range");
    if (cycles_min < 1 || cycles_max < cycles_min) throw ConfigError("synth: bad cycle count range");
  }
};

namespace detail {

struct SynthSegment {
  Label label = Label::Calib;
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
  double period_s = 0.0;
  // Movement parameters drawn once per segment.
  double reach_scale = 1.0;
  double reach_dir = 0.0;   // rad, about z from anterior
  double reach_lift = 0.0;  // m
  double trunk_pitch = 0.0; // rad at full phase
  double trunk_roll = 0.0;  // rad at full phase
  double wrist_pitch = 0.0; // rad at full phase
  double wrist_yaw = 0.0;   // rad at full phase
};

struct SubjectParams {
  double heading = 0.0;
  double reach = 0.3;
  double pivot_height = 0.45;
  double shoulder_height = 0.4;
  double roll_sign = 1.0;
  double roll_share = 0.3;
  double wrist_mount = 0.0;
  double trunk_mount = 0.0;
};

inline std::vector<SynthSegment> build_schedule(const SynthConfig& cfg, const SubjectParams& sp,
                                                std::size_t n_samples, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
  const double share_sum = cfg.class_share[0] + cfg.class_share[1] + cfg.class_share[2];
  std::array<double, 3> share{};
  for (int c = 0; c < 3; ++c) share[c] = cfg.class_share[c] / share_sum;

  std::vector<SynthSegment> segs;
  std::array<double, 3> used{};
  std::size_t pos = 0;
  const double expected_move =
      0.5 * (cfg.cycle_min_s + cfg.cycle_max_s) * 0.5 * (cfg.cycles_min + cfg.cycles_max);
  const double expected_calib = 0.5 * (cfg.calib_min_s + cfg.calib_max_s);
  while (pos < n_samples) {
    SynthSegment seg;
    if (segs.empty()) {
      seg.label = Label::Calib;
    } else {
      // Largest projected deficit against the target share wins.
      const double elapsed = static_cast<double>(pos) / cfg.rate_hz;
      double best = -1e300;
      for (int c = 0; c < 3; ++c) {
        if (share[c] <= 0.0) continue;
        const double len = c == 0 ? expected_calib : expected_move;
        const double deficit = share[c] * (elapsed + len) - used[c];
        if (deficit > best) {
          best = deficit;
          seg.label = label_from_index(c);
        }
      }
    }
    double len_s = 0.0;
    if (seg.label == Label::Calib) {
      len_s = uni(cfg.calib_min_s, cfg.calib_max_s);
    } else {
      seg.period_s = uni(cfg.cycle_min_s, cfg.cycle_max_s);
      const int cycles = std::uniform_int_distribution<int>(cfg.cycles_min, cfg.cycles_max)(rng);
      len_s = seg.period_s * cycles;
      seg.reach_scale = uni(0.85, 1.15);
      seg.reach_dir = uni(-0.6, 0.6);
      seg.reach_lift = uni(0.0, 0.15);
      seg.wrist_pitch = uni(-0.5, 0.2);
      seg.wrist_yaw = uni(-0.4, 0.4);
      const double base_pitch = uni(0.25, 1.0) * cfg.notc_trunk_pitch_max_deg * kPi / 180.0;
      double extra = 0.0;
      if (seg.label == Label::MovTC) {
        extra = cfg.intensity * uni(0.8, 1.2) * cfg.tc_trunk_pitch_deg * kPi / 180.0;
        seg.reach_scale *= 1.0 - cfg.tc_reach_attenuation * cfg.intensity;
      }
      seg.trunk_pitch = base_pitch + extra;
      seg.trunk_roll = sp.roll_sign * sp.roll_share * extra + uni(-0.01, 0.01);
    }
    const auto len = static_cast<std::size_t>(std::llround(len_s * cfg.rate_hz));
    seg.begin = pos;
    seg.end = std::min(n_samples, pos + std::max<std::size_t>(len, 1));
    used[static_cast<std::size_t>(label_index(seg.label))] += static_cast<double>(seg.end - seg.begin) / cfg.rate_hz;
    pos = seg.end;
    segs.push_back(seg);
  }
  return segs;
}

struct Pose {
  Quat q_trunk;  // world <- trunk sensor
  Quat q_wrist;  // world <- wrist sensor
  Vec3 p_trunk;
  Vec3 p_wrist;
};

inline Pose pose_at(const SynthSegment& seg, double t_in_seg, const SubjectParams& sp) {
  double s = 0.0;
  if (seg.label != Label::Calib) s = 0.5 * (1.0 - std::cos(2.0 * kPi * t_in_seg / seg.period_s));

  const Quat heading{std::cos(0.5 * sp.heading), 0.0, 0.0, std::sin(0.5 * sp.heading)};
  const Quat trunk_seg = euler_to_quat({seg.trunk_roll * s, seg.trunk_pitch * s, 0.0});
  const Quat trunk_mount = quat_from_axis_angle({0, 1, 0}, sp.trunk_mount);
  // Wrist sensor: local x along the anatomical left-lateral axis at rest,
  // then tilted about that axis by the mounting angle.
  const Quat wrist_base = quat_mul(quat_from_axis_angle({0, 1, 0}, sp.wrist_mount),
                                   quat_from_axis_angle({0, 0, 1}, kPi / 2.0));
  const Quat wrist_seg = euler_to_quat({0.0, seg.wrist_pitch * s, seg.wrist_yaw * s});

  Pose p;
  const Quat trunk_anat = trunk_seg;
  p.q_trunk = quat_mul(heading, quat_mul(trunk_anat, trunk_mount));
  p.q_wrist = quat_mul(heading, quat_mul(wrist_seg, wrist_base));

  const Vec3 trunk_sensor_anat = rotate_vec(trunk_anat, {0.0, 0.0, sp.pivot_height});
  const Vec3 shoulder_anat = rotate_vec(trunk_anat, {0.0, -0.2, sp.shoulder_height});
  const Vec3 rest_offset{0.2, 0.0, -0.25};
  const double reach = sp.reach * seg.reach_scale * s;
  const Vec3 reach_vec{reach * std::cos(seg.reach_dir), reach * std::sin(seg.reach_dir), seg.reach_lift * s};
  p.p_trunk = rotate_vec(heading, trunk_sensor_anat);
  p.p_wrist = rotate_vec(heading, shoulder_anat + rest_offset + reach_vec);
  return p;
}

}  // namespace detail

/// Generates one recording per subject. Deterministic for a fixed config.
inline std::vector<Recording> generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  constexpr double g = 9.80665;
  const double dt = 1.0 / cfg.rate_hz;
  const auto n = static_cast<std::size_t>(std::llround(cfg.duration_s * cfg.rate_hz));
  if (n < 3) throw ConfigError("synth: duration too short");

  std::vector<Recording> out;
  out.reserve(static_cast<std::size_t>(cfg.n_subjects));
  for (int subj = 0; subj < cfg.n_subjects; ++subj) {
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(subj), 0x5eed5u};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };

    detail::SubjectParams sp;
    sp.heading = uni(-kPi, kPi);
    sp.reach = uni(0.25, 0.40);
    sp.pivot_height = uni(0.35, 0.50);
    sp.shoulder_height = uni(0.40, 0.50);
    sp.roll_sign = u01(rng) < 0.5 ? -1.0 : 1.0;
    sp.roll_share = uni(0.2, 0.5);
    sp.wrist_mount = uni(-0.4, 0.4);
    sp.trunk_mount = uni(-0.25, 0.25);

    const auto segs = detail::build_schedule(cfg, sp, n, rng);

    std::vector<detail::Pose> poses(n);
    Recording rec;
    rec.labels.resize(n);
    for (const auto& seg : segs)
      for (std::size_t k = seg.begin; k < seg.end; ++k) {
        poses[k] = detail::pose_at(seg, static_cast<double>(k - seg.begin) * dt, sp);
        rec.labels[k] = seg.label;
      }

    std::normal_distribution<double> an(0.0, cfg.accel_noise_std);
    std::normal_distribution<double> gn(0.0, cfg.gyro_noise_std);
    auto noise3 = [&](std::normal_distribution<double>& d) { return Vec3{d(rng), d(rng), d(rng)}; };

    rec.wrist.resize(n);
    rec.trunk.resize(n);
    auto body_rate = [&](const Quat& prev, const Quat& cur) {
      return quat_to_rotvec(mul_raw(conjugate(prev), cur)) / dt;
    };
    auto lin_acc = [&](const Vec3& pm, const Vec3& p0, const Vec3& pp) { return (pp - 2.0 * p0 + pm) / (dt * dt); };
    for (std::size_t k = 0; k < n; ++k) {
      const double t = static_cast<double>(k) * dt;
      Vec3 aw{}, at{};
      if (k > 0 && k + 1 < n) {
        aw = lin_acc(poses[k - 1].p_wrist, poses[k].p_wrist, poses[k + 1].p_wrist);
        at = lin_acc(poses[k - 1].p_trunk, poses[k].p_trunk, poses[k + 1].p_trunk);
      }
      const Vec3 gw{0.0, 0.0, g};
      Vec3 ww{}, wt{};
      if (k > 0) {
        ww = body_rate(poses[k - 1].q_wrist, poses[k].q_wrist);
        wt = body_rate(poses[k - 1].q_trunk, poses[k].q_trunk);
      }
      rec.wrist[k] = {t, rotate_vec(conjugate(poses[k].q_wrist), aw + gw) + noise3(an), ww + noise3(gn)};
      rec.trunk[k] = {t, rotate_vec(conjugate(poses[k].q_trunk), at + gw) + noise3(an), wt + noise3(gn)};
    }

    char id[16];
    std::snprintf(id, sizeof(id), "S%02d", subj + 1);
    rec.meta.subject = id;
    rec.meta.arm = ArmSide::Right;
    rec.meta.condition = "synthetic";
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace ctm
