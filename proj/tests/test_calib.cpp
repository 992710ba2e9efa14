#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ctm/calib.hpp"
#include "support.hpp"

using namespace ctm;

TEST(Bias, SubtractsComponentwise) {
  const RawSample s{0.0, {1.1, 0.0, 9.9}, {0.5, 0.5, 0.5}};
  const RawSample c = bias_correct(s, {0.1, 0.0, 0.1}, {0.5, 0.0, 0.0});
  EXPECT_NEAR(c.accel.x, 1.0, 1e-15);
  EXPECT_NEAR(c.accel.z, 9.8, 1e-15);
  EXPECT_EQ(c.gyro.x, 0.0);
  const RawSample z = bias_correct(s, {}, {});
  EXPECT_EQ(z.accel.x, s.accel.x);
  const RawSample back = bias_correct(c, {-0.1, 0.0, -0.1}, {-0.5, 0.0, 0.0});
  EXPECT_NEAR(back.accel.x, s.accel.x, 1e-15);
  EXPECT_NEAR(back.gyro.x, s.gyro.x, 1e-15);
}

TEST(Attitude, StaticIdentityStaysIdentity) {
  AttitudeState st = attitude_init({0.0, 0.0, 9.81});
  EXPECT_EQ(st.q_world, Quat::identity());
  for (int i = 0; i < 1200; ++i) st = attitude_update(st, {}, {0.0, 0.0, 9.81}, 1.0 / 120.0);
  EXPECT_LT(quat_distance(st.q_world, Quat::identity()), 1e-15);
}

TEST(Attitude, GyroIntegrationIsExact) {
  AttitudeState st;
  for (int i = 0; i < 120; ++i) st = attitude_update(st, {0.0, 0.0, kPi / 2}, {0.0, 0.0, 0.0}, 1.0 / 120.0);
  const Euler e = quat_to_euler(st.q_world);
  EXPECT_NEAR(e.yaw, kPi / 2, 1e-6);
  EXPECT_NEAR(e.roll, 0.0, 1e-12);
  EXPECT_NEAR(e.pitch, 0.0, 1e-12);
}

TEST(Attitude, RollErrorConvergesWithinFiveTau) {
  AttitudeState st;
  st.q_world = quat_from_axis_angle({1, 0, 0}, 30.0 * kPi / 180.0);
  st.tau = 1.0;
  const double dt = 1.0 / 120.0;
  for (int i = 0; i < 600; ++i) st = attitude_update(st, {}, {0.0, 0.0, 9.80665}, dt);
  EXPECT_LT(angle_between(st.q_world, Quat::identity()) * 180.0 / kPi, 1.0);
  // First-order oracle: error after n steps is 30 deg * (1 - dt/tau)^n.
  EXPECT_NEAR(quat_to_euler(st.q_world).roll * 180.0 / kPi, 30.0 * std::pow(1.0 - dt, 600), 1e-6);
}

TEST(Attitude, CorrectionIsAboutHorizontalAxis) {
  const Quat truth = euler_to_quat({0.3, -0.2, 1.1});
  const Vec3 acc = rotate_vec(conjugate(truth), {0.0, 0.0, kGravity});
  AttitudeState tilted;
  tilted.q_world = euler_to_quat({0.5, 0.1, 1.1});
  const AttitudeState next = attitude_update(tilted, {}, acc, 0.01);
  const Quat corr = mul_raw(next.q_world, conjugate(tilted.q_world));
  EXPECT_NEAR(corr.z, 0.0, 1e-12);
  EXPECT_GT(angle_between(next.q_world, tilted.q_world), 0.0);
}

TEST(Attitude, PreservesUnitNormOverOneMillionSteps) {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> n(0.0, 1.0);
  AttitudeState st;
  for (int i = 0; i < 1000000; ++i) {
    const Vec3 g{n(rng), n(rng), n(rng)};
    const Vec3 a{n(rng), n(rng), 9.8 + n(rng)};
    st = attitude_update(st, g, a, 1.0 / 120.0);
  }
  EXPECT_NEAR(norm(st.q_world), 1.0, 1e-9);
}

TEST(Attitude, RejectsBadInput) {
  const AttitudeState st;
  EXPECT_THROW(attitude_update(st, {std::nan(""), 0, 0}, {0, 0, 9.8}, 0.01), DataError);
  EXPECT_THROW(attitude_update(st, {}, {0, 0, 9.8}, 0.0), DataError);
  EXPECT_THROW(attitude_update(st, {}, {0, 0, 9.8}, 0.2), DataError);
}

TEST(Gravity, RemovalExamples) {
  const Vec3 a = remove_gravity({0.0, 0.0, kGravity}, Quat::identity());
  EXPECT_NEAR(norm(a), 0.0, 1e-12);
  const Quat flipped = quat_from_axis_angle({1, 0, 0}, kPi);
  EXPECT_NEAR(norm(remove_gravity({0.0, 0.0, -kGravity}, flipped)), 0.0, 1e-12);
  std::mt19937_64 rng(3);
  const Vec3 ff = remove_gravity({0.0, 0.0, 0.0}, test::random_quat(rng));
  EXPECT_NEAR(ff.z, -kGravity, 1e-12);
}

TEST(Gravity, StationaryNoisyStreamSettles) {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> n(0.0, 0.05);
  const Quat truth = euler_to_quat({0.4, -0.3, 0.9});
  const Vec3 g_sensor = rotate_vec(conjugate(truth), {0.0, 0.0, kGravity});
  const double dt = 1.0 / 120.0;
  AttitudeState st = attitude_init(g_sensor + Vec3{n(rng), n(rng), n(rng)});
  // Residual 5 deg initial tilt error.
  st.q_world = quat_mul(quat_from_axis_angle({1, 1, 0}, 5.0 * kPi / 180.0), st.q_world);
  Vec3 sum{};
  int count = 0;
  for (int i = 0; i < 120 * 10; ++i) {
    const Vec3 a = g_sensor + Vec3{n(rng), n(rng), n(rng)};
    st = attitude_update(st, Vec3{n(rng), n(rng), n(rng)} * 0.2, a, dt);
    if (i >= 600) {
      sum = sum + remove_gravity(a, st.q_world);
      ++count;
    }
  }
  EXPECT_LT(norm(sum / count), 0.05);
}

TEST(Calibration, IdentityWristBasis) {
  const Mat3 r = calibration_basis(Quat::identity(), SensorKind::Wrist);
  const Vec3 x = r.col(0), y = r.col(1), z = r.col(2);
  EXPECT_NEAR(x.x, 0.0, 1e-15);
  EXPECT_NEAR(x.y, -1.0, 1e-15);
  EXPECT_NEAR(y.x, 1.0, 1e-15);
  EXPECT_NEAR(y.y, 0.0, 1e-15);
  EXPECT_EQ(z.z, 1.0);
}

TEST(Calibration, IdentityTrunkIsIdentity) {
  const CalibFrame cf = anatomical_calibration(Quat::identity(), SensorKind::Trunk);
  EXPECT_LT(quat_distance(cf.q_rot, Quat::identity()), 1e-15);
  EXPECT_EQ(apply_calibration(apply_calibration(Quat::identity(), cf), cf), Quat::identity());
}

TEST(Calibration, DegenerateLateralAxisRejected) {
  // Wrist local x pointing at world +z.
  const Quat q = quat_from_axis_angle({0, 1, 0}, -kPi / 2);
  ASSERT_NEAR(rotate_vec(q, {1, 0, 0}).z, 1.0, 1e-12);
  EXPECT_THROW(anatomical_calibration(q, SensorKind::Wrist), DataError);
}

TEST(Calibration, RandomOrientationsGiveRightHandedBasis) {
  std::mt19937_64 rng(14);
  int done = 0;
  while (done < 1000) {
    const Quat q0 = test::random_quat(rng);
    for (SensorKind kind : {SensorKind::Wrist, SensorKind::Trunk}) {
      const Vec3 lat = rotate_vec(q0, lateral_axis(kind));
      if (norm(cross(lat, {0, 0, 1})) <= 1e-3) continue;
      const Mat3 r = calibration_basis(q0, kind);
      EXPECT_NEAR(r.det(), 1.0, 1e-9);
      const Mat3 rtr = r.transposed() * r;
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) EXPECT_NEAR(rtr(i, j), i == j ? 1.0 : 0.0, 1e-9);
      const CalibFrame cf = anatomical_calibration(q0, kind);
      const Quat qc = apply_calibration(q0, cf);
      const Vec3 lat_cal = rotate_vec(qc, lateral_axis(kind));
      EXPECT_NEAR(lat_cal.x, 0.0, 1e-9);
      EXPECT_GE(lat_cal.y, 0.0);
    }
    ++done;
  }
}

TEST(PatientPose, QuarterTurn) {
  const Quat q = patient_pose_adjust(Quat::identity());
  EXPECT_NEAR(q.w, std::cos(kPi / 4), 1e-15);
  EXPECT_NEAR(q.z, std::sin(kPi / 4), 1e-15);
  Quat r = Quat::identity();
  for (int i = 0; i < 4; ++i) r = patient_pose_adjust(r);
  EXPECT_LT(quat_distance(r, Quat::identity()), 1e-12);
  std::mt19937_64 rng(15);
  const Quat base = test::random_quat(rng);
  const Vec3 z_before = rotate_vec(base, {0, 0, 1});
  const Vec3 z_after_world = rotate_vec(patient_pose_rotation(), z_before);
  EXPECT_NEAR(z_after_world.z, z_before.z, 1e-12);
}

TEST(Mirror, ExamplesAndInvolution) {
  constexpr auto m = mirror_kinematics({1, 2, 3}, {1, 2, 3});
  static_assert(m.accel.x == 1 && m.accel.y == -2 && m.accel.z == 3);
  static_assert(m.gyro.x == -1 && m.gyro.y == 2 && m.gyro.z == -3);
  std::mt19937_64 rng(16);
  for (int i = 0; i < 1000; ++i) {
    const Vec3 a = test::random_vec(rng, 20.0), w = test::random_vec(rng, 5.0);
    const auto once = mirror_kinematics(a, w);
    const auto twice = mirror_kinematics(once.accel, once.gyro);
    EXPECT_EQ(twice.accel.x, a.x);
    EXPECT_EQ(twice.accel.y, a.y);
    EXPECT_EQ(twice.accel.z, a.z);
    EXPECT_EQ(twice.gyro.x, w.x);
    EXPECT_EQ(twice.gyro.y, w.y);
    EXPECT_EQ(twice.gyro.z, w.z);
  }
}

TEST(TrunkAlignment, Examples) {
  std::mt19937_64 rng(17);
  const Quat ref = test::random_quat(rng);
  EXPECT_FALSE(trunk_alignment_correction(ref, ref).has_value());
  EXPECT_FALSE(trunk_alignment_correction({-ref.w, -ref.x, -ref.y, -ref.z}, ref).has_value());
  const Quat q0 = quat_mul(quat_from_axis_angle({0, 0, 1}, kPi / 2), ref);
  const auto corr = trunk_alignment_correction(q0, ref);
  ASSERT_TRUE(corr.has_value());
  EXPECT_LT(quat_distance(quat_mul(*corr, q0), ref), 1e-12);
}

TEST(SensorChain, FirstSampleDefinesCalibratedFrame) {
  std::mt19937_64 rng(18);
  CalibConfig cfg;
  for (int i = 0; i < 100; ++i) {
    const Quat truth = test::random_quat(rng);
    const Vec3 g = rotate_vec(conjugate(truth), {0, 0, kGravity});
    if (std::abs(rotate_vec(tilt_from_accel(g), {1, 0, 0}).z) > 0.99) continue;
    SensorChain wrist(SensorKind::Wrist, cfg, false);
    const auto k = wrist.push({0.0, g, {}});
    // Calibrated vertical is world vertical; lateral axis lies on +y.
    const Vec3 up = rotate_vec(k.q_cal, rotate_vec(conjugate(wrist.attitude().q_world), {0, 0, 1}));
    EXPECT_NEAR(up.z, 1.0, 1e-9);
    const Vec3 lat = rotate_vec(k.q_cal, {1, 0, 0});
    EXPECT_NEAR(lat.x, 0.0, 1e-9);
    EXPECT_GE(lat.y, 0.0);
    EXPECT_NEAR(norm(k.accel_cal), 0.0, 1e-9);
  }
}

TEST(SensorChain, BiasAndMirrorApplied) {
  CalibConfig cfg;
  cfg.wrist_bias = {{0.1, 0.2, 0.3}, {0.01, 0.02, 0.03}};
  SensorChain c(SensorKind::Wrist, cfg, true);
  const auto k = c.push({0.0, {0.1, 1.2, 9.8}, {0.01, 0.52, 0.03}});
  EXPECT_NEAR(k.accel_local.y, -1.0, 1e-12);
  EXPECT_NEAR(k.gyro_local.y, 0.5, 1e-12);
  EXPECT_NEAR(k.gyro_local.x, 0.0, 1e-12);
}

TEST(CalibConfig, Validation) {
  CalibConfig c;
  EXPECT_NO_THROW(c.validate());
  c.tau = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.q_ref = {2.0, 0.0, 0.0, 0.0};
  EXPECT_THROW(c.validate(), ConfigError);
}
