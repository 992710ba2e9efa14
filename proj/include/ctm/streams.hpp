#pragma once

// Kinematic data streams derived per sample from calibrated wrist and trunk
// kinematics:
//
//   <sensor>.acc_local   x y z mag   sensor frame, with gravity
//   <sensor>.acc_cal     x y z mag   calibrated frame, gravity removed
//   <sensor>.gyro_local  x y z mag   sensor frame
//   <sensor>.gyro_cal    x y z mag   calibrated frame
//   <sensor>.orient      roll pitch yaw
//   pair.rel_orient      roll pitch yaw angle   wrist relative to trunk
//
// for sensor in {wrist, trunk}: 2 * 19 + 4 = 42 channels at the sample rate.
// The optical-capture streams (linear velocity, marker distances) have no
// source here and are not part of the layout.

#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "ctm/calib.hpp"
#include "ctm/core.hpp"
#include "ctm/error.hpp"
#include "ctm/ingest.hpp"

namespace ctm {

enum class Origin : std::uint8_t { Wrist, Trunk, Pair };

inline std::string_view origin_name(Origin o) {
  switch (o) {
    case Origin::Wrist: return "wrist";
    case Origin::Trunk: return "trunk";
    case Origin::Pair: return "pair";
  }
  return "?";
}

struct ChannelInfo {
  Origin origin;
  std::string_view stream;
  std::string_view channel;
  bool angle;  // unwrapped before windowed metrics

  std::string name() const {
    return std::string(origin_name(origin)) + "." + std::string(stream) + "." + std::string(channel);
  }
};

inline constexpr std::size_t kChannelsPerSensor = 19;
inline constexpr std::size_t kNumChannels = 2 * kChannelsPerSensor + 4;

namespace detail {

inline constexpr std::array<ChannelInfo, kChannelsPerSensor> sensor_layout(Origin o) {
  return {{{o, "acc_local", "x", false},  {o, "acc_local", "y", false},  {o, "acc_local", "z", false},
           {o, "acc_local", "mag", false}, {o, "acc_cal", "x", false},    {o, "acc_cal", "y", false},
           {o, "acc_cal", "z", false},     {o, "acc_cal", "mag", false},  {o, "gyro_local", "x", false},
           {o, "gyro_local", "y", false},  {o, "gyro_local", "z", false}, {o, "gyro_local", "mag", false},
           {o, "gyro_cal", "x", false},    {o, "gyro_cal", "y", false},   {o, "gyro_cal", "z", false},
           {o, "gyro_cal", "mag", false},  {o, "orient", "roll", true},   {o, "orient", "pitch", true},
           {o, "orient", "yaw", true}}};
}

inline constexpr std::array<ChannelInfo, kNumChannels> make_layout() {
  std::array<ChannelInfo, kNumChannels> out{};
  const auto w = sensor_layout(Origin::Wrist);
  const auto t = sensor_layout(Origin::Trunk);
  for (std::size_t i = 0; i < kChannelsPerSensor; ++i) {
    out[i] = w[i];
    out[kChannelsPerSensor + i] = t[i];
  }
  out[38] = {Origin::Pair, "rel_orient", "roll", true};
  out[39] = {Origin::Pair, "rel_orient", "pitch", true};
  out[40] = {Origin::Pair, "rel_orient", "yaw", true};
  out[41] = {Origin::Pair, "rel_orient", "angle", false};
  return out;
}

}  // namespace detail

inline constexpr std::array<ChannelInfo, kNumChannels> kChannelLayout = detail::make_layout();

/// Offsets of the stream groups inside one sensor block.
namespace ch {
inline constexpr std::size_t kAccLocal = 0;
inline constexpr std::size_t kAccCal = 4;
inline constexpr std::size_t kGyroLocal = 8;
inline constexpr std::size_t kGyroCal = 12;
inline constexpr std::size_t kOrient = 16;
inline constexpr std::size_t kWrist = 0;
inline constexpr std::size_t kTrunk = kChannelsPerSensor;
inline constexpr std::size_t kRelOrient = 38;
}  // namespace ch

inline std::size_t channel_index(std::string_view name) {
  for (std::size_t i = 0; i < kNumChannels; ++i)
    if (kChannelLayout[i].name() == name) return i;
  throw std::out_of_range("unknown channel " + std::string(name));
}

struct RelativeOrientation {
  Euler euler;
  double angle = 0.0;
};

/// Orientation of a relative to b: q_rel = q_b⁻¹ ⊗ q_a.
inline RelativeOrientation relative_orientation(const Quat& q_a, const Quat& q_b) {
  const Quat rel = quat_mul(quat_inverse(q_b), q_a);
  return {quat_to_euler(rel), 2.0 * std::acos(std::min(1.0, std::abs(rel.w)))};
}

using SampleChannels = std::array<double, kNumChannels>;

namespace detail {

inline void put_vec(double* out, const Vec3& v) {
  out[0] = v.x;
  out[1] = v.y;
  out[2] = v.z;
  out[3] = norm(v);
}

inline void put_sensor(double* out, const SensorKinematics& k) {
  put_vec(out + ch::kAccLocal, k.accel_local);
  put_vec(out + ch::kAccCal, k.accel_cal);
  put_vec(out + ch::kGyroLocal, k.gyro_local);
  put_vec(out + ch::kGyroCal, k.gyro_cal);
  const Euler e = quat_to_euler(k.q_cal);
  out[ch::kOrient + 0] = e.roll;
  out[ch::kOrient + 1] = e.pitch;
  out[ch::kOrient + 2] = e.yaw;
}

}  // namespace detail

/// All 42 channel values of one sample.
inline SampleChannels derive_sample(const SensorKinematics& wrist, const SensorKinematics& trunk) {
  SampleChannels out{};
  detail::put_sensor(out.data() + ch::kWrist, wrist);
  detail::put_sensor(out.data() + ch::kTrunk, trunk);
  const auto rel = relative_orientation(wrist.q_cal, trunk.q_cal);
  out[ch::kRelOrient + 0] = rel.euler.roll;
  out[ch::kRelOrient + 1] = rel.euler.pitch;
  out[ch::kRelOrient + 2] = rel.euler.yaw;
  out[ch::kRelOrient + 3] = rel.angle;
  return out;
}

/// Wrist/trunk calibration chains for one recording.
class StreamDeriver {
public:
  StreamDeriver(const CalibConfig& cfg, bool mirror)
      : wrist_(SensorKind::Wrist, cfg, mirror), trunk_(SensorKind::Trunk, cfg, mirror) {}

  SampleChannels push(const RawSample& wrist, const RawSample& trunk) {
    return derive_sample(wrist_.push(wrist), trunk_.push(trunk));
  }

private:
  SensorChain wrist_;
  SensorChain trunk_;
};

/// Channel-major stream storage with per-sample labels.
struct StreamSet {
  std::vector<double> t;
  std::array<std::vector<double>, kNumChannels> channels;
  std::vector<Label> labels;  // empty when unlabelled

  std::size_t size() const { return t.size(); }
  std::span<const double> channel(std::size_t i) const { return channels[i]; }
};

inline StreamSet derive_streams(const Recording& rec, const CalibConfig& cfg) {
  validate(rec);
  StreamDeriver deriver(cfg, should_mirror(cfg, rec.meta));
  StreamSet ss;
  const std::size_t n = rec.size();
  ss.t.reserve(n);
  for (auto& c : ss.channels) c.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto v = deriver.push(rec.wrist[i], rec.trunk[i]);
    ss.t.push_back(rec.wrist[i].t);
    for (std::size_t c = 0; c < kNumChannels; ++c) ss.channels[c].push_back(v[c]);
  }
  ss.labels = rec.labels;
  return ss;
}

}  // namespace ctm
