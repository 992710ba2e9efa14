#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "ctm/core.hpp"
#include "ctm/ingest.hpp"

namespace ctm::test {

inline Quat random_quat(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Quat q{n(rng), n(rng), n(rng), n(rng)};
  return canonical(normalized(q));
}

inline Vec3 random_vec(std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  return {u(rng), u(rng), u(rng)};
}

inline double qdist(const Quat& a, const Quat& b) { return quat_distance(a, b); }

/// Stationary two-sensor recording with the given sensor-frame gravity
/// readings.
inline Recording static_recording(std::size_t n, const Vec3& wrist_acc, const Vec3& trunk_acc, double rate = 120.0) {
  Recording r;
  r.meta.subject = "T";
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / rate;
    r.wrist.push_back({t, wrist_acc, {}});
    r.trunk.push_back({t, trunk_acc, {}});
    r.labels.push_back(i < n / 2 ? Label::Calib : Label::MovNoTC);
  }
  return r;
}

}  // namespace ctm::test
