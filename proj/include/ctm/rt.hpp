#pragma once

// Streaming inference: per-sample calibration and stream derivation into a
// fixed-capacity ring buffer, one prediction per hop once a full window is
// buffered, and per-stage latency accounting.
//
// The engine runs synchronously on the producer's thread. Cadence is tied to
// the accepted-sample count, so a replay reproduces the offline windows
// exactly.

#include <array>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "ctm/calib.hpp"
#include "ctm/error.hpp"
#include "ctm/features.hpp"
#include "ctm/gbt.hpp"
#include "ctm/ingest.hpp"
#include "ctm/streams.hpp"

namespace ctm {

/// Fixed-capacity overwrite-oldest buffer. push() never allocates.
template <class T>
class RingBuffer {
public:
  explicit RingBuffer(std::size_t capacity) : data_(capacity) {
    if (capacity == 0) throw std::invalid_argument("RingBuffer: zero capacity");
  }

  void push(const T& v) {
    data_[head_] = v;
    head_ = (head_ + 1) % data_.size();
    ++count_;
  }

  std::size_t capacity() const { return data_.size(); }
  std::size_t size() const { return static_cast<std::size_t>(std::min<std::uint64_t>(count_, data_.size())); }
  bool full() const { return count_ >= data_.size(); }
  /// Total pushes since construction.
  std::uint64_t count() const { return count_; }

  /// i-th oldest retained element.
  const T& operator[](std::size_t i) const {
    const std::size_t oldest = full() ? head_ : 0;
    return data_[(oldest + i) % data_.size()];
  }

  /// Retained elements, oldest first.
  void snapshot(std::vector<T>& out) const {
    out.resize(size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*this)[i];
  }

private:
  std::vector<T> data_;
  std::size_t head_ = 0;
  std::uint64_t count_ = 0;
};

struct StageLatency {
  double preprocess_ms = 0.0;
  double features_ms = 0.0;
  double inference_ms = 0.0;
  double total_ms = 0.0;
};

struct Prediction {
  double t = 0.0;  // timestamp of the window's last sample
  std::uint64_t sample = 0;  // accepted-sample count at emission
  Label label = Label::Calib;
  std::array<double, kNumClasses> probs{};
  StageLatency latency;
};

/// Running mean/std/max (Welford).
class RunningStats {
public:
  void add(double x) {
    ++n_;
    const double d = x - mean_;
    mean_ += d / static_cast<double>(n_);
    m2_ += d * (x - mean_);
    max_ = std::max(max_, x);
  }
  std::size_t n() const { return n_; }
  double mean() const { return n_ ? mean_ : 0.0; }
  double std() const { return n_ > 1 ? std::sqrt(m2_ / static_cast<double>(n_ - 1)) : 0.0; }
  double max() const { return n_ ? max_ : 0.0; }

private:
  std::size_t n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
  double max_ = 0.0;
};

struct StageSummary {
  double mean_ms = 0.0;
  double std_ms = 0.0;
  double max_ms = 0.0;
};

struct LatencyReport {
  std::size_t n = 0;
  StageSummary preprocess;
  StageSummary features;
  StageSummary inference;
  StageSummary end_to_end;
  std::uint64_t samples = 0;
  std::uint64_t dropped = 0;
};

inline nlohmann::json to_json(const StageSummary& s) {
  return {{"mean_ms", s.mean_ms}, {"std_ms", s.std_ms}, {"max_ms", s.max_ms}};
}

inline nlohmann::json to_json(const LatencyReport& r) {
  return {{"n", r.n},
          {"samples", r.samples},
          {"dropped", r.dropped},
          {"preprocess", to_json(r.preprocess)},
          {"features", to_json(r.features)},
          {"inference", to_json(r.inference)},
          {"end_to_end", to_json(r.end_to_end)}};
}

struct EngineOptions {
  CalibConfig calib;
  WindowSpec window;
  bool mirror = false;
};

class Engine {
public:
  Engine(const GbtModel& model, const EngineOptions& opt)
      : model_(model), opt_(opt), deriver_(opt.calib, opt.mirror),
        ring_(static_cast<std::size_t>((opt.window.validate(), opt.window.length))), extractor_(opt.window.rate_hz) {
    opt.calib.validate();
    feature_map_ = bind_features(model_, feature_names());
    window_.resize(ring_.capacity());
    for (auto& c : channels_) c.resize(ring_.capacity());
    features_.resize(kNumFeatures);
    model_x_.resize(feature_map_.size());
  }

  /// Feeds one synchronized sample pair. Samples whose timestamp does not
  /// advance, or whose wrist and trunk timestamps differ, are dropped.
  std::optional<Prediction> on_sample(const RawSample& wrist, const RawSample& trunk) {
    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();
    if (!std::isfinite(wrist.t) || wrist.t != trunk.t || (accepted_ > 0 && !(wrist.t > last_t_))) {
      ++dropped_;
      return std::nullopt;
    }
    ring_.push({wrist.t, deriver_.push(wrist, trunk)});
    last_t_ = wrist.t;
    ++accepted_;
    const auto t1 = clock::now();
    pending_pre_ms_ += ms(t1 - t0);

    const auto len = static_cast<std::uint64_t>(opt_.window.length);
    const auto hop = static_cast<std::uint64_t>(opt_.window.hop);
    if (accepted_ < len || (accepted_ - len) % hop != 0) return std::nullopt;

    ring_.snapshot(window_);
    WindowView view;
    for (std::size_t c = 0; c < kNumChannels; ++c) {
      for (std::size_t i = 0; i < window_.size(); ++i) channels_[c][i] = window_[i].values[c];
      view[c] = channels_[c];
    }
    extractor_.extract(view, features_);
    const auto t2 = clock::now();
    for (std::size_t j = 0; j < feature_map_.size(); ++j) model_x_[j] = features_[feature_map_[j]];
    const auto p = predict_proba(model_, model_x_);
    const auto t3 = clock::now();

    Prediction pred;
    pred.t = window_.back().t;
    pred.sample = accepted_;
    std::copy(p.begin(), p.end(), pred.probs.begin());
    pred.label = label_from_index(argmax(p));
    pred.latency.preprocess_ms = pending_pre_ms_;
    pred.latency.features_ms = ms(t2 - t1);
    pred.latency.inference_ms = ms(t3 - t2);
    pred.latency.total_ms = pred.latency.preprocess_ms + pred.latency.features_ms + pred.latency.inference_ms;
    pending_pre_ms_ = 0.0;
    pre_.add(pred.latency.preprocess_ms);
    feat_.add(pred.latency.features_ms);
    inf_.add(pred.latency.inference_ms);
    e2e_.add(pred.latency.total_ms);
    return pred;
  }

  LatencyReport latency_report() const {
    const auto sum = [](const RunningStats& s) { return StageSummary{s.mean(), s.std(), s.max()}; };
    return {e2e_.n(), sum(pre_), sum(feat_), sum(inf_), sum(e2e_), accepted_, dropped_};
  }

  std::uint64_t accepted() const { return accepted_; }
  std::uint64_t dropped() const { return dropped_; }

private:
  struct Slot {
    double t = 0.0;
    SampleChannels values{};
  };

  static double ms(std::chrono::steady_clock::duration d) {
    return std::chrono::duration<double, std::milli>(d).count();
  }

  const GbtModel& model_;
  EngineOptions opt_;
  StreamDeriver deriver_;
  RingBuffer<Slot> ring_;
  FeatureExtractor extractor_;
  std::vector<std::size_t> feature_map_;
  std::vector<Slot> window_;
  std::array<std::vector<double>, kNumChannels> channels_;
  std::vector<double> features_;
  std::vector<double> model_x_;
  std::uint64_t accepted_ = 0;
  std::uint64_t dropped_ = 0;
  double last_t_ = 0.0;
  double pending_pre_ms_ = 0.0;
  RunningStats pre_, feat_, inf_, e2e_;
};

// ---------------------------------------------------------------------------
// Live byte-stream framing. One frame is 56 bytes, little-endian:
//   t (f64), wrist ax ay az gx gy gz (f32), trunk ax ay az gx gy gz (f32).

inline constexpr std::size_t kFrameSize = 8 + 12 * 4;

using Frame = std::array<std::uint8_t, kFrameSize>;

struct SamplePair {
  RawSample wrist;
  RawSample trunk;
};

namespace detail {

template <class U>
void put_le(std::uint8_t* p, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) p[i] = static_cast<std::uint8_t>(v >> (8 * i));
}

template <class U>
U get_le(const std::uint8_t* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

}  // namespace detail

/// Sensor values are narrowed to f32.
inline Frame encode_frame(const SamplePair& s) {
  Frame f{};
  detail::put_le(f.data(), std::bit_cast<std::uint64_t>(s.wrist.t));
  const std::array<double, 12> v{s.wrist.accel.x, s.wrist.accel.y, s.wrist.accel.z, s.wrist.gyro.x,
                                 s.wrist.gyro.y,  s.wrist.gyro.z,  s.trunk.accel.x, s.trunk.accel.y,
                                 s.trunk.accel.z, s.trunk.gyro.x,  s.trunk.gyro.y,  s.trunk.gyro.z};
  for (std::size_t i = 0; i < 12; ++i)
    detail::put_le(f.data() + 8 + 4 * i, std::bit_cast<std::uint32_t>(static_cast<float>(v[i])));
  return f;
}

inline SamplePair decode_frame(std::span<const std::uint8_t, kFrameSize> f) {
  const double t = std::bit_cast<double>(detail::get_le<std::uint64_t>(f.data()));
  std::array<double, 12> v{};
  for (std::size_t i = 0; i < 12; ++i)
    v[i] = std::bit_cast<float>(detail::get_le<std::uint32_t>(f.data() + 8 + 4 * i));
  return {{t, {v[0], v[1], v[2]}, {v[3], v[4], v[5]}}, {t, {v[6], v[7], v[8]}, {v[9], v[10], v[11]}}};
}

/// Source of synchronized sample pairs.
class SampleSource {
public:
  virtual ~SampleSource() = default;
  virtual std::optional<SamplePair> next() = 0;
};

class RecordingSource final : public SampleSource {
public:
  explicit RecordingSource(const Recording& rec) : rec_(rec) {}
  std::optional<SamplePair> next() override {
    if (i_ >= rec_.size()) return std::nullopt;
    const SamplePair p{rec_.wrist[i_], rec_.trunk[i_]};
    ++i_;
    return p;
  }

private:
  const Recording& rec_;
  std::size_t i_ = 0;
};

/// Reads consecutive frames from a byte stream; a trailing partial frame
/// raises DataError.
class FrameStreamSource final : public SampleSource {
public:
  explicit FrameStreamSource(std::istream& in) : in_(in) {}
  std::optional<SamplePair> next() override {
    Frame f{};
    in_.read(reinterpret_cast<char*>(f.data()), static_cast<std::streamsize>(f.size()));
    const auto got = in_.gcount();
    if (got == 0) return std::nullopt;
    if (got != static_cast<std::streamsize>(f.size())) throw DataError("frame stream: truncated frame");
    return decode_frame(f);
  }

private:
  std::istream& in_;
};

struct ReplayResult {
  std::vector<Prediction> predictions;
  LatencyReport latency;
  double wall_seconds = 0.0;
  double stream_seconds = 0.0;  // last minus first timestamp
};

inline ReplayResult replay(Engine& engine, SampleSource& src) {
  ReplayResult r;
  const auto t0 = std::chrono::steady_clock::now();
  std::optional<double> first, last;
  while (auto s = src.next()) {
    if (!first) first = s->wrist.t;
    last = s->wrist.t;
    if (auto p = engine.on_sample(s->wrist, s->trunk)) r.predictions.push_back(*p);
  }
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (first) r.stream_seconds = *last - *first;
  r.latency = engine.latency_report();
  return r;
}

}  // namespace ctm
