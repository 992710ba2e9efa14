#pragma once

// Sliding-window segmentation and per-window feature metrics.
//
// Feature layout (fixed for a run, names <origin>.<stream>.<channel>.<metric>):
//   - 10 univariate statistics on each of the 42 stream channels;
//   - max normalised cross-correlation and normalised DTW distance between
//     matching wrist/trunk channels of acc_cal, gyro_cal and orient
//     (11 pairs, named pair.<stream>.<channel>.xcorr|dtw);
//   - log dimensionless jerk of the wrist and trunk acc_cal magnitude and
//     their ratio.
// Total 420 + 22 + 3 = 445 features.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "ctm/error.hpp"
#include "ctm/ingest.hpp"
#include "ctm/streams.hpp"

namespace ctm {

struct WindowSpec {
  int length = 60;
  int hop = 15;
  double rate_hz = 120.0;

  int overlap() const { return length - hop; }

  void validate() const {
    if (length < 4) throw ConfigError("window: length must be >= 4 samples");
    if (hop < 1 || hop > length) throw ConfigError("window: hop must be in [1, length]");
    if (!(rate_hz > 0.0) || !std::isfinite(rate_hz)) throw ConfigError("window: rate must be > 0");
  }
};

/// Half-open sample range [start, start + length) of a StreamSet.
struct Window {
  std::size_t start = 0;
  std::size_t length = 0;
  Label label = Label::Calib;
};

inline std::size_t window_count(std::size_t n, const WindowSpec& spec) {
  const auto len = static_cast<std::size_t>(spec.length);
  if (n < len) return 0;
  return (n - len) / static_cast<std::size_t>(spec.hop) + 1;
}

/// Windows at starts 0, hop, 2*hop, ...; label is the class of the last
/// sample (Calib when the stream set is unlabelled).
inline std::vector<Window> segment(const StreamSet& ss, const WindowSpec& spec) {
  spec.validate();
  const std::size_t n = ss.size();
  if (n < static_cast<std::size_t>(spec.length)) throw DataError("segment: stream shorter than one window");
  const std::size_t count = window_count(n, spec);
  std::vector<Window> out;
  out.reserve(count);
  for (std::size_t w = 0; w < count; ++w) {
    Window win;
    win.start = w * static_cast<std::size_t>(spec.hop);
    win.length = static_cast<std::size_t>(spec.length);
    const std::size_t last = win.start + win.length - 1;
    if (!ss.labels.empty()) win.label = ss.labels[last];
    out.push_back(win);
  }
  return out;
}

struct SeriesStats {
  double mean = 0.0;
  double std = 0.0;
  double min = 0.0;
  double max = 0.0;
  double range = 0.0;
  double rms = 0.0;
  double mad = 0.0;
  double trend = 0.0;  // least-squares slope per second
  double skew = 0.0;
  double kurt = 0.0;   // excess

  static constexpr std::array<std::string_view, 10> kNames{"mean", "std",  "min",   "max",  "range",
                                                           "rms",  "mad",  "trend", "skew", "kurt"};
  std::array<double, 10> values() const { return {mean, std, min, max, range, rms, mad, trend, skew, kurt}; }
};

/// Population moments of a series (length >= 2).
inline SeriesStats stats(std::span<const double> x, double rate_hz = 120.0) {
  SeriesStats s;
  const std::size_t n = x.size();
  if (n == 0) return s;
  const double dn = static_cast<double>(n);
  double sum = 0.0, sq = 0.0;
  double lo = x[0], hi = x[0];
  for (double v : x) {
    sum += v;
    sq += v * v;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  s.mean = sum / dn;
  s.min = lo;
  s.max = hi;
  s.range = hi - lo;
  s.rms = std::sqrt(sq / dn);
  double m2 = 0.0, m3 = 0.0, m4 = 0.0, mad = 0.0, sxy = 0.0;
  const double ic = 0.5 * (dn - 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = x[i] - s.mean;
    const double d2 = d * d;
    m2 += d2;
    m3 += d2 * d;
    m4 += d2 * d2;
    mad += std::abs(d);
    sxy += (static_cast<double>(i) - ic) * d;
  }
  m2 /= dn;
  m3 /= dn;
  m4 /= dn;
  s.std = std::sqrt(m2);
  s.mad = mad / dn;
  const double sxx = dn * (dn * dn - 1.0) / 12.0;
  s.trend = sxx > 0.0 ? sxy / sxx * rate_hz : 0.0;
  if (s.std >= 1e-9) {
    s.skew = m3 / (m2 * s.std);
    s.kurt = m4 / (m2 * m2) - 3.0;
  }
  return s;
}

namespace detail {

inline constexpr double kConstantEps = 1e-20;

/// Pearson correlation of x[i] and y[i + lag] over their overlap; 0 when
/// either side is constant.
inline double lagged_pearson(std::span<const double> x, std::span<const double> y, long lag) {
  const long n = static_cast<long>(x.size());
  const long i0 = std::max<long>(0, -lag);
  const long i1 = std::min<long>(n, n - lag);
  const double len = static_cast<double>(i1 - i0);
  double mx = 0.0, my = 0.0;
  for (long i = i0; i < i1; ++i) {
    mx += x[static_cast<std::size_t>(i)];
    my += y[static_cast<std::size_t>(i + lag)];
  }
  mx /= len;
  my /= len;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (long i = i0; i < i1; ++i) {
    const double dx = x[static_cast<std::size_t>(i)] - mx;
    const double dy = y[static_cast<std::size_t>(i + lag)] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= kConstantEps || syy <= kConstantEps) return 0.0;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

}  // namespace detail

/// Signed maximum over lags in [-L/2, L/2] of the per-lag Pearson correlation.
/// Lags with fewer than 4 overlapping samples are skipped.
inline double max_norm_xcorr(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = std::min(x.size(), y.size());
  if (n < 4) return 0.0;
  x = x.first(n);
  y = y.first(n);
  const long max_lag = static_cast<long>(n / 2);
  double best = -std::numeric_limits<double>::infinity();
  for (long lag = -max_lag; lag <= max_lag; ++lag) {
    if (static_cast<long>(n) - std::abs(lag) < 4) continue;
    best = std::max(best, detail::lagged_pearson(x, y, lag));
  }
  return std::isfinite(best) ? best : 0.0;
}

/// Reusable buffers for dtw_norm.
struct DtwScratch {
  std::vector<double> cost_prev, cost_cur;
  std::vector<int> len_prev, len_cur;
};

/// DTW with |x_i - y_j| local cost and steps {(1,0),(0,1),(1,1)}, divided by
/// the length (cell count) of the optimal path. Among equal-cost paths the
/// shortest is taken.
inline double dtw_norm(std::span<const double> x, std::span<const double> y, DtwScratch& s) {
  const std::size_t n = x.size(), m = y.size();
  if (n == 0 || m == 0) return 0.0;
  s.cost_prev.assign(m, 0.0);
  s.cost_cur.assign(m, 0.0);
  s.len_prev.assign(m, 0);
  s.len_cur.assign(m, 0);
  auto better = [](double c1, int l1, double c2, int l2) { return c1 < c2 || (c1 == c2 && l1 < l2); };
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const double c = std::abs(x[i] - y[j]);
      if (i == 0 && j == 0) {
        s.cost_cur[j] = c;
        s.len_cur[j] = 1;
        continue;
      }
      double bc = std::numeric_limits<double>::infinity();
      int bl = 0;
      if (i > 0 && j > 0) {
        bc = s.cost_prev[j - 1];
        bl = s.len_prev[j - 1];
      }
      if (i > 0 && better(s.cost_prev[j], s.len_prev[j], bc, bl)) {
        bc = s.cost_prev[j];
        bl = s.len_prev[j];
      }
      if (j > 0 && better(s.cost_cur[j - 1], s.len_cur[j - 1], bc, bl)) {
        bc = s.cost_cur[j - 1];
        bl = s.len_cur[j - 1];
      }
      s.cost_cur[j] = bc + c;
      s.len_cur[j] = bl + 1;
    }
    std::swap(s.cost_prev, s.cost_cur);
    std::swap(s.len_prev, s.len_cur);
  }
  return s.cost_prev[m - 1] / static_cast<double>(s.len_prev[m - 1]);
}

inline double dtw_norm(std::span<const double> x, std::span<const double> y) {
  DtwScratch s;
  return dtw_norm(x, y, s);
}

enum class LdjKind : std::uint8_t { Velocity, Acceleration };

namespace detail {

inline constexpr double kLdjEps = 1e-12;
inline constexpr double kLdjCap = 60.0;

/// Central differences inside, one-sided at the ends.
inline void gradient(std::span<const double> x, double dt, std::vector<double>& out) {
  const std::size_t n = x.size();
  out.resize(n);
  if (n < 2) {
    std::fill(out.begin(), out.end(), 0.0);
    return;
  }
  out[0] = (x[1] - x[0]) / dt;
  out[n - 1] = (x[n - 1] - x[n - 2]) / dt;
  for (std::size_t i = 1; i + 1 < n; ++i) out[i] = (x[i + 1] - x[i - 1]) / (2.0 * dt);
}

inline double trapezoid_sq(std::span<const double> x, double dt) {
  double acc = 0.0;
  for (std::size_t i = 1; i < x.size(); ++i) acc += 0.5 * (x[i - 1] * x[i - 1] + x[i] * x[i]);
  return acc * dt;
}

}  // namespace detail

/// Log dimensionless jerk of a velocity or acceleration profile sampled at
/// interval dt. Clamped to [-60, 60].
inline double ldj(std::span<const double> s, LdjKind kind, double dt) {
  const std::size_t n = s.size();
  if (n < 3) return 0.0;
  const double T = static_cast<double>(n - 1) * dt;
  double peak = 0.0;
  for (double v : s) peak = std::max(peak, std::abs(v));
  std::vector<double> d1, d2;
  detail::gradient(s, dt, d1);
  double integral = 0.0;
  double scale = 0.0;
  if (kind == LdjKind::Velocity) {
    detail::gradient(d1, dt, d2);
    integral = detail::trapezoid_sq(d2, dt);
    scale = T * T * T;
  } else {
    integral = detail::trapezoid_sq(d1, dt);
    scale = T;
  }
  const double arg = scale / std::max(peak * peak, detail::kLdjEps) * std::max(integral, detail::kLdjEps);
  return std::clamp(-std::log(arg), -detail::kLdjCap, detail::kLdjCap);
}

inline double ldj_ratio(double wrist, double trunk) { return std::abs(trunk) > 1e-9 ? wrist / trunk : 0.0; }

/// In-place phase unwrapping: successive differences are kept within pi.
inline void unwrap(std::span<double> x) {
  if (x.empty()) return;
  double prev_raw = x[0];
  double offset = 0.0;
  for (std::size_t i = 1; i < x.size(); ++i) {
    const double raw = x[i];
    const double d = raw - prev_raw;
    if (std::abs(d) > kPi) offset -= 2.0 * kPi * std::round(d / (2.0 * kPi));
    prev_raw = raw;
    x[i] = raw + offset;
  }
}

/// Channel-major view of one window (span per stream channel).
using WindowView = std::array<std::span<const double>, kNumChannels>;

inline WindowView window_view(const StreamSet& ss, const Window& w) {
  WindowView v;
  for (std::size_t c = 0; c < kNumChannels; ++c) v[c] = ss.channel(c).subspan(w.start, w.length);
  return v;
}

inline constexpr std::array<std::size_t, 11> kSimilarityOffsets{
    ch::kAccCal + 0,  ch::kAccCal + 1,  ch::kAccCal + 2,  ch::kAccCal + 3,  ch::kGyroCal + 0, ch::kGyroCal + 1,
    ch::kGyroCal + 2, ch::kGyroCal + 3, ch::kOrient + 0,  ch::kOrient + 1,  ch::kOrient + 2};

inline constexpr std::size_t kNumFeatures = kNumChannels * 10 + kSimilarityOffsets.size() * 2 + 3;

inline const std::vector<std::string>& feature_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    out.reserve(kNumFeatures);
    for (const auto& c : kChannelLayout)
      for (auto m : SeriesStats::kNames) out.push_back(c.name() + "." + std::string(m));
    for (std::size_t off : kSimilarityOffsets) {
      const auto& c = kChannelLayout[off];
      const std::string base = "pair." + std::string(c.stream) + "." + std::string(c.channel);
      out.push_back(base + ".xcorr");
      out.push_back(base + ".dtw");
    }
    out.push_back("wrist.acc_cal.mag.ldj");
    out.push_back("trunk.acc_cal.mag.ldj");
    out.push_back("pair.acc_cal.mag.ldj_ratio");
    return out;
  }();
  return names;
}

/// Origin of a feature, taken from its name prefix.
inline Origin feature_origin(std::string_view name) {
  if (name.starts_with("wrist.")) return Origin::Wrist;
  if (name.starts_with("trunk.")) return Origin::Trunk;
  return Origin::Pair;
}

struct FeatureVector {
  const std::vector<std::string>* names = &feature_names();
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
};

/// Stateful extractor holding scratch buffers; extract() is deterministic
/// and does not depend on previous calls.
class FeatureExtractor {
public:
  explicit FeatureExtractor(double rate_hz = 120.0) : rate_hz_(rate_hz) {}

  void extract(const WindowView& w, std::span<double> out) {
    if (out.size() != kNumFeatures) throw std::invalid_argument("FeatureExtractor: output size mismatch");
    const std::size_t len = w[0].size();
    for (std::size_t c = 0; c < kNumChannels; ++c) {
      auto& buf = buf_[c];
      buf.assign(w[c].begin(), w[c].end());
      if (buf.size() != len) throw DataError("window channels differ in length");
      if (kChannelLayout[c].angle) unwrap(buf);
    }
    std::size_t k = 0;
    for (std::size_t c = 0; c < kNumChannels; ++c) {
      const auto v = stats(buf_[c], rate_hz_).values();
      for (double x : v) out[k++] = x;
    }
    for (std::size_t off : kSimilarityOffsets) {
      const auto& a = buf_[ch::kWrist + off];
      const auto& b = buf_[ch::kTrunk + off];
      out[k++] = max_norm_xcorr(a, b);
      out[k++] = dtw_norm(a, b, dtw_);
    }
    const double dt = 1.0 / rate_hz_;
    const double lw = ldj(buf_[ch::kWrist + ch::kAccCal + 3], LdjKind::Acceleration, dt);
    const double lt = ldj(buf_[ch::kTrunk + ch::kAccCal + 3], LdjKind::Acceleration, dt);
    out[k++] = lw;
    out[k++] = lt;
    out[k++] = ldj_ratio(lw, lt);
  }

  FeatureVector extract(const WindowView& w) {
    FeatureVector fv;
    fv.values.resize(kNumFeatures);
    extract(w, fv.values);
    return fv;
  }

private:
  double rate_hz_;
  std::array<std::vector<double>, kNumChannels> buf_;
  DtwScratch dtw_;
};

inline FeatureVector extract(const StreamSet& ss, const Window& w, double rate_hz = 120.0) {
  FeatureExtractor fx(rate_hz);
  return fx.extract(window_view(ss, w));
}

/// Row-major feature matrix with per-row label, subject group and time of
/// the window's last sample.
struct FeatureMatrix {
  std::vector<std::string> names;
  std::size_t cols = 0;
  std::vector<double> values;
  std::vector<Label> labels;
  std::vector<int> groups;
  std::vector<double> times;
  std::vector<std::string> group_names;

  std::size_t rows() const { return labels.size(); }
  std::span<const double> row(std::size_t i) const { return {values.data() + i * cols, cols}; }
  std::span<double> row(std::size_t i) { return {values.data() + i * cols, cols}; }

  /// Copies the selected rows, keeping columns and group names.
  FeatureMatrix subset(std::span<const std::size_t> idx) const {
    FeatureMatrix out;
    out.names = names;
    out.cols = cols;
    out.group_names = group_names;
    out.values.reserve(idx.size() * cols);
    for (std::size_t i : idx) {
      const auto r = row(i);
      out.values.insert(out.values.end(), r.begin(), r.end());
      out.labels.push_back(labels[i]);
      out.groups.push_back(groups[i]);
      out.times.push_back(times[i]);
    }
    return out;
  }
};

/// Appends the windows of one stream set to a matrix (group = subject index).
inline void append_windows(FeatureMatrix& fm, const StreamSet& ss, const WindowSpec& spec, int group) {
  if (fm.cols == 0) {
    fm.names = feature_names();
    fm.cols = fm.names.size();
  }
  FeatureExtractor fx(spec.rate_hz);
  const auto wins = segment(ss, spec);
  const std::size_t base = fm.values.size();
  fm.values.resize(base + wins.size() * fm.cols);
  for (std::size_t i = 0; i < wins.size(); ++i) {
    fx.extract(window_view(ss, wins[i]), {fm.values.data() + base + i * fm.cols, fm.cols});
    fm.labels.push_back(wins[i].label);
    fm.groups.push_back(group);
    fm.times.push_back(ss.t[wins[i].start + wins[i].length - 1]);
  }
}

/// Feature CSV: header = feature names plus a trailing label column.
inline void write_feature_csv(std::ostream& out, const FeatureMatrix& fm) {
  for (std::size_t j = 0; j < fm.cols; ++j) out << fm.names[j] << ',';
  out << "label\n";
  for (std::size_t i = 0; i < fm.rows(); ++i) {
    const auto r = fm.row(i);
    for (double v : r) out << detail::format_double(v) << ',';
    out << label_name(fm.labels[i]) << '\n';
  }
}

}  // namespace ctm
