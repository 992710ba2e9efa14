#pragma once

// Recording types, CSV persistence, cross-correlation synchronisation and
// nearest-neighbour label resampling.
//
// CSV layout (UTF-8, '.' decimal separator):
//
//   # subject=S01            optional metadata lines, before the header
//   # arm=right
//   # condition=A
//   t,w_ax,w_ay,w_az,w_gx,w_gy,w_gz,t_ax,t_ay,t_az,t_gx,t_gy,t_gz[,label]
//   0,0.01,...,calib
//
// Accelerations are m/s², angular rates rad/s, both in the sensor frame.
// Labels are one of calib|mov_no_tc|mov_tc.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ctm/core.hpp"
#include "ctm/error.hpp"

namespace ctm {

enum class Label : std::uint8_t { Calib = 0, MovNoTC = 1, MovTC = 2 };

inline constexpr int kNumClasses = 3;
inline constexpr std::array<Label, 3> kAllLabels{Label::Calib, Label::MovNoTC, Label::MovTC};

inline constexpr int label_index(Label l) { return static_cast<int>(l); }

inline Label label_from_index(int i) {
  if (i < 0 || i >= kNumClasses) throw DataError("class index out of range: " + std::to_string(i));
  return static_cast<Label>(i);
}

inline std::string_view label_name(Label l) {
  switch (l) {
    case Label::Calib: return "calib";
    case Label::MovNoTC: return "mov_no_tc";
    case Label::MovTC: return "mov_tc";
  }
  return "?";
}

inline Label parse_label(std::string_view s) {
  if (s == "calib") return Label::Calib;
  if (s == "mov_no_tc") return Label::MovNoTC;
  if (s == "mov_tc") return Label::MovTC;
  throw DataError("unknown label '" + std::string(s) + "'");
}

enum class ArmSide : std::uint8_t { Right, Left };

inline std::string_view arm_name(ArmSide a) { return a == ArmSide::Left ? "left" : "right"; }

inline ArmSide parse_arm(std::string_view s) {
  if (s == "right") return ArmSide::Right;
  if (s == "left") return ArmSide::Left;
  throw DataError("unknown arm side '" + std::string(s) + "'");
}

struct RawSample {
  double t = 0.0;
  Vec3 accel;
  Vec3 gyro;
};

struct LabelPoint {
  double t = 0.0;
  Label label = Label::Calib;
};

using LabelTrack = std::vector<LabelPoint>;

struct RecordingMeta {
  std::string subject;
  ArmSide arm = ArmSide::Right;
  std::string condition;
};

/// Time-aligned wrist/trunk streams at a common sample timeline. labels is
/// either empty (unlabelled) or one entry per sample.
struct Recording {
  RecordingMeta meta;
  std::vector<RawSample> wrist;
  std::vector<RawSample> trunk;
  std::vector<Label> labels;

  std::size_t size() const { return wrist.size(); }
  bool labelled() const { return !labels.empty(); }
};

/// Throws DataError when the Recording invariants do not hold.
inline void validate(const Recording& rec) {
  if (rec.wrist.size() != rec.trunk.size())
    throw DataError("wrist/trunk length mismatch: " + std::to_string(rec.wrist.size()) + " vs " +
                    std::to_string(rec.trunk.size()));
  if (rec.wrist.empty()) throw DataError("recording has no samples");
  if (!rec.labels.empty() && rec.labels.size() != rec.wrist.size())
    throw DataError("label track does not cover the sample timeline");
  for (std::size_t i = 0; i < rec.wrist.size(); ++i) {
    const auto& w = rec.wrist[i];
    const auto& tr = rec.trunk[i];
    if (!std::isfinite(w.t) || !is_finite(w.accel) || !is_finite(w.gyro) || !is_finite(tr.accel) ||
        !is_finite(tr.gyro))
      throw DataError("non-finite value at sample " + std::to_string(i));
    if (w.t != tr.t) throw DataError("wrist/trunk timestamps differ at sample " + std::to_string(i));
    if (i > 0 && !(w.t > rec.wrist[i - 1].t))
      throw DataError("timestamps not strictly increasing at sample " + std::to_string(i));
  }
}

namespace detail {

inline constexpr std::array<std::string_view, 13> kCsvColumns{
    "t", "w_ax", "w_ay", "w_az", "w_gx", "w_gy", "w_gz", "t_ax", "t_ay", "t_az", "t_gx", "t_gy", "t_gz"};

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline double parse_double(std::string_view s, std::size_t line_no) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, v);
  if (res.ec != std::errc{} || res.ptr != end)
    throw DataError("line " + std::to_string(line_no) + ": invalid number '" + std::string(s) + "'");
  return v;
}

inline std::string format_double(double v) {
  std::array<char, 32> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

}  // namespace detail

/// Parses a recording from CSV text. Validates the result.
inline Recording parse_recording_csv(std::istream& in) {
  Recording rec;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  bool has_label = false;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view sv = detail::trim(line);
    if (sv.empty()) continue;
    if (!have_header && sv.front() == '#') {
      sv.remove_prefix(1);
      sv = detail::trim(sv);
      const auto eq = sv.find('=');
      if (eq == std::string_view::npos) continue;
      const auto key = detail::trim(sv.substr(0, eq));
      const auto val = detail::trim(sv.substr(eq + 1));
      if (key == "subject") rec.meta.subject = std::string(val);
      else if (key == "arm") rec.meta.arm = parse_arm(val);
      else if (key == "condition") rec.meta.condition = std::string(val);
      continue;
    }
    const auto cols = detail::split_csv(sv);
    if (!have_header) {
      if (cols.size() != 13 && cols.size() != 14) throw DataError("header: expected 13 or 14 columns");
      for (std::size_t i = 0; i < 13; ++i)
        if (cols[i] != detail::kCsvColumns[i])
          throw DataError("header: column " + std::to_string(i) + " should be '" +
                          std::string(detail::kCsvColumns[i]) + "'");
      if (cols.size() == 14) {
        if (cols[13] != "label") throw DataError("header: last column should be 'label'");
        has_label = true;
      }
      have_header = true;
      continue;
    }
    if (cols.size() != (has_label ? 14u : 13u))
      throw DataError("line " + std::to_string(line_no) + ": wrong column count");
    std::array<double, 13> v{};
    for (std::size_t i = 0; i < 13; ++i) v[i] = detail::parse_double(cols[i], line_no);
    rec.wrist.push_back({v[0], {v[1], v[2], v[3]}, {v[4], v[5], v[6]}});
    rec.trunk.push_back({v[0], {v[7], v[8], v[9]}, {v[10], v[11], v[12]}});
    if (has_label) rec.labels.push_back(parse_label(cols[13]));
  }
  if (!have_header) throw DataError("missing header row");
  if (rec.wrist.empty()) throw DataError("missing sensor data");
  validate(rec);
  return rec;
}

inline Recording load_recording(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return parse_recording_csv(in);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

inline void write_recording_csv(std::ostream& out, const Recording& rec) {
  validate(rec);
  if (!rec.meta.subject.empty()) out << "# subject=" << rec.meta.subject << '\n';
  out << "# arm=" << arm_name(rec.meta.arm) << '\n';
  if (!rec.meta.condition.empty()) out << "# condition=" << rec.meta.condition << '\n';
  for (std::size_t i = 0; i < detail::kCsvColumns.size(); ++i) out << (i ? "," : "") << detail::kCsvColumns[i];
  if (rec.labelled()) out << ",label";
  out << '\n';
  std::string row;
  for (std::size_t i = 0; i < rec.size(); ++i) {
    const auto& w = rec.wrist[i];
    const auto& tr = rec.trunk[i];
    row.clear();
    const std::array<double, 13> v{w.t,        w.accel.x,  w.accel.y,  w.accel.z, w.gyro.x,
                                   w.gyro.y,   w.gyro.z,   tr.accel.x, tr.accel.y, tr.accel.z,
                                   tr.gyro.x,  tr.gyro.y,  tr.gyro.z};
    for (std::size_t k = 0; k < v.size(); ++k) {
      if (k) row += ',';
      row += detail::format_double(v[k]);
    }
    if (rec.labelled()) {
      row += ',';
      row += label_name(rec.labels[i]);
    }
    out << row << '\n';
  }
}

inline void save_recording(const std::filesystem::path& path, const Recording& rec) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  write_recording_csv(out, rec);
}

/// Lists the *.csv files of a directory in lexicographic order.
inline std::vector<std::filesystem::path> list_recordings(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".csv") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

/// Lag (in samples) that maximises the Pearson correlation between a[i] and
/// b[i + lag] over lags in [-max_lag, max_lag]. Positive lag means b is a
/// delayed copy of a. Ties go to the smallest |lag|, then to the negative
/// side.
inline int estimate_lag(std::span<const double> a, std::span<const double> b, int max_lag) {
  if (max_lag < 0) throw std::invalid_argument("estimate_lag: max_lag must be >= 0");
  const auto need = static_cast<std::size_t>(2 * max_lag);
  if (a.size() < std::max<std::size_t>(need, 2) || b.size() < std::max<std::size_t>(need, 2))
    throw DataError("estimate_lag: series shorter than 2*max_lag");
  auto variance = [](std::span<const double> s) {
    double m = 0.0;
    for (double v : s) m += v;
    m /= static_cast<double>(s.size());
    double acc = 0.0;
    for (double v : s) acc += (v - m) * (v - m);
    return acc;
  };
  if (variance(a) <= 0.0 || variance(b) <= 0.0) throw DataError("estimate_lag: constant input");

  const auto n = static_cast<long>(std::min(a.size(), b.size()));
  int best_lag = 0;
  double best = -std::numeric_limits<double>::infinity();
  for (int mag = 0; mag <= max_lag; ++mag) {
    for (int sign : {-1, 1}) {
      const int lag = sign * mag;
      if (mag == 0 && sign == 1) continue;
      const long i0 = std::max<long>(0, -lag);
      const long i1 = std::min<long>(n, n - lag);
      const long len = i1 - i0;
      if (len < 2) continue;
      double ma = 0.0, mb = 0.0;
      for (long i = i0; i < i1; ++i) {
        ma += a[static_cast<std::size_t>(i)];
        mb += b[static_cast<std::size_t>(i + lag)];
      }
      ma /= static_cast<double>(len);
      mb /= static_cast<double>(len);
      double sab = 0.0, saa = 0.0, sbb = 0.0;
      for (long i = i0; i < i1; ++i) {
        const double da = a[static_cast<std::size_t>(i)] - ma;
        const double db = b[static_cast<std::size_t>(i + lag)] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
      }
      const double r = (saa > 0.0 && sbb > 0.0) ? sab / std::sqrt(saa * sbb) : 0.0;
      if (r > best + 1e-12) {
        best = r;
        best_lag = lag;
      }
    }
  }
  return best_lag;
}

/// Nearest-neighbour label for every query time. An exact midpoint between two
/// label timestamps resolves to the earlier label.
inline std::vector<Label> resample_labels(const LabelTrack& labels, std::span<const double> timeline) {
  if (labels.empty()) throw DataError("resample_labels: empty label track");
  for (std::size_t i = 1; i < labels.size(); ++i)
    if (labels[i].t < labels[i - 1].t) throw DataError("resample_labels: label times decrease");
  std::vector<Label> out;
  out.reserve(timeline.size());
  std::size_t j = 0;
  for (double t : timeline) {
    // Advance while the next label is strictly closer.
    while (j + 1 < labels.size() && std::abs(labels[j + 1].t - t) < std::abs(labels[j].t - t)) ++j;
    // Timelines are usually sorted; restart the scan when a query goes back.
    if (j > 0 && std::abs(labels[j - 1].t - t) <= std::abs(labels[j].t - t)) {
      j = 0;
      while (j + 1 < labels.size() && std::abs(labels[j + 1].t - t) < std::abs(labels[j].t - t)) ++j;
    }
    out.push_back(labels[j].label);
  }
  return out;
}

/// Shifts b by lag samples so that it lines up with a (inverse of the delay
/// found by estimate_lag). Samples shifted in from outside are clamped to the
/// edge value.
inline std::vector<double> shift_series(std::span<const double> b, int lag) {
  std::vector<double> out(b.size());
  const auto n = static_cast<long>(b.size());
  for (long i = 0; i < n; ++i) {
    const long src = std::clamp<long>(i + lag, 0, n - 1);
    out[static_cast<std::size_t>(i)] = b[static_cast<std::size_t>(src)];
  }
  return out;
}

}  // namespace ctm
