#pragma once

// Classification metrics: confusion matrix, precision/recall/F1, multiclass
// MCC, one-vs-rest ROC curves.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ctm/error.hpp"
#include "ctm/ingest.hpp"

namespace ctm {

/// counts[true][pred].
struct ConfusionMatrix {
  std::array<std::array<std::size_t, kNumClasses>, kNumClasses> counts{};

  std::size_t total() const {
    std::size_t s = 0;
    for (const auto& r : counts)
      for (auto v : r) s += v;
    return s;
  }

  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    for (int i = 0; i < kNumClasses; ++i)
      for (int j = 0; j < kNumClasses; ++j) counts[i][j] += o.counts[i][j];
    return *this;
  }

  /// Rows divided by their sums; empty rows stay zero.
  std::array<std::array<double, kNumClasses>, kNumClasses> row_normalized() const {
    std::array<std::array<double, kNumClasses>, kNumClasses> out{};
    for (int i = 0; i < kNumClasses; ++i) {
      const auto s = std::accumulate(counts[i].begin(), counts[i].end(), std::size_t{0});
      if (s == 0) continue;
      for (int j = 0; j < kNumClasses; ++j) out[i][j] = static_cast<double>(counts[i][j]) / static_cast<double>(s);
    }
    return out;
  }
};

inline ConfusionMatrix confusion(std::span<const Label> y_true, std::span<const Label> y_pred) {
  if (y_true.size() != y_pred.size()) throw DataError("confusion: length mismatch");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < y_true.size(); ++i)
    ++cm.counts[static_cast<std::size_t>(label_index(y_true[i]))][static_cast<std::size_t>(label_index(y_pred[i]))];
  return cm;
}

struct ClassScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

/// Precision, recall and F1 of every class. A ratio with an empty
/// denominator is 0.
inline std::array<ClassScores, kNumClasses> precision_recall_f1(const ConfusionMatrix& cm) {
  std::array<ClassScores, kNumClasses> out{};
  for (int c = 0; c < kNumClasses; ++c) {
    const double tp = static_cast<double>(cm.counts[c][c]);
    double pred = 0.0, actual = 0.0;
    for (int k = 0; k < kNumClasses; ++k) {
      pred += static_cast<double>(cm.counts[k][c]);
      actual += static_cast<double>(cm.counts[c][k]);
    }
    auto& s = out[static_cast<std::size_t>(c)];
    s.precision = pred > 0.0 ? tp / pred : 0.0;
    s.recall = actual > 0.0 ? tp / actual : 0.0;
    s.f1 = (s.precision + s.recall) > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    s.support = static_cast<std::size_t>(actual);
  }
  return out;
}

inline double macro_f1(const ConfusionMatrix& cm) {
  const auto s = precision_recall_f1(cm);
  double acc = 0.0;
  for (const auto& c : s) acc += c.f1;
  return acc / static_cast<double>(kNumClasses);
}

inline double macro_f1(std::span<const Label> y_true, std::span<const Label> y_pred) {
  return macro_f1(confusion(y_true, y_pred));
}

/// Generalised (covariance-form) Matthews correlation for a square
/// confusion matrix of any size; 0 when the denominator vanishes.
template <std::size_t K>
double mcc_square(const std::array<std::array<std::size_t, K>, K>& c) {
  double s = 0.0, diag = 0.0;
  std::array<double, K> t{}, p{};
  for (std::size_t i = 0; i < K; ++i)
    for (std::size_t j = 0; j < K; ++j) {
      const double v = static_cast<double>(c[i][j]);
      s += v;
      t[i] += v;
      p[j] += v;
      if (i == j) diag += v;
    }
  double tp = 0.0, tt = 0.0, pp = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    tp += t[k] * p[k];
    tt += t[k] * t[k];
    pp += p[k] * p[k];
  }
  const double den = std::sqrt((s * s - pp) * (s * s - tt));
  if (!(den > 0.0)) return 0.0;
  return (diag * s - tp) / den;
}

inline double mcc(const ConfusionMatrix& cm) { return mcc_square(cm.counts); }

inline double mcc(std::span<const Label> y_true, std::span<const Label> y_pred) { return mcc(confusion(y_true, y_pred)); }

struct RocCurve {
  std::vector<std::pair<double, double>> points;  // (fpr, tpr), from (0,0) to (1,1)
  double auc = std::numeric_limits<double>::quiet_NaN();
};

/// Threshold sweep over the unique scores, descending; tied scores enter
/// together. AUC by the trapezoid rule. NaN when a side is empty.
inline RocCurve roc_curve(std::span<const std::uint8_t> positive, std::span<const double> score) {
  if (positive.size() != score.size()) throw DataError("roc_curve: length mismatch");
  RocCurve rc;
  const std::size_t n = score.size();
  const auto n_pos = static_cast<double>(std::count_if(positive.begin(), positive.end(), [](std::uint8_t v) { return v != 0; }));
  const double n_neg = static_cast<double>(n) - n_pos;
  if (n_pos == 0.0 || n_neg == 0.0) return rc;
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  rc.points.emplace_back(0.0, 0.0);
  double tp = 0.0, fp = 0.0, auc = 0.0;
  std::size_t i = 0;
  while (i < n) {
    const double s = score[idx[i]];
    double dtp = 0.0, dfp = 0.0;
    while (i < n && score[idx[i]] == s) {
      if (positive[idx[i]]) dtp += 1.0;
      else dfp += 1.0;
      ++i;
    }
    auc += dfp * (tp + 0.5 * dtp);
    tp += dtp;
    fp += dfp;
    rc.points.emplace_back(fp / n_neg, tp / n_pos);
  }
  rc.auc = auc / (n_pos * n_neg);
  return rc;
}

/// One-vs-rest curves; probs is row-major n x K.
inline std::array<RocCurve, kNumClasses> roc_auc_ovr(std::span<const Label> y_true, std::span<const double> probs) {
  if (probs.size() != y_true.size() * kNumClasses) throw DataError("roc_auc_ovr: score shape mismatch");
  std::array<RocCurve, kNumClasses> out;
  std::vector<double> s(y_true.size());
  std::vector<std::uint8_t> pos(y_true.size());
  for (int c = 0; c < kNumClasses; ++c) {
    for (std::size_t i = 0; i < y_true.size(); ++i) {
      s[i] = probs[i * kNumClasses + static_cast<std::size_t>(c)];
      pos[i] = label_index(y_true[i]) == c;
    }
    out[static_cast<std::size_t>(c)] = roc_curve(pos, s);
  }
  return out;
}

/// Mean of the defined (non-NaN) per-class AUCs; NaN when none is defined.
inline double macro_auc(const std::array<RocCurve, kNumClasses>& roc) {
  double s = 0.0;
  int n = 0;
  for (const auto& r : roc)
    if (!std::isnan(r.auc)) {
      s += r.auc;
      ++n;
    }
  return n ? s / n : std::numeric_limits<double>::quiet_NaN();
}

struct MetricsReport {
  ConfusionMatrix cm;
  std::array<ClassScores, kNumClasses> per_class{};
  double macro_f1 = 0.0;
  double mcc = 0.0;
  std::array<RocCurve, kNumClasses> roc;
  double macro_auc = std::numeric_limits<double>::quiet_NaN();
  std::size_t n = 0;
};

/// Full report from true labels and row-major n x K posteriors; predictions
/// are the argmax class.
inline MetricsReport make_report(std::span<const Label> y_true, std::span<const double> probs) {
  if (probs.size() != y_true.size() * kNumClasses) throw DataError("make_report: score shape mismatch");
  std::vector<Label> pred(y_true.size());
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const double* p = probs.data() + i * kNumClasses;
    pred[i] = label_from_index(static_cast<int>(std::max_element(p, p + kNumClasses) - p));
  }
  MetricsReport r;
  r.cm = confusion(y_true, pred);
  r.per_class = precision_recall_f1(r.cm);
  r.macro_f1 = ctm::macro_f1(r.cm);
  r.mcc = ctm::mcc(r.cm);
  r.roc = roc_auc_ovr(y_true, probs);
  r.macro_auc = ctm::macro_auc(r.roc);
  r.n = y_true.size();
  return r;
}

namespace detail {
inline nlohmann::json num_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }
}  // namespace detail

inline nlohmann::json to_json(const ConfusionMatrix& cm) {
  nlohmann::json raw = nlohmann::json::array(), norm = nlohmann::json::array();
  const auto rn = cm.row_normalized();
  for (int i = 0; i < kNumClasses; ++i) {
    raw.push_back(cm.counts[i]);
    norm.push_back(rn[i]);
  }
  return {{"raw", raw}, {"row_normalized", norm}};
}

inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json classes = nlohmann::json::object();
  for (int c = 0; c < kNumClasses; ++c) {
    const auto& s = r.per_class[static_cast<std::size_t>(c)];
    classes[std::string(label_name(label_from_index(c)))] = {{"precision", s.precision},
                                                              {"recall", s.recall},
                                                              {"f1", s.f1},
                                                              {"support", s.support},
                                                              {"auc", detail::num_or_null(r.roc[static_cast<std::size_t>(c)].auc)}};
  }
  return {{"n", r.n},
          {"macro_f1", r.macro_f1},
          {"mcc", r.mcc},
          {"macro_auc", detail::num_or_null(r.macro_auc)},
          {"classes", classes},
          {"confusion", to_json(r.cm)}};
}

}  // namespace ctm
