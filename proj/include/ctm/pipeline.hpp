#pragma once

// Offline pipeline: recordings -> calibrated streams -> windowed features,
// and batch prediction over a whole recording.

#include <algorithm>
#include <array>
#include <span>
#include <string>
#include <vector>

#include "ctm/calib.hpp"
#include "ctm/features.hpp"
#include "ctm/gbt.hpp"
#include "ctm/ingest.hpp"
#include "ctm/streams.hpp"

namespace ctm {

/// Feature matrix over labelled recordings; recordings with the same
/// subject id share a group.
inline FeatureMatrix build_dataset(std::span<const Recording> recs, const CalibConfig& cfg, const WindowSpec& spec) {
  cfg.validate();
  spec.validate();
  FeatureMatrix fm;
  fm.names = feature_names();
  fm.cols = fm.names.size();
  for (const auto& rec : recs) {
    if (!rec.labelled()) throw DataError("build_dataset: recording of subject '" + rec.meta.subject + "' has no labels");
    auto it = std::find(fm.group_names.begin(), fm.group_names.end(), rec.meta.subject);
    const int g = static_cast<int>(it - fm.group_names.begin());
    if (it == fm.group_names.end()) fm.group_names.push_back(rec.meta.subject);
    append_windows(fm, derive_streams(rec, cfg), spec, g);
  }
  return fm;
}

struct BatchPrediction {
  double t = 0.0;
  Label label = Label::Calib;
  std::array<double, kNumClasses> probs{};
};

/// Predictions for every window of a recording, in window order.
inline std::vector<BatchPrediction> batch_predict(const GbtModel& m, const Recording& rec, const CalibConfig& cfg,
                                                  const WindowSpec& spec) {
  cfg.validate();
  const StreamSet ss = derive_streams(rec, cfg);
  const auto map = bind_features(m, feature_names());
  FeatureExtractor fx(spec.rate_hz);
  std::vector<double> feats(kNumFeatures), x(map.size());
  std::vector<BatchPrediction> out;
  for (const auto& w : segment(ss, spec)) {
    fx.extract(window_view(ss, w), feats);
    for (std::size_t j = 0; j < map.size(); ++j) x[j] = feats[map[j]];
    const auto p = predict_proba(m, x);
    BatchPrediction bp;
    bp.t = ss.t[w.start + w.length - 1];
    std::copy(p.begin(), p.end(), bp.probs.begin());
    bp.label = label_from_index(argmax(p));
    out.push_back(bp);
  }
  return out;
}

}  // namespace ctm
