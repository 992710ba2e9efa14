#pragma once

// Gradient-boosted decision trees for K-class softmax classification.
//
// Second-order boosting: every round fits one regression tree per class on
// the gradient g = w (p - y) and hessian h = 2 w p (1 - p) of the softmax
// cross-entropy at the current margins. Leaf weight -G / (H + lambda), split
// gain GL²/(HL+λ) + GR²/(HR+λ) - G²/(H+λ).
//
// Split candidates come from per-feature cut points. When a feature has at
// most max_bins distinct training values every midpoint between neighbours
// is a candidate, which is the exact greedy search; otherwise cut points are
// count quantiles.
//
// A round whose combined update would raise the weighted training loss is
// shrunk by halving until it does not, so the recorded loss history is
// non-increasing.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctm/error.hpp"
#include "ctm/ingest.hpp"

namespace ctm {

struct GbtHyperParams {
  int n_rounds = 100;
  int max_depth = 4;
  double learning_rate = 0.1;
  double min_child_weight = 1.0;
  double l2_lambda = 1.0;
  double subsample = 1.0;
  double colsample = 1.0;

  void validate() const {
    if (n_rounds < 10 || n_rounds > 500) throw ConfigError("gbt: n_rounds must be in [10, 500]");
    if (max_depth < 2 || max_depth > 8) throw ConfigError("gbt: max_depth must be in [2, 8]");
    if (!(learning_rate >= 0.01 && learning_rate <= 0.5)) throw ConfigError("gbt: learning_rate must be in [0.01, 0.5]");
    if (!(min_child_weight >= 0.0)) throw ConfigError("gbt: min_child_weight must be >= 0");
    if (!(l2_lambda >= 0.0)) throw ConfigError("gbt: l2_lambda must be >= 0");
    if (!(subsample > 0.0 && subsample <= 1.0)) throw ConfigError("gbt: subsample must be in (0, 1]");
    if (!(colsample > 0.0 && colsample <= 1.0)) throw ConfigError("gbt: colsample must be in (0, 1]");
  }

  bool operator==(const GbtHyperParams&) const = default;
};

inline nlohmann::json to_json(const GbtHyperParams& hp) {
  return {{"n_rounds", hp.n_rounds},   {"max_depth", hp.max_depth},
          {"learning_rate", hp.learning_rate}, {"min_child_weight", hp.min_child_weight},
          {"l2_lambda", hp.l2_lambda}, {"subsample", hp.subsample},
          {"colsample", hp.colsample}};
}

inline GbtHyperParams hp_from_json(const nlohmann::json& j) {
  GbtHyperParams hp;
  hp.n_rounds = j.value("n_rounds", hp.n_rounds);
  hp.max_depth = j.value("max_depth", hp.max_depth);
  hp.learning_rate = j.value("learning_rate", hp.learning_rate);
  hp.min_child_weight = j.value("min_child_weight", hp.min_child_weight);
  hp.l2_lambda = j.value("l2_lambda", hp.l2_lambda);
  hp.subsample = j.value("subsample", hp.subsample);
  hp.colsample = j.value("colsample", hp.colsample);
  return hp;
}

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;  // x < threshold goes left
  int left = -1;
  int right = -1;
  double value = 0.0;  // leaf weight (already scaled by the learning rate)
  double cover = 0.0;  // hessian mass of training rows reaching the node

  bool is_leaf() const { return feature < 0; }
  bool operator==(const TreeNode&) const = default;
};

struct Tree {
  std::vector<TreeNode> nodes;

  double predict(std::span<const double> x) const {
    int i = 0;
    while (!nodes[static_cast<std::size_t>(i)].is_leaf()) {
      const auto& n = nodes[static_cast<std::size_t>(i)];
      i = x[static_cast<std::size_t>(n.feature)] < n.threshold ? n.left : n.right;
    }
    return nodes[static_cast<std::size_t>(i)].value;
  }

  int depth() const {
    if (nodes.empty()) return 0;
    std::vector<std::pair<int, int>> stack{{0, 0}};
    int d = 0;
    while (!stack.empty()) {
      auto [i, dep] = stack.back();
      stack.pop_back();
      d = std::max(d, dep);
      const auto& n = nodes[static_cast<std::size_t>(i)];
      if (!n.is_leaf()) {
        stack.push_back({n.left, dep + 1});
        stack.push_back({n.right, dep + 1});
      }
    }
    return d;
  }

  bool operator==(const Tree&) const = default;
};

struct GbtModel {
  int num_classes = kNumClasses;
  std::vector<double> base_score = std::vector<double>(kNumClasses, 0.0);
  std::vector<std::vector<Tree>> trees = std::vector<std::vector<Tree>>(kNumClasses);  // [class][round]
  std::vector<std::string> features;
  GbtHyperParams hp;
  std::vector<double> train_loss;  // weighted log-loss before round 1 and after every round

  std::size_t num_features() const { return features.size(); }

  std::vector<double> margins(std::span<const double> x) const {
    std::vector<double> m(base_score);
    for (int c = 0; c < num_classes; ++c)
      for (const auto& t : trees[static_cast<std::size_t>(c)]) m[static_cast<std::size_t>(c)] += t.predict(x);
    return m;
  }

  bool operator==(const GbtModel&) const = default;
};

inline std::vector<double> softmax(std::span<const double> m) {
  const double mx = *std::max_element(m.begin(), m.end());
  std::vector<double> p(m.size());
  double s = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    p[i] = std::exp(m[i] - mx);
    s += p[i];
  }
  for (double& v : p) v /= s;
  return p;
}

/// Class posteriors; x is in the model's feature order.
inline std::vector<double> predict_proba(const GbtModel& m, std::span<const double> x) {
  if (x.size() != m.num_features())
    throw ModelError("predict_proba: expected " + std::to_string(m.num_features()) + " features, got " +
                     std::to_string(x.size()));
  return softmax(m.margins(x));
}

/// Maps model feature j to a column of an input with the given names.
/// Throws ModelError when a model feature is missing.
inline std::vector<std::size_t> bind_features(const GbtModel& m, std::span<const std::string> input_names) {
  std::vector<std::size_t> map(m.features.size());
  bool identity = input_names.size() == m.features.size();
  for (std::size_t j = 0; j < m.features.size(); ++j) {
    if (identity && input_names[j] == m.features[j]) {
      map[j] = j;
      continue;
    }
    identity = false;
    const auto it = std::find(input_names.begin(), input_names.end(), m.features[j]);
    if (it == input_names.end()) throw ModelError("feature manifest mismatch: missing '" + m.features[j] + "'");
    map[j] = static_cast<std::size_t>(it - input_names.begin());
  }
  return map;
}

/// Posteriors for an input whose columns are named; columns are looked up
/// through the model manifest, so their order does not matter.
inline std::vector<double> predict_proba(const GbtModel& m, std::span<const double> x,
                                         std::span<const std::string> names) {
  if (x.size() != names.size()) throw ModelError("predict_proba: value/name count mismatch");
  const auto map = bind_features(m, names);
  std::vector<double> xm(map.size());
  for (std::size_t j = 0; j < map.size(); ++j) xm[j] = x[map[j]];
  return predict_proba(m, xm);
}

inline int argmax(std::span<const double> v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

/// w_i = N / (K_present * count(class_i)); every present class gets equal
/// total weight N / K_present.
inline std::vector<double> balanced_weights(std::span<const Label> y) {
  if (y.empty()) throw DataError("balanced_weights: empty input");
  std::array<std::size_t, kNumClasses> counts{};
  for (Label l : y) ++counts[static_cast<std::size_t>(label_index(l))];
  const auto present = static_cast<double>(std::count_if(counts.begin(), counts.end(), [](auto c) { return c > 0; }));
  const auto n = static_cast<double>(y.size());
  std::vector<double> w(y.size());
  for (std::size_t i = 0; i < y.size(); ++i)
    w[i] = n / (present * static_cast<double>(counts[static_cast<std::size_t>(label_index(y[i]))]));
  return w;
}

/// Dense row-major training matrix view.
struct TrainView {
  std::span<const double> values;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::span<const Label> labels;
  std::span<const double> weights;  // empty = unit weights
  std::span<const std::string> names;  // empty = f0, f1, ...

  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

struct GbtTrainOptions {
  int max_bins = 256;
};

namespace detail {

struct FeatureBins {
  std::vector<double> cuts;  // ascending; bin(x) = #cuts <= x
};

inline FeatureBins make_bins(std::vector<double> col, int max_bins) {
  std::sort(col.begin(), col.end());
  std::vector<double> uniq;
  std::vector<std::size_t> cum;  // cumulative counts up to and including uniq[i]
  for (std::size_t i = 0; i < col.size(); ++i) {
    if (uniq.empty() || col[i] != uniq.back()) {
      uniq.push_back(col[i]);
      cum.push_back(0);
    }
    cum.back() = i + 1;
  }
  auto midpoint = [&](std::size_t i) {
    double mid = uniq[i] + 0.5 * (uniq[i + 1] - uniq[i]);
    if (!(mid > uniq[i])) mid = uniq[i + 1];
    return mid;
  };
  FeatureBins fb;
  if (uniq.size() <= 1) return fb;
  if (uniq.size() <= static_cast<std::size_t>(max_bins)) {
    fb.cuts.reserve(uniq.size() - 1);
    for (std::size_t i = 0; i + 1 < uniq.size(); ++i) fb.cuts.push_back(midpoint(i));
    return fb;
  }
  const double n = static_cast<double>(col.size());
  std::size_t u = 0;
  for (int k = 1; k < max_bins; ++k) {
    const double target = n * static_cast<double>(k) / static_cast<double>(max_bins);
    while (u + 1 < uniq.size() && static_cast<double>(cum[u]) < target) ++u;
    if (u + 1 >= uniq.size()) break;
    const double c = midpoint(u);
    if (fb.cuts.empty() || c > fb.cuts.back()) fb.cuts.push_back(c);
  }
  return fb;
}

struct GradPair {
  double g = 0.0;
  double h = 0.0;
};

struct SplitCandidate {
  double gain = 0.0;
  int feature = -1;
  int bin = -1;  // left = bins <= bin
  GradPair left, right;
};

inline double leaf_score(double g, double h, double lambda) { return g * g / (h + lambda); }

inline constexpr double kMinGain = 1e-10;

class TreeBuilder {
public:
  TreeBuilder(const std::vector<std::uint8_t>& bins, std::size_t cols, const std::vector<int>& nbins,
              const std::vector<FeatureBins>& cuts, const GbtHyperParams& hp)
      : bins_(bins), cols_(cols), nbins_(nbins), cuts_(cuts), hp_(hp) {
    offsets_.resize(cols + 1, 0);
    for (std::size_t f = 0; f < cols; ++f) offsets_[f + 1] = offsets_[f] + static_cast<std::size_t>(nbins[f]);
  }

  /// Builds one tree on the given rows; writes each row's leaf value into
  /// delta (rows outside `rows` are evaluated through the tree afterwards by
  /// the caller).
  Tree build(std::vector<std::uint32_t> rows, std::span<const GradPair> grad, std::span<const int> features) {
    Tree tree;
    order_ = std::move(rows);
    features_ = features;
    struct Pending {
      int node;
      std::size_t begin, end;
      int depth;
      GradPair sum;
      int hist;  // -1 when not needed
    };
    GradPair root;
    for (auto r : order_) {
      root.g += grad[r].g;
      root.h += grad[r].h;
    }
    tree.nodes.push_back({});
    std::vector<Pending> stack;
    stack.push_back({0, 0, order_.size(), 0, root, can_split(root, 0, order_.size()) ? build_hist(0, order_.size(), grad) : -1});
    while (!stack.empty()) {
      Pending p = stack.back();
      stack.pop_back();
      TreeNode& node = tree.nodes[static_cast<std::size_t>(p.node)];
      node.cover = p.sum.h;
      node.value = -p.sum.g / (p.sum.h + hp_.l2_lambda) * hp_.learning_rate;
      if (p.hist < 0) continue;
      const SplitCandidate best = find_split(pool_[static_cast<std::size_t>(p.hist)], p.sum);
      if (best.feature < 0) {
        release(p.hist);
        continue;
      }
      // Partition rows: bins <= best.bin go left, order preserved.
      const auto f = static_cast<std::size_t>(best.feature);
      const auto split_bin = static_cast<std::uint8_t>(best.bin);
      tmp_.clear();
      std::size_t w = p.begin;
      for (std::size_t i = p.begin; i < p.end; ++i) {
        const auto r = order_[i];
        if (bins_[static_cast<std::size_t>(r) * cols_ + f] <= split_bin) order_[w++] = r;
        else tmp_.push_back(r);
      }
      std::copy(tmp_.begin(), tmp_.end(), order_.begin() + static_cast<std::ptrdiff_t>(w));
      const std::size_t mid = w;

      const int li = static_cast<int>(tree.nodes.size());
      const int ri = li + 1;
      {
        TreeNode& n = tree.nodes[static_cast<std::size_t>(p.node)];
        n.feature = best.feature;
        n.threshold = cuts_[f].cuts[static_cast<std::size_t>(best.bin)];
        n.left = li;
        n.right = ri;
        n.value = 0.0;
      }
      tree.nodes.push_back({});
      tree.nodes.push_back({});

      const int child_depth = p.depth + 1;
      const bool need_l = can_split(best.left, child_depth, mid - p.begin);
      const bool need_r = can_split(best.right, child_depth, p.end - mid);
      int hl = -1, hr = -1;
      if (need_l || need_r) {
        const bool left_small = (mid - p.begin) <= (p.end - mid);
        if (need_l && need_r) {
          if (left_small) {
            hl = build_hist(p.begin, mid, grad);
            hr = subtract(p.hist, hl);
          } else {
            hr = build_hist(mid, p.end, grad);
            hl = subtract(p.hist, hr);
          }
        } else if (need_l) {
          hl = left_small ? build_hist(p.begin, mid, grad) : subtract_built(p.hist, mid, p.end, grad);
        } else {
          hr = !left_small ? build_hist(mid, p.end, grad) : subtract_built(p.hist, p.begin, mid, grad);
        }
      }
      release(p.hist);
      stack.push_back({ri, mid, p.end, child_depth, best.right, hr});
      stack.push_back({li, p.begin, mid, child_depth, best.left, hl});
    }
    return tree;
  }

private:
  bool can_split(const GradPair& s, int depth, std::size_t n) const {
    return depth < hp_.max_depth && n >= 2 && s.h >= 2.0 * hp_.min_child_weight && s.h > 0.0;
  }

  int acquire() {
    int id;
    if (!free_.empty()) {
      id = free_.back();
      free_.pop_back();
    } else {
      id = static_cast<int>(pool_.size());
      pool_.emplace_back();
    }
    auto& h = pool_[static_cast<std::size_t>(id)];
    h.assign(offsets_.back(), GradPair{});
    return id;
  }

  void release(int id) {
    if (id >= 0) free_.push_back(id);
  }

  int build_hist(std::size_t begin, std::size_t end, std::span<const GradPair> grad) {
    const int id = acquire();
    auto& h = pool_[static_cast<std::size_t>(id)];
    GradPair* hp = h.data();
    const std::size_t* off = offsets_.data();
    for (std::size_t i = begin; i < end; ++i) {
      const auto r = order_[i];
      const std::uint8_t* row = bins_.data() + static_cast<std::size_t>(r) * cols_;
      const GradPair gp = grad[r];
      for (int f : features_) {
        GradPair& cell = hp[off[f] + row[f]];
        cell.g += gp.g;
        cell.h += gp.h;
      }
    }
    return id;
  }

  int subtract(int parent, int child) {
    const int id = acquire();
    auto& out = pool_[static_cast<std::size_t>(id)];
    const auto& p = pool_[static_cast<std::size_t>(parent)];
    const auto& c = pool_[static_cast<std::size_t>(child)];
    for (int f : features_)
      for (std::size_t k = offsets_[static_cast<std::size_t>(f)]; k < offsets_[static_cast<std::size_t>(f) + 1]; ++k) {
        out[k].g = p[k].g - c[k].g;
        out[k].h = p[k].h - c[k].h;
      }
    return id;
  }

  int subtract_built(int parent, std::size_t begin, std::size_t end, std::span<const GradPair> grad) {
    const int tmp = build_hist(begin, end, grad);
    const int id = subtract(parent, tmp);
    release(tmp);
    return id;
  }

  SplitCandidate find_split(const std::vector<GradPair>& hist, const GradPair& total) const {
    SplitCandidate best;
    const double lambda = hp_.l2_lambda;
    const double parent = leaf_score(total.g, total.h, lambda);
    const double mcw = hp_.min_child_weight;
    for (int f : features_) {
      const auto fs = static_cast<std::size_t>(f);
      const int nb = nbins_[fs];
      const GradPair* h = hist.data() + offsets_[fs];
      GradPair left;
      for (int k = 0; k + 1 < nb; ++k) {
        left.g += h[k].g;
        left.h += h[k].h;
        const GradPair right{total.g - left.g, total.h - left.h};
        if (left.h < mcw || right.h < mcw || left.h <= 0.0 || right.h <= 0.0) continue;
        const double gain = leaf_score(left.g, left.h, lambda) + leaf_score(right.g, right.h, lambda) - parent;
        if (gain > best.gain + kMinGain * (1.0 + std::abs(best.gain)) || (best.feature < 0 && gain > kMinGain)) {
          best.gain = gain;
          best.feature = f;
          best.bin = k;
          best.left = left;
          best.right = right;
        }
      }
    }
    return best;
  }

  const std::vector<std::uint8_t>& bins_;
  std::size_t cols_;
  const std::vector<int>& nbins_;
  const std::vector<FeatureBins>& cuts_;
  const GbtHyperParams& hp_;
  std::vector<std::size_t> offsets_;
  std::vector<std::uint32_t> order_;
  std::vector<std::uint32_t> tmp_;
  std::span<const int> features_;
  std::vector<std::vector<GradPair>> pool_;
  std::vector<int> free_;
};

inline double weighted_logloss(std::span<const double> margins, std::size_t k, std::span<const Label> y,
                               std::span<const double> w) {
  double loss = 0.0, wsum = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double* m = margins.data() + i * k;
    const double mx = *std::max_element(m, m + k);
    double s = 0.0;
    for (std::size_t c = 0; c < k; ++c) s += std::exp(m[c] - mx);
    const double lse = mx + std::log(s);
    const double wi = w.empty() ? 1.0 : w[i];
    loss += wi * (lse - m[static_cast<std::size_t>(label_index(y[i]))]);
    wsum += wi;
  }
  return wsum > 0.0 ? loss / wsum : 0.0;
}

}  // namespace detail

/// Trains a K=3 softmax booster. Deterministic for a fixed seed.
inline GbtModel train(const TrainView& data, const GbtHyperParams& hp, std::uint64_t seed,
                      const GbtTrainOptions& opt = {}) {
  hp.validate();
  if (data.cols == 0) throw DataError("train: feature matrix has no columns");
  if (data.rows == 0) throw DataError("train: no training rows");
  if (data.values.size() != data.rows * data.cols) throw DataError("train: value count does not match shape");
  if (data.labels.size() != data.rows) throw DataError("train: label count does not match rows");
  if (!data.weights.empty() && data.weights.size() != data.rows) throw DataError("train: weight count does not match rows");
  if (!data.names.empty() && data.names.size() != data.cols) throw DataError("train: name count does not match columns");
  if (opt.max_bins < 2 || opt.max_bins > 256) throw ConfigError("train: max_bins must be in [2, 256]");
  for (double v : data.values)
    if (!std::isfinite(v)) throw DataError("train: non-finite feature value");
  {
    std::array<bool, kNumClasses> seen{};
    for (Label l : data.labels) seen[static_cast<std::size_t>(label_index(l))] = true;
    if (std::count(seen.begin(), seen.end(), true) < 2) throw DataError("train: need at least two classes");
  }

  const std::size_t n = data.rows, F = data.cols;
  constexpr std::size_t K = kNumClasses;

  GbtModel model;
  model.hp = hp;
  if (data.names.empty()) {
    for (std::size_t j = 0; j < F; ++j) model.features.push_back("f" + std::to_string(j));
  } else {
    model.features.assign(data.names.begin(), data.names.end());
  }

  // Bin every feature.
  std::vector<detail::FeatureBins> cuts(F);
  std::vector<int> nbins(F);
  std::vector<std::uint8_t> bins(n * F);
  {
    std::vector<double> col(n);
    for (std::size_t f = 0; f < F; ++f) {
      for (std::size_t i = 0; i < n; ++i) col[i] = data.at(i, f);
      cuts[f] = detail::make_bins(col, opt.max_bins);
      nbins[f] = static_cast<int>(cuts[f].cuts.size()) + 1;
      const auto& c = cuts[f].cuts;
      for (std::size_t i = 0; i < n; ++i)
        bins[i * F + f] = static_cast<std::uint8_t>(std::upper_bound(c.begin(), c.end(), col[i]) - c.begin());
    }
  }

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::vector<double> margins(n * K, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < K; ++c) margins[i * K + c] = model.base_score[c];
  double loss = detail::weighted_logloss(margins, K, data.labels, data.weights);
  model.train_loss.push_back(loss);

  detail::TreeBuilder builder(bins, F, nbins, cuts, hp);
  std::vector<detail::GradPair> grad(n);
  std::vector<double> delta(n * K);
  std::vector<double> trial(n * K);
  std::vector<int> all_features(F);
  std::iota(all_features.begin(), all_features.end(), 0);
  const std::size_t n_cols = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(hp.colsample * static_cast<double>(F))));

  std::vector<double> prob(n * K);
  for (int round = 0; round < hp.n_rounds; ++round) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto p = softmax(std::span<const double>(margins.data() + i * K, K));
      std::copy(p.begin(), p.end(), prob.begin() + static_cast<std::ptrdiff_t>(i * K));
    }
    std::vector<std::uint32_t> rows;
    rows.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
      if (hp.subsample >= 1.0 || u01(rng) < hp.subsample) rows.push_back(static_cast<std::uint32_t>(i));
    if (rows.empty()) rows.push_back(static_cast<std::uint32_t>(std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)));

    std::array<Tree, K> round_trees;
    for (std::size_t c = 0; c < K; ++c) {
      for (std::size_t i = 0; i < n; ++i) {
        const double w = data.weights.empty() ? 1.0 : data.weights[i];
        const double p = prob[i * K + c];
        const double y = label_index(data.labels[i]) == static_cast<int>(c) ? 1.0 : 0.0;
        grad[i] = {w * (p - y), std::max(2.0 * w * p * (1.0 - p), 1e-16)};
      }
      std::vector<int> feats;
      if (n_cols >= F) {
        feats = all_features;
      } else {
        feats = all_features;
        std::shuffle(feats.begin(), feats.end(), rng);
        feats.resize(n_cols);
        std::sort(feats.begin(), feats.end());
      }
      round_trees[c] = builder.build(rows, grad, feats);
      for (std::size_t i = 0; i < n; ++i) delta[i * K + c] = round_trees[c].predict(data.values.subspan(i * F, F));
    }

    double scale = 1.0;
    double new_loss = 0.0;
    for (int attempt = 0;; ++attempt) {
      for (std::size_t i = 0; i < n * K; ++i) trial[i] = margins[i] + scale * delta[i];
      new_loss = detail::weighted_logloss(trial, K, data.labels, data.weights);
      if (new_loss <= loss) break;
      if (attempt >= 30) {
        scale = 0.0;
        new_loss = loss;
        trial = margins;
        break;
      }
      scale *= 0.5;
    }
    if (scale != 1.0)
      for (auto& t : round_trees)
        for (auto& node : t.nodes) node.value *= scale;
    margins.swap(trial);
    loss = new_loss;
    model.train_loss.push_back(loss);
    for (std::size_t c = 0; c < K; ++c) model.trees[c].push_back(std::move(round_trees[c]));
  }
  return model;
}

// ---------------------------------------------------------------------------
// Serialization: versioned JSON with an FNV-1a checksum over the payload.

inline constexpr int kModelVersion = 1;

namespace detail {

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

}  // namespace detail

inline nlohmann::json model_payload(const GbtModel& m) {
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& per_class : m.trees) {
    nlohmann::json jc = nlohmann::json::array();
    for (const auto& t : per_class) {
      nlohmann::json f = nlohmann::json::array(), th = nlohmann::json::array(), l = nlohmann::json::array(),
                     r = nlohmann::json::array(), v = nlohmann::json::array(), cv = nlohmann::json::array();
      for (const auto& n : t.nodes) {
        f.push_back(n.feature);
        th.push_back(n.threshold);
        l.push_back(n.left);
        r.push_back(n.right);
        v.push_back(n.value);
        cv.push_back(n.cover);
      }
      jc.push_back({{"feature", f}, {"threshold", th}, {"left", l}, {"right", r}, {"value", v}, {"cover", cv}});
    }
    trees.push_back(jc);
  }
  nlohmann::json classes = nlohmann::json::array();
  for (Label l : kAllLabels) classes.push_back(std::string(label_name(l)));
  return {{"classes", classes},      {"features", m.features}, {"hp", to_json(m.hp)},
          {"base_score", m.base_score}, {"trees", trees},      {"train_loss", m.train_loss}};
}

inline std::string serialize_model(const GbtModel& m) {
  const nlohmann::json payload = model_payload(m);
  const std::string body = payload.dump();
  nlohmann::json doc{{"format", "ctm-gbt"},
                     {"version", kModelVersion},
                     {"checksum", detail::hex64(detail::fnv1a64(body))},
                     {"payload", payload}};
  return doc.dump();
}

inline GbtModel deserialize_model(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ModelError(std::string("model file is not valid JSON: ") + e.what());
  }
  try {
    if (doc.at("format").get<std::string>() != "ctm-gbt") throw ModelError("not a ctm-gbt model file");
    const int version = doc.at("version").get<int>();
    if (version != kModelVersion) throw ModelError("unsupported model version " + std::to_string(version));
    const auto& payload = doc.at("payload");
    if (detail::hex64(detail::fnv1a64(payload.dump())) != doc.at("checksum").get<std::string>())
      throw ModelError("model checksum mismatch (corrupt file)");
    GbtModel m;
    const auto classes = payload.at("classes").get<std::vector<std::string>>();
    if (classes.size() != kNumClasses) throw ModelError("model class list has wrong size");
    for (std::size_t c = 0; c < kNumClasses; ++c)
      if (classes[c] != label_name(kAllLabels[c])) throw ModelError("model class order mismatch");
    m.features = payload.at("features").get<std::vector<std::string>>();
    m.hp = hp_from_json(payload.at("hp"));
    m.base_score = payload.at("base_score").get<std::vector<double>>();
    m.train_loss = payload.at("train_loss").get<std::vector<double>>();
    if (m.base_score.size() != kNumClasses) throw ModelError("base_score has wrong size");
    const auto& trees = payload.at("trees");
    if (trees.size() != kNumClasses) throw ModelError("tree list has wrong size");
    m.trees.assign(kNumClasses, {});
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      for (const auto& jt : trees[c]) {
        const auto f = jt.at("feature").get<std::vector<int>>();
        const auto th = jt.at("threshold").get<std::vector<double>>();
        const auto l = jt.at("left").get<std::vector<int>>();
        const auto r = jt.at("right").get<std::vector<int>>();
        const auto v = jt.at("value").get<std::vector<double>>();
        const auto cv = jt.at("cover").get<std::vector<double>>();
        const std::size_t nn = f.size();
        if (nn == 0 || th.size() != nn || l.size() != nn || r.size() != nn || v.size() != nn || cv.size() != nn)
          throw ModelError("tree arrays have inconsistent sizes");
        Tree t;
        t.nodes.resize(nn);
        for (std::size_t i = 0; i < nn; ++i) {
          t.nodes[i] = {f[i], th[i], l[i], r[i], v[i], cv[i]};
          if (f[i] >= 0) {
            if (static_cast<std::size_t>(f[i]) >= m.features.size()) throw ModelError("tree feature index out of range");
            if (l[i] <= static_cast<int>(i) || r[i] <= static_cast<int>(i) || l[i] >= static_cast<int>(nn) ||
                r[i] >= static_cast<int>(nn))
              throw ModelError("tree child index out of range");
          }
        }
        m.trees[c].push_back(std::move(t));
      }
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ModelError(std::string("malformed model file: ") + e.what());
  }
}

inline void save_model(const GbtModel& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ModelError("cannot write " + path.string());
  out << serialize_model(m);
}

inline GbtModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ModelError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_model(ss.str());
}

}  // namespace ctm
