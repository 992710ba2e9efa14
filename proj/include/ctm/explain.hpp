#pragma once

// Path-dependent TreeSHAP for the boosted ensemble, TC-vs-NoTC attribution
// differences and the separation-score ranking.
//
// For a tree f and feature subset S, v(S) is the expected output when the
// features outside S are integrated out along the tree using the training
// cover of each branch. The recursion below is the polynomial-time
// EXTEND/UNWIND formulation of TreeSHAP, which returns the exact Shapley
// values of that game.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ctm/error.hpp"
#include "ctm/features.hpp"
#include "ctm/gbt.hpp"
#include "ctm/streams.hpp"

namespace ctm {

namespace detail {

struct PathElement {
  int feature = -1;
  double zero_fraction = 0.0;
  double one_fraction = 0.0;
  double pweight = 0.0;
};

inline void extend_path(std::vector<PathElement>& path, int depth, double zf, double of, int feature) {
  path[static_cast<std::size_t>(depth)] = {feature, zf, of, depth == 0 ? 1.0 : 0.0};
  for (int i = depth - 1; i >= 0; --i) {
    const auto u = static_cast<std::size_t>(i);
    path[u + 1].pweight += of * path[u].pweight * (i + 1) / static_cast<double>(depth + 1);
    path[u].pweight = zf * path[u].pweight * (depth - i) / static_cast<double>(depth + 1);
  }
}

inline void unwind_path(std::vector<PathElement>& path, int depth, int index) {
  const double of = path[static_cast<std::size_t>(index)].one_fraction;
  const double zf = path[static_cast<std::size_t>(index)].zero_fraction;
  double next = path[static_cast<std::size_t>(depth)].pweight;
  for (int i = depth - 1; i >= 0; --i) {
    auto& e = path[static_cast<std::size_t>(i)];
    if (of != 0.0) {
      const double tmp = e.pweight;
      e.pweight = next * (depth + 1) / ((i + 1) * of);
      next = tmp - e.pweight * zf * (depth - i) / static_cast<double>(depth + 1);
    } else {
      e.pweight = e.pweight * (depth + 1) / (zf * (depth - i));
    }
  }
  for (int i = index; i < depth; ++i) {
    auto& dst = path[static_cast<std::size_t>(i)];
    const auto& src = path[static_cast<std::size_t>(i + 1)];
    dst.feature = src.feature;
    dst.zero_fraction = src.zero_fraction;
    dst.one_fraction = src.one_fraction;
  }
}

inline double unwound_path_sum(const std::vector<PathElement>& path, int depth, int index) {
  const double of = path[static_cast<std::size_t>(index)].one_fraction;
  const double zf = path[static_cast<std::size_t>(index)].zero_fraction;
  double next = path[static_cast<std::size_t>(depth)].pweight;
  double total = 0.0;
  for (int i = depth - 1; i >= 0; --i) {
    const double pw = path[static_cast<std::size_t>(i)].pweight;
    if (of != 0.0) {
      const double tmp = next * (depth + 1) / ((i + 1) * of);
      total += tmp;
      next = pw - tmp * zf * (depth - i) / static_cast<double>(depth + 1);
    } else if (zf != 0.0) {
      total += pw / zf / ((depth - i) / static_cast<double>(depth + 1));
    }
  }
  return total;
}

inline void tree_shap_recurse(const Tree& tree, int node, std::span<const double> x, std::span<double> phi,
                              std::vector<PathElement> path, int depth, double zf, double of, int feature) {
  path.resize(static_cast<std::size_t>(depth) + 1);
  extend_path(path, depth, zf, of, feature);
  const TreeNode& n = tree.nodes[static_cast<std::size_t>(node)];
  if (n.is_leaf()) {
    for (int i = 1; i <= depth; ++i) {
      const auto& e = path[static_cast<std::size_t>(i)];
      const double w = unwound_path_sum(path, depth, i);
      phi[static_cast<std::size_t>(e.feature)] += w * (e.one_fraction - e.zero_fraction) * n.value;
    }
    return;
  }
  const bool go_left = x[static_cast<std::size_t>(n.feature)] < n.threshold;
  const int hot = go_left ? n.left : n.right;
  const int cold = go_left ? n.right : n.left;
  const double hot_zf = tree.nodes[static_cast<std::size_t>(hot)].cover / n.cover;
  const double cold_zf = tree.nodes[static_cast<std::size_t>(cold)].cover / n.cover;
  double in_zf = 1.0, in_of = 1.0;
  for (int k = 1; k <= depth; ++k) {
    if (path[static_cast<std::size_t>(k)].feature == n.feature) {
      in_zf = path[static_cast<std::size_t>(k)].zero_fraction;
      in_of = path[static_cast<std::size_t>(k)].one_fraction;
      unwind_path(path, depth, k);
      --depth;
      break;
    }
  }
  tree_shap_recurse(tree, hot, x, phi, path, depth + 1, hot_zf * in_zf, in_of, n.feature);
  tree_shap_recurse(tree, cold, x, phi, path, depth + 1, cold_zf * in_zf, 0.0, n.feature);
}

}  // namespace detail

/// Cover-weighted mean output of a tree with no feature known.
inline double expected_value(const Tree& tree, int node = 0) {
  if (tree.nodes.empty()) return 0.0;
  const TreeNode& n = tree.nodes[static_cast<std::size_t>(node)];
  if (n.is_leaf()) return n.value;
  const double cl = tree.nodes[static_cast<std::size_t>(n.left)].cover;
  const double cr = tree.nodes[static_cast<std::size_t>(n.right)].cover;
  return (cl * expected_value(tree, n.left) + cr * expected_value(tree, n.right)) / n.cover;
}

/// Adds the SHAP values of one tree for input x to phi.
inline void tree_shap(const Tree& tree, std::span<const double> x, std::span<double> phi) {
  if (tree.nodes.empty()) return;
  detail::tree_shap_recurse(tree, 0, x, phi, {}, 0, 1.0, 1.0, -1);
}

/// Per-class base values: base score plus the expected value of every tree.
inline std::vector<double> shap_base_values(const GbtModel& m) {
  std::vector<double> base(m.base_score);
  for (std::size_t c = 0; c < m.trees.size(); ++c)
    for (const auto& t : m.trees[c]) base[c] += expected_value(t);
  return base;
}

/// phi[c][j] for input x given in model feature order.
inline std::vector<std::vector<double>> tree_shap(const GbtModel& m, std::span<const double> x) {
  if (x.size() != m.num_features())
    throw ModelError("tree_shap: expected " + std::to_string(m.num_features()) + " features, got " +
                     std::to_string(x.size()));
  std::vector<std::vector<double>> phi(static_cast<std::size_t>(m.num_classes), std::vector<double>(x.size(), 0.0));
  for (std::size_t c = 0; c < m.trees.size(); ++c)
    for (const auto& t : m.trees[c]) tree_shap(t, x, phi[c]);
  return phi;
}

/// Same, for named input columns; columns are matched against the model
/// manifest and phi is returned in model feature order.
inline std::vector<std::vector<double>> tree_shap(const GbtModel& m, std::span<const double> x,
                                                  std::span<const std::string> names) {
  if (x.size() != names.size()) throw ModelError("tree_shap: value/name count mismatch");
  const auto map = bind_features(m, names);
  std::vector<double> xm(map.size());
  for (std::size_t j = 0; j < map.size(); ++j) xm[j] = x[map[j]];
  return tree_shap(m, xm);
}

/// phi for n samples: value(i, c, j); features in model order.
struct ShapAttribution {
  std::size_t n = 0;
  std::size_t features = 0;
  std::vector<std::string> names;
  std::vector<double> base;  // per class
  std::vector<double> phi;   // n x K x F

  double value(std::size_t i, std::size_t c, std::size_t j) const { return phi[(i * kNumClasses + c) * features + j]; }
  std::span<const double> row(std::size_t i, std::size_t c) const {
    return {phi.data() + (i * kNumClasses + c) * features, features};
  }
};

inline ShapAttribution explain_rows(const GbtModel& m, const FeatureMatrix& fm, std::span<const std::size_t> rows) {
  const auto map = bind_features(m, fm.names);
  ShapAttribution a;
  a.n = rows.size();
  a.features = m.num_features();
  a.names = m.features;
  a.base = shap_base_values(m);
  a.phi.reserve(a.n * kNumClasses * a.features);
  std::vector<double> xm(map.size());
  for (std::size_t r : rows) {
    const auto x = fm.row(r);
    for (std::size_t j = 0; j < map.size(); ++j) xm[j] = x[map[j]];
    const auto phi = tree_shap(m, xm);
    for (const auto& pc : phi) a.phi.insert(a.phi.end(), pc.begin(), pc.end());
  }
  return a;
}

/// delta(i, j) = phi^(a) - phi^(b); n x F row-major. Defaults to TC minus
/// NoTC.
inline std::vector<double> delta_shap(const ShapAttribution& att, Label a = Label::MovTC, Label b = Label::MovNoTC) {
  const auto ca = static_cast<std::size_t>(label_index(a));
  const auto cb = static_cast<std::size_t>(label_index(b));
  std::vector<double> d(att.n * att.features);
  for (std::size_t i = 0; i < att.n; ++i)
    for (std::size_t j = 0; j < att.features; ++j) d[i * att.features + j] = att.value(i, ca, j) - att.value(i, cb, j);
  return d;
}

enum class OriginTag : std::uint8_t { Trunk, Wrist, Interaction };

inline std::string_view origin_tag_name(OriginTag t) {
  switch (t) {
    case OriginTag::Trunk: return "trunk";
    case OriginTag::Wrist: return "wrist";
    case OriginTag::Interaction: return "interaction";
  }
  return "?";
}

inline OriginTag origin_tag(std::string_view feature) {
  switch (feature_origin(feature)) {
    case Origin::Trunk: return OriginTag::Trunk;
    case Origin::Wrist: return OriginTag::Wrist;
    case Origin::Pair: return OriginTag::Interaction;
  }
  return OriginTag::Interaction;
}

struct SeparationEntry {
  std::string feature;
  double score = 0.0;
  OriginTag origin = OriginTag::Interaction;
  std::size_t rank = 0;  // 1-based
};

struct SeparationRanking {
  std::vector<SeparationEntry> entries;  // descending score, ties by name
  std::map<OriginTag, double> total;     // summed score per origin
  std::map<OriginTag, double> share;     // total / grand total; 0 when all scores vanish
};

/// Mean absolute delta per feature, ranked.
inline SeparationRanking separation_scores(std::span<const double> delta, std::size_t n,
                                           std::span<const std::string> names) {
  const std::size_t F = names.size();
  if (delta.size() != n * F) throw DataError("separation_scores: delta shape mismatch");
  SeparationRanking out;
  out.entries.resize(F);
  for (std::size_t j = 0; j < F; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += std::abs(delta[i * F + j]);
    out.entries[j] = {names[j], n ? s / static_cast<double>(n) : 0.0, origin_tag(names[j]), 0};
  }
  std::sort(out.entries.begin(), out.entries.end(), [](const SeparationEntry& a, const SeparationEntry& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.feature < b.feature;
  });
  double grand = 0.0;
  for (OriginTag t : {OriginTag::Trunk, OriginTag::Wrist, OriginTag::Interaction}) out.total[t] = 0.0;
  for (std::size_t k = 0; k < F; ++k) {
    out.entries[k].rank = k + 1;
    out.total[out.entries[k].origin] += out.entries[k].score;
    grand += out.entries[k].score;
  }
  for (const auto& [t, v] : out.total) out.share[t] = grand > 0.0 ? v / grand : 0.0;
  return out;
}

inline SeparationRanking separation_scores(const ShapAttribution& att) {
  return separation_scores(delta_shap(att), att.n, att.names);
}

inline void write_ranking_csv(std::ostream& out, const SeparationRanking& r) {
  out << "feature,score,origin,rank\n";
  for (const auto& e : r.entries)
    out << e.feature << ',' << detail::format_double(e.score) << ',' << origin_tag_name(e.origin) << ',' << e.rank << '\n';
}

/// Class-stratified subsample of n row indices (ascending). Per-class quotas
/// follow the class proportions, rounded by largest remainder.
inline std::vector<std::size_t> sample_background(std::span<const Label> labels, std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> all(labels.size());
  std::iota(all.begin(), all.end(), 0);
  if (n >= labels.size()) return all;
  std::array<std::vector<std::size_t>, kNumClasses> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[static_cast<std::size_t>(label_index(labels[i]))].push_back(i);
  std::array<std::size_t, kNumClasses> quota{};
  std::array<double, kNumClasses> rem{};
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const double exact = static_cast<double>(n) * static_cast<double>(by_class[c].size()) / static_cast<double>(labels.size());
    quota[c] = static_cast<std::size_t>(std::floor(exact));
    rem[c] = exact - static_cast<double>(quota[c]);
    assigned += quota[c];
  }
  std::array<std::size_t, kNumClasses> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
  for (std::size_t k = 0; assigned < n; k = (k + 1) % kNumClasses) {
    const std::size_t c = order[k];
    if (quota[c] < by_class[c].size()) {
      ++quota[c];
      ++assigned;
    }
  }
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    auto v = by_class[c];
    std::shuffle(v.begin(), v.end(), rng);
    out.insert(out.end(), v.begin(), v.begin() + static_cast<std::ptrdiff_t>(quota[c]));
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace ctm
