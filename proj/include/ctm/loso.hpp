#pragma once

// Nested leave-one-subject-out evaluation: outer LOSO folds, an inner
// grouped k-fold hyperparameter search on the training subjects, per-fold
// metrics and a pooled summary.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ctm/error.hpp"
#include "ctm/features.hpp"
#include "ctm/gbt.hpp"
#include "ctm/metrics.hpp"

namespace ctm {

struct Fold {
  std::string test;
  std::vector<std::string> train;
};

struct FoldPlan {
  std::vector<Fold> folds;
};

/// One fold per distinct subject, in first-seen order.
inline FoldPlan loso_folds(std::span<const std::string> subjects) {
  std::vector<std::string> ids;
  for (const auto& s : subjects)
    if (std::find(ids.begin(), ids.end(), s) == ids.end()) ids.push_back(s);
  if (ids.size() < 2) throw DataError("loso_folds: need at least two subjects");
  FoldPlan plan;
  for (const auto& test : ids) {
    Fold f{test, {}};
    for (const auto& s : ids)
      if (s != test) f.train.push_back(s);
    plan.folds.push_back(std::move(f));
  }
  return plan;
}

template <class T>
struct Range {
  T lo;
  T hi;
  bool operator==(const Range&) const = default;
};

/// Box of hyperparameters sampled uniformly; lo == hi fixes a field.
struct HpSpace {
  Range<int> n_rounds{50, 300};
  Range<int> max_depth{2, 6};
  Range<double> learning_rate{0.05, 0.3};
  Range<double> min_child_weight{0.5, 5.0};
  Range<double> l2_lambda{0.5, 5.0};
  Range<double> subsample{0.6, 1.0};
  Range<double> colsample{0.5, 1.0};

  GbtHyperParams lower() const {
    return {n_rounds.lo, max_depth.lo, learning_rate.lo, min_child_weight.lo, l2_lambda.lo, subsample.lo, colsample.lo};
  }
  GbtHyperParams upper() const {
    return {n_rounds.hi, max_depth.hi, learning_rate.hi, min_child_weight.hi, l2_lambda.hi, subsample.hi, colsample.hi};
  }

  static HpSpace singleton(const GbtHyperParams& hp) {
    return {{hp.n_rounds, hp.n_rounds},
            {hp.max_depth, hp.max_depth},
            {hp.learning_rate, hp.learning_rate},
            {hp.min_child_weight, hp.min_child_weight},
            {hp.l2_lambda, hp.l2_lambda},
            {hp.subsample, hp.subsample},
            {hp.colsample, hp.colsample}};
  }

  void validate() const {
    const auto empty = [](const auto& r) { return !(r.lo <= r.hi); };
    if (empty(n_rounds) || empty(max_depth) || empty(learning_rate) || empty(min_child_weight) || empty(l2_lambda) ||
        empty(subsample) || empty(colsample))
      throw ConfigError("hp space is empty (lo > hi)");
    lower().validate();
    upper().validate();
  }

  bool operator==(const HpSpace&) const = default;
};

inline nlohmann::json to_json(const HpSpace& s) {
  const auto r = [](const auto& v) { return nlohmann::json::array({v.lo, v.hi}); };
  return {{"n_rounds", r(s.n_rounds)},       {"max_depth", r(s.max_depth)}, {"learning_rate", r(s.learning_rate)},
          {"min_child_weight", r(s.min_child_weight)}, {"l2_lambda", r(s.l2_lambda)}, {"subsample", r(s.subsample)},
          {"colsample", r(s.colsample)}};
}

inline HpSpace hp_space_from_json(const nlohmann::json& j) {
  HpSpace s;
  const auto read = [&](const char* key, auto& range) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (v.is_array() && v.size() == 2) {
      v.at(0).get_to(range.lo);
      v.at(1).get_to(range.hi);
    } else if (v.is_number()) {
      v.get_to(range.lo);
      range.hi = range.lo;
    } else {
      throw ConfigError(std::string("hp space: '") + key + "' must be [lo, hi] or a number");
    }
  };
  read("n_rounds", s.n_rounds);
  read("max_depth", s.max_depth);
  read("learning_rate", s.learning_rate);
  read("min_child_weight", s.min_child_weight);
  read("l2_lambda", s.l2_lambda);
  read("subsample", s.subsample);
  read("colsample", s.colsample);
  return s;
}

/// Source of candidate hyperparameters for hp_search.
class Proposer {
public:
  virtual ~Proposer() = default;
  virtual GbtHyperParams next() = 0;
  virtual void observe(const GbtHyperParams& /*hp*/, double /*score*/) {}
};

class RandomProposer final : public Proposer {
public:
  RandomProposer(const HpSpace& space, std::uint64_t seed) : space_(space), rng_(seed) { space_.validate(); }

  GbtHyperParams next() override {
    GbtHyperParams hp;
    hp.n_rounds = uniform(space_.n_rounds);
    hp.max_depth = uniform(space_.max_depth);
    hp.learning_rate = uniform(space_.learning_rate);
    hp.min_child_weight = uniform(space_.min_child_weight);
    hp.l2_lambda = uniform(space_.l2_lambda);
    hp.subsample = uniform(space_.subsample);
    hp.colsample = uniform(space_.colsample);
    return hp;
  }

private:
  int uniform(const Range<int>& r) { return std::uniform_int_distribution<int>(r.lo, r.hi)(rng_); }
  double uniform(const Range<double>& r) {
    if (r.lo == r.hi) return r.lo;
    return std::uniform_real_distribution<double>(r.lo, r.hi)(rng_);
  }

  HpSpace space_;
  std::mt19937_64 rng_;
};

/// Derives an independent stream seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t k) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (k + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

struct FitOptions {
  int max_bins = 256;
  bool balanced = true;
};

/// Trains on the selected rows of a feature matrix.
inline GbtModel fit_rows(const FeatureMatrix& fm, std::span<const std::size_t> rows, const GbtHyperParams& hp,
                         std::uint64_t seed, const FitOptions& opt = {}) {
  const FeatureMatrix sub = fm.subset(rows);
  std::vector<double> w;
  if (opt.balanced) w = balanced_weights(sub.labels);
  TrainView view{sub.values, sub.rows(), sub.cols, sub.labels, w, sub.names};
  return train(view, hp, seed, GbtTrainOptions{opt.max_bins});
}

/// Row-major n x K posteriors for the selected rows.
inline std::vector<double> predict_rows(const GbtModel& m, const FeatureMatrix& fm, std::span<const std::size_t> rows) {
  if (m.num_features() != fm.cols) throw ModelError("predict_rows: model expects a different feature count");
  std::vector<double> out;
  out.reserve(rows.size() * kNumClasses);
  for (std::size_t r : rows) {
    const auto p = predict_proba(m, fm.row(r));
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

/// Keeps every stride-th row of each group, counting from the group's
/// first row.
inline std::vector<std::size_t> stride_rows(const FeatureMatrix& fm, std::span<const std::size_t> rows,
                                            std::size_t stride) {
  if (stride <= 1) return {rows.begin(), rows.end()};
  std::map<int, std::size_t> seen;
  std::vector<std::size_t> out;
  for (std::size_t r : rows)
    if (seen[fm.groups[r]]++ % stride == 0) out.push_back(r);
  return out;
}

struct SearchOptions {
  int iters = 50;
  int k = 3;
  std::uint64_t seed = 0;
  std::size_t row_stride = 1;
  FitOptions fit;
};

struct SearchTrial {
  GbtHyperParams hp;
  double score = 0.0;
};

struct SearchResult {
  GbtHyperParams best;
  double best_score = -1.0;
  std::vector<SearchTrial> trials;
  std::vector<int> inner_groups;  // every group index the search touched
  bool grouped = false;           // false when folds are contiguous row blocks
};

/// Inner k-fold assignment for the given rows. Groups are dealt round-robin
/// to folds in ascending group order when there are at least k of them;
/// otherwise the rows are cut into k contiguous blocks.
inline std::vector<std::vector<std::size_t>> inner_folds(const FeatureMatrix& fm, std::span<const std::size_t> rows,
                                                         int k, bool* grouped = nullptr) {
  if (k < 2) throw ConfigError("hp_search: k must be >= 2");
  if (rows.size() < static_cast<std::size_t>(k)) throw DataError("hp_search: fewer rows than inner folds");
  std::set<int> gs;
  for (std::size_t r : rows) gs.insert(fm.groups[r]);
  std::vector<std::vector<std::size_t>> folds(static_cast<std::size_t>(k));
  if (gs.size() >= static_cast<std::size_t>(k)) {
    std::map<int, std::size_t> fold_of;
    std::size_t i = 0;
    for (int g : gs) fold_of[g] = i++ % static_cast<std::size_t>(k);
    for (std::size_t r : rows) folds[fold_of[fm.groups[r]]].push_back(r);
    if (grouped) *grouped = true;
  } else {
    const std::size_t n = rows.size();
    for (std::size_t i = 0; i < n; ++i) folds[i * static_cast<std::size_t>(k) / n].push_back(rows[i]);
    if (grouped) *grouped = false;
  }
  return folds;
}

/// Mean inner-CV macro-F1 of one configuration.
inline double cv_score(const FeatureMatrix& fm, const std::vector<std::vector<std::size_t>>& folds,
                       const GbtHyperParams& hp, std::uint64_t seed, const FitOptions& fit) {
  double acc = 0.0;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    std::vector<std::size_t> tr;
    for (std::size_t g = 0; g < folds.size(); ++g)
      if (g != f) tr.insert(tr.end(), folds[g].begin(), folds[g].end());
    std::sort(tr.begin(), tr.end());
    const GbtModel m = fit_rows(fm, tr, hp, mix_seed(seed, f), fit);
    const auto probs = predict_rows(m, fm, folds[f]);
    std::vector<Label> y, pred;
    for (std::size_t i = 0; i < folds[f].size(); ++i) {
      y.push_back(fm.labels[folds[f][i]]);
      pred.push_back(label_from_index(argmax(std::span<const double>(probs.data() + i * kNumClasses, kNumClasses))));
    }
    acc += macro_f1(y, pred);
  }
  return acc / static_cast<double>(folds.size());
}

/// Returns the proposal with the best mean inner macro-F1; ties keep the
/// earlier trial.
inline SearchResult hp_search(const FeatureMatrix& fm, std::span<const std::size_t> rows, Proposer& proposer,
                              const SearchOptions& opt) {
  if (opt.iters < 1) throw ConfigError("hp_search: iters must be >= 1");
  const auto used = stride_rows(fm, rows, opt.row_stride);
  SearchResult res;
  const auto folds = inner_folds(fm, used, opt.k, &res.grouped);
  std::set<int> gs;
  for (std::size_t r : used) gs.insert(fm.groups[r]);
  res.inner_groups.assign(gs.begin(), gs.end());
  for (int t = 0; t < opt.iters; ++t) {
    const GbtHyperParams hp = proposer.next();
    const double s = cv_score(fm, folds, hp, mix_seed(opt.seed, static_cast<std::uint64_t>(t)), opt.fit);
    proposer.observe(hp, s);
    res.trials.push_back({hp, s});
    if (t == 0 || s > res.best_score) {
      res.best = hp;
      res.best_score = s;
    }
  }
  return res;
}

inline SearchResult hp_search(const FeatureMatrix& fm, std::span<const std::size_t> rows, const HpSpace& space,
                              const SearchOptions& opt) {
  RandomProposer p(space, opt.seed);
  return hp_search(fm, rows, p, opt);
}

namespace detail {
template <class T>
T lower_median(std::vector<T> v) {
  std::sort(v.begin(), v.end());
  return v[(v.size() - 1) / 2];
}
}  // namespace detail

/// Per-field median across folds; the lower middle for even counts.
inline GbtHyperParams consolidate(std::span<const GbtHyperParams> hps) {
  if (hps.empty()) throw DataError("consolidate: no hyperparameters");
  const auto field = [&](auto member) {
    std::vector<std::remove_cvref_t<decltype(hps[0].*member)>> v;
    for (const auto& h : hps) v.push_back(h.*member);
    return detail::lower_median(std::move(v));
  };
  GbtHyperParams out;
  out.n_rounds = field(&GbtHyperParams::n_rounds);
  out.max_depth = field(&GbtHyperParams::max_depth);
  out.learning_rate = field(&GbtHyperParams::learning_rate);
  out.min_child_weight = field(&GbtHyperParams::min_child_weight);
  out.l2_lambda = field(&GbtHyperParams::l2_lambda);
  out.subsample = field(&GbtHyperParams::subsample);
  out.colsample = field(&GbtHyperParams::colsample);
  return out;
}

struct FoldResult;

struct LosoOptions {
  HpSpace space;
  SearchOptions search;
  std::optional<GbtHyperParams> fixed_hp;  // skips the inner search
  std::size_t train_stride = 1;
  bool shuffle_labels = false;
  std::uint64_t seed = 0;
  FitOptions fit;
  unsigned jobs = 1;
  // Called after each fold completes, possibly from a worker thread.
  std::function<void(std::size_t, const FoldResult&)> on_fold;
};

struct FoldResult {
  std::string subject;
  GbtHyperParams hp;
  double inner_score = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::string> inner_subjects;
  std::size_t n_train = 0;
  MetricsReport metrics;
  std::vector<Label> y_true;
  std::vector<double> probs;  // n x K
  std::vector<double> times;
};

struct SummaryStat {
  double mean = std::numeric_limits<double>::quiet_NaN();
  double std = std::numeric_limits<double>::quiet_NaN();  // sample standard deviation
  std::size_t n = 0;
};

inline SummaryStat summarize(std::span<const double> v) {
  SummaryStat s;
  double acc = 0.0;
  for (double x : v)
    if (std::isfinite(x)) {
      acc += x;
      ++s.n;
    }
  if (s.n == 0) return s;
  s.mean = acc / static_cast<double>(s.n);
  if (s.n < 2) {
    s.std = 0.0;
    return s;
  }
  double ss = 0.0;
  for (double x : v)
    if (std::isfinite(x)) ss += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(s.n - 1));
  return s;
}

struct LosoResult {
  std::vector<FoldResult> folds;
  MetricsReport pooled;
  GbtHyperParams consolidated;
  std::map<std::string, SummaryStat> summary;
  bool shuffled = false;
};

/// Labels permuted across all rows with a fixed seed.
inline std::vector<Label> shuffled_labels(std::span<const Label> y, std::uint64_t seed) {
  std::vector<Label> out(y.begin(), y.end());
  std::mt19937_64 rng(seed);
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

inline FoldResult run_fold(const FeatureMatrix& fm, const Fold& fold, std::size_t fold_index, const LosoOptions& opt) {
  const auto gi = std::find(fm.group_names.begin(), fm.group_names.end(), fold.test);
  if (gi == fm.group_names.end()) throw DataError("run_loso: unknown subject " + fold.test);
  const int test_group = static_cast<int>(gi - fm.group_names.begin());
  std::vector<std::size_t> train_rows, test_rows;
  for (std::size_t r = 0; r < fm.rows(); ++r) (fm.groups[r] == test_group ? test_rows : train_rows).push_back(r);
  if (test_rows.empty()) throw DataError("run_loso: subject " + fold.test + " has no windows");

  FoldResult fr;
  fr.subject = fold.test;
  if (opt.fixed_hp) {
    fr.hp = *opt.fixed_hp;
  } else {
    SearchOptions so = opt.search;
    so.seed = mix_seed(opt.seed, 2 * fold_index);
    so.fit = opt.fit;
    const SearchResult sr = hp_search(fm, train_rows, opt.space, so);
    if (std::find(sr.inner_groups.begin(), sr.inner_groups.end(), test_group) != sr.inner_groups.end())
      throw std::logic_error("hp_search saw the held-out subject");
    fr.hp = sr.best;
    fr.inner_score = sr.best_score;
    for (int g : sr.inner_groups) fr.inner_subjects.push_back(fm.group_names[static_cast<std::size_t>(g)]);
  }
  const auto fit_rows_used = stride_rows(fm, train_rows, opt.train_stride);
  fr.n_train = fit_rows_used.size();
  const GbtModel model = fit_rows(fm, fit_rows_used, fr.hp, mix_seed(opt.seed, 2 * fold_index + 1), opt.fit);
  fr.probs = predict_rows(model, fm, test_rows);
  for (std::size_t r : test_rows) {
    fr.y_true.push_back(fm.labels[r]);
    fr.times.push_back(fm.times[r]);
  }
  fr.metrics = make_report(fr.y_true, fr.probs);
  return fr;
}

/// Outer LOSO over every group of the matrix. Folds run on up to opt.jobs
/// threads; results are ordered by fold index.
inline LosoResult run_loso(const FeatureMatrix& data, const LosoOptions& opt) {
  opt.space.validate();
  if (opt.fixed_hp) opt.fixed_hp->validate();
  if (data.rows() == 0) throw DataError("run_loso: empty dataset");
  const FeatureMatrix* fm = &data;
  FeatureMatrix shuffled;
  if (opt.shuffle_labels) {
    shuffled = data;
    shuffled.labels = shuffled_labels(data.labels, mix_seed(opt.seed, 0xC0FFEE));
    fm = &shuffled;
  }
  std::vector<std::string> present;
  for (int g : fm->groups) {
    const auto& name = fm->group_names.at(static_cast<std::size_t>(g));
    if (std::find(present.begin(), present.end(), name) == present.end()) present.push_back(name);
  }
  const FoldPlan plan = loso_folds(present);

  LosoResult res;
  res.shuffled = opt.shuffle_labels;
  res.folds.resize(plan.folds.size());
  std::vector<std::exception_ptr> errors(plan.folds.size());
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < plan.folds.size(); i = next++) {
      try {
        res.folds[i] = run_fold(*fm, plan.folds[i], i, opt);
        if (opt.on_fold) opt.on_fold(i, res.folds[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const unsigned jobs = std::max(1u, std::min<unsigned>(opt.jobs, static_cast<unsigned>(plan.folds.size())));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::vector<Label> y;
  std::vector<double> p;
  std::vector<GbtHyperParams> hps;
  std::map<std::string, std::vector<double>> cols;
  for (const auto& f : res.folds) {
    y.insert(y.end(), f.y_true.begin(), f.y_true.end());
    p.insert(p.end(), f.probs.begin(), f.probs.end());
    hps.push_back(f.hp);
    cols["macro_f1"].push_back(f.metrics.macro_f1);
    cols["mcc"].push_back(f.metrics.mcc);
    cols["macro_auc"].push_back(f.metrics.macro_auc);
    for (int c = 0; c < kNumClasses; ++c) {
      const std::string cn(label_name(label_from_index(c)));
      cols["f1." + cn].push_back(f.metrics.per_class[static_cast<std::size_t>(c)].f1);
      cols["auc." + cn].push_back(f.metrics.roc[static_cast<std::size_t>(c)].auc);
    }
  }
  res.pooled = make_report(y, p);
  res.consolidated = consolidate(hps);
  for (const auto& [k, v] : cols) res.summary[k] = summarize(v);
  return res;
}

inline nlohmann::json to_json(const LosoResult& r) {
  nlohmann::json folds = nlohmann::json::array();
  for (const auto& f : r.folds) {
    folds.push_back({{"subject", f.subject},
                     {"hp", to_json(f.hp)},
                     {"inner_score", detail::num_or_null(f.inner_score)},
                     {"inner_subjects", f.inner_subjects},
                     {"n_train", f.n_train},
                     {"metrics", to_json(f.metrics)}});
  }
  nlohmann::json summary = nlohmann::json::object();
  for (const auto& [k, s] : r.summary)
    summary[k] = {{"mean", detail::num_or_null(s.mean)}, {"std", detail::num_or_null(s.std)}, {"n", s.n}};
  return {{"shuffled_labels", r.shuffled},
          {"folds", folds},
          {"summary", summary},
          {"pooled", to_json(r.pooled)},
          {"consolidated_hp", to_json(r.consolidated)}};
}

/// ROC points: scope (subject or "pooled"), class, fpr, tpr.
inline void write_roc_csv(std::ostream& out, const LosoResult& r) {
  out << "scope,class,fpr,tpr\n";
  const auto emit = [&](const std::string& scope, const MetricsReport& m) {
    for (int c = 0; c < kNumClasses; ++c)
      for (const auto& [fpr, tpr] : m.roc[static_cast<std::size_t>(c)].points)
        out << scope << ',' << label_name(label_from_index(c)) << ',' << detail::format_double(fpr) << ','
            << detail::format_double(tpr) << '\n';
  };
  for (const auto& f : r.folds) emit(f.subject, f.metrics);
  emit("pooled", r.pooled);
}

}  // namespace ctm
