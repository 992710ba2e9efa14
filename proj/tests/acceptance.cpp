// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Tolerances are fixed here.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include <json.hpp>

#include "cli_support.hpp"
#include "ctm/ctm.hpp"
#include "datasets.hpp"
#include "dtw_oracle.hpp"
#include "metric_oracles.hpp"
#include "shap_oracle.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ctm;

namespace {

constexpr double kCalibTol = 1e-9;
constexpr double kCalibSeconds = 5.0;
constexpr double kDtwTol = 1e-9;
constexpr double kShapTol = 1e-9;
constexpr double kLocalAccuracyTol = 1e-6;
constexpr double kMetricTol = 1e-12;
constexpr double kWeightTol = 1e-9;
constexpr double kStreamTol = 1e-12;
constexpr double kMinMacroF1 = 0.90;
constexpr double kMinFoldAuc = 0.95;
constexpr double kControlAucLo = 0.4;
constexpr double kControlAucHi = 0.6;
constexpr double kBenchmarkSeconds = 15.0 * 60.0;
constexpr double kLatencyBudgetMs = 125.0;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(const char* name, const std::function<Outcome()>& check) {
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
  std::fflush(stdout);
  if (!o.pass) ++failures;
}

std::string num(double v, const char* f = "%.3g") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

Outcome calibration() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1001);
  double worst_det = 0.0, worst_x = 0.0, min_y = 1.0;
  bool involution = true;
  int done = 0;
  while (done < 1000) {
    const Quat q0 = test::random_quat(rng);
    const SensorKind kind = done % 2 ? SensorKind::Trunk : SensorKind::Wrist;
    if (norm(cross(rotate_vec(q0, lateral_axis(kind)), {0, 0, 1})) < 1e-3) continue;
    const Mat3 r = calibration_basis(q0, kind);
    worst_det = std::max(worst_det, std::abs(r.det() - 1.0));
    const Mat3 rtr = r.transposed() * r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) worst_det = std::max(worst_det, std::abs(rtr(i, j) - (i == j ? 1.0 : 0.0)));
    const Vec3 lat = rotate_vec(apply_calibration(q0, anatomical_calibration(q0, kind)), lateral_axis(kind));
    worst_x = std::max(worst_x, std::abs(lat.x));
    min_y = std::min(min_y, lat.y);
    const Vec3 a = test::random_vec(rng, 20.0), w = test::random_vec(rng, 5.0);
    const auto m1 = mirror_kinematics(a, w);
    const auto m2 = mirror_kinematics(m1.accel, m1.gyro);
    involution = involution && m2.accel == a && m2.gyro == w;
    ++done;
  }
  const double secs = seconds_since(t0);
  const bool ok = worst_det < kCalibTol && worst_x < kCalibTol && min_y >= 0.0 && involution && secs < kCalibSeconds;
  return {ok, "max orthonormality/det error " + num(worst_det) + ", max lateral x " + num(worst_x) + ", min lateral y " +
                  num(min_y) + ", mirror involution " + (involution ? "exact" : "broken") + ", " + num(secs) + " s"};
}

Outcome dtw() {
  std::mt19937_64 rng(1002);
  std::uniform_int_distribution<int> len(1, 12), iv(0, 4);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  double worst = 0.0;
  for (int k = 0; k < 200; ++k) {
    std::vector<double> x(static_cast<std::size_t>(len(rng))), y(static_cast<std::size_t>(len(rng)));
    const bool ints = k % 2 == 0;
    for (auto& v : x) v = ints ? iv(rng) : u(rng);
    for (auto& v : y) v = ints ? iv(rng) : u(rng);
    worst = std::max(worst, std::abs(dtw_norm(x, y) - test::dtw_exhaustive(x, y)));
  }
  return {worst <= kDtwTol, "200 pairs, max |diff| " + num(worst)};
}

GbtModel blob_model(std::size_t cols, std::uint64_t seed, int depth) {
  const auto d = test::make_blobs(400, cols, seed, 1.0, cols);
  GbtHyperParams hp;
  hp.n_rounds = 20;
  hp.max_depth = depth;
  hp.learning_rate = 0.3;
  hp.min_child_weight = 0.5;
  return train(d.view(), hp, seed);
}

Outcome tree_shap_oracle() {
  std::mt19937_64 rng(1003);
  std::normal_distribution<double> n(0.0, 1.5);
  double worst_oracle = 0.0;
  for (std::size_t cols = 1; cols <= 5; ++cols) {
    const auto m = blob_model(cols, 1000 + cols, 4);
    for (int k = 0; k < 20; ++k) {
      std::vector<double> x(cols);
      for (auto& v : x) v = n(rng);
      const auto phi = tree_shap(m, x);
      for (std::size_t c = 0; c < kNumClasses; ++c) {
        const auto o = test::shapley_bruteforce(m, c, x);
        for (std::size_t j = 0; j < cols; ++j) worst_oracle = std::max(worst_oracle, std::abs(phi[c][j] - o[j]));
      }
    }
  }
  const auto m = blob_model(8, 1010, 6);
  const auto base = shap_base_values(m);
  double worst_local = 0.0;
  for (int k = 0; k < 100; ++k) {
    std::vector<double> x(8);
    for (auto& v : x) v = n(rng);
    const auto phi = tree_shap(m, x);
    const auto margins = m.margins(x);
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      double s = base[c];
      for (double v : phi[c]) s += v;
      worst_local = std::max(worst_local, std::abs(s - margins[c]));
    }
  }
  return {worst_oracle <= kShapTol && worst_local <= kLocalAccuracyTol,
          "oracle max |diff| " + num(worst_oracle) + " (1-5 features), local accuracy max |diff| " + num(worst_local) +
              " (100 x 3)"};
}

Outcome metric_oracles() {
  std::mt19937_64 rng(1004);
  std::uniform_int_distribution<std::size_t> cell(0, 60);
  double worst_mcc = 0.0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t tp = cell(rng), fn = cell(rng), fp = cell(rng), tn = cell(rng);
    const std::array<std::array<std::size_t, 2>, 2> c2{{{tp, fn}, {fp, tn}}};
    ConfusionMatrix c3;
    c3.counts = {{{tp, fn, 0}, {fp, tn, 0}, {0, 0, 0}}};
    const double ref = test::mcc_binary(static_cast<double>(tp), static_cast<double>(fn), static_cast<double>(fp),
                                        static_cast<double>(tn));
    worst_mcc = std::max({worst_mcc, std::abs(mcc_square(c2) - ref), std::abs(mcc(c3) - ref)});
  }
  std::uniform_int_distribution<int> level(0, 19);
  std::bernoulli_distribution b(0.35);
  double worst_auc = 0.0;
  for (int t = 0; t < 200; ++t) {
    std::vector<std::uint8_t> pos(100);
    std::vector<double> s(100);
    for (std::size_t i = 0; i < 100; ++i) {
      pos[i] = b(rng);
      s[i] = level(rng) + (pos[i] ? 3.0 : 0.0);
    }
    const double ref = test::auc_pairs(pos, s);
    if (std::isnan(ref)) continue;
    worst_auc = std::max(worst_auc, std::abs(roc_curve(pos, s).auc - ref));
  }
  const auto holm = holm_bonferroni(std::vector<double>{0.01, 0.04, 0.03});
  const bool holm_ok =
      std::abs(holm[0] - 0.03) < kMetricTol && std::abs(holm[1] - 0.06) < kMetricTol && std::abs(holm[2] - 0.06) < kMetricTol;
  const double wp = wilcoxon_signed_rank(std::vector<double>{1.5, 2.5, 3.5, 4.5, 5.5}, std::vector<double>{1, 2, 3, 4, 5}).p;
  const bool ok = worst_mcc <= kMetricTol && worst_auc <= kMetricTol && holm_ok && wp == 0.0625;
  return {ok, "MCC max |diff| " + num(worst_mcc) + ", AUC max |diff| " + num(worst_auc) + ", Holm [" + num(holm[0]) + ", " +
                  num(holm[1]) + ", " + num(holm[2]) + "], Wilcoxon p " + num(wp, "%.17g")};
}

Outcome weights() {
  std::vector<Label> y;
  y.insert(y.end(), 3451, Label::Calib);
  y.insert(y.end(), 4884, Label::MovNoTC);
  y.insert(y.end(), 1665, Label::MovTC);
  std::shuffle(y.begin(), y.end(), std::mt19937_64(1005));
  const auto w = balanced_weights(y);
  std::array<double, kNumClasses> mass{};
  for (std::size_t i = 0; i < y.size(); ++i) mass[static_cast<std::size_t>(label_index(y[i]))] += w[i];
  const double spread = *std::max_element(mass.begin(), mass.end()) - *std::min_element(mass.begin(), mass.end());
  return {spread <= kWeightTol, "class masses " + num(mass[0], "%.9f") + " / " + num(mass[1], "%.9f") + " / " +
                                    num(mass[2], "%.9f") + ", spread " + num(spread)};
}

Outcome streaming() {
  SynthConfig sc;
  sc.n_subjects = 3;
  sc.duration_s = 90.0;
  sc.seed = 1006;
  auto recs = generate_synthetic(sc);
  recs[2].meta.arm = ArmSide::Left;
  const auto fm = build_dataset(recs, {}, {});
  GbtHyperParams hp;
  hp.n_rounds = 20;
  hp.max_depth = 4;
  const auto w = balanced_weights(fm.labels);
  const auto model = train({fm.values, fm.rows(), fm.cols, fm.labels, w, fm.names}, hp, 1);
  double worst = 0.0;
  std::size_t total = 0;
  bool labels_match = true, counts_match = true;
  for (const auto& rec : recs) {
    const auto batch = batch_predict(model, rec, {}, {});
    Engine eng(model, {CalibConfig{}, WindowSpec{}, should_mirror({}, rec.meta)});
    RecordingSource src(rec);
    const auto rr = replay(eng, src);
    counts_match = counts_match && rr.predictions.size() == batch.size();
    for (std::size_t k = 0; k < std::min(batch.size(), rr.predictions.size()); ++k) {
      labels_match = labels_match && rr.predictions[k].label == batch[k].label && rr.predictions[k].t == batch[k].t;
      for (std::size_t c = 0; c < kNumClasses; ++c)
        worst = std::max(worst, std::abs(rr.predictions[k].probs[c] - batch[k].probs[c]));
    }
    total += batch.size();
  }
  Recording small = recs[0];
  small.wrist.resize(120);
  small.trunk.resize(120);
  small.labels.resize(120);
  Engine eng(model, {});
  RecordingSource src(small);
  const std::size_t n120 = replay(eng, src).predictions.size();
  const bool ok = worst < kStreamTol && labels_match && counts_match && n120 == 5;
  return {ok, std::to_string(total) + " windows over 3 recordings, max |dp| " + num(worst) + ", N=120 gives " +
                  std::to_string(n120) + " predictions"};
}

Outcome monotone_loss() {
  int bad = 0;
  double worst_rise = 0.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    std::mt19937_64 rng(2000 + s);
    const std::size_t cols = 2 + s % 7;
    auto d = test::make_blobs(150 + 20 * s, cols, 3000 + s, 0.3 + 0.1 * static_cast<double>(s % 5), 1 + s % cols);
    if (s % 2) d.weights = balanced_weights(d.labels);
    GbtHyperParams hp;
    hp.n_rounds = 40;
    hp.max_depth = 2 + static_cast<int>(s % 5);
    hp.learning_rate = 0.5;
    hp.min_child_weight = 0.0;
    hp.l2_lambda = s % 3 == 0 ? 0.0 : 1.0;
    const auto m = train(d.view(), hp, s);
    for (std::size_t r = 1; r < m.train_loss.size(); ++r) {
      const double rise = m.train_loss[r] - m.train_loss[r - 1];
      if (rise > 0.0) {
        ++bad;
        worst_rise = std::max(worst_rise, rise);
      }
    }
  }
  return {bad == 0, "20 datasets x 40 rounds, increasing rounds " + std::to_string(bad) + ", max rise " + num(worst_rise)};
}

struct Benchmark {
  bool ran = false;
  std::string error;
  double seconds = 0.0;
  json report;
  fs::path data;
  fs::path root;
};

Benchmark run_benchmark() {
  Benchmark b;
  const char* env = std::getenv("CTM_ACCEPTANCE_DIR");
  b.root = env && *env ? fs::path(env) : fs::temp_directory_path() / "ctm_acceptance";
  fs::remove_all(b.root);
  fs::create_directories(b.root);
  const std::string cli = CTM_CLI_PATH;
  const std::string cfg = std::string(CTM_TEST_DATA) + "/benchmark.json";
  const auto t0 = Clock::now();
  const auto s = test::run_cmd(cli + " synthgen --config " + cfg + " --run-dir " + (b.root / "synth").string());
  if (s.code != 0) {
    b.error = "synthgen exit " + std::to_string(s.code);
    return b;
  }
  b.data = b.root / "synth" / "recordings";
  const auto e = test::run_cmd(cli + " eval-loso --config " + cfg + " --data " + b.data.string() + " --run-dir " +
                               (b.root / "eval").string());
  b.seconds = seconds_since(t0);
  if (e.code != 0) {
    b.error = "eval-loso exit " + std::to_string(e.code);
    return b;
  }
  b.report = json::parse(test::read_file(b.root / "eval" / "report.json"));
  b.ran = true;
  return b;
}

Outcome benchmark_outcome(const Benchmark& b) {
  if (!b.ran) return {false, b.error};
  const auto& main = b.report["main"];
  const double f1 = main["pooled"]["macro_f1"].get<double>();
  const double f1_mean = main["summary"]["macro_f1"]["mean"].get<double>();
  double min_auc = 1.0, min_f1 = 1.0;
  std::string min_at;
  for (const auto& f : main["folds"]) {
    min_f1 = std::min(min_f1, f["metrics"]["macro_f1"].is_null() ? 0.0 : f["metrics"]["macro_f1"].get<double>());
    for (const auto& [cls, v] : f["metrics"]["classes"].items()) {
      const double a = v["auc"].is_null() ? 0.0 : v["auc"].get<double>();
      if (a < min_auc) {
        min_auc = a;
        min_at = f["subject"].get<std::string>() + "/" + cls;
      }
    }
  }
  const double control = b.report["control"]["pooled"]["macro_auc"].get<double>();
  const bool ok = f1 >= kMinMacroF1 && min_f1 >= kMinMacroF1 && min_auc >= kMinFoldAuc && control >= kControlAucLo &&
                  control <= kControlAucHi && b.seconds <= kBenchmarkSeconds;
  return {ok, "pooled macro-F1 " + num(f1, "%.4f") + " (fold mean " + num(f1_mean, "%.4f") + ", min " + num(min_f1, "%.4f") +
                  "), min per-fold AUC " +
                  num(min_auc, "%.4f") + " at " + min_at + ", control macro AUC " + num(control, "%.4f") + ", " +
                  num(b.seconds, "%.0f") + " s"};
}

Outcome latency(const Benchmark& b) {
  if (!b.ran) return {false, "benchmark did not run: " + b.error};
  const std::string cli = CTM_CLI_PATH;
  const std::string cfg = std::string(CTM_TEST_DATA) + "/benchmark.json";
  const auto t = test::run_cmd(cli + " train --config " + cfg + " --data " + b.data.string() + " --hp-from " +
                               (b.root / "eval" / "report.json").string() + " --run-dir " + (b.root / "train").string());
  if (t.code != 0) return {false, "train exit " + std::to_string(t.code)};
  const auto r = test::run_cmd(cli + " replay --config " + cfg + " --model " + (b.root / "train" / "model.json").string() +
                               " --recording " + (b.data / "S01.csv").string() + " --run-dir " +
                               (b.root / "replay").string());
  if (r.code != 0) return {false, "replay exit " + std::to_string(r.code)};
  const json lat = json::parse(test::read_file(b.root / "replay" / "latency.json"));
  const double e2e = lat["end_to_end"]["mean_ms"].get<double>();
  const double rtf = lat["realtime_factor"].get<double>();
  bool stages = true;
  for (const char* s : {"preprocess", "features", "inference", "end_to_end"})
    stages = stages && lat.contains(s) && lat[s].contains("mean_ms") && lat[s].contains("max_ms");
  const bool ok = e2e < kLatencyBudgetMs && rtf > 1.0 && stages && lat["n"].get<std::size_t>() > 0;
  return {ok, "mean end-to-end " + num(e2e, "%.3f") + " ms (preprocess " +
                  num(lat["preprocess"]["mean_ms"].get<double>(), "%.3f") + ", features " +
                  num(lat["features"]["mean_ms"].get<double>(), "%.3f") + ", inference " +
                  num(lat["inference"]["mean_ms"].get<double>(), "%.3f") + "), max " +
                  num(lat["end_to_end"]["max_ms"].get<double>(), "%.3f") + " ms, realtime factor " + num(rtf, "%.0f") +
                  "x over " + std::to_string(lat["n"].get<std::size_t>()) + " predictions"};
}

}  // namespace

int main() {
  report("calibration", calibration);
  report("dtw-oracle", dtw);
  report("treeshap-oracle", tree_shap_oracle);
  report("metric-oracles", metric_oracles);
  report("balanced-weights", weights);
  report("streaming-batch-equivalence", streaming);
  const Benchmark bench = run_benchmark();
  report("synthetic-benchmark", [&] { return benchmark_outcome(bench); });
  report("realtime-latency", [&] { return latency(bench); });
  report("boosting-monotone-loss", monotone_loss);
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
