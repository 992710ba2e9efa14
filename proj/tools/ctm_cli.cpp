// ctm: command-line front end.
//
//   ctm synthgen   write synthetic labelled recordings
//   ctm train      fit a model on labelled recordings
//   ctm eval-loso  nested leave-one-subject-out evaluation
//   ctm predict    batch-label one recording
//   ctm replay     stream one recording through the real-time engine
//   ctm explain    SHAP separation ranking
//   ctm report     render a JSON report as text
//
// Outputs go to <base>/<command>-<hash> where base is $CTM_OUTPUT_DIR, the
// config's output_dir, or ./runs, and hash covers the command and resolved
// configuration. --run-dir overrides the whole path. Exit codes: 0 ok,
// 2 config error, 3 data error, 4 internal error.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ctm/ctm.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitInternal = 4;

struct Common {
  std::string config;
  std::string run_dir;
  std::optional<std::uint64_t> seed;
};

struct Context {
  std::string command;
  ctm::RunConfig cfg;
  fs::path run_dir;
  json inputs = json::object();
  std::vector<std::string> outputs;
};

ctm::RunConfig base_config(const Common& c) {
  ctm::RunConfig cfg = c.config.empty() ? ctm::parse_run_config(json::object()) : ctm::load_run_config(c.config);
  if (c.seed) {
    cfg.seed = *c.seed;
    cfg.synth.seed = *c.seed;
  }
  return cfg;
}

fs::path resolve_run_dir(const Common& c, const std::string& command, const ctm::RunConfig& cfg, const json& inputs) {
  if (!c.run_dir.empty()) return c.run_dir;
  fs::path base = "runs";
  if (const char* env = std::getenv("CTM_OUTPUT_DIR"); env && *env) base = env;
  else if (cfg.output_dir) base = *cfg.output_dir;
  json key = {{"command", command}, {"config", ctm::to_json(cfg)}, {"inputs", inputs}};
  key["config"].erase("output_dir");
  const std::string h = ctm::detail::hex64(ctm::detail::fnv1a64(key.dump())).substr(0, 12);
  return base / (command + "-" + h);
}

void begin(Context& ctx, const Common& c) {
  ctx.cfg.validate();
  ctx.run_dir = resolve_run_dir(c, ctx.command, ctx.cfg, ctx.inputs);
  fs::create_directories(ctx.run_dir);
}

fs::path out_path(Context& ctx, const std::string& name) {
  ctx.outputs.push_back(name);
  return ctx.run_dir / name;
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw ctm::DataError("cannot write " + p.string());
  out << s;
}

void finish(const Context& ctx, const json& extra = json::object()) {
  json m = {{"command", ctx.command},
            {"config", ctm::to_json(ctx.cfg)},
            {"inputs", ctx.inputs},
            {"outputs", ctx.outputs},
            {"model_format", ctm::kModelVersion}};
  for (const auto& [k, v] : extra.items()) m[k] = v;
  write_text(ctx.run_dir / "manifest.json", m.dump(2) + "\n");
  std::cout << ctx.run_dir.string() << '\n';
}

std::vector<ctm::Recording> load_dir(const std::string& dir) {
  if (dir.empty()) throw ctm::ConfigError("no data directory given (--data or paths.data_dir)");
  if (!fs::is_directory(dir)) throw ctm::DataError("not a directory: " + dir);
  std::vector<ctm::Recording> recs;
  for (const auto& p : ctm::list_recordings(dir)) recs.push_back(ctm::load_recording(p));
  if (recs.empty()) throw ctm::DataError("no recordings in " + dir);
  return recs;
}

std::string require(const std::string& flag, const std::string& cfg_value, const char* what) {
  const std::string v = flag.empty() ? cfg_value : flag;
  if (v.empty()) throw ctm::ConfigError(std::string("no ") + what + " given");
  return v;
}

std::string fmt(double v) { return ctm::detail::format_double(v); }

void write_predictions_header(std::ostream& out, bool with_truth, bool with_subject) {
  if (with_subject) out << "subject,";
  out << "t,";
  if (with_truth) out << "true,";
  out << "pred";
  for (auto l : ctm::kAllLabels) out << ",p_" << ctm::label_name(l);
  out << '\n';
}

// --- synthgen --------------------------------------------------------------

struct SynthArgs {
  std::optional<int> subjects;
  std::optional<double> duration, intensity;
};

int cmd_synthgen(const Common& c, const SynthArgs& a) {
  Context ctx{"synthgen", base_config(c)};
  if (a.subjects) ctx.cfg.synth.n_subjects = *a.subjects;
  if (a.duration) ctx.cfg.synth.duration_s = *a.duration;
  if (a.intensity) ctx.cfg.synth.intensity = *a.intensity;
  begin(ctx, c);
  const auto recs = ctm::generate_synthetic(ctx.cfg.synth);
  fs::create_directories(ctx.run_dir / "recordings");
  for (const auto& r : recs) ctm::save_recording(out_path(ctx, "recordings/" + r.meta.subject + ".csv"), r);
  finish(ctx, {{"recordings_dir", (ctx.run_dir / "recordings").string()}});
  return kExitOk;
}

// --- train -----------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string hp_from;
};

int cmd_train(const Common& c, const TrainArgs& a) {
  Context ctx{"train", base_config(c)};
  const std::string data = require(a.data, ctx.cfg.paths.data_dir, "data directory");
  ctx.inputs = {{"data", fs::absolute(data).string()}};
  if (!a.hp_from.empty()) {
    std::ifstream in(a.hp_from);
    if (!in) throw ctm::DataError("cannot open " + a.hp_from);
    const json r = json::parse(in);
    const json& hp = r.contains("main") ? r["main"]["consolidated_hp"] : r.at("consolidated_hp");
    ctx.cfg.train.hp = ctm::hp_from_json(hp);
    ctx.inputs["hp_from"] = fs::absolute(a.hp_from).string();
  }
  begin(ctx, c);
  const auto recs = load_dir(data);
  const auto fm = ctm::build_dataset(recs, ctx.cfg.calib, ctx.cfg.window);
  std::vector<std::size_t> all(fm.rows());
  std::iota(all.begin(), all.end(), 0);
  const auto rows = ctm::stride_rows(fm, all, ctx.cfg.train.row_stride);
  const auto model = ctm::fit_rows(fm, rows, ctx.cfg.train.hp, ctx.cfg.seed, {ctx.cfg.loso.max_bins, ctx.cfg.loso.balanced});
  ctm::save_model(model, out_path(ctx, "model.json"));

  std::ofstream out(out_path(ctx, "train_predictions.csv"));
  write_predictions_header(out, true, true);
  for (std::size_t i = 0; i < fm.rows(); ++i) {
    const auto p = ctm::predict_proba(model, fm.row(i));
    out << fm.group_names[static_cast<std::size_t>(fm.groups[i])] << ',' << fmt(fm.times[i]) << ','
        << ctm::label_name(fm.labels[i]) << ',' << ctm::label_name(ctm::label_from_index(ctm::argmax(p)));
    for (double v : p) out << ',' << fmt(v);
    out << '\n';
  }
  finish(ctx, {{"train_rows", rows.size()}, {"final_train_loss", model.train_loss.back()}});
  return kExitOk;
}

// --- eval-loso -------------------------------------------------------------

struct EvalArgs {
  std::string data;
  std::optional<int> iters;
  std::optional<unsigned> jobs;
  std::optional<std::size_t> train_stride, search_stride;
  bool no_control = false;
};

int cmd_eval(const Common& c, const EvalArgs& a) {
  Context ctx{"eval-loso", base_config(c)};
  if (a.iters) ctx.cfg.search.iters = *a.iters;
  if (a.jobs) ctx.cfg.loso.jobs = *a.jobs;
  if (a.train_stride) ctx.cfg.loso.train_stride = *a.train_stride;
  if (a.search_stride) ctx.cfg.search.row_stride = *a.search_stride;
  if (a.no_control) ctx.cfg.loso.shuffle_control = false;
  const std::string data = require(a.data, ctx.cfg.paths.data_dir, "data directory");
  ctx.inputs = {{"data", fs::absolute(data).string()}};
  begin(ctx, c);
  const auto recs = load_dir(data);
  const auto fm = ctm::build_dataset(recs, ctx.cfg.calib, ctx.cfg.window);
  std::cerr << "dataset: " << fm.rows() << " windows, " << fm.cols << " features, " << fm.group_names.size()
            << " subjects\n";

  auto opt = ctx.cfg.loso_options();
  opt.on_fold = [](std::size_t i, const ctm::FoldResult& f) {
    std::fprintf(stderr, "fold %zu %s: macro-F1 %.4f macro AUC %.4f\n", i + 1, f.subject.c_str(), f.metrics.macro_f1,
                 f.metrics.macro_auc);
  };
  const auto main = ctm::run_loso(fm, opt);
  json report = {{"main", ctm::to_json(main)}, {"control", nullptr}};
  std::ofstream roc(out_path(ctx, "roc.csv"));
  ctm::write_roc_csv(roc, main);
  if (ctx.cfg.loso.shuffle_control) {
    // The control keeps the main run's consolidated configuration and skips
    // the inner search.
    auto copt = opt;
    copt.shuffle_labels = true;
    copt.fixed_hp = main.consolidated;
    copt.on_fold = nullptr;
    const auto control = ctm::run_loso(fm, copt);
    report["control"] = ctm::to_json(control);
    std::ofstream croc(out_path(ctx, "control_roc.csv"));
    ctm::write_roc_csv(croc, control);
    std::fprintf(stderr, "shuffled control: macro AUC %.4f\n", control.pooled.macro_auc);
  }
  write_text(out_path(ctx, "report.json"), report.dump(2) + "\n");
  const std::string text = ctm::render_report(report);
  write_text(out_path(ctx, "report.txt"), text);
  std::cerr << text;
  finish(ctx);
  return kExitOk;
}

// --- predict / replay ------------------------------------------------------

struct RecArgs {
  std::string model;
  std::string recording;
};

int cmd_predict(const Common& c, const RecArgs& a) {
  Context ctx{"predict", base_config(c)};
  const std::string mp = require(a.model, ctx.cfg.paths.model, "model");
  const std::string rp = require(a.recording, ctx.cfg.paths.recording, "recording");
  ctx.inputs = {{"model", fs::absolute(mp).string()}, {"recording", fs::absolute(rp).string()}};
  begin(ctx, c);
  const auto model = ctm::load_model(mp);
  const auto rec = ctm::load_recording(rp);
  const auto preds = ctm::batch_predict(model, rec, ctx.cfg.calib, ctx.cfg.window);
  std::ofstream out(out_path(ctx, "predictions.csv"));
  write_predictions_header(out, false, true);
  for (const auto& p : preds) {
    out << rec.meta.subject << ',' << fmt(p.t) << ',' << ctm::label_name(p.label);
    for (double v : p.probs) out << ',' << fmt(v);
    out << '\n';
  }
  finish(ctx, {{"predictions", preds.size()}});
  return kExitOk;
}

int cmd_replay(const Common& c, const RecArgs& a) {
  Context ctx{"replay", base_config(c)};
  const std::string mp = require(a.model, ctx.cfg.paths.model, "model");
  const std::string rp = require(a.recording, ctx.cfg.paths.recording, "recording");
  ctx.inputs = {{"model", fs::absolute(mp).string()}, {"recording", fs::absolute(rp).string()}};
  begin(ctx, c);
  const auto model = ctm::load_model(mp);
  const auto rec = ctm::load_recording(rp);
  ctm::validate(rec);
  ctm::EngineOptions eo{ctx.cfg.calib, ctx.cfg.window, ctm::should_mirror(ctx.cfg.calib, rec.meta)};
  ctm::Engine engine(model, eo);
  ctm::RecordingSource src(rec);
  const auto r = ctm::replay(engine, src);
  std::ofstream out(out_path(ctx, "predictions.csv"));
  out << "t,pred";
  for (auto l : ctm::kAllLabels) out << ",p_" << ctm::label_name(l);
  out << ",preprocess_ms,features_ms,inference_ms,total_ms\n";
  for (const auto& p : r.predictions) {
    out << fmt(p.t) << ',' << ctm::label_name(p.label);
    for (double v : p.probs) out << ',' << fmt(v);
    out << ',' << fmt(p.latency.preprocess_ms) << ',' << fmt(p.latency.features_ms) << ',' << fmt(p.latency.inference_ms)
        << ',' << fmt(p.latency.total_ms) << '\n';
  }
  json lat = ctm::to_json(r.latency);
  lat["wall_seconds"] = r.wall_seconds;
  lat["stream_seconds"] = r.stream_seconds;
  lat["realtime_factor"] = r.wall_seconds > 0.0 ? r.stream_seconds / r.wall_seconds : 0.0;
  write_text(out_path(ctx, "latency.json"), lat.dump(2) + "\n");
  std::cerr << ctm::render_report(lat);
  finish(ctx, {{"predictions", r.predictions.size()}});
  return kExitOk;
}

// --- explain ---------------------------------------------------------------

struct ExplainArgs {
  std::string model;
  std::string data;
  std::optional<std::size_t> background;
};

int cmd_explain(const Common& c, const ExplainArgs& a) {
  Context ctx{"explain", base_config(c)};
  if (a.background) ctx.cfg.explain.background = *a.background;
  const std::string mp = require(a.model, ctx.cfg.paths.model, "model");
  const std::string data = require(a.data, ctx.cfg.paths.data_dir, "data directory");
  ctx.inputs = {{"model", fs::absolute(mp).string()}, {"data", fs::absolute(data).string()}};
  begin(ctx, c);
  const auto model = ctm::load_model(mp);
  const auto fm = ctm::build_dataset(load_dir(data), ctx.cfg.calib, ctx.cfg.window);
  const auto rows = ctm::sample_background(fm.labels, ctx.cfg.explain.background, ctx.cfg.seed);
  const auto att = ctm::explain_rows(model, fm, rows);
  const auto ranking = ctm::separation_scores(att);
  std::ofstream out(out_path(ctx, "ranking.csv"));
  ctm::write_ranking_csv(out, ranking);
  json shares = json::object();
  for (const auto& [t, v] : ranking.share) shares[std::string(ctm::origin_tag_name(t))] = v;
  json summary = {{"samples", rows.size()}, {"origin_share", shares}, {"base_values", att.base}};
  write_text(out_path(ctx, "explain.json"), summary.dump(2) + "\n");
  std::fprintf(stderr, "top %zu features by mean |dSHAP| (TC - NoTC) over %zu samples\n", ctx.cfg.explain.top_k,
               rows.size());
  for (std::size_t i = 0; i < std::min(ctx.cfg.explain.top_k, ranking.entries.size()); ++i) {
    const auto& e = ranking.entries[i];
    std::fprintf(stderr, "  %3zu  %-40s %.6f  %s\n", e.rank, e.feature.c_str(), e.score,
                 std::string(ctm::origin_tag_name(e.origin)).c_str());
  }
  for (const auto& [t, v] : ranking.share)
    std::fprintf(stderr, "  share %-12s %.1f%%\n", std::string(ctm::origin_tag_name(t)).c_str(), 100.0 * v);
  finish(ctx);
  return kExitOk;
}

// --- report ----------------------------------------------------------------

int cmd_report(const std::string& input) {
  std::ifstream in(input);
  if (!in) throw ctm::DataError("cannot open " + input);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ctm::DataError(input + ": " + e.what());
  }
  std::cout << ctm::render_report(j);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Compensatory trunk movement detection from wrist and trunk IMUs"};
  app.require_subcommand(1);
  Common common;
  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "Run configuration JSON");
    sub->add_option("--run-dir", common.run_dir, "Exact output directory");
    sub->add_option("--seed", common.seed, "Master seed");
  };

  SynthArgs sa;
  auto* synth = app.add_subcommand("synthgen", "Write synthetic labelled recordings");
  add_common(synth);
  synth->add_option("--subjects", sa.subjects);
  synth->add_option("--duration", sa.duration, "Seconds per subject");
  synth->add_option("--intensity", sa.intensity, "Compensation intensity in [0, 1]");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Fit a model on labelled recordings");
  add_common(train);
  train->add_option("--data", ta.data, "Directory of recording CSVs");
  train->add_option("--hp-from", ta.hp_from, "Use the consolidated hyperparameters of an eval-loso report");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval-loso", "Nested leave-one-subject-out evaluation");
  add_common(eval);
  eval->add_option("--data", ea.data, "Directory of recording CSVs");
  eval->add_option("--iters", ea.iters, "Search iterations per fold");
  eval->add_option("--jobs", ea.jobs, "Parallel outer folds");
  eval->add_option("--train-stride", ea.train_stride, "Keep every n-th training window");
  eval->add_option("--search-stride", ea.search_stride, "Keep every n-th window in the inner search");
  eval->add_flag("--no-control", ea.no_control, "Skip the shuffled-label control");

  RecArgs pa;
  auto* predict = app.add_subcommand("predict", "Batch-label one recording");
  add_common(predict);
  predict->add_option("--model", pa.model);
  predict->add_option("--recording", pa.recording);

  RecArgs ra;
  auto* replay = app.add_subcommand("replay", "Stream one recording through the real-time engine");
  add_common(replay);
  replay->add_option("--model", ra.model);
  replay->add_option("--recording", ra.recording);

  ExplainArgs xa;
  auto* explain = app.add_subcommand("explain", "SHAP separation ranking");
  add_common(explain);
  explain->add_option("--model", xa.model);
  explain->add_option("--data", xa.data, "Directory of recording CSVs");
  explain->add_option("--background", xa.background, "Number of stratified samples to explain");

  std::string report_input;
  auto* report = app.add_subcommand("report", "Render a JSON report as text");
  report->add_option("input", report_input, "report.json or latency.json")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*synth) return cmd_synthgen(common, sa);
    if (*train) return cmd_train(common, ta);
    if (*eval) return cmd_eval(common, ea);
    if (*predict) return cmd_predict(common, pa);
    if (*replay) return cmd_replay(common, ra);
    if (*explain) return cmd_explain(common, xa);
    if (*report) return cmd_report(report_input);
  } catch (const ctm::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ctm::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const ctm::ModelError& e) {
    std::cerr << "model error: " << e.what() << '\n';
    return kExitData;
  } catch (const json::exception& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
  return kExitInternal;
}
