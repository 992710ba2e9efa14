#pragma once

// Run configuration: one JSON document with optional sections. Unknown keys
// are rejected. Every section is validated before any stage runs.
//
// {
//   "seed": 7,
//   "paths":   {"data_dir": "...", "model": "...", "recording": "...", "report": "..."},
//   "output_dir": "...",
//   "window":  {"length": 60, "hop": 15, "rate_hz": 120},
//   "calib":   {"tau": 1, "accel_tau": 0, "trunk_correction": false, "patient_pose": false,
//               "q_ref": [w, x, y, z], "trunk_threshold": 0.1, "arm": "right" | "left",
//               "wrist_bias": {"accel": [x, y, z], "gyro": [x, y, z]}, "trunk_bias": {...}},
//   "synth":   {"subjects": 10, "duration_s": 600, "intensity": 0.8, ...},
//   "search":  {"iters": 50, "k": 3, "row_stride": 1, "space": {"n_rounds": [lo, hi], ...}},
//   "loso":    {"train_stride": 1, "jobs": 1, "shuffle_control": true, "max_bins": 256, "balanced": true},
//   "train":   {"hp": {...}, "row_stride": 1},
//   "explain": {"background": 200, "top_k": 20}
// }

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <string>

#include <json.hpp>

#include "ctm/calib.hpp"
#include "ctm/error.hpp"
#include "ctm/features.hpp"
#include "ctm/gbt.hpp"
#include "ctm/loso.hpp"
#include "ctm/synth.hpp"

namespace ctm {

struct PathsConfig {
  std::string data_dir;
  std::string model;
  std::string recording;
  std::string report;
};

struct ExplainConfig {
  std::size_t background = 200;
  std::size_t top_k = 20;
};

struct TrainConfig {
  GbtHyperParams hp;
  std::size_t row_stride = 1;
};

struct LosoConfig {
  std::size_t train_stride = 1;
  unsigned jobs = 1;
  bool shuffle_control = true;
  int max_bins = 256;
  bool balanced = true;
};

struct SearchConfig {
  int iters = 50;
  int k = 3;
  std::size_t row_stride = 1;
  HpSpace space;
};

struct RunConfig {
  std::uint64_t seed = 7;
  PathsConfig paths;
  std::optional<std::string> output_dir;
  WindowSpec window;
  CalibConfig calib;
  SynthConfig synth;
  SearchConfig search;
  LosoConfig loso;
  TrainConfig train;
  ExplainConfig explain;

  void validate() const {
    window.validate();
    calib.validate();
    synth.validate();
    search.space.validate();
    if (search.iters < 1) throw ConfigError("search: iters must be >= 1");
    if (search.k < 2) throw ConfigError("search: k must be >= 2");
    if (search.row_stride < 1) throw ConfigError("search: row_stride must be >= 1");
    if (loso.train_stride < 1) throw ConfigError("loso: train_stride must be >= 1");
    if (loso.jobs < 1) throw ConfigError("loso: jobs must be >= 1");
    if (loso.max_bins < 2 || loso.max_bins > 256) throw ConfigError("loso: max_bins must be in [2, 256]");
    if (train.row_stride < 1) throw ConfigError("train: row_stride must be >= 1");
    train.hp.validate();
    if (explain.top_k < 1) throw ConfigError("explain: top_k must be >= 1");
  }

  LosoOptions loso_options() const {
    LosoOptions o;
    o.space = search.space;
    o.search.iters = search.iters;
    o.search.k = search.k;
    o.search.row_stride = search.row_stride;
    o.train_stride = loso.train_stride;
    o.seed = seed;
    o.fit = {loso.max_bins, loso.balanced};
    o.jobs = loso.jobs;
    return o;
  }
};

namespace detail {

inline void check_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed, std::string_view section) {
  if (!j.is_object()) throw ConfigError(std::string(section) + ": expected an object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || a == k;
    if (!ok) throw ConfigError(std::string(section) + ": unknown key '" + k + "'");
  }
}

template <class T>
void read(const nlohmann::json& j, const char* key, T& out, std::string_view section) {
  if (!j.contains(key)) return;
  try {
    j.at(key).get_to(out);
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string(section) + "." + key + ": wrong type");
  }
}

inline Vec3 read_vec3(const nlohmann::json& j, std::string_view what) {
  if (!j.is_array() || j.size() != 3) throw ConfigError(std::string(what) + ": expected [x, y, z]");
  try {
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string(what) + ": expected numbers");
  }
}

inline SensorBias read_bias(const nlohmann::json& j, std::string_view what) {
  check_keys(j, {"accel", "gyro"}, what);
  SensorBias b;
  if (j.contains("accel")) b.accel = read_vec3(j["accel"], std::string(what) + ".accel");
  if (j.contains("gyro")) b.gyro = read_vec3(j["gyro"], std::string(what) + ".gyro");
  return b;
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j) {
  using detail::check_keys;
  using detail::read;
  RunConfig c;
  check_keys(j, {"seed", "paths", "output_dir", "window", "calib", "synth", "search", "loso", "train", "explain"},
             "config");
  read(j, "seed", c.seed, "config");
  if (j.contains("output_dir")) c.output_dir = j["output_dir"].get<std::string>();
  if (j.contains("paths")) {
    const auto& p = j["paths"];
    check_keys(p, {"data_dir", "model", "recording", "report"}, "paths");
    read(p, "data_dir", c.paths.data_dir, "paths");
    read(p, "model", c.paths.model, "paths");
    read(p, "recording", c.paths.recording, "paths");
    read(p, "report", c.paths.report, "paths");
  }
  if (j.contains("window")) {
    const auto& w = j["window"];
    check_keys(w, {"length", "hop", "rate_hz"}, "window");
    read(w, "length", c.window.length, "window");
    read(w, "hop", c.window.hop, "window");
    read(w, "rate_hz", c.window.rate_hz, "window");
  }
  if (j.contains("calib")) {
    const auto& k = j["calib"];
    check_keys(k, {"tau", "accel_tau", "trunk_correction", "patient_pose", "q_ref", "trunk_threshold", "arm",
                   "wrist_bias", "trunk_bias"},
               "calib");
    read(k, "tau", c.calib.tau, "calib");
    read(k, "accel_tau", c.calib.accel_tau, "calib");
    read(k, "trunk_correction", c.calib.trunk_correction, "calib");
    read(k, "patient_pose", c.calib.patient_pose, "calib");
    read(k, "trunk_threshold", c.calib.trunk_threshold, "calib");
    if (k.contains("q_ref")) {
      const auto& q = k["q_ref"];
      if (!q.is_array() || q.size() != 4) throw ConfigError("calib.q_ref: expected [w, x, y, z]");
      c.calib.q_ref = {q[0].get<double>(), q[1].get<double>(), q[2].get<double>(), q[3].get<double>()};
    }
    if (k.contains("arm") && !k["arm"].is_null()) {
      try {
        c.calib.arm = parse_arm(k["arm"].get<std::string>());
      } catch (const std::exception&) {
        throw ConfigError("calib.arm: expected \"left\" or \"right\"");
      }
    }
    if (k.contains("wrist_bias")) c.calib.wrist_bias = detail::read_bias(k["wrist_bias"], "calib.wrist_bias");
    if (k.contains("trunk_bias")) c.calib.trunk_bias = detail::read_bias(k["trunk_bias"], "calib.trunk_bias");
  }
  if (j.contains("synth")) {
    const auto& s = j["synth"];
    check_keys(s, {"subjects", "duration_s", "intensity", "rate_hz", "accel_noise_std", "gyro_noise_std", "class_share",
                   "seed"},
               "synth");
    read(s, "subjects", c.synth.n_subjects, "synth");
    read(s, "duration_s", c.synth.duration_s, "synth");
    read(s, "intensity", c.synth.intensity, "synth");
    read(s, "rate_hz", c.synth.rate_hz, "synth");
    read(s, "accel_noise_std", c.synth.accel_noise_std, "synth");
    read(s, "gyro_noise_std", c.synth.gyro_noise_std, "synth");
    read(s, "class_share", c.synth.class_share, "synth");
    c.synth.seed = c.seed;
    read(s, "seed", c.synth.seed, "synth");
  } else {
    c.synth.seed = c.seed;
  }
  if (j.contains("search")) {
    const auto& s = j["search"];
    check_keys(s, {"iters", "k", "row_stride", "space"}, "search");
    read(s, "iters", c.search.iters, "search");
    read(s, "k", c.search.k, "search");
    read(s, "row_stride", c.search.row_stride, "search");
    if (s.contains("space")) {
      check_keys(s["space"],
                 {"n_rounds", "max_depth", "learning_rate", "min_child_weight", "l2_lambda", "subsample", "colsample"},
                 "search.space");
      try {
        c.search.space = hp_space_from_json(s["space"]);
      } catch (const nlohmann::json::exception&) {
        throw ConfigError("search.space: wrong type");
      }
    }
  }
  if (j.contains("loso")) {
    const auto& l = j["loso"];
    check_keys(l, {"train_stride", "jobs", "shuffle_control", "max_bins", "balanced"}, "loso");
    read(l, "train_stride", c.loso.train_stride, "loso");
    read(l, "jobs", c.loso.jobs, "loso");
    read(l, "shuffle_control", c.loso.shuffle_control, "loso");
    read(l, "max_bins", c.loso.max_bins, "loso");
    read(l, "balanced", c.loso.balanced, "loso");
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    check_keys(t, {"hp", "row_stride"}, "train");
    if (t.contains("hp")) {
      check_keys(t["hp"],
                 {"n_rounds", "max_depth", "learning_rate", "min_child_weight", "l2_lambda", "subsample", "colsample"},
                 "train.hp");
      try {
        c.train.hp = hp_from_json(t["hp"]);
      } catch (const nlohmann::json::exception&) {
        throw ConfigError("train.hp: wrong type");
      }
    }
    read(t, "row_stride", c.train.row_stride, "train");
  }
  if (j.contains("explain")) {
    const auto& e = j["explain"];
    check_keys(e, {"background", "top_k"}, "explain");
    read(e, "background", c.explain.background, "explain");
    read(e, "top_k", c.explain.top_k, "explain");
  }
  c.validate();
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return parse_run_config(j);
}

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
  j["seed"] = c.seed;
  j["paths"] = {{"data_dir", c.paths.data_dir},
                {"model", c.paths.model},
                {"recording", c.paths.recording},
                {"report", c.paths.report}};
  if (c.output_dir) j["output_dir"] = *c.output_dir;
  j["window"] = {{"length", c.window.length}, {"hop", c.window.hop}, {"rate_hz", c.window.rate_hz}};
  const auto vec = [](const Vec3& v) { return nlohmann::json::array({v.x, v.y, v.z}); };
  j["calib"] = {{"tau", c.calib.tau},
                {"accel_tau", c.calib.accel_tau},
                {"trunk_correction", c.calib.trunk_correction},
                {"patient_pose", c.calib.patient_pose},
                {"q_ref", {c.calib.q_ref.w, c.calib.q_ref.x, c.calib.q_ref.y, c.calib.q_ref.z}},
                {"trunk_threshold", c.calib.trunk_threshold},
                {"arm", c.calib.arm ? nlohmann::json(std::string(arm_name(*c.calib.arm))) : nlohmann::json(nullptr)},
                {"wrist_bias", {{"accel", vec(c.calib.wrist_bias.accel)}, {"gyro", vec(c.calib.wrist_bias.gyro)}}},
                {"trunk_bias", {{"accel", vec(c.calib.trunk_bias.accel)}, {"gyro", vec(c.calib.trunk_bias.gyro)}}}};
  j["synth"] = {{"subjects", c.synth.n_subjects},           {"duration_s", c.synth.duration_s},
                {"intensity", c.synth.intensity},           {"rate_hz", c.synth.rate_hz},
                {"accel_noise_std", c.synth.accel_noise_std}, {"gyro_noise_std", c.synth.gyro_noise_std},
                {"class_share", c.synth.class_share},       {"seed", c.synth.seed}};
  j["search"] = {{"iters", c.search.iters}, {"k", c.search.k}, {"row_stride", c.search.row_stride},
                 {"space", to_json(c.search.space)}};
  j["loso"] = {{"train_stride", c.loso.train_stride}, {"jobs", c.loso.jobs}, {"shuffle_control", c.loso.shuffle_control},
               {"max_bins", c.loso.max_bins},         {"balanced", c.loso.balanced}};
  j["train"] = {{"hp", to_json(c.train.hp)}, {"row_stride", c.train.row_stride}};
  j["explain"] = {{"background", c.explain.background}, {"top_k", c.explain.top_k}};
  return j;
}

}  // namespace ctm
