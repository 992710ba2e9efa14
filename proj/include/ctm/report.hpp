#pragma once

// Plain-text rendering of evaluation and latency JSON reports.

#include <cstdio>
#include <sstream>
#include <string>

#include <json.hpp>

#include "ctm/ingest.hpp"

namespace ctm {

namespace detail {

inline std::string fmt_num(const nlohmann::json& v, const char* f = "%.4f") {
  if (!v.is_number()) return "n/a";
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v.get<double>());
  return buf;
}

inline std::string pad(std::string s, std::size_t w) {
  if (s.size() < w) s.append(w - s.size(), ' ');
  return s;
}

inline void render_metrics(std::ostringstream& o, const nlohmann::json& m) {
  o << "  " << pad("class", 10) << pad("precision", 11) << pad("recall", 9) << pad("f1", 9) << pad("auc", 9)
    << "support\n";
  for (auto l : kAllLabels) {
    const auto& c = m["classes"][std::string(label_name(l))];
    o << "  " << pad(std::string(label_name(l)), 10) << pad(fmt_num(c["precision"]), 11) << pad(fmt_num(c["recall"]), 9)
      << pad(fmt_num(c["f1"]), 9) << pad(fmt_num(c["auc"]), 9) << c["support"].get<std::size_t>() << '\n';
  }
  o << "  macro-F1 " << fmt_num(m["macro_f1"]) << "  MCC " << fmt_num(m["mcc"]) << "  macro AUC "
    << fmt_num(m["macro_auc"]) << "  n " << m["n"].get<std::size_t>() << '\n';
  o << "  confusion (rows true, columns predicted, row-normalized):\n";
  const auto& rn = m["confusion"]["row_normalized"];
  for (std::size_t i = 0; i < rn.size(); ++i) {
    o << "    " << pad(std::string(label_name(label_from_index(static_cast<int>(i)))), 10);
    for (const auto& v : rn[i]) o << pad(fmt_num(v, "%.3f"), 8);
    o << '\n';
  }
}

inline void render_loso(std::ostringstream& o, const nlohmann::json& r) {
  o << pad("subject", 10) << pad("macro-F1", 10) << pad("MCC", 9) << pad("AUC", 9) << pad("inner", 9) << "n\n";
  for (const auto& f : r["folds"]) {
    const auto& m = f["metrics"];
    o << pad(f["subject"].get<std::string>(), 10) << pad(fmt_num(m["macro_f1"]), 10) << pad(fmt_num(m["mcc"]), 9)
      << pad(fmt_num(m["macro_auc"]), 9) << pad(fmt_num(f["inner_score"]), 9) << m["n"].get<std::size_t>() << '\n';
  }
  o << "\nsummary (mean ± sample std over subjects)\n";
  for (const auto& [k, s] : r["summary"].items())
    o << "  " << pad(k, 16) << fmt_num(s["mean"]) << " ± " << fmt_num(s["std"]) << '\n';
  o << "\npooled\n";
  render_metrics(o, r["pooled"]);
  o << "\nconsolidated hyperparameters: " << r["consolidated_hp"].dump() << '\n';
}

}  // namespace detail

/// Renders a report JSON: either an eval-loso report ("main" plus optional
/// "control") or a replay latency report.
inline std::string render_report(const nlohmann::json& j) {
  std::ostringstream o;
  if (j.contains("main")) {
    o << "== LOSO evaluation ==\n";
    detail::render_loso(o, j["main"]);
    if (j.contains("control") && !j["control"].is_null()) {
      o << "\n== shuffled-label control ==\n";
      detail::render_loso(o, j["control"]);
    }
  } else if (j.contains("folds")) {
    detail::render_loso(o, j);
  } else if (j.contains("end_to_end")) {
    o << "latency over " << j["n"].get<std::size_t>() << " predictions (" << j["samples"].get<std::uint64_t>()
      << " samples, " << j["dropped"].get<std::uint64_t>() << " dropped)\n";
    o << "  " << detail::pad("stage", 12) << detail::pad("mean ms", 10) << detail::pad("std ms", 10) << "max ms\n";
    for (const char* s : {"preprocess", "features", "inference", "end_to_end"}) {
      const auto& v = j[s];
      o << "  " << detail::pad(s, 12) << detail::pad(detail::fmt_num(v["mean_ms"], "%.3f"), 10)
        << detail::pad(detail::fmt_num(v["std_ms"], "%.3f"), 10) << detail::fmt_num(v["max_ms"], "%.3f") << '\n';
    }
  } else {
    throw DataError("report: unrecognised JSON document");
  }
  return o.str();
}

}  // namespace ctm
