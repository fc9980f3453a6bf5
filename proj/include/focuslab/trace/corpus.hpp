// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "focuslab/trace/validate.hpp"

namespace focuslab::trace {

using json = nlohmann::json;

/// One corpus line: {id, question, guidance, response, image_size, boxes?, mode?, options?, expect?}.
struct CorpusRecord {
  std::string id;
  std::string question;
  std::string guidance;
  std::string response;
  std::array<double, 2> image_size{1, 1};
  std::vector<box::BoxNorm<double>> boxes;  // empty: take boxes from the guidance markers
  std::optional<Mode> mode;
  std::optional<ValidationOptions> options;
  std::optional<bool> expect_pass;
};

inline CorpusRecord record_from_json(const json& j) {
  CorpusRecord r;
  try {
    r.id = j.at("id").get<std::string>();
    r.question = j.value("question", "");
    r.guidance = j.value("guidance", "");
    r.response = j.at("response").get<std::string>();
    if (j.contains("image_size")) r.image_size = j.at("image_size").get<std::array<double, 2>>();
    if (j.contains("boxes"))
      for (const auto& b : j.at("boxes")) {
        const auto v = b.get<std::array<double, 4>>();
        r.boxes.push_back({v[0], v[1], v[2], v[3]});
      }
    if (j.contains("mode")) r.mode = mode_from_string(j.at("mode").get<std::string>());
    if (j.contains("options")) {
      ValidationOptions o;
      o.require_verb = j.at("options").value("require_verb", false);
      o.ban_colors = j.at("options").value("ban_colors", false);
      r.options = o;
    }
    if (j.contains("expect")) {
      const auto e = j.at("expect").get<std::string>();
      if (e != "pass" && e != "fail") fail(ErrorCode::format, "expect must be \"pass\" or \"fail\"");
      r.expect_pass = e == "pass";
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::format, std::string("corpus record: ") + e.what());
  }
  return r;
}

struct RecordVerdict {
  std::string id;
  Mode mode = Mode::vgr;
  ValidationReport report;
  std::optional<bool> expect_pass;
  bool agrees() const { return !expect_pass || *expect_pass == report.pass(); }
};

inline RecordVerdict judge(const CorpusRecord& r, Mode default_mode, const ValidationOptions& default_opts) {
  RecordVerdict v;
  v.id = r.id;
  v.mode = r.mode.value_or(default_mode);
  v.report = validate_document(v.mode, r.response, r.guidance, r.options.value_or(default_opts));
  v.expect_pass = r.expect_pass;
  return v;
}

inline json to_json(const RecordVerdict& v) {
  json viol = json::array();
  for (const auto& x : v.report.violations)
    viol.push_back({{"rule", x.rule_id}, {"message", x.message}, {"range", {x.range.begin, x.range.end}}});
  json j = {{"id", v.id}, {"mode", std::string(to_string(v.mode))}, {"pass", v.report.pass()}, {"violations", viol}};
  if (v.expect_pass) j["agrees"] = v.agrees();
  return j;
}

/// {total, passed, failed, failures_by_rule, agreement?}
inline json summarize(const std::vector<RecordVerdict>& verdicts) {
  std::size_t passed = 0, expected = 0, agreed = 0;
  std::map<std::string, std::size_t> by_rule;
  for (const auto& v : verdicts) {
    if (v.report.pass()) ++passed;
    std::set<std::string> rules;
    for (const auto& x : v.report.violations) rules.insert(x.rule_id);
    for (const auto& r : rules) ++by_rule[r];
    if (v.expect_pass) {
      ++expected;
      if (v.agrees()) ++agreed;
    }
  }
  json s = {{"total", verdicts.size()},
            {"passed", passed},
            {"failed", verdicts.size() - passed},
            {"failures_by_rule", by_rule}};
  if (expected) s["agreement"] = {{"labelled", expected}, {"agreed", agreed}};
  return s;
}

/// Boxes for pair emission: explicit record boxes, else the guidance markers.
inline std::vector<SotMarker> label_markers(const CorpusRecord& r) {
  if (r.boxes.empty()) return count_sot_markers(r.guidance);
  std::vector<SotMarker> out;
  for (std::size_t i = 0; i < r.boxes.size(); ++i) {
    SotMarker m;
    m.coords = r.boxes[i].as_array();
    m.range = {i, i + 1};
    m.pixel = std::any_of(m.coords.begin(), m.coords.end(), [](double c) { return c > 1.0; });
    out.push_back(m);
  }
  return out;
}

inline json to_json(const TrainingPair& p) {
  return {{"trace_id", p.trace_id},
          {"focus", p.focus_text},
          {"box", {p.target_box.x1, p.target_box.y1, p.target_box.x2, p.target_box.y2}},
          {"image_size", p.image_size}};
}

}  // namespace focuslab::trace
