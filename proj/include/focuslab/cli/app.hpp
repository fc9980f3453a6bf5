// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdio>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "focuslab/attn/metrics.hpp"
#include "focuslab/autodiff/gradcheck.hpp"
#include "focuslab/condense/lab.hpp"
#include "focuslab/detector/train.hpp"
#include "focuslab/io/checkpoint.hpp"
#include "focuslab/io/config.hpp"
#include "focuslab/io/dataset.hpp"
#include "focuslab/io/files.hpp"
#include "focuslab/io/jsonl.hpp"
#include "focuslab/io/tensor_file.hpp"
#include "focuslab/trace/corpus.hpp"

namespace focuslab::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

struct Common {
  std::optional<std::string> config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";
};

struct Context {
  io::LoadedConfig lc;
  fs::path out;
  json prov;
  std::ostream* os = &std::cout;

  const io::RunConfig& cfg() const { return lc.config; }
  std::string csv_tag() const {
    return "# config_hash=" + lc.hash + " seed=" + std::to_string(lc.config.seed) +
           " tool_version=" + std::string(kToolVersion) + "\n";
  }
  void emit(const std::string& name, json j) const {
    j["provenance"] = prov;
    io::write_json(out / name, j);
  }
  void emit_csv(const std::string& name, const std::string& body) const { io::write_file(out / name, csv_tag() + body); }
};

namespace detail {

inline std::vector<double> parse_list(const std::string& s, std::size_t want, const char* what) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    double x = 0;
    if (!trace::detail::parse_number(tok, x)) fail(ErrorCode::usage, std::string(what) + ": bad number '" + tok + "'");
    v.push_back(x);
  }
  if (want && v.size() != want)
    fail(ErrorCode::usage, std::string(what) + " needs " + std::to_string(want) + " comma-separated numbers");
  return v;
}

inline box::BoxNorm<double> parse_box(const std::string& s) {
  const auto v = parse_list(s, 4, "box");
  box::BoxNorm<double> b{v[0], v[1], v[2], v[3]};
  box::require_valid(b, "--box");
  return b;
}

inline std::vector<std::size_t> parse_ids(const std::string& s) {
  std::vector<std::size_t> out;
  for (double d : parse_list(s, 0, "id list")) {
    if (d < 0 || d != static_cast<double>(static_cast<std::size_t>(d)))
      fail(ErrorCode::usage, "ids must be non-negative integers");
    out.push_back(static_cast<std::size_t>(d));
  }
  return out;
}

inline std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline json report_json(const detector::EvalReport& r) {
  return {{"mean_iou", r.mean_iou},
          {"median_iou", r.median_iou},
          {"giou_mean", r.giou_mean},
          {"grounding_error_rate", r.grounding_error_rate},
          {"tau", r.tau},
          {"n", r.samples.size()}};
}

inline std::vector<box::BoxNorm<double>> oracle_boxes(const std::vector<attn::HeatMap>& heats, double frac) {
  std::vector<box::BoxNorm<double>> out;
  for (const auto& h : heats) out.push_back(synth::threshold_box_oracle(h, frac));
  return out;
}

/// Heatmaps (grid frame) and targets of one manifest split.
inline std::pair<std::vector<attn::HeatMap>, std::vector<box::BoxNorm<double>>> manifest_heatmaps(
    const fs::path& manifest, const std::string& split) {
  std::pair<std::vector<attn::HeatMap>, std::vector<box::BoxNorm<double>>> out;
  for (const auto& row : io::read_jsonl(manifest)) {
    if (row.value("split", "") != split) continue;
    out.first.push_back(io::heatmap_from_file(io::read_tensor(manifest.parent_path() / row.at("heatmap").get<std::string>())));
    out.second.push_back(io::box_from_json(row.at("target")));
  }
  if (out.first.empty()) fail(ErrorCode::domain, "split '" + split + "' of " + manifest.string() + " is empty");
  return out;
}

inline std::vector<synth::SynthSample> manifest_attention(const fs::path& manifest, const std::string& split) {
  std::vector<synth::SynthSample> out;
  for (const auto& row : io::read_jsonl(manifest)) {
    if (row.value("split", "") != split) continue;
    if (!row.contains("attn")) fail(ErrorCode::format, "manifest rows lack attention tensors (generate with --attn)");
    synth::SynthSample s;
    s.attn = io::attention_from_file(io::read_tensor(manifest.parent_path() / row.at("attn").get<std::string>()));
    s.target = io::box_from_json(row.at("target"));
    out.push_back(std::move(s));
  }
  if (out.empty()) fail(ErrorCode::domain, "split '" + split + "' of " + manifest.string() + " is empty");
  return out;
}

inline std::string hist_csv(const std::vector<double>& base, const std::vector<double>& post) {
  std::string s = "layer,baseline_frac,post_frac\n";
  for (std::size_t l = 0; l < base.size(); ++l)
    s += std::to_string(l) + "," + fmt(base[l]) + "," + fmt(post.empty() ? 0.0 : post[l]) + "\n";
  return s;
}

inline json condense_report_json(const condense::CondenseReport& r) {
  json mon = json::array();
  for (const auto& m : r.monitor) mon.push_back({{"step", m.step}, {"heldout_l_ac", m.heldout_l_ac}});
  return {{"designated_layer", r.designated_layer},
          {"baseline_hist", r.baseline_hist},
          {"post_hist", r.post_hist},
          {"baseline_share", r.baseline_share},
          {"post_share", r.post_share},
          {"heldout_n", r.heldout_n},
          {"alpha", r.alpha},
          {"two_proportion_p", r.z_p_value},
          {"diverged", r.diverged},
          {"message", r.message},
          {"monitor", mon}};
}

}  // namespace detail

// ---- attn -------------------------------------------------------------

struct AttnStatsArgs {
  std::string tensor, box, cells, queries;
};

inline int attn_stats(const Context& ctx, const AttnStatsArgs& a) {
  const auto t = io::attention_from_file(io::read_tensor(a.tensor));
  if (a.box.empty() == a.cells.empty()) fail(ErrorCode::usage, "give exactly one of --box or --cells");
  const attn::Region region = a.box.empty()
                                  ? attn::Region::from_indices(detail::parse_ids(a.cells), t.patches())
                                  : attn::box_to_region(detail::parse_box(a.box), t.hp, t.wp);
  const auto q = a.queries.empty() ? t.all_queries() : detail::parse_ids(a.queries);
  const auto curve = attn::concentration_curve(t, region, q);
  const std::size_t peak = attn::peak_layer(t, region, q);
  std::string csv = "layer,concentration\n";
  for (std::size_t l = 0; l < curve.size(); ++l) csv += std::to_string(l) + "," + detail::fmt(curve[l]) + "\n";
  ctx.emit_csv("attn_stats.csv", csv);
  json j = {{"layers", t.layers}, {"region_size", region.size()}, {"queries", q}, {"curve", curve}, {"peak_layer", peak}};
  ctx.emit("attn_stats.json", j);
  *ctx.os << "peak_layer " << peak << " concentration " << detail::fmt(curve[peak]) << "\n";
  return kExitOk;
}

struct PeakHistArgs {
  std::string manifest, split = "test", queries;
};

inline int attn_peak_hist(const Context& ctx, const PeakHistArgs& a) {
  const auto samples = detail::manifest_attention(a.manifest, a.split);
  std::vector<attn::AttentionTensor> ts;
  std::vector<attn::Region> rs;
  for (const auto& s : samples) {
    ts.push_back(*s.attn);
    rs.push_back(attn::box_to_region(s.target, s.attn->hp, s.attn->wp));
  }
  const auto q = a.queries.empty() ? std::vector<std::size_t>{} : detail::parse_ids(a.queries);
  const auto hist = attn::peak_hist(ts, rs, q);
  const std::size_t modal = static_cast<std::size_t>(std::max_element(hist.begin(), hist.end()) - hist.begin());
  std::string csv = "layer,fraction\n";
  for (std::size_t l = 0; l < hist.size(); ++l) csv += std::to_string(l) + "," + detail::fmt(hist[l]) + "\n";
  ctx.emit_csv("peak_hist.csv", csv);
  ctx.emit("peak_hist.json", {{"n", ts.size()}, {"hist", hist}, {"modal_layer", modal}, {"modal_share", hist[modal]}});
  *ctx.os << "modal_layer " << modal << " share " << detail::fmt(hist[modal]) << " n " << ts.size() << "\n";
  return kExitOk;
}

// ---- trace ------------------------------------------------------------

struct TraceArgs {
  std::string corpus, mode = "vgr";
  bool check_expect = false;
};

inline int trace_validate(const Context& ctx, const TraceArgs& a) {
  const trace::Mode mode = trace::mode_from_string(a.mode);
  std::vector<trace::RecordVerdict> verdicts;
  std::vector<json> rows;
  for (const auto& j : io::read_jsonl(a.corpus)) {
    verdicts.push_back(trace::judge(trace::record_from_json(j), mode, ctx.cfg().trace));
    rows.push_back(trace::to_json(verdicts.back()));
  }
  io::write_jsonl(ctx.out / "trace_verdicts.jsonl", rows);
  json summary = trace::summarize(verdicts);
  ctx.emit("trace_summary.json", summary);
  *ctx.os << summary.dump() << "\n";
  if (a.check_expect) {
    if (!summary.contains("agreement")) fail(ErrorCode::validation, "corpus has no authored verdicts");
    return summary["agreement"]["agreed"] == summary["agreement"]["labelled"] ? kExitOk : kExitFailure;
  }
  return summary["failed"].get<std::size_t>() == 0 ? kExitOk : kExitFailure;
}

inline int trace_pairs(const Context& ctx, const TraceArgs& a) {
  const trace::Mode mode = trace::mode_from_string(a.mode);
  std::vector<json> pairs;
  std::size_t skipped = 0, records = 0;
  for (const auto& j : io::read_jsonl(a.corpus)) {
    ++records;
    const auto rec = trace::record_from_json(j);
    const auto verdict = trace::judge(rec, mode, ctx.cfg().trace);
    if (!verdict.report.pass()) {
      ++skipped;
      continue;
    }
    const auto t = trace::parse_trace(rec.response);
    try {
      for (const auto& p : trace::emit_training_pairs(t, trace::label_markers(rec), rec.image_size, verdict.mode, rec.id))
        pairs.push_back(trace::to_json(p));
    } catch (const Error&) {
      ++skipped;
    }
  }
  io::write_jsonl(ctx.out / "pairs.jsonl", pairs);
  ctx.emit("pairs_summary.json", {{"records", records}, {"pairs", pairs.size()}, {"skipped", skipped}});
  *ctx.os << "pairs " << pairs.size() << " skipped " << skipped << "\n";
  return skipped == 0 ? kExitOk : kExitFailure;
}

// ---- synth ------------------------------------------------------------

struct SynthArgs {
  std::optional<std::size_t> n;
  bool attn = false;
};

inline int synth_gen(const Context& ctx, const SynthArgs& a) {
  const auto& c = ctx.cfg();
  const std::size_t n = a.n.value_or(c.data.n);
  const auto scfg = c.synth_seeded();
  const auto manifest = io::gen_dataset(ctx.out / "dataset", n, scfg, c.data.split, a.attn, ctx.prov);
  std::array<std::size_t, 3> counts{};
  std::vector<attn::HeatMap> test_heats;
  std::vector<box::BoxNorm<double>> test_gts;
  for (const auto& row : manifest) {
    const auto split = row["split"].get<std::string>();
    for (std::size_t k = 0; k < 3; ++k)
      if (split == io::kSplitNames[k]) ++counts[k];
  }
  json j = {{"n", n}, {"train", counts[0]}, {"val", counts[1]}, {"test", counts[2]}, {"with_attention", a.attn},
            {"config", ctx.lc.effective}};
  if (counts[2]) {
    const auto [heats, gts] = detail::manifest_heatmaps(ctx.out / "dataset" / "manifest.jsonl", "test");
    const auto r = detector::evaluate_predictions(detail::oracle_boxes(heats, c.data.oracle_frac), gts, c.tau);
    j["threshold_oracle"] = detail::report_json(r);
    j["threshold_oracle"]["frac"] = c.data.oracle_frac;
  }
  ctx.emit("synth_meta.json", j);
  *ctx.os << "generated " << n << " samples (" << counts[0] << "/" << counts[1] << "/" << counts[2] << ")\n";
  return kExitOk;
}

// ---- detector ---------------------------------------------------------

struct TrainArgs {
  std::string manifest, resume;
};

inline int detector_train(const Context& ctx, const TrainArgs& a) {
  const auto& c = ctx.cfg();
  const auto data = io::load_split(a.manifest, "train", c.detector.canvas);
  detector::TrainState state = a.resume.empty() ? detector::TrainState::fresh(c.detector, c.seed, c.train.lr)
                                                : io::load_train_state(a.resume);
  if (state.step > c.train.steps) fail(ErrorCode::config, "checkpoint is already past train.steps");
  auto tc = c.train_seeded();
  tc.steps = c.train.steps - state.step;
  const fs::path ckdir = ctx.out / "checkpoints";
  auto hook = [&](const detector::TrainState& s) {
    char name[48];
    std::snprintf(name, sizeof name, "step_%06llu.ckpt", static_cast<unsigned long long>(s.step));
    io::save_train_state(ckdir / name, s, ctx.prov);
  };
  const auto result = detector::train(state, data, tc, hook);
  io::save_train_state(ctx.out / "checkpoint.ckpt", state, ctx.prov);
  ctx.emit_csv("metrics.csv", io::metrics_csv(result.log));
  json j = {{"step", state.step},
            {"param_count", state.params.scalar_count()},
            {"train_n", data.size()},
            {"diverged", result.diverged},
            {"message", result.message},
            {"final", {{"l1", state.running.l1}, {"giou_term", state.running.giou_term}, {"total", state.running.total}}}};
  ctx.emit("train_summary.json", j);
  if (result.diverged) fail(ErrorCode::numeric, result.message);
  *ctx.os << "trained to step " << state.step << " loss " << detail::fmt(state.running.total) << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint, manifest, split = "test";
};

inline int detector_eval(const Context& ctx, const EvalArgs& a) {
  const auto& c = ctx.cfg();
  auto state = io::load_train_state(a.checkpoint);
  const auto data = io::load_split(a.manifest, a.split, state.model.canvas);
  const auto r = detector::evaluate(state.params, state.model, data, c.tau);
  const auto [heats, gts] = detail::manifest_heatmaps(a.manifest, a.split);
  const auto oracle = detector::evaluate_predictions(detail::oracle_boxes(heats, c.data.oracle_frac), gts, c.tau);
  std::string csv = "index,iou,giou,pred_x1,pred_y1,pred_x2,pred_y2,gt_x1,gt_y1,gt_x2,gt_y2\n";
  for (std::size_t i = 0; i < r.samples.size(); ++i) {
    const auto& s = r.samples[i];
    csv += std::to_string(i) + "," + detail::fmt(s.iou) + "," + detail::fmt(s.giou);
    for (double v : s.pred.as_array()) csv += "," + detail::fmt(v);
    for (double v : s.gt.as_array()) csv += "," + detail::fmt(v);
    csv += "\n";
  }
  ctx.emit_csv("eval_samples.csv", csv);
  json j = detail::report_json(r);
  j["split"] = a.split;
  j["step"] = state.step;
  j["threshold_oracle"] = detail::report_json(oracle);
  ctx.emit("eval.json", j);
  *ctx.os << "mean_iou " << detail::fmt(r.mean_iou) << " oracle " << detail::fmt(oracle.mean_iou) << "\n";
  return kExitOk;
}

struct GradArgs {
  std::string checkpoint;
  std::size_t samples = 200;
  double step = 1e-5;
  double tol = 1e-4;
  std::uint64_t index = 0;
  std::vector<std::string> prefixes;
};

inline json gradcheck_json(const ad::GradCheckReport& r) {
  json per = json::array();
  for (const auto& e : r.tensors)
    per.push_back({{"name", e.name},
                   {"checked", e.checked},
                   {"skipped", e.skipped},
                   {"max_rel_err", e.max_rel_err},
                   {"worst_index", e.worst_index},
                   {"analytic", e.analytic},
                   {"numeric", e.numeric}});
  return {{"pass", r.pass},
          {"max_rel_err", r.max_rel_err},
          {"worst_param", r.worst_param},
          {"worst_index", r.worst_index},
          {"checked", r.checked},
          {"skipped", r.skipped},
          {"tensors", per}};
}

inline int detector_gradcheck(const Context& ctx, const GradArgs& a) {
  const auto& c = ctx.cfg();
  ad::ParamStore<double> params;
  detector::DetectorConfig model = c.detector;
  if (a.checkpoint.empty()) {
    params = detector::init_params<double>(model, sub_seed(c.seed, 0x1417));
  } else {
    auto st = io::load_train_state(a.checkpoint);
    model = st.model;
    params = st.params.cast<double>();
  }
  const auto sample = synth::gen_sample(c.synth_seeded(), a.index);
  const auto in = detector::build_input(sample.heatmap, model.canvas);
  const auto gt = detector::grid_to_canvas(sample.target, sample.heatmap.hp, sample.heatmap.wp, model.canvas);
  detector::DetectorGraph<double> net(params, model, 1);
  ad::Tensor<double> canvas({1, detector::kInputChannels, model.canvas, model.canvas},
                            std::vector<double>(in.planes.begin(), in.planes.end()));
  ad::Tensor<double> gtt({1, 4}, {gt.x1, gt.y1, gt.x2, gt.y2});
  ad::GradCheckOptions opt;
  opt.sample_count = a.samples;
  opt.step = a.step;
  opt.tolerance = a.tol;
  opt.seed = sub_seed(c.seed, 0x9c);
  opt.prefixes = a.prefixes;
  const auto r = ad::grad_check(net.g, net.loss, {{"canvas", std::cref(canvas)}, {"gt", std::cref(gtt)}}, opt);
  json j = gradcheck_json(r);
  j["sample_index"] = a.index;
  j["step"] = a.step;
  j["tolerance"] = a.tol;
  ctx.emit("gradcheck.json", j);
  *ctx.os << (r.pass ? "PASS" : "FAIL") << " max_rel_err " << detail::fmt(r.max_rel_err) << " (" << r.worst_param
          << "[" << r.worst_index << "]) checked " << r.checked << " skipped " << r.skipped << "\n";
  return r.pass ? kExitOk : kExitFailure;
}

// ---- condense ---------------------------------------------------------

struct SelectArgs {
  std::string manifest, split = "val";
};

inline int condense_select(const Context& ctx, const SelectArgs& a) {
  const auto& c = ctx.cfg();
  const auto samples = a.manifest.empty()
                           ? condense::split_samples(c.synth_seeded(), condense::Split::val, 0, c.condense.val_n)
                           : detail::manifest_attention(a.manifest, a.split);
  std::vector<attn::AttentionTensor> ts;
  std::vector<attn::Region> rs;
  std::vector<double> mean(samples.front().attn->layers, 0.0);
  for (const auto& s : samples) {
    ts.push_back(*s.attn);
    rs.push_back(attn::box_to_region(s.target, s.attn->hp, s.attn->wp));
    const auto curve = attn::concentration_curve(ts.back(), rs.back(), ts.back().all_queries());
    for (std::size_t l = 0; l < mean.size(); ++l) mean[l] += curve[l] / static_cast<double>(samples.size());
  }
  const std::size_t layer = condense::select_designated_layer(ts, rs);
  ctx.emit("select_layer.json", {{"designated_layer", layer}, {"n", samples.size()}, {"mean_concentration", mean}});
  *ctx.os << "designated_layer " << layer << "\n";
  return kExitOk;
}

inline int condense_train(const Context& ctx) {
  const auto& c = ctx.cfg();
  const auto scfg = c.synth_seeded();
  condense::MockAttnModel model(scfg.layer_count, scfg.grid_h, scfg.grid_w, c.condense.cue_width, c.seed);
  const auto rep = condense::train_condense(model, scfg, c.condense, c.loss, c.seed);
  ctx.emit("condense_report.json", detail::condense_report_json(rep));
  ctx.emit_csv("condense_hist.csv", detail::hist_csv(rep.baseline_hist, rep.post_hist));
  std::string log = "step,l_ac,total\n";
  for (const auto& r : rep.log)
    log += std::to_string(r.step) + "," + detail::fmt(r.l_ac) + "," + detail::fmt(r.total) + "\n";
  ctx.emit_csv("condense_log.csv", log);
  std::vector<io::NamedTensor> ts;
  for (const auto& e : model.params.entries())
    ts.push_back({e.name, e.tensor->dims, std::vector<float>(e.tensor->data.begin(), e.tensor->data.end())});
  io::write_file(ctx.out / "condense_model.ckpt",
                 io::encode_checkpoint(ts, {{"kind", "condense"}, {"designated_layer", rep.designated_layer},
                                            {"provenance", ctx.prov}}));
  if (rep.diverged) fail(ErrorCode::numeric, rep.message);
  *ctx.os << "layer " << rep.designated_layer << " share " << detail::fmt(rep.baseline_share) << " -> "
          << detail::fmt(rep.post_share) << "\n";
  return kExitOk;
}

inline int condense_report(const Context& ctx, const std::string& report) {
  const json r = io::read_json(report);
  std::vector<double> base, post;
  try {
    base = r.at("baseline_hist").get<std::vector<double>>();
    post = r.at("post_hist").get<std::vector<double>>();
  } catch (const json::exception& e) {
    fail(ErrorCode::format, report + ": " + e.what());
  }
  if (base.size() != post.size()) fail(ErrorCode::format, report + ": histogram lengths differ");
  ctx.emit_csv("condense_hist.csv", detail::hist_csv(base, post));
  *ctx.os << "layer,baseline_frac,post_frac\n";
  for (std::size_t l = 0; l < base.size(); ++l)
    *ctx.os << l << "," << detail::fmt(base[l]) << "," << detail::fmt(post[l]) << "\n";
  return kExitOk;
}

// ---- pipeline ---------------------------------------------------------

struct PipelineArgs {
  std::string tensor, checkpoint, gt, queries, image_size = "448,448";
  std::optional<std::size_t> layer;
  std::size_t window = 1;
};

inline int pipeline_run(const Context& ctx, const PipelineArgs& a) {
  const auto& c = ctx.cfg();
  const auto t = io::attention_from_file(io::read_tensor(a.tensor));
  const std::optional<std::size_t> layer = a.layer ? a.layer : c.condense.designated_layer;
  if (!layer) fail(ErrorCode::usage, "no designated layer: pass --layer or set condense.designated_layer");
  const auto q = a.queries.empty() ? t.all_queries() : detail::parse_ids(a.queries);
  const auto heat = attn::aggregate_window(t, attn::layer_window(*layer, a.window, t.layers), q);
  auto state = io::load_train_state(a.checkpoint);
  const auto in = detector::build_input(heat, state.model.canvas);
  const auto raw = detector::predict(state.params, state.model, in.planes.data(), 1);
  const auto pred = detector::canvas_to_grid(raw[0], heat.hp, heat.wp, state.model.canvas);
  const auto size = detail::parse_list(a.image_size, 2, "image size");
  const auto crop = box::crop_zoom(pred, static_cast<int>(size[0]), static_cast<int>(size[1]), c.crop.min_side,
                                   c.crop.zoom_target);
  json j = {{"layer", *layer},
            {"window", a.window},
            {"box", io::box_json(pred)},
            {"crop",
             {{"source_rect", io::box_json(crop.source_rect)},
              {"rect_px", {crop.rect_px.x1, crop.rect_px.y1, crop.rect_px.x2, crop.rect_px.y2}},
              {"output_width", crop.output_width},
              {"output_height", crop.output_height},
              {"scale_factor", crop.scale_factor}}}};
  if (!a.gt.empty()) {
    const auto gt = detail::parse_box(a.gt);
    j["iou"] = box::iou(pred, gt);
    j["giou"] = box::giou(pred, gt);
    j["grounding_error"] = box::classify_grounding_error(pred, gt, c.tau);
  }
  ctx.emit("pipeline.json", j);
  *ctx.os << j.dump() << "\n";
  return kExitOk;
}

// ---- entry ------------------------------------------------------------

inline void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "JSON config file (default: $CFT_CONFIG)");
  sub->add_option("--set", c.sets, "Override a config key, e.g. --set train.steps=500");
  sub->add_option("--seed", c.seed, "Master seed");
  sub->add_option("--out-dir", c.out_dir, "Artifact directory")->capture_default_str();
}

/// Runs one command line. Returns the process exit code.
inline int run(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"focuslab: where-to-look attention lab", "focuslab"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));
  Common common;
  std::function<int(const Context&)> action;

  auto leaf = [&](CLI::App* parent, const std::string& name, const std::string& help) {
    CLI::App* s = parent->add_subcommand(name, help);
    add_common(s, common);
    return s;
  };

  AttnStatsArgs stats;
  PeakHistArgs ph;
  TraceArgs tr;
  SynthArgs sy;
  TrainArgs ta;
  EvalArgs ea;
  GradArgs ga;
  SelectArgs sa;
  PipelineArgs pa;
  std::string report_path;

  auto* attn_cmd = app.add_subcommand("attn", "Attention-tensor analysis")->require_subcommand(1);
  auto* s_stats = leaf(attn_cmd, "stats", "Per-layer concentration curve on a region");
  s_stats->add_option("--tensor", stats.tensor, "Attention tensor file")->required();
  s_stats->add_option("--box", stats.box, "Region box x1,y1,x2,y2 (normalized)");
  s_stats->add_option("--cells", stats.cells, "Region as patch indices");
  s_stats->add_option("--queries", stats.queries, "Query token ids (default: all)");
  s_stats->callback([&] { action = [&](const Context& c) { return attn_stats(c, stats); }; });
  auto* s_ph = leaf(attn_cmd, "peak-hist", "Peak-layer histogram over a dataset split");
  s_ph->add_option("--manifest", ph.manifest, "Dataset manifest with attention tensors")->required();
  s_ph->add_option("--split", ph.split)->capture_default_str();
  s_ph->add_option("--queries", ph.queries, "Query token ids (default: all)");
  s_ph->callback([&] { action = [&](const Context& c) { return attn_peak_hist(c, ph); }; });

  auto* trace_cmd = app.add_subcommand("trace", "Reasoning-trace validation and distillation")->require_subcommand(1);
  auto* s_val = leaf(trace_cmd, "validate", "Validate a JSONL trace corpus");
  s_val->add_option("--corpus", tr.corpus)->required();
  s_val->add_option("--mode", tr.mode, "vgr | singlepass | recrop")->capture_default_str();
  s_val->add_flag("--check-expect", tr.check_expect, "Exit 0 iff verdicts match the corpus 'expect' labels");
  s_val->callback([&] { action = [&](const Context& c) { return trace_validate(c, tr); }; });
  auto* s_pairs = leaf(trace_cmd, "pairs", "Emit (FOCUS, box) training pairs from valid traces");
  s_pairs->add_option("--corpus", tr.corpus)->required();
  s_pairs->add_option("--mode", tr.mode, "vgr | singlepass | recrop")->capture_default_str();
  s_pairs->callback([&] { action = [&](const Context& c) { return trace_pairs(c, tr); }; });

  auto* synth_cmd = app.add_subcommand("synth", "Synthetic data")->require_subcommand(1);
  auto* s_gen = leaf(synth_cmd, "gen", "Generate a heatmap/box dataset");
  s_gen->add_option("--n", sy.n, "Sample count (default: data.n)");
  s_gen->add_flag("--attn", sy.attn, "Also write per-layer attention tensors");
  s_gen->callback([&] { action = [&](const Context& c) { return synth_gen(c, sy); }; });

  auto* det_cmd = app.add_subcommand("detector", "Heatmap-to-box detector")->require_subcommand(1);
  auto* s_train = leaf(det_cmd, "train", "Train on the train split of a manifest");
  s_train->add_option("--manifest", ta.manifest)->required();
  s_train->add_option("--resume", ta.resume, "Continue from a checkpoint");
  s_train->callback([&] { action = [&](const Context& c) { return detector_train(c, ta); }; });
  auto* s_eval = leaf(det_cmd, "eval", "Evaluate a checkpoint on a split");
  s_eval->add_option("--checkpoint", ea.checkpoint)->required();
  s_eval->add_option("--manifest", ea.manifest)->required();
  s_eval->add_option("--split", ea.split)->capture_default_str();
  s_eval->callback([&] { action = [&](const Context& c) { return detector_eval(c, ea); }; });
  auto* s_grad = leaf(det_cmd, "gradcheck", "Finite-difference check of the full detector in double precision");
  s_grad->add_option("--checkpoint", ga.checkpoint, "Check at a trained state (default: fresh init)");
  s_grad->add_option("--samples", ga.samples, "Coordinates per parameter tensor")->capture_default_str();
  s_grad->add_option("--step", ga.step)->capture_default_str();
  s_grad->add_option("--tol", ga.tol)->capture_default_str();
  s_grad->add_option("--index", ga.index, "Generator sample index")->capture_default_str();
  s_grad->add_option("--prefix", ga.prefixes, "Only parameters with this name prefix");
  s_grad->callback([&] { action = [&](const Context& c) { return detector_gradcheck(c, ga); }; });

  auto* cond_cmd = app.add_subcommand("condense", "Attention condensation lab")->require_subcommand(1);
  auto* s_sel = leaf(cond_cmd, "select-layer", "Pick the layer with the highest mean concentration");
  s_sel->add_option("--manifest", sa.manifest, "Manifest with attention tensors (default: generator val split)");
  s_sel->add_option("--split", sa.split)->capture_default_str();
  s_sel->callback([&] { action = [&](const Context& c) { return condense_select(c, sa); }; });
  auto* s_ctrain = leaf(cond_cmd, "train", "Train the mock attention model and report peak-layer histograms");
  s_ctrain->callback([&] { action = [&](const Context& c) { return condense_train(c); }; });
  auto* s_rep = leaf(cond_cmd, "report", "Render a condense report as a histogram CSV");
  s_rep->add_option("--report", report_path)->required();
  s_rep->callback([&] { action = [&](const Context& c) { return condense_report(c, report_path); }; });

  auto* pipe_cmd = app.add_subcommand("pipeline", "End-to-end tensor -> box -> crop")->require_subcommand(1);
  auto* s_run = leaf(pipe_cmd, "run", "Designated-layer heatmap, detector box, CropSpec");
  s_run->add_option("--tensor", pa.tensor)->required();
  s_run->add_option("--checkpoint", pa.checkpoint)->required();
  s_run->add_option("--layer", pa.layer, "Layer to read (default: condense.designated_layer)");
  s_run->add_option("--window", pa.window, "Odd layer-window width")->capture_default_str();
  s_run->add_option("--queries", pa.queries, "Query token ids (default: all)");
  s_run->add_option("--gt", pa.gt, "Ground-truth box x1,y1,x2,y2 for an IoU report");
  s_run->add_option("--image-size", pa.image_size, "W,H of the source image")->capture_default_str();
  s_run->callback([&] { action = [&](const Context& c) { return pipeline_run(c, pa); }; });

  try {
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << kToolVersion << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "E:usage:" << e.what() << "\n" << app.help();
    return kExitUsage;
  }

  try {
    Context ctx;
    ctx.lc = io::load_config(common.config, common.sets, common.seed);
    ctx.out = common.out_dir;
    ctx.prov = io::provenance(ctx.lc);
    ctx.os = &out;
    io::DirLock lock(ctx.out);
    return action(ctx);
  } catch (const Error& e) {
    err << "E:" << to_string(e.code()) << ":" << e.what() << "\n";
    return e.code() == ErrorCode::usage || e.code() == ErrorCode::config ? kExitUsage : kExitFailure;
  } catch (const std::exception& e) {
    err << "E:internal:" << e.what() << "\n";
    return kExitFailure;
  }
}

inline int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(std::move(args));
}

}  // namespace focuslab::cli
