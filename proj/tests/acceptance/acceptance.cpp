// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// on the command line to run a subset, e.g. `focuslab_acceptance 1 9 10`.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "focuslab/attn/metrics.hpp"
#include "focuslab/autodiff/gradcheck.hpp"
#include "focuslab/box/geometry.hpp"
#include "focuslab/cli/app.hpp"
#include "focuslab/condense/lab.hpp"
#include "focuslab/core/rng.hpp"
#include "focuslab/detector/train.hpp"
#include "focuslab/io/config.hpp"
#include "focuslab/io/dataset.hpp"
#include "focuslab/io/files.hpp"
#include "focuslab/io/jsonl.hpp"
#include "focuslab/synth/generator.hpp"
#include "focuslab/trace/corpus.hpp"

using namespace focuslab;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Timer {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count(); }

 private:
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

std::string f(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

std::string sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

// ---- 1: concentration exactness ---------------------------------------------

Outcome metric_exactness() {
  Timer t;
  Rng rng(101);
  double worst = 0;
  for (int c = 0; c < 500; ++c) {
    const std::size_t hp = 1 + rng.index(32), wp = 1 + rng.index(32), n = hp * wp;
    attn::HeatMap uniform(hp, wp, std::vector<double>(n, 1.0 / static_cast<double>(n)));
    // every third configuration masks a random subset of cells (at least one stays valid)
    if (c % 3 == 2)
      for (std::size_t p = 0; p < n; ++p)
        if (p != 0 && rng.uniform() < 0.3) {
          uniform.mask[p] = 0;
          uniform.values[p] = 0.0;
        }
    std::vector<std::size_t> valid;
    for (std::size_t p = 0; p < n; ++p)
      if (uniform.mask[p]) valid.push_back(p);
    rng.shuffle(valid.begin(), valid.end());
    const std::size_t k = 1 + rng.index(valid.size());
    const auto region = attn::Region::from_indices({valid.begin(), valid.begin() + static_cast<std::ptrdiff_t>(k)}, n);
    worst = std::max(worst, std::abs(attn::concentration(uniform, region) - 1.0));

    attn::HeatMap confined = uniform;
    std::fill(confined.values.begin(), confined.values.end(), 0.0);
    for (std::size_t p : region.indices) confined.values[p] = rng.uniform(0.01, 1.0);
    const double want = static_cast<double>(valid.size()) / static_cast<double>(k);
    worst = std::max(worst, std::abs(attn::concentration(confined, region) - want) / want);
  }
  const double secs = t.seconds();
  return {worst <= 1e-6 && secs < 5.0, "500 configs, max err " + sci(worst) + ", " + f(secs, 2) + " s"};
}

// ---- 2: brute-force agreement -----------------------------------------------

Outcome brute_force() {
  Timer t;
  Rng rng(202);
  double worst = 0;
  std::size_t peak_mismatch = 0;
  for (int c = 0; c < 100; ++c) {
    const std::size_t L = 1 + rng.index(36), H = 1 + rng.index(8), Q = 1 + rng.index(16);
    std::size_t hp = 1 + rng.index(32), wp = 1 + rng.index(32);
    attn::AttentionTensor a(L, H, Q, hp, wp);
    const std::size_t P = hp * wp;
    for (float& w : a.weights) w = static_cast<float>(rng.uniform());
    std::vector<std::size_t> qids;
    for (std::size_t q = 0; q < Q; ++q)
      if (rng.uniform() < 0.5) qids.push_back(q);
    if (qids.empty()) qids.push_back(rng.index(Q));
    std::vector<std::size_t> cells;
    for (std::size_t p = 0; p < P; ++p)
      if (rng.uniform() < 0.2) cells.push_back(p);
    if (cells.empty()) cells.push_back(rng.index(P));
    const auto region = attn::Region::from_indices(cells, P);

    std::vector<double> s(L);
    for (std::size_t l = 0; l < L; ++l) {
      std::vector<double> oracle(P, 0.0);
      for (std::size_t p = 0; p < P; ++p) {
        double acc = 0;
        for (std::size_t q : qids)
          for (std::size_t h = 0; h < H; ++h) acc += a.weights[((l * H + h) * Q + q) * P + p];
        oracle[p] = acc / static_cast<double>(qids.size() * H);
      }
      const auto got = attn::aggregate_heatmap(a, l, qids);
      for (std::size_t p = 0; p < P; ++p) worst = std::max(worst, std::abs(got.values[p] - oracle[p]));
      double in = 0, all = 0;
      for (std::size_t p = 0; p < P; ++p) all += oracle[p];
      for (std::size_t p : cells) in += oracle[p];
      s[l] = (in / static_cast<double>(cells.size())) / (all / static_cast<double>(P));
    }
    std::size_t best = 0;
    for (std::size_t l = 0; l < L; ++l)
      if (s[l] > s[best]) best = l;
    if (attn::peak_layer(a, region, qids) != best) ++peak_mismatch;
  }
  const double secs = t.seconds();
  return {worst <= 1e-7 && peak_mismatch == 0 && secs < 60.0,
          "100 tensors, heatmap max err " + sci(worst) + ", peak mismatches " + std::to_string(peak_mismatch) + ", " +
              f(secs, 1) + " s"};
}

// ---- 3: geometry oracle -----------------------------------------------------

box::BoxNorm<double> random_box(Rng& rng) {
  const double x1 = rng.uniform(0, 0.95), y1 = rng.uniform(0, 0.95);
  return {x1, y1, rng.uniform(x1 + 0.01, 1.0), rng.uniform(y1 + 0.01, 1.0)};
}

// Jittered 1000x1000 rasterization of the enclosing box: one uniform point per cell.
std::pair<double, double> raster_oracle(const box::BoxNorm<double>& a, const box::BoxNorm<double>& b, Rng& rng) {
  const auto c = box::enclosing(a, b);
  const int n = 1000;
  const double dx = (c.x2 - c.x1) / n, dy = (c.y2 - c.y1) / n;
  long long in_a = 0, in_b = 0, both = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double x = c.x1 + (j + rng.uniform()) * dx, y = c.y1 + (i + rng.uniform()) * dy;
      const bool pa = x >= a.x1 && x < a.x2 && y >= a.y1 && y < a.y2;
      const bool pb = x >= b.x1 && x < b.x2 && y >= b.y1 && y < b.y2;
      in_a += pa;
      in_b += pb;
      both += pa && pb;
    }
  }
  const double uni = static_cast<double>(in_a + in_b - both), total = static_cast<double>(n) * n;
  const double iou = static_cast<double>(both) / uni;
  return {iou, iou - (total - uni) / total};
}

Outcome geometry_oracle() {
  Timer t;
  Rng boxes(303), mc(304);
  double worst_iou = 0, worst_giou = 0;
  std::size_t order_violations = 0;
  int pairs = 0;
  for (int k = 0; pairs < 1000; ++k) {
    const auto a = random_box(boxes);
    // a third of the pairs are overlapping perturbations of the first box
    const auto b = k % 3 == 0 ? box::clamp_unit(box::BoxNorm<double>{a.x1 + boxes.uniform(-0.05, 0.05),
                                                                    a.y1 + boxes.uniform(-0.05, 0.05),
                                                                    a.x2 + boxes.uniform(-0.05, 0.05),
                                                                    a.y2 + boxes.uniform(-0.05, 0.05)})
                              : random_box(boxes);
    if (!b.valid()) continue;
    ++pairs;
    const double i = box::iou(a, b), g = box::giou(a, b);
    const auto [mi, mg] = raster_oracle(a, b, mc);
    worst_iou = std::max(worst_iou, std::abs(i - mi));
    worst_giou = std::max(worst_giou, std::abs(g - mg));
    if (g < -1.0 || g > 1.0 || g > i) ++order_violations;
  }
  const double secs = t.seconds();
  return {worst_iou <= 1e-3 && worst_giou <= 1e-3 && order_violations == 0 && secs < 120.0,
          "1000 pairs x 1e6 samples, max |dIoU| " + sci(worst_iou) + ", max |dGIoU| " + sci(worst_giou) +
              ", range/order violations " + std::to_string(order_violations) + ", " + f(secs, 1) + " s"};
}

// ---- 4: full-detector gradcheck ---------------------------------------------

Outcome gradient_integrity() {
  Timer t;
  const io::RunConfig rc;
  const auto model = rc.detector;
  auto params = detector::init_params<double>(model, sub_seed(rc.seed, 0x1417));
  const auto sample = synth::gen_sample(rc.synth_seeded(), 0);
  const auto in = detector::build_input(sample.heatmap, model.canvas);
  const auto gt = detector::grid_to_canvas(sample.target, sample.heatmap.hp, sample.heatmap.wp, model.canvas);
  detector::DetectorGraph<double> net(params, model, 1);
  ad::Tensor<double> canvas({1, detector::kInputChannels, model.canvas, model.canvas},
                            std::vector<double>(in.planes.begin(), in.planes.end()));
  ad::Tensor<double> gtt({1, 4}, {gt.x1, gt.y1, gt.x2, gt.y2});
  ad::GradCheckOptions opt;
  opt.sample_count = 200;
  opt.step = 1e-5;
  opt.tolerance = 1e-4;
  opt.seed = sub_seed(rc.seed, 0x9c);
  const auto r = ad::grad_check(net.g, net.loss, {{"canvas", std::cref(canvas)}, {"gt", std::cref(gtt)}}, opt);
  const double secs = t.seconds();
  std::size_t over = 0;
  for (const auto& e : r.tensors)
    if (e.max_rel_err > opt.tolerance) ++over;
  std::string worst;
  for (const auto& e : r.tensors)
    if (e.name == r.worst_param)
      worst = " (analytic " + sci(e.analytic) + ", numeric " + sci(e.numeric) + ")";
  return {r.pass && secs < 600.0,
          std::to_string(r.tensors.size()) + " tensors, " + std::to_string(r.checked) + " coords checked, " +
              std::to_string(r.skipped) + " skipped at kinks, max rel err " + sci(r.max_rel_err) + " at " +
              r.worst_param + "[" + std::to_string(r.worst_index) + "]" + worst + ", " + std::to_string(over) +
              " tensors over tolerance, " + f(secs, 0) + " s"};
}

// ---- 5: detector learning ---------------------------------------------------

Outcome detector_learning() {
  Timer t;
  const io::RunConfig rc;
  const json baseline = io::read_json(FOCUSLAB_SOURCE_DIR "/baselines/threshold_oracle.json");
  const double recorded = baseline.at("noisy").at("mean_iou").get<double>();

  const auto scfg = rc.synth_seeded();
  const auto split = io::split_indices(rc.data.n, rc.data.split, scfg.seed);
  auto clean_cfg = scfg;
  clean_cfg.noise_level = 0;
  clean_cfg.distractor_count = 0;
  const auto train = io::synth_split(scfg, split.ids[0], rc.detector.canvas);
  const auto test = io::synth_split(scfg, split.ids[2], rc.detector.canvas);
  const auto clean = io::synth_split(clean_cfg, split.ids[2], rc.detector.canvas);

  std::vector<box::BoxNorm<double>> oracle, gts;
  for (auto idx : split.ids[2]) {
    const auto s = synth::gen_sample(scfg, idx);
    oracle.push_back(synth::threshold_box_oracle(s.heatmap, rc.data.oracle_frac));
    gts.push_back(s.target);
  }
  const double live_oracle = detector::evaluate_predictions(oracle, gts, rc.tau).mean_iou;

  auto state = detector::TrainState::fresh(rc.detector, rc.seed, rc.train.lr);
  const auto tc = rc.train_seeded();
  const auto res = detector::train(state, train, tc);
  const double test_iou = detector::evaluate(state.params, rc.detector, test, rc.tau).mean_iou;
  const double clean_iou = detector::evaluate(state.params, rc.detector, clean, rc.tau).mean_iou;
  const double secs = t.seconds();
  const bool baseline_ok = std::abs(live_oracle - recorded) < 1e-9;
  const bool pass = !res.diverged && baseline_ok && tc.steps <= 20000 && train.size() == 5000 && test.size() == 500 &&
                    test_iou >= recorded + 0.05 && clean_iou >= 0.75 && secs < 1800.0;
  return {pass, std::to_string(tc.steps) + " steps on " + std::to_string(train.size()) + " samples; held-out IoU " +
                    f(test_iou) + " vs oracle " + f(recorded) + (baseline_ok ? "" : " (baseline file stale: live " +
                                                                                        f(live_oracle) + ")") +
                    " (need >= " + f(recorded + 0.05) + "); clean IoU " + f(clean_iou) + " (need >= 0.75); " +
                    f(secs / 60.0, 1) + " min"};
}

// ---- 6: overfit sanity ------------------------------------------------------

Outcome overfit_sanity() {
  const io::RunConfig rc;
  const auto s = synth::gen_sample(rc.synth_seeded(), 3);
  detector::Dataset one;
  one.add(s.heatmap, s.target);
  detector::TrainConfig tc;
  tc.lr = rc.train.lr;
  tc.batch = 1;
  tc.steps = 500;
  tc.seed = 6;
  auto run = [&] {
    auto st = detector::TrainState::fresh(rc.detector, 6, tc.lr);
    return detector::train(st, one, tc).log;
  };
  const auto a = run(), b = run();
  std::optional<std::size_t> first_below;
  for (const auto& l : a)
    if (l.total < 0.05) {
      first_below = l.step;
      break;
    }
  bool identical = a.size() == b.size();
  for (std::size_t i = 0; identical && i < a.size(); ++i)
    identical = a[i].total == b[i].total && a[i].l1 == b[i].l1 && a[i].giou_term == b[i].giou_term;
  return {first_below.has_value() && identical,
          "loss " + f(a.front().total) + " -> " + f(a.back().total, 5) +
              (first_below ? ", below 0.05 at step " + std::to_string(*first_below) : ", never below 0.05") +
              (identical ? ", two runs identical" : ", runs differ")};
}

// ---- 7: condensation --------------------------------------------------------

struct CondensedLab {
  std::unique_ptr<condense::MockAttnModel> model;
  condense::CondenseReport report;
};

std::optional<CondensedLab> g_condensed;

CondensedLab& condensed() {
  if (!g_condensed) {
    const io::RunConfig rc;
    const auto scfg = rc.synth_seeded();
    CondensedLab lab;
    lab.model = std::make_unique<condense::MockAttnModel>(scfg.layer_count, scfg.grid_h, scfg.grid_w,
                                                          rc.condense.cue_width, rc.seed);
    lab.report = condense::train_condense(*lab.model, scfg, rc.condense, rc.loss, rc.seed);
    g_condensed = std::move(lab);
  }
  return *g_condensed;
}

Outcome condensation() {
  Timer t;
  const io::RunConfig rc;
  const auto& rep = condensed().report;
  const auto scfg = rc.synth_seeded();
  condense::MockAttnModel control(scfg.layer_count, scfg.grid_h, scfg.grid_w, rc.condense.cue_width, rc.seed);
  auto zero = rc.loss;
  zero.alpha = 0.0;
  const auto ctl = condense::train_condense(control, scfg, rc.condense, zero, rc.seed);
  const double secs = t.seconds();
  const bool calibrated = rep.baseline_share >= 0.10 && rep.baseline_share <= 0.30;
  const bool moved = rep.post_share >= std::max(2.0 * rep.baseline_share, 0.5);
  const bool control_flat = ctl.z_p_value > 0.01 && std::abs(ctl.post_share - ctl.baseline_share) <= 0.05;
  return {rep.heldout_n == 1000 && calibrated && moved && control_flat && !rep.diverged && secs < 900.0,
          "layer " + std::to_string(rep.designated_layer) + ", n=" + std::to_string(rep.heldout_n) + ", share " +
              f(rep.baseline_share, 3) + " -> " + f(rep.post_share, 3) + " (p=" + sci(rep.z_p_value) +
              "); alpha=0 control " + f(ctl.baseline_share, 3) + " -> " + f(ctl.post_share, 3) + " (p=" +
              sci(ctl.z_p_value) + "); " + f(secs, 0) + " s"};
}

// ---- 8: single layer vs. layer windows --------------------------------------

Outcome layer_ablation() {
  Timer t;
  const io::RunConfig rc;
  auto& lab = condensed();
  const std::size_t d = lab.report.designated_layer;
  const auto scfg = rc.synth_seeded();
  const auto train_s = condense::split_samples(scfg, condense::Split::train, 0, 2000);
  const auto test_s = condense::split_samples(scfg, condense::Split::heldout, 0, 500);
  const auto train_a = condense::emit(*lab.model, train_s);
  const auto test_a = condense::emit(*lab.model, test_s);

  // one detector architecture for every arm; only the heatmap source changes
  detector::DetectorConfig dc;
  dc.stem_channels = {16, 32, 64};
  dc.width = 64;
  dc.heads = 4;
  dc.ff = 128;
  dc.groups = 4;
  detector::TrainConfig tc{.lr = 1e-3, .batch = 16, .steps = 3000, .seed = 8, .warmup_steps = 300,
                           .decay_steps = 3000};

  std::map<std::size_t, double> iou;
  for (std::size_t width : {1, 3, 5}) {
    const auto layers = attn::layer_window(d, width, scfg.layer_count);
    detector::Dataset tr, te;
    for (std::size_t i = 0; i < train_s.size(); ++i)
      tr.add(attn::aggregate_window(train_a[i], layers, {0}), train_s[i].target);
    for (std::size_t i = 0; i < test_s.size(); ++i)
      te.add(attn::aggregate_window(test_a[i], layers, {0}), test_s[i].target);
    auto st = detector::TrainState::fresh(dc, 8, tc.lr);
    detector::train(st, tr, tc);
    iou[width] = detector::evaluate(st.params, dc, te, rc.tau).mean_iou;
  }
  const double secs = t.seconds();
  return {iou[1] >= iou[3] && iou[1] >= iou[5],
          "layer " + std::to_string(d) + ": single " + f(iou[1]) + ", 3-window " + f(iou[3]) + ", 5-window " +
              f(iou[5]) + " (reference pattern 92.1 / 91.1 / 90.6); " + f(secs / 60.0, 1) + " min"};
}

// ---- 9: golden trace corpus -------------------------------------------------

Outcome parser_corpus() {
  Timer t;
  const auto rows = io::read_jsonl(FOCUSLAB_DATA_DIR "/golden_traces.jsonl");
  std::size_t agreed = 0, fixed_points = 0, valid = 0;
  std::map<std::string, std::pair<int, int>> sides;
  std::vector<std::string> problems;
  for (const auto& row : rows) {
    const auto rec = trace::record_from_json(row);
    const auto v = trace::judge(rec, trace::Mode::vgr, {});
    if (v.agrees()) ++agreed;
    else problems.push_back(rec.id);
    const std::string rule = row.at("rule").get<std::string>();
    if (rec.expect_pass.value_or(true)) {
      ++sides[rule].first;
    } else {
      ++sides[rule].second;
      if (!v.report.has(rule)) problems.push_back(rec.id + " misses " + rule);
    }
    if (!v.report.pass()) continue;
    ++valid;
    const auto t1 = trace::parse_trace(rec.response);
    const std::string s1 = trace::serialize(t1);
    const auto t2 = trace::parse_trace(s1);
    bool same = trace::serialize(t2) == s1 && t2.think_text == t1.think_text && t2.answer_text == t1.answer_text &&
                t2.focus_spans.size() == t1.focus_spans.size();
    for (std::size_t k = 0; same && k < t1.focus_spans.size(); ++k)
      same = t1.focus_spans[k].text == t2.focus_spans[k].text;
    if (same) ++fixed_points;
  }
  std::size_t both_sides = 0;
  for (const auto& [rule, n] : sides)
    if (n.first > 0 && n.second > 0) ++both_sides;
  const double secs = t.seconds();
  std::string detail = std::to_string(agreed) + "/" + std::to_string(rows.size()) + " agree, " +
                       std::to_string(both_sides) + "/" + std::to_string(sides.size()) +
                       " rules on both sides, round trip " + std::to_string(fixed_points) + "/" +
                       std::to_string(valid) + ", " + f(secs * 1000, 0) + " ms";
  for (const auto& p : problems) detail += "; " + p;
  return {rows.size() == 30 && agreed == rows.size() && both_sides == sides.size() && sides.size() == 15 &&
              fixed_points == valid && secs < 1.0,
          detail};
}

// ---- 10: grounding-error threshold ------------------------------------------

Outcome grounding_threshold() {
  const box::BoxNorm<double> unit{0, 0, 1, 1}, strip{0, 0, 0.1, 1};
  const double boundary = box::iou(strip, unit);
  bool ok = boundary == 0.1 && !box::classify_grounding_error(strip, unit, 0.1);
  // just below the boundary
  const box::BoxNorm<double> thinner{0, 0, std::nextafter(0.1, 0.0), 1};
  ok = ok && box::iou(thinner, unit) < 0.1 && box::classify_grounding_error(thinner, unit, 0.1);
  Rng rng(1010);
  std::size_t mismatches = 0;
  for (int k = 0; k < 10000; ++k) {
    const auto a = random_box(rng), b = random_box(rng);
    if (box::classify_grounding_error(a, b, 0.1) != (box::iou(a, b) < 0.1)) ++mismatches;
  }
  return {ok && mismatches == 0, "IoU==0.1 boundary classified correct, nextafter below classified error, " +
                                     std::to_string(mismatches) + " mismatches on 10000 random pairs"};
}

// ---- 11: rerun reproducibility ----------------------------------------------

std::map<std::string, std::string> hash_tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = io::file_hash(e.path());
  return out;
}

Outcome reproducibility() {
  Timer t;
  const std::vector<std::string> small_model{
      "--set", "detector.stem_channels=[8,16,32]", "--set", "detector.width=32", "--set", "detector.heads=4",
      "--set", "detector.ff=64", "--set", "detector.groups=4", "--set", "detector.encoder_layers=1",
      "--set", "detector.decoder_layers=1"};
  const std::vector<std::string> small_condense{"--set", "condense.steps=10",    "--set", "condense.train_n=40",
                                                "--set", "condense.val_n=20",    "--set", "condense.heldout_n=40",
                                                "--set", "condense.monitor_n=10", "--set", "condense.eval_every=5"};
  const fs::path base = fs::temp_directory_path() / ("focuslab_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(base);
  std::vector<std::string> commands;
  std::map<std::string, int> codes[2];

  for (int r = 0; r < 2; ++r) {
    const fs::path root = base / (r == 0 ? "a" : "b");
    std::ostringstream sink;
    auto run = [&](const std::string& name, std::vector<std::string> args, const std::vector<std::string>& extra = {}) {
      args.insert(args.end(), extra.begin(), extra.end());
      for (const std::string& a : {std::string("--seed"), std::string("7"), std::string("--out-dir"),
                                   (root / name).string()})
        args.push_back(a);
      if (r == 0) commands.push_back(name);
      codes[r][name] = cli::run(args, sink, sink);
    };
    const std::string ds = (root / "gen" / "dataset" / "manifest.jsonl").string();
    run("gen", {"synth", "gen", "--n", "40", "--attn", "--set", "data.split=[0.5,0.25,0.25]"});
    const auto first_test = [&] {
      for (const auto& row : io::read_jsonl(ds))
        if (row["split"] == "test") return row;
      return json();
    }();
    const std::string tensor = (root / "gen" / "dataset" / first_test["attn"].get<std::string>()).string();
    const auto tb = first_test["target"];
    const std::string box = std::to_string(tb[0].get<double>()) + "," + std::to_string(tb[1].get<double>()) + "," +
                            std::to_string(tb[2].get<double>()) + "," + std::to_string(tb[3].get<double>());
    run("stats", {"attn", "stats", "--tensor", tensor, "--box", box});
    run("peak_hist", {"attn", "peak-hist", "--manifest", ds, "--split", "test"});
    run("validate", {"trace", "validate", "--corpus", FOCUSLAB_DATA_DIR "/golden_traces.jsonl", "--check-expect"});
    run("pairs", {"trace", "pairs", "--corpus", FOCUSLAB_DATA_DIR "/golden_traces.jsonl"});
    run("train", {"detector", "train", "--manifest", ds, "--set", "train.steps=4", "--set", "train.batch=4", "--set",
                  "train.checkpoint_every=2"},
        small_model);
    const std::string ckpt = (root / "train" / "checkpoint.ckpt").string();
    run("eval", {"detector", "eval", "--checkpoint", ckpt, "--manifest", ds});
    run("gradcheck", {"detector", "gradcheck", "--samples", "2", "--tol", "1"}, small_model);
    run("select", {"condense", "select-layer"}, small_condense);
    run("condense", {"condense", "train"}, small_condense);
    run("report", {"condense", "report", "--report", (root / "condense" / "condense_report.json").string()});
    run("pipeline", {"pipeline", "run", "--tensor", tensor, "--checkpoint", ckpt, "--layer", "22", "--window", "3",
                     "--gt", box});
  }

  std::size_t files = 0;
  std::vector<std::string> diffs;
  for (const auto& name : commands) {
    if (codes[0][name] != codes[1][name]) diffs.push_back(name + " exit code");
    if (codes[0][name] != 0 && name != "pairs") diffs.push_back(name + " exited " + std::to_string(codes[0][name]));
    const auto ha = hash_tree(base / "a" / name), hb = hash_tree(base / "b" / name);
    files += ha.size();
    if (ha != hb) diffs.push_back(name + " artifacts");
  }
  fs::remove_all(base);
  std::string detail = std::to_string(commands.size()) + " subcommands run twice, " + std::to_string(files) +
                       " artifact files, " + std::to_string(diffs.size()) + " differences, " + f(t.seconds(), 1) +
                       " s";
  for (const auto& d : diffs) detail += "; " + d;
  return {diffs.empty() && files > 0, detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"metric exactness", metric_exactness},
      {"brute-force agreement", brute_force},
      {"geometry oracle", geometry_oracle},
      {"gradient integrity", gradient_integrity},
      {"detector learning", detector_learning},
      {"overfit sanity", overfit_sanity},
      {"condensation", condensation},
      {"single layer vs. windows", layer_ablation},
      {"golden trace corpus", parser_corpus},
      {"grounding-error threshold", grounding_threshold},
      {"rerun reproducibility", reproducibility},
  };
  std::set<std::size_t> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(static_cast<std::size_t>(std::stoul(argv[i])));
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    if (!wanted.empty() && !wanted.count(k + 1)) continue;
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    std::printf("AC%zu %s  %s: %s\n", k + 1, o.pass ? "PASS" : "FAIL", criteria[k].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
