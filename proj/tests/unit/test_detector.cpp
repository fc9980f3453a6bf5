// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "focuslab/autodiff/gradcheck.hpp"
#include "focuslab/detector/train.hpp"
#include "focuslab/synth/generator.hpp"

using namespace focuslab;
using detector::DetectorConfig;

namespace {

DetectorConfig tiny() {
  DetectorConfig c;
  c.stem_channels = {8, 16, 32};
  c.width = 32;
  c.heads = 4;
  c.ff = 64;
  c.groups = 4;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  return c;
}

detector::Dataset make_set(std::size_t n, std::uint64_t first, bool clean = false) {
  synth::SynthConfig cfg;
  if (clean) {
    cfg.noise_level = 0;
    cfg.distractor_count = 0;
  }
  detector::Dataset d;
  for (std::size_t i = 0; i < n; ++i) {
    const auto s = synth::gen_sample(cfg, first + i);
    d.add(s.heatmap, s.target);
  }
  return d;
}

}  // namespace

TEST(BuildInput, FullCanvasMask) {
  attn::HeatMap h(32, 32, std::vector<double>(1024, 1.0));
  const auto in = detector::build_input(h);
  for (std::size_t p = 0; p < 1024; ++p) EXPECT_EQ(in.planes[1024 + p], 1.0f);
}

TEST(BuildInput, PaddedGridPlacement) {
  synth::SynthConfig cfg;
  const auto s = synth::gen_sample(cfg, 0);
  const auto in = detector::build_input(s.heatmap);
  float peak = 0;
  for (std::size_t i = 0; i < 32; ++i)
    for (std::size_t j = 0; j < 32; ++j) {
      const float m = in.planes[1024 + i * 32 + j];
      EXPECT_EQ(m, (i < 24 && j < 24) ? 1.0f : 0.0f);
      if (m == 0.0f) {
        EXPECT_EQ(in.planes[i * 32 + j], 0.0f);
      }
      peak = std::max(peak, in.planes[i * 32 + j]);
      EXPECT_FLOAT_EQ(in.planes[2048 + i * 32 + j], (j + 0.5f) / 32);
      EXPECT_FLOAT_EQ(in.planes[3072 + i * 32 + j], (i + 0.5f) / 32);
    }
  EXPECT_EQ(peak, 1.0f);
}

TEST(BuildInput, RejectsOversizeAndZero) {
  EXPECT_THROW(detector::build_input(attn::HeatMap(33, 4, std::vector<double>(132, 1.0))), Error);
  EXPECT_THROW(detector::build_input(attn::HeatMap(4, 4)), Error);
}

TEST(GridCanvas, RoundTrip) {
  const box::BoxNorm<double> b{0.1, 0.2, 0.7, 0.9};
  const auto c = detector::grid_to_canvas(b, 24, 20, 32);
  EXPECT_DOUBLE_EQ(c.x2, 0.7 * 20 / 32);
  const auto r = detector::canvas_to_grid(c, 24, 20, 32);
  EXPECT_NEAR(r.x1, b.x1, 1e-15);
  EXPECT_NEAR(r.y2, b.y2, 1e-15);
}

TEST(DetectorConfig, Validation) {
  DetectorConfig c;
  c.width = 128;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.heads = 7;
  EXPECT_THROW(c.validate(), Error);
  EXPECT_EQ(DetectorConfig{}.tokens(), 16u);
}

TEST(DetectorForward, OutputsInRangeAndDeterministic) {
  const auto cfg = tiny();
  auto ps = detector::init_params<float>(cfg, 3);
  const auto data = make_set(8, 0);
  const auto a = detector::predict(ps, cfg, data.inputs.data(), data.size());
  const auto b = detector::predict(ps, cfg, data.inputs.data(), data.size(), 3);
  ASSERT_EQ(a.size(), 8u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_LT(a[i].x1, a[i].x2);
    EXPECT_LT(a[i].y1, a[i].y2);
    EXPECT_NEAR(a[i].x1, b[i].x1, 1e-6);
    EXPECT_NEAR(a[i].y2, b[i].y2, 1e-6);
  }
  detector::DetectorGraph<float> net(ps, cfg, 8);
  auto canvas = ad::Tensor<float>::zeros({8, 4, 32, 32});
  auto gt = ad::Tensor<float>::zeros({8, 4});
  std::vector<std::size_t> idx{0, 1, 2, 3, 4, 5, 6, 7};
  detector::pack_batch(data, idx, canvas, gt);
  net.run(canvas, gt);
  for (float v : net.g.value(net.box_cs)) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LT(v, 1.0f);
  }
}

TEST(DetectorGradient, SmallModelMatchesFiniteDifferences) {
  const auto cfg = tiny();
  auto ps = detector::init_params<double>(cfg, 5);
  const auto data = make_set(1, 10);
  detector::DetectorGraph<double> net(ps, cfg, 1);
  ad::Tensor<double> canvas({1, 4, 32, 32}, std::vector<double>(data.inputs.begin(), data.inputs.end()));
  const auto t = data.targets[0].as_array();
  ad::Tensor<double> gt({1, 4}, std::vector<double>(t.begin(), t.end()));
  ad::GradCheckOptions opt;
  opt.sample_count = 40;
  const auto r = ad::grad_check(net.g, net.loss, {{"canvas", std::cref(canvas)}, {"gt", std::cref(gt)}}, opt);
  EXPECT_TRUE(r.pass) << r.worst_param << " " << r.max_rel_err;

  opt.prefixes = {"head."};
  opt.tolerance = 1e-6;
  const auto head = ad::grad_check(net.g, net.loss, {{"canvas", std::cref(canvas)}, {"gt", std::cref(gt)}}, opt);
  EXPECT_TRUE(head.pass) << head.max_rel_err;
}

TEST(DetectorTraining, ZeroLearningRateKeepsLossConstant) {
  const auto cfg = tiny();
  auto st = detector::TrainState::fresh(cfg, 1, 0.0);
  detector::TrainConfig tc;
  tc.lr = 0;
  tc.batch = 2;
  tc.steps = 4;
  const auto data = make_set(2, 0);
  const auto r = detector::train(st, data, tc);
  ASSERT_EQ(r.log.size(), 4u);
  // a 2-sample set with batch 2 sees the same pair each step, in shuffled order
  for (const auto& l : r.log) EXPECT_NEAR(l.total, r.log[0].total, 1e-6);
}

TEST(DetectorTraining, DeterministicLogs) {
  const auto cfg = tiny();
  const auto data = make_set(16, 0);
  detector::TrainConfig tc;
  tc.batch = 4;
  tc.steps = 6;
  auto a = detector::TrainState::fresh(cfg, 9, tc.lr);
  auto b = detector::TrainState::fresh(cfg, 9, tc.lr);
  const auto ra = detector::train(a, data, tc);
  const auto rb = detector::train(b, data, tc);
  ASSERT_EQ(ra.log.size(), rb.log.size());
  for (std::size_t i = 0; i < ra.log.size(); ++i) EXPECT_EQ(ra.log[i].total, rb.log[i].total);
}

TEST(DetectorTraining, SplitRunEqualsSingleRun) {
  const auto cfg = tiny();
  const auto data = make_set(16, 0);
  detector::TrainConfig tc;
  tc.batch = 4;
  tc.steps = 6;
  tc.warmup_steps = 3;
  tc.decay_steps = 6;
  auto whole = detector::TrainState::fresh(cfg, 2, tc.lr);
  detector::train(whole, data, tc);
  auto split = detector::TrainState::fresh(cfg, 2, tc.lr);
  tc.steps = 2;
  detector::train(split, data, tc);
  tc.steps = 4;
  detector::train(split, data, tc);
  for (std::size_t i = 0; i < whole.params.size(); ++i)
    EXPECT_EQ(whole.params.entries()[i].tensor->data, split.params.entries()[i].tensor->data)
        << whole.params.entries()[i].name;
}

TEST(Schedule, WarmupAndCosine) {
  detector::TrainConfig tc;
  tc.lr = 1.0;
  tc.warmup_steps = 4;
  EXPECT_DOUBLE_EQ(detector::scheduled_lr(tc, 0), 0.25);
  EXPECT_DOUBLE_EQ(detector::scheduled_lr(tc, 10), 1.0);
  tc.warmup_steps = 0;
  tc.decay_steps = 10;
  EXPECT_DOUBLE_EQ(detector::scheduled_lr(tc, 0), 1.0);
  EXPECT_NEAR(detector::scheduled_lr(tc, 5), 0.5, 1e-15);
  EXPECT_NEAR(detector::scheduled_lr(tc, 20), 0.0, 1e-15);
}

TEST(BatchSampler, EpochIsAPermutation) {
  detector::BatchSampler s(10, 4);
  std::vector<int> seen(10, 0);
  for (std::uint64_t k = 10; k < 20; ++k) ++seen[s.at(k)];
  for (int c : seen) EXPECT_EQ(c, 1);
}

TEST(Evaluate, PerfectPredictorAndVacuousTau) {
  std::vector<box::BoxNorm<double>> gts{{0, 0, 0.5, 0.5}, {0.2, 0.3, 0.9, 0.8}};
  const auto r = detector::evaluate_predictions(gts, gts);
  EXPECT_DOUBLE_EQ(r.mean_iou, 1.0);
  EXPECT_DOUBLE_EQ(r.grounding_error_rate, 0.0);
  std::vector<box::BoxNorm<double>> bad{{0.6, 0.6, 0.7, 0.7}, {0.0, 0.0, 0.1, 0.1}};
  EXPECT_DOUBLE_EQ(detector::evaluate_predictions(bad, gts, 0.1).grounding_error_rate, 1.0);
  EXPECT_DOUBLE_EQ(detector::evaluate_predictions(bad, gts, 0.0).grounding_error_rate, 0.0);
  EXPECT_THROW(detector::evaluate_predictions({}, {}), Error);
}
