// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "focuslab/autodiff/params.hpp"
#include "focuslab/box/geometry.hpp"
#include "focuslab/core/rng.hpp"
#include "focuslab/detector/model.hpp"

namespace focuslab::detector {

/// Packed training/evaluation set: canvases and canvas-space target corners.
struct Dataset {
  std::size_t canvas = 32;
  std::vector<float> inputs;  // n * 4 * canvas^2
  std::vector<box::BoxNorm<double>> targets;  // canvas coordinates
  std::vector<std::size_t> grid_h, grid_w;    // source grid of each sample

  std::size_t size() const { return targets.size(); }
  std::size_t stride() const { return kInputChannels * canvas * canvas; }

  /// Adds a heatmap with its target box given in heatmap-grid coordinates.
  void add(const attn::HeatMap& heat, const box::BoxNorm<double>& target) {
    const DetectorInput in = build_input(heat, canvas);
    inputs.insert(inputs.end(), in.planes.begin(), in.planes.end());
    targets.push_back(grid_to_canvas(target, heat.hp, heat.wp, canvas));
    grid_h.push_back(heat.hp);
    grid_w.push_back(heat.wp);
  }

  box::BoxNorm<double> target_in_grid(std::size_t i) const {
    return canvas_to_grid(targets[i], grid_h[i], grid_w[i], canvas);
  }
};

struct TrainConfig {
  double lr = 1e-3;
  std::size_t batch = 16;
  std::size_t steps = 1000;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // 0 = only at the end
  std::size_t warmup_steps = 0;      // linear ramp from 0
  std::size_t decay_steps = 0;       // cosine decay to 0 at this step; 0 = constant
};

/// Learning rate at a global step.
inline double scheduled_lr(const TrainConfig& cfg, std::uint64_t step) {
  double lr = cfg.lr;
  if (cfg.warmup_steps && step < cfg.warmup_steps)
    lr *= static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps);
  if (cfg.decay_steps) {
    const double t = std::min(1.0, static_cast<double>(step) / static_cast<double>(cfg.decay_steps));
    lr *= 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
  }
  return lr;
}

struct StepLog {
  std::uint64_t step = 0;
  double l1 = 0;
  double giou_term = 0;
  double total = 0;
};

struct TrainState {
  DetectorConfig model;
  ad::ParamStore<float> params;
  std::unique_ptr<ad::Adam<float>> opt;
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
  StepLog running;
  double ntp_surrogate = 0.0;  // no language-model term in this lab

  static TrainState fresh(const DetectorConfig& cfg, std::uint64_t seed, double lr) {
    TrainState s;
    s.model = cfg;
    s.seed = seed;
    s.params = init_params<float>(cfg, sub_seed(seed, 0x1417));
    s.opt = std::make_unique<ad::Adam<float>>(s.params, ad::AdamConfig{.lr = lr});
    return s;
  }

  TrainState clone() const {
    TrainState s;
    s.model = model;
    s.params = params.cast<float>();
    s.opt = std::make_unique<ad::Adam<float>>(*opt);
    s.step = step;
    s.seed = seed;
    s.running = running;
    s.ntp_surrogate = ntp_surrogate;
    return s;
  }
};

/// Index of the sample at global position k of the deterministic epoch stream.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::uint64_t seed) : n_(n), seed_(seed) {
    if (n == 0) fail(ErrorCode::domain, "empty training set");
  }

  std::size_t at(std::uint64_t k) {
    const std::uint64_t epoch = k / n_;
    if (!perm_ || epoch != epoch_) {
      perm_.emplace(n_);
      std::iota(perm_->begin(), perm_->end(), std::size_t{0});
      Rng rng(sub_seed(seed_, epoch));
      rng.shuffle(perm_->begin(), perm_->end());
      epoch_ = epoch;
    }
    return (*perm_)[k % n_];
  }

 private:
  std::size_t n_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::optional<std::vector<std::size_t>> perm_;
};

inline void pack_batch(const Dataset& data, const std::vector<std::size_t>& idx, ad::Tensor<float>& canvas,
                       ad::Tensor<float>& gt) {
  const std::size_t stride = data.stride();
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const float* src = data.inputs.data() + idx[b] * stride;
    std::copy(src, src + stride, canvas.data.begin() + static_cast<std::ptrdiff_t>(b * stride));
    const auto t = data.targets[idx[b]].as_array();
    for (std::size_t c = 0; c < 4; ++c) gt.data[4 * b + c] = static_cast<float>(t[c]);
  }
}

struct TrainResult {
  std::vector<StepLog> log;
  bool diverged = false;
  std::string message;
};

using CheckpointHook = std::function<void(const TrainState&)>;

/// Adam on the batch mean of L1 + (1 - GIoU). On a non-finite loss the state is
/// rolled back to the last checkpointed copy and training stops.
inline TrainResult train(TrainState& state, const Dataset& data, const TrainConfig& cfg,
                         const CheckpointHook& on_checkpoint = {}) {
  if (cfg.batch == 0) fail(ErrorCode::config, "batch must be positive");
  if (!(cfg.lr >= 0.0)) fail(ErrorCode::config, "lr must be non-negative");
  if (data.size() == 0) fail(ErrorCode::domain, "empty training set");
  if (data.canvas != state.model.canvas) fail(ErrorCode::shape, "dataset canvas does not match the model");

  DetectorGraph<float> net(state.params, state.model, cfg.batch);
  BatchSampler sampler(data.size(), sub_seed(state.seed, 0xba7c));
  auto canvas = ad::Tensor<float>::zeros({cfg.batch, kInputChannels, data.canvas, data.canvas});
  auto gt = ad::Tensor<float>::zeros({cfg.batch, 4});
  std::vector<std::size_t> idx(cfg.batch);

  TrainResult result;
  TrainState last_good = state.clone();
  const std::uint64_t end = state.step + cfg.steps;
  while (state.step < end) {
    for (std::size_t b = 0; b < cfg.batch; ++b) idx[b] = sampler.at(state.step * cfg.batch + b);
    pack_batch(data, idx, canvas, gt);
    state.params.zero_grad();
    net.run(canvas, gt);
    const auto terms = net.g.value(net.terms);
    StepLog rec;
    rec.step = state.step;
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      rec.l1 += terms[2 * b];
      rec.giou_term += terms[2 * b + 1];
    }
    rec.l1 /= static_cast<double>(cfg.batch);
    rec.giou_term /= static_cast<double>(cfg.batch);
    rec.total = rec.l1 + rec.giou_term + state.ntp_surrogate;
    if (!std::isfinite(rec.total)) {
      state = last_good.clone();
      result.diverged = true;
      result.message = "non-finite loss at step " + std::to_string(rec.step) + "; restored step " +
                       std::to_string(state.step);
      return result;
    }
    net.g.backward(net.loss);
    state.opt->set_lr(scheduled_lr(cfg, state.step));
    state.opt->step(state.params);
    ++state.step;
    state.running = rec;
    result.log.push_back(rec);
    if (cfg.checkpoint_every && state.step % cfg.checkpoint_every == 0 && state.step < end) {
      last_good = state.clone();
      if (on_checkpoint) on_checkpoint(state);
    }
  }
  if (on_checkpoint) on_checkpoint(state);
  return result;
}

/// Runs the detector over packed canvases; returns canvas-space corners.
template <typename T>
std::vector<box::BoxNorm<double>> predict(ad::ParamStore<T>& params, const DetectorConfig& cfg, const float* inputs,
                                          std::size_t n, std::size_t chunk = 64) {
  std::vector<box::BoxNorm<double>> out;
  out.reserve(n);
  const std::size_t stride = kInputChannels * cfg.canvas * cfg.canvas;
  std::unique_ptr<DetectorGraph<T>> net;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t m = std::min(chunk, n - start);
    if (!net || net->batch != m) net = std::make_unique<DetectorGraph<T>>(params, cfg, m);
    ad::Tensor<T> canvas({m, kInputChannels, cfg.canvas, cfg.canvas},
                         std::vector<T>(inputs + start * stride, inputs + (start + m) * stride));
    auto gt = ad::Tensor<T>::zeros({m, 4});
    for (std::size_t b = 0; b < m; ++b) {
      gt.data[4 * b] = T(0.25);
      gt.data[4 * b + 1] = T(0.25);
      gt.data[4 * b + 2] = T(0.75);
      gt.data[4 * b + 3] = T(0.75);
    }
    net->run(canvas, gt);
    const auto c = net->g.value(net->corners);
    for (std::size_t b = 0; b < m; ++b)
      out.push_back({static_cast<double>(c[4 * b]), static_cast<double>(c[4 * b + 1]),
                     static_cast<double>(c[4 * b + 2]), static_cast<double>(c[4 * b + 3])});
  }
  return out;
}

struct SampleEval {
  box::BoxNorm<double> pred;
  box::BoxNorm<double> gt;
  double iou = 0;
  double giou = 0;
};

struct EvalReport {
  double mean_iou = 0;
  double median_iou = 0;
  double giou_mean = 0;
  double grounding_error_rate = 0;
  double tau = 0.1;
  std::vector<SampleEval> samples;
};

/// Metrics for predicted vs. ground-truth boxes in a common frame.
inline EvalReport evaluate_predictions(const std::vector<box::BoxNorm<double>>& preds,
                                       const std::vector<box::BoxNorm<double>>& gts, double tau = 0.1) {
  if (preds.empty()) fail(ErrorCode::domain, "empty evaluation set");
  if (preds.size() != gts.size()) fail(ErrorCode::shape, "prediction and target counts differ");
  EvalReport r;
  r.tau = tau;
  std::vector<double> ious;
  std::size_t errors = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    SampleEval s{preds[i], gts[i], box::iou(preds[i], gts[i]), box::giou(preds[i], gts[i])};
    if (box::classify_grounding_error(preds[i], gts[i], tau)) ++errors;
    r.mean_iou += s.iou;
    r.giou_mean += s.giou;
    ious.push_back(s.iou);
    r.samples.push_back(s);
  }
  const double n = static_cast<double>(preds.size());
  r.mean_iou /= n;
  r.giou_mean /= n;
  r.grounding_error_rate = static_cast<double>(errors) / n;
  std::sort(ious.begin(), ious.end());
  const std::size_t m = ious.size();
  r.median_iou = m % 2 ? ious[m / 2] : 0.5 * (ious[m / 2 - 1] + ious[m / 2]);
  return r;
}

/// Predicts on the dataset and scores in each sample's heatmap-grid frame.
inline EvalReport evaluate(ad::ParamStore<float>& params, const DetectorConfig& cfg, const Dataset& data,
                           double tau = 0.1) {
  if (data.size() == 0) fail(ErrorCode::domain, "empty evaluation set");
  const auto raw = predict(params, cfg, data.inputs.data(), data.size());
  std::vector<box::BoxNorm<double>> preds, gts;
  for (std::size_t i = 0; i < data.size(); ++i) {
    preds.push_back(canvas_to_grid(raw[i], data.grid_h[i], data.grid_w[i], data.canvas));
    gts.push_back(data.target_in_grid(i));
  }
  return evaluate_predictions(preds, gts, tau);
}

}  // namespace focuslab::detector
