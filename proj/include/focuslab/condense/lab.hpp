// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "focuslab/attn/metrics.hpp"
#include "focuslab/autodiff/graph.hpp"
#include "focuslab/autodiff/params.hpp"
#include "focuslab/core/rng.hpp"
#include "focuslab/detector/train.hpp"
#include "focuslab/synth/generator.hpp"

namespace focuslab::condense {

/// Layer with the highest mean concentration on the target regions; ties go low.
inline std::size_t select_designated_layer(const std::vector<attn::AttentionTensor>& tensors,
                                           const std::vector<attn::Region>& regions) {
  if (tensors.empty()) fail(ErrorCode::domain, "empty validation set");
  if (tensors.size() != regions.size()) fail(ErrorCode::shape, "tensor and region counts differ");
  std::vector<double> mean(tensors[0].layers, 0.0);
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (tensors[i].layers != mean.size()) fail(ErrorCode::shape, "tensors disagree on layer count");
    const auto s = attn::concentration_curve(tensors[i], regions[i], tensors[i].all_queries());
    for (std::size_t l = 0; l < mean.size(); ++l) mean[l] += s[l];
  }
  std::size_t best = 0;
  for (std::size_t l = 1; l < mean.size(); ++l)
    if (mean[l] > mean[best]) best = l;
  return best;
}

struct CondenseConfig {
  std::size_t cue_width = 32;
  std::size_t steps = 2000;
  std::size_t batch = 16;
  double lr = 1e-2;
  std::size_t train_n = 2000;
  std::size_t val_n = 200;
  std::size_t heldout_n = 1000;
  std::size_t monitor_n = 200;  // held-out prefix used for the loss curve
  std::size_t eval_every = 200;
  std::optional<std::size_t> designated_layer;  // nullopt: select on the validation split

  void validate() const {
    if (cue_width == 0 || batch == 0 || train_n == 0 || val_n == 0 || heldout_n == 0)
      fail(ErrorCode::config, "condense sizes must be positive");
    if (!(lr >= 0.0)) fail(ErrorCode::config, "condense lr must be non-negative");
    if (monitor_n > heldout_n) fail(ErrorCode::config, "monitor_n must not exceed heldout_n");
  }
};

enum class Split : std::uint64_t { train = 1, val = 2, heldout = 3 };

/// Generator stream for one split; every split is an independent seed family.
inline synth::SynthConfig split_config(synth::SynthConfig cfg, Split s) {
  cfg.seed = sub_seed(cfg.seed, 0xc0de0000ULL + static_cast<std::uint64_t>(s));
  return cfg;
}

/// Per-cell cue features [(x - cx) / w, (y - cy) / h, w, h] relative to the target box.
inline std::vector<double> cue_features(const box::BoxNorm<double>& b, std::size_t hp, std::size_t wp) {
  std::vector<double> f(hp * wp * 4);
  for (std::size_t i = 0; i < hp; ++i)
    for (std::size_t j = 0; j < wp; ++j) {
      double* d = f.data() + 4 * (i * wp + j);
      d[0] = ((static_cast<double>(j) + 0.5) / static_cast<double>(wp) - b.cx()) / b.width();
      d[1] = ((static_cast<double>(i) + 0.5) / static_cast<double>(hp) - b.cy()) / b.height();
      d[2] = b.width();
      d[3] = b.height();
    }
  return f;
}

/// Trainable stand-in for a backbone's text-to-image attention.
///
/// logits[l, p] = log prior[l, p] + bias[p, l] + cue(features[p])[l], softmax over p.
/// The prior is the generator's attention for the sample, so a fresh model
/// (zero bias, zero-initialized cue output layer) reproduces it exactly.
class MockAttnModel {
 public:
  MockAttnModel(std::size_t layers, std::size_t hp, std::size_t wp, std::size_t cue_width, std::uint64_t seed)
      : layers_(layers), hp_(hp), wp_(wp) {
    Rng rng(sub_seed(seed, 0xc0e));
    params.add_uniform("cue.fc1.w", {4, cue_width}, std::sqrt(3.0 / 4.0) * 2.0, rng);
    params.add_uniform("cue.fc1.b", {cue_width}, 0.5, rng);
    params.add_filled("cue.fc2.w", {cue_width, layers}, 0.0);  // no bias: a per-layer constant cancels in the softmax
    params.add_filled("layer.bias", {hp * wp, layers}, 0.0);
  }

  std::size_t layers() const { return layers_; }
  std::size_t hp() const { return hp_; }
  std::size_t wp() const { return wp_; }
  std::size_t patches() const { return hp_ * wp_; }

  ad::ParamStore<double> params;

 private:
  std::size_t layers_, hp_, wp_;
};

/// Batched graph: per-layer maps and the condensation objective at one layer.
struct CondenseGraph {
  ad::Graph<double> g;
  std::size_t batch;
  ad::NodeId prior_in, feat_in, mask_in, frac_in;
  ad::NodeId maps;    // [N, L, P]
  ad::NodeId l_ac;    // [N]
  ad::NodeId loss;    // scalar: ntp + alpha * mean L_AC

  CondenseGraph(MockAttnModel& m, std::size_t n, std::size_t designated, const attn::LossWeights& w)
      : batch(n) {
    if (designated >= m.layers()) fail(ErrorCode::domain, "designated layer out of range");
    const std::size_t P = m.patches(), L = m.layers();
    auto& ps = m.params;
    prior_in = g.input("prior", {n, P, L});
    feat_in = g.input("feat", {n, P, 4});
    mask_in = g.input("mask", {n, P});
    frac_in = g.input("frac", {n});

    auto h = g.add(g.matmul(feat_in, g.param(ps.at("cue.fc1.w"), "cue.fc1.w")), g.param(ps.at("cue.fc1.b"), "cue.fc1.b"));
    h = g.silu(h);
    auto cue = g.matmul(h, g.param(ps.at("cue.fc2.w"), "cue.fc2.w"));
    auto logits = g.add(g.add(prior_in, g.param(ps.at("layer.bias"), "layer.bias")), cue, "logits");
    maps = g.softmax(g.permute(logits, {0, 2, 1}), "maps");

    auto sel = ad::Tensor<double>::zeros({L, 1});
    sel.data[designated] = 1.0;
    auto layer = g.reshape(g.matmul(g.permute(maps, {0, 2, 1}), g.constant(std::move(sel), "select")), {n, P});
    auto in_mass = g.sum_last(g.mul(layer, mask_in));
    l_ac = g.scale(g.log(g.div(in_mass, frac_in)), -1.0, "l_ac");
    auto ntp = g.constant(ad::Tensor<double>::filled({1}, w.ntp_surrogate), "ntp");
    loss = g.add(g.scale(g.mean(l_ac), w.alpha), ntp, "loss");
  }
};

/// Inputs for a batch of generator samples.
struct CondenseBatch {
  ad::Tensor<double> prior, feat, mask, frac;
  std::vector<attn::Region> regions;
  std::vector<box::BoxNorm<double>> targets;

  CondenseBatch(std::size_t n, std::size_t P, std::size_t L)
      : prior(ad::Tensor<double>::zeros({n, P, L})),
        feat(ad::Tensor<double>::zeros({n, P, 4})),
        mask(ad::Tensor<double>::zeros({n, P})),
        frac(ad::Tensor<double>::zeros({n})) {}

  void set(std::size_t b, const attn::AttentionTensor& a, const box::BoxNorm<double>& target) {
    const std::size_t P = a.patches(), L = a.layers;
    const attn::Region r = attn::box_to_region(target, a.hp, a.wp);
    for (std::size_t l = 0; l < L; ++l) {
      const attn::HeatMap hm = attn::aggregate_heatmap(a, l);
      for (std::size_t p = 0; p < P; ++p) prior.data[(b * P + p) * L + l] = std::log(std::max(hm.values[p], 1e-300));
    }
    const auto f = cue_features(target, a.hp, a.wp);
    std::copy(f.begin(), f.end(), feat.data.begin() + static_cast<std::ptrdiff_t>(b * P * 4));
    std::fill_n(mask.data.begin() + static_cast<std::ptrdiff_t>(b * P), P, 0.0);
    for (std::size_t p : r.indices) mask.data[b * P + p] = 1.0;
    frac.data[b] = static_cast<double>(r.size()) / static_cast<double>(P);
    if (regions.size() <= b) {
      regions.resize(b + 1);
      targets.resize(b + 1);
    }
    regions[b] = r;
    targets[b] = target;
  }

  void run(CondenseGraph& cg) {
    cg.g.run({{"prior", prior}, {"feat", feat}, {"mask", mask}, {"frac", frac}});
  }
};

/// Generator samples at [first, first + count) of a split.
inline std::vector<synth::SynthSample> split_samples(const synth::SynthConfig& cfg, Split s, std::size_t first,
                                                     std::size_t count) {
  const auto sc = split_config(cfg, s);
  std::vector<synth::SynthSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(synth::gen_sample(sc, first + i, true));
  return out;
}

/// Emits the model's [L, 1, 1, P] attention for generator samples.
inline std::vector<attn::AttentionTensor> emit(MockAttnModel& m, const std::vector<synth::SynthSample>& samples,
                                               std::size_t chunk = 50) {
  const std::size_t P = m.patches(), L = m.layers();
  std::vector<attn::AttentionTensor> out;
  std::unique_ptr<CondenseGraph> cg;
  for (std::size_t start = 0; start < samples.size(); start += chunk) {
    const std::size_t n = std::min(chunk, samples.size() - start);
    if (!cg || cg->batch != n) cg = std::make_unique<CondenseGraph>(m, n, 0, attn::LossWeights{});
    CondenseBatch b(n, P, L);
    for (std::size_t k = 0; k < n; ++k) b.set(k, *samples[start + k].attn, samples[start + k].target);
    b.run(*cg);
    const auto v = cg->g.value(cg->maps);
    for (std::size_t k = 0; k < n; ++k) {
      attn::AttentionTensor a(L, 1, 1, m.hp(), m.wp());
      for (std::size_t i = 0; i < L * P; ++i) a.weights[i] = static_cast<float>(v[k * L * P + i]);
      out.push_back(std::move(a));
    }
  }
  return out;
}

struct CondenseLog {
  std::size_t step = 0;
  double l_ac = 0;    // training batch mean
  double total = 0;   // ntp + alpha * l_ac
};

struct MonitorPoint {
  std::size_t step = 0;
  double heldout_l_ac = 0;
};

struct CondenseReport {
  std::vector<double> baseline_hist;
  std::vector<double> post_hist;
  std::size_t designated_layer = 0;
  double baseline_share = 0;
  double post_share = 0;
  std::size_t heldout_n = 0;
  double alpha = 0;
  double z_p_value = 1.0;  // two-proportion test, baseline vs. post share
  bool diverged = false;
  std::string message;
  std::vector<CondenseLog> log;
  std::vector<MonitorPoint> monitor;
};

/// Two-sided p-value of a pooled two-proportion z-test.
inline double two_proportion_p(double p1, std::size_t n1, double p2, std::size_t n2) {
  const double x = p1 * static_cast<double>(n1) + p2 * static_cast<double>(n2);
  const double pool = x / static_cast<double>(n1 + n2);
  const double se = std::sqrt(pool * (1.0 - pool) * (1.0 / static_cast<double>(n1) + 1.0 / static_cast<double>(n2)));
  if (!(se > 0.0)) return p1 == p2 ? 1.0 : 0.0;
  const double z = std::abs(p1 - p2) / se;
  return std::erfc(z / std::sqrt(2.0));
}

struct HistResult {
  std::vector<double> hist;
  std::vector<std::size_t> peaks;
};

inline HistResult peak_histogram(const std::vector<attn::AttentionTensor>& tensors,
                                 const std::vector<synth::SynthSample>& samples) {
  if (tensors.empty()) fail(ErrorCode::domain, "peak_hist needs at least one tensor");
  HistResult r;
  r.hist.assign(tensors[0].layers, 0.0);
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto region = attn::box_to_region(samples[i].target, tensors[i].hp, tensors[i].wp);
    const std::size_t pk = attn::peak_layer(tensors[i], region, tensors[i].all_queries());
    r.peaks.push_back(pk);
    r.hist[pk] += 1.0;
  }
  for (double& h : r.hist) h /= static_cast<double>(tensors.size());
  return r;
}

inline double heldout_condensation_loss(MockAttnModel& m, const std::vector<synth::SynthSample>& samples,
                                        std::size_t layer) {
  const std::size_t n = samples.size();
  CondenseGraph cg(m, n, layer, attn::LossWeights{1.0, 0.0});
  CondenseBatch b(n, m.patches(), m.layers());
  for (std::size_t k = 0; k < n; ++k) b.set(k, *samples[k].attn, samples[k].target);
  b.run(cg);
  double s = 0;
  for (double v : cg.g.value(cg.l_ac)) s += v;
  return s / static_cast<double>(n);
}

/// Adam on ntp + alpha * mean L_AC at the designated layer, with before/after
/// peak-layer histograms on the held-out split.
inline CondenseReport train_condense(MockAttnModel& m, const synth::SynthConfig& synth_cfg, const CondenseConfig& cfg,
                                     const attn::LossWeights& weights, std::uint64_t seed,
                                     std::optional<std::vector<synth::SynthSample>> heldout = std::nullopt) {
  cfg.validate();
  if (!(weights.alpha >= 0.0)) fail(ErrorCode::domain, "alpha must be non-negative");
  CondenseReport rep;
  rep.alpha = weights.alpha;
  if (cfg.designated_layer) {
    rep.designated_layer = *cfg.designated_layer;
  } else {
    const auto val = split_samples(synth_cfg, Split::val, 0, cfg.val_n);
    std::vector<attn::AttentionTensor> ts;
    std::vector<attn::Region> rs;
    for (const auto& s : val) {
      ts.push_back(*s.attn);
      rs.push_back(attn::box_to_region(s.target, s.attn->hp, s.attn->wp));
    }
    rep.designated_layer = select_designated_layer(ts, rs);
  }
  if (rep.designated_layer >= m.layers()) fail(ErrorCode::domain, "designated layer out of range");

  if (!heldout) heldout = split_samples(synth_cfg, Split::heldout, 0, cfg.heldout_n);
  rep.heldout_n = heldout->size();
  const std::vector<synth::SynthSample> monitor(heldout->begin(),
                                                heldout->begin() + static_cast<std::ptrdiff_t>(cfg.monitor_n));
  const auto base = peak_histogram(emit(m, *heldout), *heldout);
  rep.baseline_hist = base.hist;
  rep.baseline_share = base.hist[rep.designated_layer];
  if (cfg.monitor_n) rep.monitor.push_back({0, heldout_condensation_loss(m, monitor, rep.designated_layer)});

  const auto train_cfg = split_config(synth_cfg, Split::train);
  CondenseGraph cg(m, cfg.batch, rep.designated_layer, weights);
  CondenseBatch batch(cfg.batch, m.patches(), m.layers());
  ad::Adam<double> opt(m.params, ad::AdamConfig{.lr = cfg.lr});
  detector::BatchSampler sampler(cfg.train_n, sub_seed(seed, 0xba7d));
  auto last_good = m.params.cast<double>();
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      const auto s = synth::gen_sample(train_cfg, sampler.at(step * cfg.batch + b), true);
      batch.set(b, *s.attn, s.target);
    }
    m.params.zero_grad();
    batch.run(cg);
    const auto lac = cg.g.value(cg.l_ac);
    CondenseLog rec;
    rec.step = step;
    for (double v : lac) rec.l_ac += v;
    rec.l_ac /= static_cast<double>(cfg.batch);
    rec.total = cg.g.value(cg.loss)[0];
    if (!std::isfinite(rec.total)) {
      m.params.assign_from(last_good);
      rep.diverged = true;
      rep.message = "non-finite loss at step " + std::to_string(step);
      break;
    }
    cg.g.backward(cg.loss);
    opt.step(m.params);
    rep.log.push_back(rec);
    if (cfg.eval_every && (step + 1) % cfg.eval_every == 0) {
      last_good = m.params.cast<double>();
      if (cfg.monitor_n)
        rep.monitor.push_back({step + 1, heldout_condensation_loss(m, monitor, rep.designated_layer)});
    }
  }

  const auto post = peak_histogram(emit(m, *heldout), *heldout);
  rep.post_hist = post.hist;
  rep.post_share = post.hist[rep.designated_layer];
  rep.z_p_value = two_proportion_p(rep.baseline_share, rep.heldout_n, rep.post_share, rep.heldout_n);
  return rep;
}

}  // namespace focuslab::condense
