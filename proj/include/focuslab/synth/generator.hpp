// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "focuslab/attn/types.hpp"
#include "focuslab/box/geometry.hpp"
#include "focuslab/core/rng.hpp"

namespace focuslab::synth {

struct SynthConfig {
  std::size_t grid_h = 24;
  std::size_t grid_w = 24;
  double blob_sigma_frac = 0.5;
  double noise_level = 0.05;
  std::size_t distractor_count = 2;
  double distractor_gain = 0.6;
  double box_min = 0.08;
  double box_max = 0.6;

  std::size_t layer_count = 36;
  std::size_t head_count = 1;
  std::size_t query_count = 1;
  double dispersion_temp = 1.0;
  double peak_amplitude = 1.5;  // height of the layer-score bump
  double peak_center = 22.0;    // layer index of the bump
  double peak_width = 1.5;      // bump width in layers
  double score_noise = 1.0;     // sd of per-layer score noise
  double head_jitter = 0.1;     // per-row multiplicative cell jitter
  std::optional<std::size_t> forced_peak_layer;

  std::uint64_t seed = 0;

  void validate() const {
    auto positive = [](double v, const char* name) {
      if (!(v > 0.0)) fail(ErrorCode::config, std::string(name) + " must be positive");
    };
    auto non_negative = [](double v, const char* name) {
      if (!(v >= 0.0)) fail(ErrorCode::config, std::string(name) + " must be non-negative");
    };
    if (grid_h == 0 || grid_w == 0) fail(ErrorCode::config, "grid must be non-empty");
    positive(blob_sigma_frac, "blob_sigma_frac");
    non_negative(noise_level, "noise_level");
    non_negative(distractor_gain, "distractor_gain");
    if (!(box_min > 0.0 && box_min <= box_max && box_max <= 1.0))
      fail(ErrorCode::config, "box size range must satisfy 0 < box_min <= box_max <= 1");
    if (layer_count == 0 || head_count == 0 || query_count == 0)
      fail(ErrorCode::config, "layer/head/query counts must be positive");
    positive(dispersion_temp, "dispersion_temp");
    non_negative(peak_amplitude, "peak_amplitude");
    positive(peak_width, "peak_width");
    non_negative(score_noise, "score_noise");
    if (!(head_jitter >= 0.0 && head_jitter < 1.0)) fail(ErrorCode::config, "head_jitter must be in [0,1)");
    if (forced_peak_layer && *forced_peak_layer >= layer_count)
      fail(ErrorCode::config, "forced_peak_layer out of range");
  }
};

struct SynthSample {
  attn::HeatMap heatmap;
  box::BoxNorm<double> target;
  std::optional<attn::AttentionTensor> attn;
  std::uint64_t seed = 0;
};

/// w, h ~ U[box_min, box_max]; the box lies fully inside the unit square.
inline box::BoxNorm<double> sample_box(Rng& rng, const SynthConfig& cfg) {
  const double w = rng.uniform(cfg.box_min, cfg.box_max);
  const double h = rng.uniform(cfg.box_min, cfg.box_max);
  const double cx = rng.uniform(w / 2, 1.0 - w / 2);
  const double cy = rng.uniform(h / 2, 1.0 - h / 2);
  return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
}

namespace detail {

struct Blob {
  double cx, cy, sx, sy, gain;
};

inline void add_blob(std::vector<double>& v, std::size_t hp, std::size_t wp, const Blob& b, double scale = 1.0) {
  for (std::size_t i = 0; i < hp; ++i) {
    const double y = (static_cast<double>(i) + 0.5) / static_cast<double>(hp);
    const double ey = (y - b.cy) * (y - b.cy) / (2.0 * b.sy * b.sy);
    for (std::size_t j = 0; j < wp; ++j) {
      const double x = (static_cast<double>(j) + 0.5) / static_cast<double>(wp);
      const double ex = (x - b.cx) * (x - b.cx) / (2.0 * b.sx * b.sx);
      v[i * wp + j] += scale * b.gain * std::exp(-(ex + ey));
    }
  }
}

inline Blob target_blob(const box::BoxNorm<double>& t, const SynthConfig& cfg) {
  return {t.cx(), t.cy(), cfg.blob_sigma_frac * t.width(), cfg.blob_sigma_frac * t.height(), 1.0};
}

/// Distractor centers are drawn outside the target box (with a bounded retry).
inline std::vector<Blob> distractors(const box::BoxNorm<double>& t, const SynthConfig& cfg, Rng& rng) {
  std::vector<Blob> out;
  for (std::size_t k = 0; k < cfg.distractor_count; ++k) {
    double cx = 0, cy = 0;
    for (int attempt = 0; attempt < 64; ++attempt) {
      cx = rng.uniform();
      cy = rng.uniform();
      if (cx < t.x1 || cx > t.x2 || cy < t.y1 || cy > t.y2) break;
    }
    const double w = rng.uniform(cfg.box_min, cfg.box_max);
    const double h = rng.uniform(cfg.box_min, cfg.box_max);
    out.push_back({cx, cy, cfg.blob_sigma_frac * w, cfg.blob_sigma_frac * h, cfg.distractor_gain});
  }
  return out;
}

inline void normalize(std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  if (!(s > 0.0)) fail(ErrorCode::numeric, "generated map has no mass");
  for (double& x : v) x /= s;
}

}  // namespace detail

/// Target blob plus distractors plus uniform noise, normalized to sum 1.
inline attn::HeatMap gen_heatmap_from_box(const box::BoxNorm<double>& target, const SynthConfig& cfg, Rng& rng) {
  cfg.validate();
  box::require_valid(target, "gen_heatmap_from_box");
  const std::size_t hp = cfg.grid_h, wp = cfg.grid_w;
  std::vector<double> v(hp * wp, 0.0);
  detail::add_blob(v, hp, wp, detail::target_blob(target, cfg));
  for (const auto& d : detail::distractors(target, cfg, rng)) detail::add_blob(v, hp, wp, d);
  if (cfg.noise_level > 0.0)
    for (double& x : v) x += cfg.noise_level * rng.uniform();
  detail::normalize(v);
  return attn::HeatMap(hp, wp, std::move(v));
}

/// Per-layer target gains L * softmax(z / T), z_l = A * bump(l) + noise.
inline std::vector<double> layer_gains(const SynthConfig& cfg, Rng& rng) {
  const std::size_t L = cfg.layer_count;
  std::vector<double> z(L);
  for (std::size_t l = 0; l < L; ++l) {
    const double d = (static_cast<double>(l) - cfg.peak_center) / cfg.peak_width;
    z[l] = cfg.peak_amplitude * std::exp(-0.5 * d * d) + cfg.score_noise * rng.normal();
  }
  if (cfg.forced_peak_layer) z[*cfg.forced_peak_layer] = *std::max_element(z.begin(), z.end()) + 1.0;
  const double zmax = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double& x : z) s += (x = std::exp((x - zmax) / cfg.dispersion_temp));
  for (double& x : z) x *= static_cast<double>(L) / s;
  return z;
}

/// Layer maps with target mass varying by layer; every (l, h, q) row sums to 1.
inline attn::AttentionTensor gen_attention_tensor(const box::BoxNorm<double>& target, const SynthConfig& cfg,
                                                  Rng& rng) {
  cfg.validate();
  box::require_valid(target, "gen_attention_tensor");
  const std::size_t hp = cfg.grid_h, wp = cfg.grid_w, P = hp * wp, L = cfg.layer_count;
  std::vector<double> t(P, 0.0);
  detail::add_blob(t, hp, wp, detail::target_blob(target, cfg));
  const auto ds = detail::distractors(target, cfg, rng);
  std::vector<std::vector<double>> dmaps;
  for (const auto& d : ds) {
    std::vector<double> m(P, 0.0);
    detail::add_blob(m, hp, wp, d);
    dmaps.push_back(std::move(m));
  }
  const std::vector<double> gains = layer_gains(cfg, rng);

  attn::AttentionTensor out(L, cfg.head_count, cfg.query_count, hp, wp);
  std::vector<double> layer(P), row(P);
  for (std::size_t l = 0; l < L; ++l) {
    for (std::size_t p = 0; p < P; ++p) layer[p] = gains[l] * t[p];
    for (const auto& m : dmaps) {
      const double amp = rng.uniform(0.5, 1.5);
      for (std::size_t p = 0; p < P; ++p) layer[p] += amp * m[p];
    }
    if (cfg.noise_level > 0.0)
      for (double& x : layer) x += cfg.noise_level * rng.uniform();
    for (std::size_t h = 0; h < cfg.head_count; ++h)
      for (std::size_t q = 0; q < cfg.query_count; ++q) {
        for (std::size_t p = 0; p < P; ++p)
          row[p] = layer[p] * (1.0 + cfg.head_jitter * rng.uniform(-1.0, 1.0)) + 1e-12;
        detail::normalize(row);
        float* dst = out.weights.data() + out.offset(l, h, q);
        for (std::size_t p = 0; p < P; ++p) dst[p] = static_cast<float>(row[p]);
      }
  }
  return out;
}

/// Tight box around cells >= frac * max (ties at the threshold included), in cell extents.
inline box::BoxNorm<double> threshold_box_oracle(const attn::HeatMap& heat, double frac) {
  if (!(frac > 0.0 && frac < 1.0)) fail(ErrorCode::domain, "frac must be in (0,1)");
  double peak = 0.0;
  for (std::size_t p = 0; p < heat.size(); ++p)
    if (heat.mask.empty() || heat.mask[p]) peak = std::max(peak, heat.values[p]);
  if (!(peak > 0.0)) fail(ErrorCode::numeric, "all-zero heatmap");
  const double thr = frac * peak;
  std::size_t i0 = heat.hp, i1 = 0, j0 = heat.wp, j1 = 0;
  for (std::size_t i = 0; i < heat.hp; ++i)
    for (std::size_t j = 0; j < heat.wp; ++j) {
      const std::size_t p = i * heat.wp + j;
      if ((!heat.mask.empty() && !heat.mask[p]) || heat.values[p] < thr) continue;
      i0 = std::min(i0, i);
      i1 = std::max(i1, i);
      j0 = std::min(j0, j);
      j1 = std::max(j1, j);
    }
  const double W = static_cast<double>(heat.wp), H = static_cast<double>(heat.hp);
  return {static_cast<double>(j0) / W, static_cast<double>(i0) / H, static_cast<double>(j1 + 1) / W,
          static_cast<double>(i1 + 1) / H};
}

/// Sample `index` of the stream rooted at cfg.seed.
inline SynthSample gen_sample(const SynthConfig& cfg, std::uint64_t index, bool with_attention = false) {
  SynthSample s;
  s.seed = sub_seed(cfg.seed, index);
  Rng rng(s.seed);
  s.target = sample_box(rng, cfg);
  s.heatmap = gen_heatmap_from_box(s.target, cfg, rng);
  if (with_attention) s.attn = gen_attention_tensor(s.target, cfg, rng);
  return s;
}

struct SplitCounts {
  std::size_t train = 0, val = 0, test = 0;
};

inline SplitCounts split_counts(std::size_t n, const std::array<double, 3>& fractions) {
  if (n == 0) fail(ErrorCode::domain, "dataset size must be positive");
  double total = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0)) fail(ErrorCode::domain, "split fractions must be non-negative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) fail(ErrorCode::domain, "split fractions must sum to 1");
  SplitCounts c;
  c.train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * fractions[0]));
  c.val = std::min(n - c.train, static_cast<std::size_t>(std::llround(static_cast<double>(n) * fractions[1])));
  c.test = n - c.train - c.val;
  return c;
}

}  // namespace focuslab::synth
