// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "focuslab/attn/types.hpp"
#include "focuslab/box/geometry.hpp"

namespace focuslab::attn {

/// Mean attention over heads and the selected queries at one layer.
inline HeatMap aggregate_heatmap(const AttentionTensor& a, std::size_t layer, const std::vector<std::size_t>& query_ids) {
  if (layer >= a.layers)
    fail(ErrorCode::domain, "layer " + std::to_string(layer) + " out of range [0," + std::to_string(a.layers) + ")");
  const std::vector<std::size_t> rows = a.rows_for(query_ids);
  const std::size_t p_count = a.patches();
  HeatMap out(a.hp, a.wp);
  for (std::size_t h = 0; h < a.heads; ++h)
    for (std::size_t q : rows) {
      const float* row = a.weights.data() + a.offset(layer, h, q);
      for (std::size_t p = 0; p < p_count; ++p) out.values[p] += row[p];
    }
  const double inv = 1.0 / static_cast<double>(rows.size() * a.heads);
  for (double& v : out.values) v *= inv;
  return out;
}

inline HeatMap aggregate_heatmap(const AttentionTensor& a, std::size_t layer) {
  return aggregate_heatmap(a, layer, a.all_queries());
}

/// Mean of per-layer heatmaps over a set of layers.
inline HeatMap aggregate_window(const AttentionTensor& a, const std::vector<std::size_t>& layers,
                                const std::vector<std::size_t>& query_ids) {
  if (layers.empty()) fail(ErrorCode::domain, "empty layer set");
  if (layers.size() == 1) return aggregate_heatmap(a, layers[0], query_ids);
  HeatMap out(a.hp, a.wp);
  for (std::size_t l : layers) {
    const HeatMap h = aggregate_heatmap(a, l, query_ids);
    for (std::size_t p = 0; p < out.size(); ++p) out.values[p] += h.values[p];
  }
  const double inv = 1.0 / static_cast<double>(layers.size());
  for (double& v : out.values) v *= inv;
  return out;
}

/// Layers l-r..l+r clipped to [0, layer_count).
inline std::vector<std::size_t> layer_window(std::size_t center, std::size_t width, std::size_t layer_count) {
  if (width == 0 || width % 2 == 0) fail(ErrorCode::domain, "window width must be odd and positive");
  if (center >= layer_count) fail(ErrorCode::domain, "window center out of range");
  const std::size_t r = width / 2;
  std::vector<std::size_t> out;
  for (std::size_t l = center >= r ? center - r : 0; l <= center + r && l < layer_count; ++l) out.push_back(l);
  return out;
}

/// Mean over the region divided by mean over valid cells.
inline double concentration(const HeatMap& heat, const Region& region) {
  if (region.indices.empty()) fail(ErrorCode::domain, "region is empty");
  if (heat.mask.size() != heat.size() || heat.values.size() != heat.size())
    fail(ErrorCode::shape, "heatmap buffers do not match grid");
  double in_sum = 0.0;
  for (std::size_t p : region.indices) {
    if (p >= heat.size()) fail(ErrorCode::domain, "region index outside heatmap");
    if (!heat.mask[p]) fail(ErrorCode::domain, "region contains invalid cells");
    in_sum += heat.values[p];
  }
  double all_sum = 0.0;
  std::size_t valid = 0;
  for (std::size_t p = 0; p < heat.size(); ++p)
    if (heat.mask[p]) {
      all_sum += heat.values[p];
      ++valid;
    }
  if (!(all_sum > 0.0)) fail(ErrorCode::numeric, "degenerate attention");
  return (in_sum / static_cast<double>(region.size())) / (all_sum / static_cast<double>(valid));
}

/// Per-layer concentration on a region.
inline std::vector<double> concentration_curve(const AttentionTensor& a, const Region& region,
                                               const std::vector<std::size_t>& query_ids) {
  std::vector<double> s(a.layers);
  for (std::size_t l = 0; l < a.layers; ++l) s[l] = concentration(aggregate_heatmap(a, l, query_ids), region);
  return s;
}

/// argmax over layers of the concentration; ties go to the lowest layer.
inline std::size_t peak_layer(const AttentionTensor& a, const Region& region, const std::vector<std::size_t>& query_ids) {
  const std::vector<double> s = concentration_curve(a, region, query_ids);
  std::size_t best = 0;
  for (std::size_t l = 1; l < s.size(); ++l)
    if (s[l] > s[best]) best = l;
  return best;
}

inline double condensation_loss(const HeatMap& heat, const Region& target) {
  const double s = concentration(heat, target);
  if (!(s > 0.0)) fail(ErrorCode::numeric, "zero in-region mass");
  return -std::log(s);
}

/// d(condensation_loss)/d(values): -[p in R]/sum_R + [p valid]/sum_valid.
inline std::vector<double> condensation_loss_grad(const HeatMap& heat, const Region& target) {
  condensation_loss(heat, target);  // validates
  double in_sum = 0.0, all_sum = 0.0;
  for (std::size_t p : target.indices) in_sum += heat.values[p];
  for (std::size_t p = 0; p < heat.size(); ++p)
    if (heat.mask[p]) all_sum += heat.values[p];
  std::vector<double> g(heat.size(), 0.0);
  for (std::size_t p = 0; p < heat.size(); ++p)
    if (heat.mask[p]) g[p] = 1.0 / all_sum;
  for (std::size_t p : target.indices) g[p] -= 1.0 / in_sum;
  return g;
}

struct LossWeights {
  double alpha = 0.003;
  double ntp_surrogate = 0.0;
};

inline double total_loss(double ntp_surrogate, double l_ac, const LossWeights& w) {
  if (!(w.alpha >= 0.0)) fail(ErrorCode::domain, "alpha must be non-negative");
  if (!std::isfinite(ntp_surrogate) || !std::isfinite(l_ac)) fail(ErrorCode::numeric, "loss terms must be finite");
  return ntp_surrogate + w.alpha * l_ac;
}

/// Patches whose cell centers lie inside the box (closed interval). If none do,
/// the patch containing the box center.
inline Region box_to_region(const box::BoxNorm<double>& b, std::size_t hp, std::size_t wp) {
  box::require_valid(b, "box_to_region");
  if (hp == 0 || wp == 0) fail(ErrorCode::shape, "empty grid");
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < hp; ++i) {
    const double cy = (static_cast<double>(i) + 0.5) / static_cast<double>(hp);
    if (cy < b.y1 || cy > b.y2) continue;
    for (std::size_t j = 0; j < wp; ++j) {
      const double cx = (static_cast<double>(j) + 0.5) / static_cast<double>(wp);
      if (cx >= b.x1 && cx <= b.x2) idx.push_back(i * wp + j);
    }
  }
  if (idx.empty()) {
    auto cell = [](double c, std::size_t n) {
      const double k = std::floor(c * static_cast<double>(n));
      return static_cast<std::size_t>(std::clamp(k, 0.0, static_cast<double>(n - 1)));
    };
    idx.push_back(cell(b.cy(), hp) * wp + cell(b.cx(), wp));
  }
  return Region::from_indices(std::move(idx), hp * wp, RegionSource::box_derived);
}

/// Fraction of samples whose peak layer equals each layer.
inline std::vector<double> peak_hist(const std::vector<AttentionTensor>& tensors, const std::vector<Region>& regions,
                                     const std::vector<std::size_t>& query_ids) {
  if (tensors.empty()) fail(ErrorCode::domain, "peak_hist needs at least one tensor");
  if (tensors.size() != regions.size()) fail(ErrorCode::shape, "tensor and region counts differ");
  std::vector<double> hist(tensors[0].layers, 0.0);
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (tensors[i].layers != hist.size()) fail(ErrorCode::shape, "tensors disagree on layer count");
    const auto& q = query_ids.empty() ? tensors[i].all_queries() : query_ids;
    hist[peak_layer(tensors[i], regions[i], q)] += 1.0;
  }
  for (double& h : hist) h /= static_cast<double>(tensors.size());
  return hist;
}

}  // namespace focuslab::attn
