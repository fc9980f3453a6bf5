// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "focuslab/core/error.hpp"

namespace focuslab::attn {

/// Attention weights [L x H x Q x P], row-major, over a Hp x Wp patch grid.
struct AttentionTensor {
  std::size_t layers = 0;
  std::size_t heads = 0;
  std::size_t queries = 0;
  std::size_t hp = 0;
  std::size_t wp = 0;
  /// Token id of each query row; empty means row index == token id.
  std::vector<std::size_t> query_token_ids;
  std::vector<float> weights;

  AttentionTensor() = default;
  AttentionTensor(std::size_t l, std::size_t h, std::size_t q, std::size_t grid_h, std::size_t grid_w)
      : layers(l), heads(h), queries(q), hp(grid_h), wp(grid_w), weights(l * h * q * grid_h * grid_w, 0.0f) {}

  std::size_t patches() const { return hp * wp; }

  std::size_t offset(std::size_t l, std::size_t h, std::size_t q) const {
    return ((l * heads + h) * queries + q) * patches();
  }
  float& at(std::size_t l, std::size_t h, std::size_t q, std::size_t p) { return weights[offset(l, h, q) + p]; }
  float at(std::size_t l, std::size_t h, std::size_t q, std::size_t p) const { return weights[offset(l, h, q) + p]; }

  /// Query row positions for a set of token ids.
  std::vector<std::size_t> rows_for(const std::vector<std::size_t>& token_ids) const {
    if (token_ids.empty()) fail(ErrorCode::domain, "empty query subset");
    std::vector<std::size_t> rows;
    rows.reserve(token_ids.size());
    for (std::size_t id : token_ids) {
      if (query_token_ids.empty()) {
        if (id >= queries) fail(ErrorCode::domain, "query token " + std::to_string(id) + " out of range");
        rows.push_back(id);
        continue;
      }
      auto it = std::find(query_token_ids.begin(), query_token_ids.end(), id);
      if (it == query_token_ids.end())
        fail(ErrorCode::domain, "query token " + std::to_string(id) + " is not a query of this tensor");
      rows.push_back(static_cast<std::size_t>(it - query_token_ids.begin()));
    }
    return rows;
  }

  /// All query token ids in row order.
  std::vector<std::size_t> all_queries() const {
    if (!query_token_ids.empty()) return query_token_ids;
    std::vector<std::size_t> ids(queries);
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    return ids;
  }

  void validate() const {
    if (layers == 0 || heads == 0 || queries == 0 || hp == 0 || wp == 0)
      fail(ErrorCode::shape, "attention tensor has an empty axis");
    if (weights.size() != layers * heads * queries * patches())
      fail(ErrorCode::shape, "attention tensor payload does not match its dims");
    if (!query_token_ids.empty() && query_token_ids.size() != queries)
      fail(ErrorCode::shape, "query_token_ids length must equal the query axis");
    for (float w : weights)
      if (!(w >= 0.0f)) fail(ErrorCode::numeric, "attention weights must be finite and non-negative");
  }
};

/// Patch-grid scalar field with a validity mask.
struct HeatMap {
  std::size_t hp = 0;
  std::size_t wp = 0;
  std::vector<double> values;
  std::vector<std::uint8_t> mask;

  HeatMap() = default;
  HeatMap(std::size_t h, std::size_t w) : hp(h), wp(w), values(h * w, 0.0), mask(h * w, 1) {}
  HeatMap(std::size_t h, std::size_t w, std::vector<double> v) : hp(h), wp(w), values(std::move(v)), mask(h * w, 1) {
    if (values.size() != h * w) fail(ErrorCode::shape, "heatmap values do not match grid");
  }

  std::size_t size() const { return hp * wp; }
  double& at(std::size_t i, std::size_t j) { return values[i * wp + j]; }
  double at(std::size_t i, std::size_t j) const { return values[i * wp + j]; }

  double max() const { return values.empty() ? 0.0 : *std::max_element(values.begin(), values.end()); }
  double sum() const { return std::accumulate(values.begin(), values.end(), 0.0); }

  void validate() const {
    if (hp == 0 || wp == 0) fail(ErrorCode::shape, "heatmap has an empty axis");
    if (values.size() != size() || mask.size() != size()) fail(ErrorCode::shape, "heatmap buffers do not match grid");
    for (std::size_t i = 0; i < size(); ++i) {
      if (!(values[i] >= 0.0)) fail(ErrorCode::numeric, "heatmap values must be finite and non-negative");
      if (!mask[i] && values[i] != 0.0) fail(ErrorCode::domain, "heatmap is non-zero on a masked cell");
    }
  }
};

enum class RegionSource : std::uint8_t { box_derived, explicit_set };

/// Sorted, duplicate-free subset of patch indices.
struct Region {
  std::vector<std::size_t> indices;
  RegionSource source = RegionSource::explicit_set;

  static Region from_indices(std::vector<std::size_t> idx, std::size_t patch_count,
                             RegionSource src = RegionSource::explicit_set) {
    std::sort(idx.begin(), idx.end());
    idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
    if (idx.empty()) fail(ErrorCode::domain, "region is empty");
    if (idx.back() >= patch_count)
      fail(ErrorCode::domain, "region index " + std::to_string(idx.back()) + " >= patch count " +
                                  std::to_string(patch_count));
    return Region{std::move(idx), src};
  }

  static Region whole(std::size_t patch_count) {
    std::vector<std::size_t> idx(patch_count);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return from_indices(std::move(idx), patch_count);
  }

  std::size_t size() const { return indices.size(); }
  bool contains(std::size_t p) const { return std::binary_search(indices.begin(), indices.end(), p); }
};

}  // namespace focuslab::attn
