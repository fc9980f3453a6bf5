// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "focuslab/attn/types.hpp"
#include "focuslab/io/files.hpp"

namespace focuslab::io {

using json = nlohmann::json;

inline constexpr std::string_view kTensorMagic = "CFT1";

/// One JSON header line, then raw little-endian f32 scalars in row-major order.
struct TensorFile {
  std::string layout;  // "LHQP" or "HW"
  std::vector<std::size_t> dims;
  json extra = json::object();  // grid, query ids, mask, provenance
  std::vector<float> data;

  std::size_t count() const {
    std::size_t n = 1;
    for (std::size_t d : dims) n *= d;
    return n;
  }
};

namespace detail {

inline void put_f32_le(std::string& out, std::span<const float> v) {
  const std::size_t base = out.size();
  out.resize(base + 4 * v.size());
  char* dst = out.data() + base;
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(dst, v.data(), 4 * v.size());
  } else {
    for (std::size_t i = 0; i < v.size(); ++i) {
      const auto u = std::bit_cast<std::uint32_t>(v[i]);
      for (int b = 0; b < 4; ++b) dst[4 * i + b] = static_cast<char>((u >> (8 * b)) & 0xff);
    }
  }
}

inline void get_f32_le(std::string_view in, std::vector<float>& v) {
  v.resize(in.size() / 4);
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(v.data(), in.data(), 4 * v.size());
  } else {
    for (std::size_t i = 0; i < v.size(); ++i) {
      std::uint32_t u = 0;
      for (int b = 0; b < 4; ++b) u |= std::uint32_t(static_cast<unsigned char>(in[4 * i + b])) << (8 * b);
      v[i] = std::bit_cast<float>(u);
    }
  }
}

/// Splits "header\npayload"; the header must be a JSON object.
inline std::pair<json, std::string_view> split_header(std::string_view bytes, const std::string& what) {
  const std::size_t nl = bytes.find('\n');
  if (nl == std::string_view::npos) fail(ErrorCode::format, what + ": missing header line");
  json h;
  try {
    h = json::parse(bytes.substr(0, nl));
  } catch (const json::exception& e) {
    fail(ErrorCode::format, what + ": corrupt header: " + e.what());
  }
  if (!h.is_object()) fail(ErrorCode::format, what + ": header is not a JSON object");
  return {std::move(h), bytes.substr(nl + 1)};
}

inline void check_payload(std::size_t actual, std::size_t expected, const std::string& what) {
  if (actual < expected)
    fail(ErrorCode::format, what + ": truncated payload: expected " + std::to_string(expected) + " bytes, got " +
                                std::to_string(actual));
  if (actual > expected)
    fail(ErrorCode::format, what + ": payload has " + std::to_string(actual - expected) +
                                " trailing bytes (expected " + std::to_string(expected) + ")");
}

}  // namespace detail

inline std::string encode_tensor(const TensorFile& t) {
  if (t.data.size() != t.count())
    fail(ErrorCode::shape, "tensor data has " + std::to_string(t.data.size()) + " values for dims of " +
                               std::to_string(t.count()));
  json h = t.extra;
  h["magic"] = kTensorMagic;
  h["dtype"] = "f32";
  h["endian"] = "little";
  h["layout"] = t.layout;
  h["dims"] = t.dims;
  std::string out = h.dump();
  out.push_back('\n');
  detail::put_f32_le(out, t.data);
  return out;
}

inline TensorFile decode_tensor(std::string_view bytes, const std::string& what = "tensor") {
  auto [h, payload] = detail::split_header(bytes, what);
  auto str = [&](const char* key) -> std::string {
    if (!h.contains(key) || !h[key].is_string()) fail(ErrorCode::format, what + ": header lacks string '" + key + "'");
    return h[key].get<std::string>();
  };
  if (str("magic") != kTensorMagic) fail(ErrorCode::format, what + ": unknown magic '" + str("magic") + "'");
  if (str("dtype") != "f32") fail(ErrorCode::format, what + ": unsupported dtype '" + str("dtype") + "'");
  if (str("endian") != "little") fail(ErrorCode::format, what + ": unsupported endian '" + str("endian") + "'");
  TensorFile t;
  t.layout = str("layout");
  if (t.layout != "LHQP" && t.layout != "HW") fail(ErrorCode::format, what + ": unknown layout '" + t.layout + "'");
  if (!h.contains("dims") || !h["dims"].is_array()) fail(ErrorCode::format, what + ": header lacks dims");
  for (const auto& d : h["dims"]) {
    if (!d.is_number_unsigned() || d.get<std::size_t>() == 0)
      fail(ErrorCode::format, what + ": dims must be positive integers");
    t.dims.push_back(d.get<std::size_t>());
  }
  if (t.dims.size() != t.layout.size())
    fail(ErrorCode::format, what + ": layout " + t.layout + " needs " + std::to_string(t.layout.size()) + " dims");
  detail::check_payload(payload.size(), 4 * t.count(), what);
  detail::get_f32_le(payload, t.data);
  for (const char* k : {"magic", "dtype", "endian", "layout", "dims"}) h.erase(k);
  t.extra = std::move(h);
  return t;
}

inline void write_tensor(const fs::path& path, const TensorFile& t) { write_file(path, encode_tensor(t)); }

inline TensorFile read_tensor(const fs::path& path) { return decode_tensor(read_file(path), path.string()); }

/// LHQP dims are [L, H, Q, P]; the patch grid travels in extra.grid.
inline TensorFile to_file(const attn::AttentionTensor& a, json extra = json::object()) {
  a.validate();
  TensorFile t;
  t.layout = "LHQP";
  t.dims = {a.layers, a.heads, a.queries, a.patches()};
  t.extra = std::move(extra);
  t.extra["grid"] = {a.hp, a.wp};
  if (!a.query_token_ids.empty()) t.extra["query_token_ids"] = a.query_token_ids;
  t.data = a.weights;
  return t;
}

inline attn::AttentionTensor attention_from_file(const TensorFile& t) {
  if (t.layout != "LHQP") fail(ErrorCode::format, "expected an LHQP tensor, got " + t.layout);
  std::size_t hp = 0, wp = 0;
  if (t.extra.contains("grid")) {
    const auto& g = t.extra["grid"];
    if (!g.is_array() || g.size() != 2) fail(ErrorCode::format, "grid must be [Hp, Wp]");
    hp = g[0].get<std::size_t>();
    wp = g[1].get<std::size_t>();
  } else {
    const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(t.dims[3]))));
    if (side * side != t.dims[3]) fail(ErrorCode::format, "non-square patch axis needs an explicit grid");
    hp = wp = side;
  }
  if (hp * wp != t.dims[3]) fail(ErrorCode::format, "grid does not match the patch axis");
  attn::AttentionTensor a(t.dims[0], t.dims[1], t.dims[2], hp, wp);
  a.weights = t.data;
  if (t.extra.contains("query_token_ids")) a.query_token_ids = t.extra["query_token_ids"].get<std::vector<std::size_t>>();
  a.validate();
  return a;
}

inline TensorFile to_file(const attn::HeatMap& h, json extra = json::object()) {
  TensorFile t;
  t.layout = "HW";
  t.dims = {h.hp, h.wp};
  t.extra = std::move(extra);
  if (std::find(h.mask.begin(), h.mask.end(), std::uint8_t{0}) != h.mask.end()) t.extra["mask"] = h.mask;
  t.data.assign(h.values.begin(), h.values.end());
  return t;
}

inline attn::HeatMap heatmap_from_file(const TensorFile& t) {
  if (t.layout != "HW") fail(ErrorCode::format, "expected an HW tensor, got " + t.layout);
  attn::HeatMap h(t.dims[0], t.dims[1], std::vector<double>(t.data.begin(), t.data.end()));
  if (t.extra.contains("mask")) {
    h.mask = t.extra["mask"].get<std::vector<std::uint8_t>>();
    if (h.mask.size() != h.values.size()) fail(ErrorCode::format, "mask length does not match the grid");
  }
  h.validate();
  return h;
}

}  // namespace focuslab::io
