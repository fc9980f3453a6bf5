// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "focuslab/attn/types.hpp"
#include "focuslab/autodiff/graph.hpp"
#include "focuslab/autodiff/params.hpp"
#include "focuslab/box/geometry.hpp"
#include "focuslab/core/rng.hpp"

namespace focuslab::detector {

struct DetectorConfig {
  std::size_t canvas = 32;
  std::vector<std::size_t> stem_channels{64, 128, 256};
  std::size_t width = 256;
  std::size_t heads = 8;
  std::size_t ff = 512;
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 2;
  std::size_t groups = 8;

  std::size_t tokens() const {
    std::size_t s = canvas;
    for (std::size_t i = 0; i < stem_channels.size(); ++i) s = (s - 1) / 2 + 1;
    return s * s;
  }
  std::size_t token_side() const {
    std::size_t s = canvas;
    for (std::size_t i = 0; i < stem_channels.size(); ++i) s = (s - 1) / 2 + 1;
    return s;
  }
  void validate() const {
    if (canvas == 0 || stem_channels.empty()) fail(ErrorCode::config, "detector canvas and stem must be non-empty");
    if (stem_channels.back() != width) fail(ErrorCode::config, "last stem width must equal model width");
    for (std::size_t c : stem_channels)
      if (c % groups != 0) fail(ErrorCode::config, "stem channels must be divisible by the group count");
    if (width % heads != 0) fail(ErrorCode::config, "width must be divisible by heads");
  }
};

inline constexpr std::size_t kInputChannels = 4;

/// Canvas planes {heatmap/max, mask, x-grid, y-grid}, [4, C, C].
struct DetectorInput {
  std::size_t canvas = 32;
  std::size_t hp = 0;
  std::size_t wp = 0;
  std::vector<float> planes;
};

inline DetectorInput build_input(const attn::HeatMap& heat, std::size_t canvas = 32) {
  if (heat.hp == 0 || heat.wp == 0 || heat.hp > canvas || heat.wp > canvas)
    fail(ErrorCode::shape, "heatmap grid must be within the " + std::to_string(canvas) + "x" +
                               std::to_string(canvas) + " canvas");
  const double peak = heat.max();
  if (!(peak > 0.0)) fail(ErrorCode::numeric, "all-zero heatmap");
  DetectorInput in;
  in.canvas = canvas;
  in.hp = heat.hp;
  in.wp = heat.wp;
  const std::size_t plane = canvas * canvas;
  in.planes.assign(kInputChannels * plane, 0.0f);
  for (std::size_t i = 0; i < heat.hp; ++i)
    for (std::size_t j = 0; j < heat.wp; ++j) {
      const std::size_t src = i * heat.wp + j;
      const bool valid = heat.mask.empty() || heat.mask[src];
      in.planes[i * canvas + j] = valid ? static_cast<float>(heat.values[src] / peak) : 0.0f;
      in.planes[plane + i * canvas + j] = valid ? 1.0f : 0.0f;
    }
  for (std::size_t i = 0; i < canvas; ++i)
    for (std::size_t j = 0; j < canvas; ++j) {
      in.planes[2 * plane + i * canvas + j] = static_cast<float>((static_cast<double>(j) + 0.5) / canvas);
      in.planes[3 * plane + i * canvas + j] = static_cast<float>((static_cast<double>(i) + 0.5) / canvas);
    }
  return in;
}

/// Maps a normalized box on an hp x wp grid to canvas-normalized coordinates and back.
/// The heatmap occupies the top-left hp x wp cells of the canvas.
inline box::BoxNorm<double> grid_to_canvas(const box::BoxNorm<double>& b, std::size_t hp, std::size_t wp,
                                            std::size_t canvas) {
  const double sx = static_cast<double>(wp) / canvas, sy = static_cast<double>(hp) / canvas;
  return {b.x1 * sx, b.y1 * sy, b.x2 * sx, b.y2 * sy};
}
inline box::BoxNorm<double> canvas_to_grid(const box::BoxNorm<double>& b, std::size_t hp, std::size_t wp,
                                            std::size_t canvas) {
  const double sx = static_cast<double>(canvas) / wp, sy = static_cast<double>(canvas) / hp;
  return {b.x1 * sx, b.y1 * sy, b.x2 * sx, b.y2 * sy};
}

/// Parameter names follow the module path, e.g. "enc0.attn.wq".
template <typename T>
ad::ParamStore<T> init_params(const DetectorConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ad::ParamStore<T> ps;
  Rng rng(seed);
  auto linear = [&](const std::string& name, std::size_t in, std::size_t out, bool bias = true) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    ps.add_uniform(name + ".w", {in, out}, bound, rng);
    if (bias) ps.add_uniform(name + ".b", {out}, bound, rng);
  };
  auto norm = [&](const std::string& name, std::size_t d) {
    ps.add_filled(name + ".g", {d}, T(1));
    ps.add_filled(name + ".b", {d}, T(0));
  };
  auto attention = [&](const std::string& name) {
    linear(name + ".wq", cfg.width, cfg.width);
    linear(name + ".wk", cfg.width, cfg.width, false);  // softmax is shift-invariant in the key bias
    linear(name + ".wv", cfg.width, cfg.width);
    linear(name + ".wo", cfg.width, cfg.width);
  };
  auto feed_forward = [&](const std::string& name) {
    linear(name + ".fc1", cfg.width, cfg.ff);
    linear(name + ".fc2", cfg.ff, cfg.width);
  };

  std::size_t in_ch = kInputChannels;
  for (std::size_t i = 0; i < cfg.stem_channels.size(); ++i) {
    const std::string name = "stem" + std::to_string(i);
    const std::size_t out = cfg.stem_channels[i];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_ch * 9));
    ps.add_uniform(name + ".conv.w", {out, in_ch, 3, 3}, bound, rng);
    ps.add_uniform(name + ".conv.b", {out}, bound, rng);
    norm(name + ".gn", out);
    in_ch = out;
  }
  ps.add_uniform("pos", {cfg.tokens(), cfg.width}, 0.02 * std::sqrt(3.0), rng);
  for (std::size_t l = 0; l < cfg.encoder_layers; ++l) {
    const std::string name = "enc" + std::to_string(l);
    norm(name + ".ln1", cfg.width);
    attention(name + ".attn");
    norm(name + ".ln2", cfg.width);
    feed_forward(name + ".ff");
  }
  norm("enc.ln", cfg.width);
  ps.add_uniform("query", {1, cfg.width}, std::sqrt(3.0), rng);
  for (std::size_t l = 0; l < cfg.decoder_layers; ++l) {
    const std::string name = "dec" + std::to_string(l);
    norm(name + ".ln1", cfg.width);
    attention(name + ".xattn");
    norm(name + ".ln2", cfg.width);
    feed_forward(name + ".ff");
  }
  norm("dec.ln", cfg.width);
  linear("head.fc1", cfg.width, cfg.width);
  linear("head.fc2", cfg.width, 4);
  return ps;
}

/// Forward/backward graph for a fixed batch size.
template <typename T>
struct DetectorGraph {
  ad::Graph<T> g;
  std::size_t batch = 0;
  ad::NodeId canvas_in, gt_in;
  ad::NodeId box_cs;       // [N,4] sigmoid outputs (cx, cy, w, h)
  ad::NodeId corners;      // [N,4]
  ad::NodeId terms;        // [N,2] (l1, 1-giou)
  ad::NodeId loss;         // scalar mean over batch of l1 + 1-giou

  DetectorGraph(ad::ParamStore<T>& ps, const DetectorConfig& cfg, std::size_t n) : batch(n) {
    cfg.validate();
    if (n == 0) fail(ErrorCode::domain, "batch must be positive");
    auto P = [&](const std::string& name) { return g.param(ps.at(name), name); };
    auto linear = [&](ad::NodeId x, const std::string& name, bool bias = true) {
      ad::NodeId y = g.matmul(x, P(name + ".w"), name);
      return bias ? g.add(y, P(name + ".b"), name + "+b") : y;
    };
    auto norm = [&](ad::NodeId x, const std::string& name) {
      return g.layer_norm(x, P(name + ".g"), P(name + ".b"), T(1e-5), name);
    };
    auto ff = [&](ad::NodeId x, const std::string& name) {
      return linear(g.silu(linear(x, name + ".fc1"), name + ".act"), name + ".fc2");
    };

    canvas_in = g.input("canvas", {n, kInputChannels, cfg.canvas, cfg.canvas});
    gt_in = g.input("gt", {n, 4});

    ad::NodeId x = canvas_in;
    for (std::size_t i = 0; i < cfg.stem_channels.size(); ++i) {
      const std::string name = "stem" + std::to_string(i);
      x = g.conv2d(x, P(name + ".conv.w"), P(name + ".conv.b"), 2, 1, name + ".conv");
      x = g.group_norm(x, P(name + ".gn.g"), P(name + ".gn.b"), cfg.groups, T(1e-5), name + ".gn");
      x = g.silu(x, name + ".act");
    }
    const std::size_t tokens = cfg.tokens();
    x = g.reshape(x, {n, cfg.width, tokens}, "flatten");
    x = g.permute(x, {0, 2, 1}, "tokens");
    x = g.add(x, P("pos"), "tokens+pos");

    for (std::size_t l = 0; l < cfg.encoder_layers; ++l) {
      const std::string name = "enc" + std::to_string(l);
      ad::NodeId h = norm(x, name + ".ln1");
      ad::NodeId q = linear(h, name + ".attn.wq");
      ad::NodeId k = linear(h, name + ".attn.wk", false);
      ad::NodeId v = linear(h, name + ".attn.wv");
      ad::NodeId a = g.attention(q, k, v, cfg.heads, name + ".attn");
      x = g.add(x, linear(a, name + ".attn.wo"), name + ".res1");
      x = g.add(x, ff(norm(x, name + ".ln2"), name + ".ff"), name + ".res2");
    }
    const ad::NodeId memory = norm(x, "enc.ln");

    ad::NodeId ones = g.constant(ad::Tensor<T>::filled({n, 1}, T(1)), "ones");
    ad::NodeId y = g.reshape(g.matmul(ones, P("query"), "query.bcast"), {n, 1, cfg.width}, "query.tokens");
    for (std::size_t l = 0; l < cfg.decoder_layers; ++l) {
      const std::string name = "dec" + std::to_string(l);
      ad::NodeId q = linear(norm(y, name + ".ln1"), name + ".xattn.wq");
      ad::NodeId k = linear(memory, name + ".xattn.wk", false);
      ad::NodeId v = linear(memory, name + ".xattn.wv");
      ad::NodeId a = g.attention(q, k, v, cfg.heads, name + ".xattn");
      y = g.add(y, linear(a, name + ".xattn.wo"), name + ".res1");
      y = g.add(y, ff(norm(y, name + ".ln2"), name + ".ff"), name + ".res2");
    }
    y = g.reshape(norm(y, "dec.ln"), {n, cfg.width}, "query.out");
    ad::NodeId logits = linear(g.silu(linear(y, "head.fc1"), "head.act"), "head.fc2");
    box_cs = g.sigmoid(logits, "box_cs");
    // (cx, cy, w, h) -> (cx - w/2, cy - h/2, cx + w/2, cy + h/2)
    ad::Tensor<T> m({4, 4}, {T(1), T(0), T(1), T(0),       //
                             T(0), T(1), T(0), T(1),       //
                             T(-0.5), T(0), T(0.5), T(0),  //
                             T(0), T(-0.5), T(0), T(0.5)});
    corners = g.matmul(box_cs, g.constant(std::move(m), "cs_to_corners"), "corners");
    terms = g.box_loss(corners, gt_in, "det_terms");
    loss = g.mean(g.sum_last(terms, "det_per_sample"), "det_loss");
  }

  /// Runs forward on a packed batch: canvas [N*4*C*C], gt [N*4].
  void run(const ad::Tensor<T>& canvas, const ad::Tensor<T>& gt) {
    ad::Feed<T> feed{{"canvas", std::cref(canvas)}, {"gt", std::cref(gt)}};
    g.run(feed);
  }
};

}  // namespace focuslab::detector
