// SPDX-License-Identifier: Apache-2.0
//
// Generates one synthetic sample, prints the per-layer concentration curve on
// the target region, boxes the designated-layer heatmap with the threshold
// oracle, and turns that box into a crop.

#include <cstdio>

#include "focuslab/attn/metrics.hpp"
#include "focuslab/box/geometry.hpp"
#include "focuslab/synth/generator.hpp"

using namespace focuslab;

int main() {
  synth::SynthConfig cfg;
  const auto s = synth::gen_sample(cfg, 7, true);
  const auto& a = *s.attn;
  const auto region = attn::box_to_region(s.target, a.hp, a.wp);

  const auto curve = attn::concentration_curve(a, region, a.all_queries());
  std::printf("layer  concentration\n");
  for (std::size_t l = 0; l < curve.size(); ++l) std::printf("%5zu  %.3f\n", l, curve[l]);
  const std::size_t peak = attn::peak_layer(a, region, a.all_queries());
  std::printf("peak layer %zu\n", peak);

  const auto heat = attn::aggregate_heatmap(a, peak);
  const auto guess = synth::threshold_box_oracle(heat, 0.5);
  std::printf("target [%.3f %.3f %.3f %.3f]\n", s.target.x1, s.target.y1, s.target.x2, s.target.y2);
  std::printf("oracle [%.3f %.3f %.3f %.3f] iou %.3f\n", guess.x1, guess.y1, guess.x2, guess.y2,
              box::iou(guess, s.target));

  const auto crop = box::crop_zoom(guess, 1024, 768, 32, 448);
  std::printf("crop px [%d %d %d %d] -> %dx%d (x%.2f)\n", crop.rect_px.x1, crop.rect_px.y1, crop.rect_px.x2,
              crop.rect_px.y2, crop.output_width, crop.output_height, crop.scale_factor);
  return 0;
}
