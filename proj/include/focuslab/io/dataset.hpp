// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdio>
#include <numeric>
#include <string>
#include <vector>

#include "focuslab/detector/train.hpp"
#include "focuslab/io/jsonl.hpp"
#include "focuslab/io/tensor_file.hpp"
#include "focuslab/synth/generator.hpp"

namespace focuslab::io {

struct SplitIndices {
  std::array<std::vector<std::uint64_t>, 3> ids;  // train, val, test
};

inline constexpr std::array<const char*, 3> kSplitNames{"train", "val", "test"};

/// Seeded permutation of [0, n) cut into train/val/test by count.
inline SplitIndices split_indices(std::size_t n, const std::array<double, 3>& fractions, std::uint64_t seed) {
  const auto counts = synth::split_counts(n, fractions);
  std::vector<std::uint64_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::uint64_t{0});
  Rng rng(sub_seed(seed, 0x5b117));
  rng.shuffle(perm.begin(), perm.end());
  SplitIndices s;
  const std::array<std::size_t, 3> c{counts.train, counts.val, counts.test};
  std::size_t at = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    s.ids[k].assign(perm.begin() + static_cast<std::ptrdiff_t>(at), perm.begin() + static_cast<std::ptrdiff_t>(at + c[k]));
    std::sort(s.ids[k].begin(), s.ids[k].end());
    at += c[k];
  }
  return s;
}

inline json box_json(const box::BoxNorm<double>& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); }

inline box::BoxNorm<double> box_from_json(const json& j) {
  if (!j.is_array() || j.size() != 4) fail(ErrorCode::format, "box must be [x1, y1, x2, y2]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

/// Writes <dir>/<split>/<id>.hmp (and .attn), plus manifest.jsonl.
inline std::vector<json> gen_dataset(const fs::path& dir, std::size_t n, const synth::SynthConfig& cfg,
                                     const std::array<double, 3>& fractions, bool with_attention, const json& prov) {
  const SplitIndices split = split_indices(n, fractions, cfg.seed);
  std::vector<json> manifest;
  char name[32];
  for (std::size_t k = 0; k < 3; ++k)
    for (std::uint64_t idx : split.ids[k]) {
      const synth::SynthSample s = synth::gen_sample(cfg, idx, with_attention);
      std::snprintf(name, sizeof name, "%06llu", static_cast<unsigned long long>(idx));
      const std::string rel = std::string(kSplitNames[k]) + "/" + name;
      json extra = {{"provenance", prov}, {"index", idx}};
      write_tensor(dir / (rel + ".hmp"), to_file(s.heatmap, extra));
      json row = {{"id", name},        {"split", kSplitNames[k]}, {"index", idx},
                  {"heatmap", rel + ".hmp"}, {"target", box_json(s.target)}, {"seed", s.seed}};
      if (with_attention) {
        write_tensor(dir / (rel + ".attn"), to_file(*s.attn, extra));
        row["attn"] = rel + ".attn";
      }
      manifest.push_back(std::move(row));
    }
  write_jsonl(dir / "manifest.jsonl", manifest);
  return manifest;
}

/// Detector dataset for one split of a manifest.
inline detector::Dataset load_split(const fs::path& manifest_path, const std::string& split, std::size_t canvas) {
  const fs::path root = manifest_path.parent_path();
  detector::Dataset d;
  d.canvas = canvas;
  for (const auto& row : read_jsonl(manifest_path)) {
    if (row.value("split", "") != split) continue;
    const auto heat = heatmap_from_file(read_tensor(root / row.at("heatmap").get<std::string>()));
    d.add(heat, box_from_json(row.at("target")));
  }
  if (d.size() == 0) fail(ErrorCode::domain, "split '" + split + "' of " + manifest_path.string() + " is empty");
  return d;
}

/// In-memory twin of gen_dataset + load_split.
inline detector::Dataset synth_split(const synth::SynthConfig& cfg, const std::vector<std::uint64_t>& ids,
                                     std::size_t canvas) {
  detector::Dataset d;
  d.canvas = canvas;
  for (std::uint64_t idx : ids) {
    const auto s = synth::gen_sample(cfg, idx);
    d.add(s.heatmap, s.target);
  }
  return d;
}

}  // namespace focuslab::io
