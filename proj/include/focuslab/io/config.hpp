// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <cstdlib>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "focuslab/attn/metrics.hpp"
#include "focuslab/condense/lab.hpp"
#include "focuslab/core/hash.hpp"
#include "focuslab/detector/train.hpp"
#include "focuslab/io/jsonl.hpp"
#include "focuslab/synth/generator.hpp"
#include "focuslab/trace/validate.hpp"

namespace focuslab::io {

struct CropConfig {
  int min_side = 32;
  int zoom_target = 448;
};

struct DataConfig {
  std::size_t n = 5500;
  std::array<double, 3> split{10.0 / 11.0, 0.0, 1.0 / 11.0};
  double oracle_frac = 0.5;
};

/// Every tunable default in one place. Serialized sections mirror the members.
struct RunConfig {
  std::uint64_t seed = 0;
  synth::SynthConfig synth;
  DataConfig data;
  detector::DetectorConfig detector;
  detector::TrainConfig train{.lr = 1e-3, .batch = 16, .steps = 12000, .seed = 0, .checkpoint_every = 2000,
                              .warmup_steps = 500, .decay_steps = 12000};
  double tau = 0.1;
  attn::LossWeights loss;
  condense::CondenseConfig condense;
  trace::ValidationOptions trace;
  CropConfig crop;

  /// Seeds of every module derive from the single top-level seed.
  synth::SynthConfig synth_seeded() const {
    auto s = synth;
    s.seed = seed;
    return s;
  }
  detector::TrainConfig train_seeded() const {
    auto t = train;
    t.seed = seed;
    return t;
  }
};

inline json to_json(const RunConfig& c) {
  const auto& s = c.synth;
  json j;
  j["seed"] = c.seed;
  j["synth"] = {{"grid_h", s.grid_h},
                {"grid_w", s.grid_w},
                {"blob_sigma_frac", s.blob_sigma_frac},
                {"noise_level", s.noise_level},
                {"distractor_count", s.distractor_count},
                {"distractor_gain", s.distractor_gain},
                {"box_min", s.box_min},
                {"box_max", s.box_max},
                {"layer_count", s.layer_count},
                {"head_count", s.head_count},
                {"query_count", s.query_count},
                {"dispersion_temp", s.dispersion_temp},
                {"peak_amplitude", s.peak_amplitude},
                {"peak_center", s.peak_center},
                {"peak_width", s.peak_width},
                {"score_noise", s.score_noise},
                {"head_jitter", s.head_jitter},
                {"forced_peak_layer", s.forced_peak_layer ? json(*s.forced_peak_layer) : json(nullptr)}};
  j["data"] = {{"n", c.data.n}, {"split", c.data.split}, {"oracle_frac", c.data.oracle_frac}};
  const auto& d = c.detector;
  j["detector"] = {{"canvas", d.canvas},
                   {"stem_channels", d.stem_channels},
                   {"width", d.width},
                   {"heads", d.heads},
                   {"ff", d.ff},
                   {"encoder_layers", d.encoder_layers},
                   {"decoder_layers", d.decoder_layers},
                   {"groups", d.groups}};
  const auto& t = c.train;
  j["train"] = {{"lr", t.lr},
                {"batch", t.batch},
                {"steps", t.steps},
                {"checkpoint_every", t.checkpoint_every},
                {"warmup_steps", t.warmup_steps},
                {"decay_steps", t.decay_steps},
                {"beta1", 0.9},
                {"beta2", 0.999}};
  j["eval"] = {{"tau", c.tau}};
  j["loss"] = {{"alpha", c.loss.alpha}, {"ntp_surrogate", c.loss.ntp_surrogate}};
  const auto& k = c.condense;
  j["condense"] = {{"cue_width", k.cue_width},
                   {"steps", k.steps},
                   {"batch", k.batch},
                   {"lr", k.lr},
                   {"train_n", k.train_n},
                   {"val_n", k.val_n},
                   {"heldout_n", k.heldout_n},
                   {"monitor_n", k.monitor_n},
                   {"eval_every", k.eval_every},
                   {"designated_layer", k.designated_layer ? json(*k.designated_layer) : json(nullptr)}};
  j["trace"] = {{"require_verb", c.trace.require_verb}, {"ban_colors", c.trace.ban_colors}};
  j["crop"] = {{"min_side", c.crop.min_side}, {"zoom_target", c.crop.zoom_target}};
  return j;
}

namespace detail {

inline bool same_kind(const json& def, const json& v) {
  if (def.is_null() || v.is_null()) return true;  // optional slots
  if (def.is_number()) return v.is_number();
  if (def.is_array()) return v.is_array();
  return def.type() == v.type();
}

/// Overlays `patch` onto `base`, rejecting keys that `base` does not define.
inline void overlay(json& base, const json& patch, const std::string& path) {
  if (!patch.is_object()) fail(ErrorCode::config, (path.empty() ? "config" : path) + " must be an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) fail(ErrorCode::config, "unknown config key '" + key + "'");
    json& slot = base[it.key()];
    if (slot.is_object()) {
      overlay(slot, it.value(), key);
    } else {
      if (!same_kind(slot, it.value())) fail(ErrorCode::config, "config key '" + key + "' has the wrong type");
      slot = it.value();
    }
  }
}

template <typename T>
T get(const json& j, const char* section, const char* key) {
  try {
    return j.at(section).at(key).get<T>();
  } catch (const json::exception& e) {
    fail(ErrorCode::config, std::string("config key '") + section + "." + key + "': " + e.what());
  }
}

template <typename T>
std::optional<T> get_opt(const json& j, const char* section, const char* key) {
  const json& v = j.at(section).at(key);
  if (v.is_null()) return std::nullopt;
  return get<T>(j, section, key);
}

}  // namespace detail

inline RunConfig from_json(const json& patch) {
  json j = to_json(RunConfig{});
  detail::overlay(j, patch, "");
  using detail::get;
  RunConfig c;
  try {
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception&) {
    fail(ErrorCode::config, "seed must be a non-negative integer");
  }
  auto& s = c.synth;
  s.grid_h = get<std::size_t>(j, "synth", "grid_h");
  s.grid_w = get<std::size_t>(j, "synth", "grid_w");
  s.blob_sigma_frac = get<double>(j, "synth", "blob_sigma_frac");
  s.noise_level = get<double>(j, "synth", "noise_level");
  s.distractor_count = get<std::size_t>(j, "synth", "distractor_count");
  s.distractor_gain = get<double>(j, "synth", "distractor_gain");
  s.box_min = get<double>(j, "synth", "box_min");
  s.box_max = get<double>(j, "synth", "box_max");
  s.layer_count = get<std::size_t>(j, "synth", "layer_count");
  s.head_count = get<std::size_t>(j, "synth", "head_count");
  s.query_count = get<std::size_t>(j, "synth", "query_count");
  s.dispersion_temp = get<double>(j, "synth", "dispersion_temp");
  s.peak_amplitude = get<double>(j, "synth", "peak_amplitude");
  s.peak_center = get<double>(j, "synth", "peak_center");
  s.peak_width = get<double>(j, "synth", "peak_width");
  s.score_noise = get<double>(j, "synth", "score_noise");
  s.head_jitter = get<double>(j, "synth", "head_jitter");
  s.forced_peak_layer = detail::get_opt<std::size_t>(j, "synth", "forced_peak_layer");
  s.validate();

  c.data.n = get<std::size_t>(j, "data", "n");
  c.data.split = get<std::array<double, 3>>(j, "data", "split");
  c.data.oracle_frac = get<double>(j, "data", "oracle_frac");

  auto& d = c.detector;
  d.canvas = get<std::size_t>(j, "detector", "canvas");
  d.stem_channels = get<std::vector<std::size_t>>(j, "detector", "stem_channels");
  d.width = get<std::size_t>(j, "detector", "width");
  d.heads = get<std::size_t>(j, "detector", "heads");
  d.ff = get<std::size_t>(j, "detector", "ff");
  d.encoder_layers = get<std::size_t>(j, "detector", "encoder_layers");
  d.decoder_layers = get<std::size_t>(j, "detector", "decoder_layers");
  d.groups = get<std::size_t>(j, "detector", "groups");
  d.validate();

  auto& t = c.train;
  t.lr = get<double>(j, "train", "lr");
  t.batch = get<std::size_t>(j, "train", "batch");
  t.steps = get<std::size_t>(j, "train", "steps");
  t.checkpoint_every = get<std::size_t>(j, "train", "checkpoint_every");
  t.warmup_steps = get<std::size_t>(j, "train", "warmup_steps");
  t.decay_steps = get<std::size_t>(j, "train", "decay_steps");
  if (get<double>(j, "train", "beta1") != 0.9 || get<double>(j, "train", "beta2") != 0.999)
    fail(ErrorCode::config, "only the default Adam betas (0.9, 0.999) are supported");

  c.tau = get<double>(j, "eval", "tau");
  if (!(c.tau >= 0.0 && c.tau <= 1.0)) fail(ErrorCode::config, "eval.tau must be in [0,1]");
  c.loss.alpha = get<double>(j, "loss", "alpha");
  c.loss.ntp_surrogate = get<double>(j, "loss", "ntp_surrogate");
  if (!(c.loss.alpha >= 0.0)) fail(ErrorCode::config, "loss.alpha must be non-negative");

  auto& k = c.condense;
  k.cue_width = get<std::size_t>(j, "condense", "cue_width");
  k.steps = get<std::size_t>(j, "condense", "steps");
  k.batch = get<std::size_t>(j, "condense", "batch");
  k.lr = get<double>(j, "condense", "lr");
  k.train_n = get<std::size_t>(j, "condense", "train_n");
  k.val_n = get<std::size_t>(j, "condense", "val_n");
  k.heldout_n = get<std::size_t>(j, "condense", "heldout_n");
  k.monitor_n = get<std::size_t>(j, "condense", "monitor_n");
  k.eval_every = get<std::size_t>(j, "condense", "eval_every");
  k.designated_layer = detail::get_opt<std::size_t>(j, "condense", "designated_layer");
  k.validate();
  if (k.designated_layer && *k.designated_layer >= s.layer_count)
    fail(ErrorCode::config, "condense.designated_layer out of range");

  c.trace.require_verb = get<bool>(j, "trace", "require_verb");
  c.trace.ban_colors = get<bool>(j, "trace", "ban_colors");
  c.crop.min_side = get<int>(j, "crop", "min_side");
  c.crop.zoom_target = get<int>(j, "crop", "zoom_target");
  if (c.crop.min_side < 1 || c.crop.zoom_target < 1) fail(ErrorCode::config, "crop sizes must be positive");
  return c;
}

/// Applies "section.key=value" overrides. Values parse as JSON, else as strings.
inline void apply_override(json& patch, std::string_view assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0)
    fail(ErrorCode::usage, "override must look like key=value: '" + std::string(assignment) + "'");
  const std::string key(assignment.substr(0, eq));
  const std::string raw(assignment.substr(eq + 1));
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  json* at = &patch;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) fail(ErrorCode::usage, "malformed override key '" + key + "'");
    if (dot == std::string::npos) {
      (*at)[part] = value;
      break;
    }
    if (!at->contains(part) || !(*at)[part].is_object()) (*at)[part] = json::object();
    at = &(*at)[part];
    start = dot + 1;
  }
}

struct LoadedConfig {
  RunConfig config;
  json effective;  // canonical, fully populated
  std::string hash;
};

/// Precedence: defaults < file (explicit path, else $CFT_CONFIG) < overrides < --seed.
inline LoadedConfig load_config(const std::optional<std::string>& path, const std::vector<std::string>& overrides,
                                std::optional<std::uint64_t> seed) {
  json patch = json::object();
  std::optional<std::string> file = path;
  if (!file) {
    if (const char* env = std::getenv("CFT_CONFIG"); env && *env) file = env;
  }
  if (file) patch = read_json(*file);
  if (!patch.is_object()) fail(ErrorCode::config, "config file must hold a JSON object");
  for (const auto& o : overrides) apply_override(patch, o);
  if (seed) patch["seed"] = *seed;
  LoadedConfig out;
  out.config = from_json(patch);
  out.effective = to_json(out.config);
  out.hash = hex64(fnv1a(out.effective.dump()));
  return out;
}

inline json provenance(const LoadedConfig& lc) {
  return {{"config_hash", lc.hash}, {"seed", lc.config.seed}, {"tool_version", std::string(kToolVersion)}};
}

}  // namespace focuslab::io
