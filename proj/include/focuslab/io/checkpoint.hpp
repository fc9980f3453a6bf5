// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "focuslab/detector/train.hpp"
#include "focuslab/io/tensor_file.hpp"

namespace focuslab::io {

inline constexpr int kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  std::vector<std::size_t> dims;
  std::vector<float> data;
};

/// JSON header line {format_version, tensors: [{name, dims, offset}], ...meta},
/// then the tensors' little-endian f32 payloads back to back. Offsets are
/// bytes from the start of the payload.
inline std::string encode_checkpoint(const std::vector<NamedTensor>& tensors, json meta) {
  json table = json::array();
  std::size_t offset = 0;
  for (const auto& t : tensors) {
    std::size_t n = 1;
    for (std::size_t d : t.dims) n *= d;
    if (n != t.data.size()) fail(ErrorCode::shape, "checkpoint tensor " + t.name + " does not match its dims");
    table.push_back({{"name", t.name}, {"dims", t.dims}, {"offset", offset}});
    offset += 4 * n;
  }
  meta["format_version"] = kCheckpointVersion;
  meta["tensors"] = std::move(table);
  meta["payload_bytes"] = offset;
  std::string out = meta.dump();
  out.push_back('\n');
  for (const auto& t : tensors) detail::put_f32_le(out, t.data);
  return out;
}

struct Checkpoint {
  json meta;
  std::vector<NamedTensor> tensors;

  const NamedTensor& at(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return t;
    fail(ErrorCode::format, "checkpoint has no tensor '" + name + "'");
  }
};

inline Checkpoint decode_checkpoint(std::string_view bytes, const std::string& what = "checkpoint") {
  auto [h, payload] = detail::split_header(bytes, what);
  if (!h.contains("format_version") || h["format_version"] != kCheckpointVersion)
    fail(ErrorCode::format, what + ": unsupported checkpoint format_version");
  if (!h.contains("tensors") || !h["tensors"].is_array()) fail(ErrorCode::format, what + ": missing tensor table");
  Checkpoint ck;
  std::size_t expected = 0;
  for (const auto& e : h["tensors"]) {
    NamedTensor t;
    try {
      t.name = e.at("name").get<std::string>();
      t.dims = e.at("dims").get<std::vector<std::size_t>>();
      const auto off = e.at("offset").get<std::size_t>();
      if (off != expected) fail(ErrorCode::format, what + ": tensor " + t.name + " has a non-contiguous offset");
    } catch (const json::exception& ex) {
      fail(ErrorCode::format, what + ": bad tensor table entry: " + ex.what());
    }
    std::size_t n = 1;
    for (std::size_t d : t.dims) n *= d;
    if (payload.size() < expected + 4 * n)
      fail(ErrorCode::format, what + ": truncated payload: expected at least " + std::to_string(expected + 4 * n) +
                                  " bytes, got " + std::to_string(payload.size()));
    detail::get_f32_le(payload.substr(expected, 4 * n), t.data);
    expected += 4 * n;
    ck.tensors.push_back(std::move(t));
  }
  detail::check_payload(payload.size(), expected, what);
  h.erase("tensors");
  ck.meta = std::move(h);
  return ck;
}

inline json detector_config_json(const detector::DetectorConfig& d) {
  return {{"canvas", d.canvas},          {"stem_channels", d.stem_channels},
          {"width", d.width},            {"heads", d.heads},
          {"ff", d.ff},                  {"encoder_layers", d.encoder_layers},
          {"decoder_layers", d.decoder_layers}, {"groups", d.groups}};
}

inline detector::DetectorConfig detector_config_from(const json& j) {
  detector::DetectorConfig d;
  try {
    d.canvas = j.at("canvas").get<std::size_t>();
    d.stem_channels = j.at("stem_channels").get<std::vector<std::size_t>>();
    d.width = j.at("width").get<std::size_t>();
    d.heads = j.at("heads").get<std::size_t>();
    d.ff = j.at("ff").get<std::size_t>();
    d.encoder_layers = j.at("encoder_layers").get<std::size_t>();
    d.decoder_layers = j.at("decoder_layers").get<std::size_t>();
    d.groups = j.at("groups").get<std::size_t>();
  } catch (const json::exception& e) {
    fail(ErrorCode::format, std::string("checkpoint model config: ") + e.what());
  }
  d.validate();
  return d;
}

/// Parameters, Adam moments, step, seed and running losses.
inline std::string encode_train_state(const detector::TrainState& s, const json& prov = json::object()) {
  std::vector<NamedTensor> ts;
  const auto& entries = s.params.entries();
  for (const auto& e : entries) ts.push_back({e.name, e.tensor->dims, {e.tensor->data.begin(), e.tensor->data.end()}});
  for (std::size_t i = 0; i < entries.size(); ++i)
    ts.push_back({"adam.m/" + entries[i].name, entries[i].tensor->dims, s.opt->first_moments()[i]});
  for (std::size_t i = 0; i < entries.size(); ++i)
    ts.push_back({"adam.v/" + entries[i].name, entries[i].tensor->dims, s.opt->second_moments()[i]});
  const auto& ac = s.opt->config();
  json meta = {{"kind", "detector"},
               {"model", detector_config_json(s.model)},
               {"step", s.step},
               {"seed", s.seed},
               {"adam", {{"lr", ac.lr}, {"beta1", ac.beta1}, {"beta2", ac.beta2}, {"eps", ac.eps}, {"t", s.opt->steps()}}},
               {"running", {{"l1", s.running.l1}, {"giou_term", s.running.giou_term}, {"total", s.running.total}}},
               {"ntp_surrogate", s.ntp_surrogate},
               {"provenance", prov}};
  return encode_checkpoint(ts, std::move(meta));
}

inline detector::TrainState decode_train_state(std::string_view bytes, const std::string& what = "checkpoint") {
  const Checkpoint ck = decode_checkpoint(bytes, what);
  if (ck.meta.value("kind", "") != "detector") fail(ErrorCode::format, what + ": not a detector checkpoint");
  detector::TrainState s;
  try {
    s.model = detector_config_from(ck.meta.at("model"));
    s.step = ck.meta.at("step").get<std::uint64_t>();
    s.seed = ck.meta.at("seed").get<std::uint64_t>();
    const auto& r = ck.meta.at("running");
    s.running = {s.step, r.at("l1").get<double>(), r.at("giou_term").get<double>(), r.at("total").get<double>()};
    s.ntp_surrogate = ck.meta.at("ntp_surrogate").get<double>();
  } catch (const json::exception& e) {
    fail(ErrorCode::format, what + ": " + e.what());
  }
  // Rebuild the store in canonical order, then overwrite from the file.
  s.params = detector::init_params<float>(s.model, 0);
  for (const auto& e : s.params.entries()) {
    const NamedTensor& t = ck.at(e.name);
    if (t.dims != e.tensor->dims)
      fail(ErrorCode::shape, what + ": tensor " + e.name + " has dims " + ad::to_string(t.dims) + ", model expects " +
                                 ad::to_string(e.tensor->dims));
    e.tensor->data.assign(t.data.begin(), t.data.end());
  }
  const auto& a = ck.meta.at("adam");
  ad::AdamConfig ac{a.at("lr").get<double>(), a.at("beta1").get<double>(), a.at("beta2").get<double>(),
                    a.at("eps").get<double>()};
  s.opt = std::make_unique<ad::Adam<float>>(s.params, ac);
  s.opt->set_steps(a.at("t").get<std::uint64_t>());
  const auto& entries = s.params.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    s.opt->first_moments()[i] = ck.at("adam.m/" + entries[i].name).data;
    s.opt->second_moments()[i] = ck.at("adam.v/" + entries[i].name).data;
  }
  return s;
}

inline void save_train_state(const fs::path& path, const detector::TrainState& s, const json& prov = json::object()) {
  write_file(path, encode_train_state(s, prov));
}

inline detector::TrainState load_train_state(const fs::path& path) {
  return decode_train_state(read_file(path), path.string());
}

/// Metrics log rows: step,l1,giou_term,total.
inline std::string metrics_csv(const std::vector<detector::StepLog>& log) {
  std::string out = "step,l1,giou_term,total\n";
  char buf[128];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%llu,%.9g,%.9g,%.9g\n", static_cast<unsigned long long>(r.step), r.l1,
                  r.giou_term, r.total);
    out += buf;
  }
  return out;
}

}  // namespace focuslab::io
