// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "focuslab/box/geometry.hpp"
#include "focuslab/core/error.hpp"

namespace focuslab::trace {

/// Half-open byte range [begin, end) into a source string.
struct CharRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  friend bool operator==(const CharRange&, const CharRange&) = default;
};

/// Parse failure with the byte offset where it was detected.
class ParseError : public Error {
 public:
  ParseError(std::size_t offset, const std::string& what)
      : Error(ErrorCode::format, what + " at offset " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

struct FocusSpan {
  std::string text;  // trimmed content
  CharRange range;   // trimmed content inside raw
  CharRange tag_range;  // from '<FOCUS>' through '</FOCUS>'
};

struct FocusTrace {
  std::string raw;
  std::string think_text;  // trimmed, FOCUS tags kept
  CharRange think_range;   // trimmed think content inside raw
  std::vector<FocusSpan> focus_spans;
  std::string answer_text;  // trimmed
  CharRange answer_range;
};

namespace detail {

inline bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

inline CharRange trim_range(std::string_view s, std::size_t b, std::size_t e) {
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return {b, e};
}

inline std::string trim(std::string_view s) {
  const CharRange r = trim_range(s, 0, s.size());
  return std::string(s.substr(r.begin, r.end - r.begin));
}

enum class Tag { think_open, think_close, focus_open, focus_close, answer_open, answer_close };

struct TagHit {
  Tag tag;
  std::size_t begin, end;
};

/// Reads a tag-shaped token `<name>` / `</name>` at pos; returns its length or 0.
inline std::size_t tag_shape(std::string_view s, std::size_t pos) {
  std::size_t i = pos + 1;
  if (i < s.size() && s[i] == '/') ++i;
  if (i >= s.size() || !std::isalpha(static_cast<unsigned char>(s[i]))) return 0;
  while (i < s.size() && (std::isalnum(static_cast<unsigned char>(s[i])) || s[i] == '_')) ++i;
  if (i >= s.size() || s[i] != '>') return 0;
  return i + 1 - pos;
}

inline std::vector<TagHit> scan_tags(std::string_view s) {
  static constexpr std::array<std::pair<std::string_view, Tag>, 6> known{{
      {"<think>", Tag::think_open},
      {"</think>", Tag::think_close},
      {"<FOCUS>", Tag::focus_open},
      {"</FOCUS>", Tag::focus_close},
      {"<answer>", Tag::answer_open},
      {"</answer>", Tag::answer_close},
  }};
  std::vector<TagHit> hits;
  for (std::size_t pos = s.find('<'); pos != std::string_view::npos; pos = s.find('<', pos + 1)) {
    const std::size_t len = tag_shape(s, pos);
    if (!len) continue;
    const std::string_view tok = s.substr(pos, len);
    auto it = std::find_if(known.begin(), known.end(), [&](const auto& k) { return k.first == tok; });
    if (it == known.end()) throw ParseError(pos, "unknown tag '" + std::string(tok) + "'");
    hits.push_back({it->second, pos, pos + len});
  }
  return hits;
}

inline bool only_space(std::string_view s, std::size_t b, std::size_t e) {
  for (std::size_t i = b; i < e; ++i)
    if (!is_space(s[i])) return false;
  return true;
}

inline std::size_t first_non_space(std::string_view s, std::size_t b, std::size_t e) {
  while (b < e && is_space(s[b])) ++b;
  return b;
}

}  // namespace detail

/// Strict envelope `<think>...</think><answer>...</answer>`, whitespace allowed
/// between and around the blocks.
inline FocusTrace parse_trace(std::string raw) {
  using detail::Tag;
  const std::string_view s = raw;
  const auto tags = detail::scan_tags(s);
  std::size_t k = 0;
  auto expect = [&](Tag t, const char* what, std::size_t fallback) -> const detail::TagHit& {
    if (k >= tags.size()) throw ParseError(fallback, std::string("missing ") + what);
    if (tags[k].tag != t) throw ParseError(tags[k].begin, std::string("expected ") + what);
    return tags[k++];
  };

  FocusTrace tr;
  if (tags.empty() || tags[0].tag != Tag::think_open) {
    const std::size_t at = detail::first_non_space(s, 0, s.size());
    throw ParseError(tags.empty() ? at : tags[0].begin, "missing <think>");
  }
  const auto& think_open = tags[k++];
  if (!detail::only_space(s, 0, think_open.begin))
    throw ParseError(detail::first_non_space(s, 0, think_open.begin), "content before <think>");

  while (k < tags.size() && tags[k].tag != Tag::think_close) {
    const auto& t = tags[k];
    if (t.tag == Tag::focus_close) throw ParseError(t.begin, "</FOCUS> without <FOCUS>");
    if (t.tag != Tag::focus_open) throw ParseError(t.begin, "unexpected tag inside <think>");
    if (k + 1 >= tags.size()) throw ParseError(t.begin, "unclosed <FOCUS>");
    const auto& close = tags[k + 1];
    if (close.tag == Tag::focus_open) throw ParseError(close.begin, "nested focus");
    if (close.tag != Tag::focus_close) throw ParseError(t.begin, "unclosed <FOCUS>");
    FocusSpan span;
    span.range = detail::trim_range(s, t.end, close.begin);
    span.text = std::string(s.substr(span.range.begin, span.range.end - span.range.begin));
    span.tag_range = {t.begin, close.end};
    if (span.text.empty()) throw ParseError(t.end, "empty <FOCUS> block");
    tr.focus_spans.push_back(std::move(span));
    k += 2;
  }
  const auto& think_close = expect(Tag::think_close, "</think>", s.size());
  tr.think_range = detail::trim_range(s, think_open.end, think_close.begin);

  const auto& answer_open = expect(Tag::answer_open, "<answer>", s.size());
  if (!detail::only_space(s, think_close.end, answer_open.begin))
    throw ParseError(detail::first_non_space(s, think_close.end, answer_open.begin),
                     "content between </think> and <answer>");
  const auto& answer_close = expect(Tag::answer_close, "</answer>", s.size());
  if (k < tags.size()) throw ParseError(tags[k].begin, "text after </answer>");
  if (!detail::only_space(s, answer_close.end, s.size()))
    throw ParseError(detail::first_non_space(s, answer_close.end, s.size()), "text after </answer>");

  tr.answer_range = detail::trim_range(s, answer_open.end, answer_close.begin);
  tr.think_text = std::string(s.substr(tr.think_range.begin, tr.think_range.end - tr.think_range.begin));
  tr.answer_text = std::string(s.substr(tr.answer_range.begin, tr.answer_range.end - tr.answer_range.begin));
  tr.raw = std::move(raw);
  return tr;
}

/// Canonical text form; parse(serialize(t)) reproduces t's think, spans and answer.
inline std::string serialize(const FocusTrace& t) {
  return "<think>\n" + t.think_text + "\n</think>\n<answer>\n" + t.answer_text + "\n</answer>\n";
}

// ---- region markers --------------------------------------------------------

struct SotMarker {
  std::array<double, 4> coords{};
  CharRange range;
  bool pixel = false;  // any coordinate > 1

  /// Normalized box; pixel boxes are half-open and divided by the image size.
  box::BoxNorm<double> normalized(double image_w, double image_h) const {
    if (!pixel) return {coords[0], coords[1], coords[2], coords[3]};
    if (!(image_w > 0 && image_h > 0)) fail(ErrorCode::domain, "image size must be positive");
    return {coords[0] / image_w, coords[1] / image_h, coords[2] / image_w, coords[3] / image_h};
  }
};

namespace detail {

inline bool parse_number(std::string_view tok, double& out) {
  while (!tok.empty() && is_space(tok.front())) tok.remove_prefix(1);
  while (!tok.empty() && is_space(tok.back())) tok.remove_suffix(1);
  if (tok.empty()) return false;
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), out);
  return res.ec == std::errc{} && res.ptr == tok.data() + tok.size();
}

}  // namespace detail

/// All `<SOT>[x1,y1,x2,y2]<EOT><image>` markers in document order.
inline std::vector<SotMarker> count_sot_markers(std::string_view g) {
  static constexpr std::string_view kOpen = "<SOT>", kClose = "<EOT>", kImage = "<image>";
  std::vector<SotMarker> out;
  for (std::size_t pos = g.find(kOpen); pos != std::string_view::npos; pos = g.find(kOpen, pos + 1)) {
    const std::size_t close = g.find(kClose, pos + kOpen.size());
    const std::size_t next_open = g.find(kOpen, pos + kOpen.size());
    if (close == std::string_view::npos || (next_open != std::string_view::npos && next_open < close))
      throw ParseError(pos, "<SOT> without matching <EOT>");
    std::string_view body = g.substr(pos + kOpen.size(), close - pos - kOpen.size());
    if (body.size() < 2 || body.front() != '[' || body.back() != ']')
      throw ParseError(pos, "malformed coordinates");
    body = body.substr(1, body.size() - 2);
    SotMarker m;
    std::size_t count = 0, start = 0;
    while (true) {
      const std::size_t comma = body.find(',', start);
      const std::string_view tok = body.substr(start, comma == std::string_view::npos ? body.npos : comma - start);
      double v = 0;
      if (count >= 4 || !detail::parse_number(tok, v)) throw ParseError(pos, "malformed coordinates");
      m.coords[count++] = v;
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (count != 4) throw ParseError(pos, "malformed coordinates");
    if (g.substr(close + kClose.size(), kImage.size()) != kImage)
      throw ParseError(close, "marker must end with <EOT><image>");
    if (!(m.coords[0] < m.coords[2] && m.coords[1] < m.coords[3]))
      throw ParseError(pos, "malformed coordinates: expected x1<x2 and y1<y2");
    for (double c : m.coords)
      if (c < 0) throw ParseError(pos, "malformed coordinates: negative value");
    m.pixel = std::any_of(m.coords.begin(), m.coords.end(), [](double c) { return c > 1.0; });
    m.range = {pos, close + kClose.size() + kImage.size()};
    out.push_back(m);
  }
  std::size_t used = 0;
  for (std::size_t pos = g.find(kClose); pos != std::string_view::npos; pos = g.find(kClose, pos + 1)) {
    const bool owned = used < out.size() && pos > out[used].range.begin && pos < out[used].range.end;
    if (!owned) throw ParseError(pos, "<EOT> without <SOT>");
    ++used;
  }
  return out;
}

// ---- answers, labels --------------------------------------------------------

/// Strips `\boxed{...}` wrappers (repeatedly, so nesting collapses) and trims.
inline std::string normalize_answer(std::string_view answer) {
  int depth = 0;
  for (char c : answer) {
    depth += c == '{' ? 1 : c == '}' ? -1 : 0;
    if (depth < 0) fail(ErrorCode::format, "unbalanced braces in answer");
  }
  if (depth != 0) fail(ErrorCode::format, "unbalanced braces in answer");

  std::string s(answer);
  static constexpr std::string_view kBoxed = "boxed{";
  while (true) {
    const std::size_t at = s.find(kBoxed);
    if (at == std::string::npos) break;
    std::size_t lead = at;
    while (lead > 0 && s[lead - 1] == '\\') --lead;
    const std::size_t open = at + kBoxed.size() - 1;
    std::size_t close = open;
    for (int d = 0; close < s.size(); ++close) {
      d += s[close] == '{' ? 1 : s[close] == '}' ? -1 : 0;
      if (d == 0) break;
    }
    s = s.substr(0, lead) + s.substr(open + 1, close - open - 1) + s.substr(close + 1);
  }
  s = detail::trim(s);
  // a bracketed list of numbers is a coordinate/box, not an answer
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '[' && s[i] != '(') continue;
    const char closer = s[i] == '[' ? ']' : ')';
    const std::size_t j = s.find(closer, i);
    if (j == std::string::npos) continue;
    const std::string_view inner = std::string_view(s).substr(i + 1, j - i - 1);
    if (inner.find(',') == std::string_view::npos) continue;
    bool numeric = true;
    std::size_t start = 0;
    while (numeric) {
      const std::size_t comma = inner.find(',', start);
      double v;
      numeric = detail::parse_number(inner.substr(start, comma == inner.npos ? inner.npos : comma - start), v);
      if (comma == inner.npos) break;
      start = comma + 1;
    }
    if (numeric) fail(ErrorCode::validation, "answer contains coordinates");
  }
  return s;
}

/// The box of the marker that comes last in the document.
inline SotMarker distill_recrop(const std::vector<SotMarker>& markers) {
  if (markers.empty()) fail(ErrorCode::domain, "distill_recrop needs at least one marker");
  return *std::max_element(markers.begin(), markers.end(),
                           [](const SotMarker& a, const SotMarker& b) { return a.range.begin < b.range.begin; });
}

enum class Mode { vgr, singlepass, recrop };

inline std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::vgr: return "vgr";
    case Mode::singlepass: return "singlepass";
    case Mode::recrop: return "recrop";
  }
  return "?";
}

inline Mode mode_from_string(std::string_view s) {
  if (s == "vgr") return Mode::vgr;
  if (s == "singlepass") return Mode::singlepass;
  if (s == "recrop") return Mode::recrop;
  fail(ErrorCode::usage, "unknown trace mode '" + std::string(s) + "'");
}

struct TrainingPair {
  std::string focus_text;
  box::BoxNorm<double> target_box;
  std::array<double, 2> image_size{};
  std::string trace_id;
};

/// i-th FOCUS span with i-th marker box (recrop: the single span with the last box).
inline std::vector<TrainingPair> emit_training_pairs(const FocusTrace& t, const std::vector<SotMarker>& markers,
                                                     std::array<double, 2> image_size, Mode mode,
                                                     const std::string& trace_id = {}) {
  std::vector<SotMarker> use = markers;
  if (mode == Mode::recrop) {
    if (t.focus_spans.size() != 1 || markers.empty())
      fail(ErrorCode::validation, "recrop pairs need exactly one FOCUS span and at least one marker");
    use = {distill_recrop(markers)};
  }
  if (use.size() != t.focus_spans.size() || use.empty())
    fail(ErrorCode::validation, "FOCUS span count " + std::to_string(t.focus_spans.size()) +
                                    " does not match box count " + std::to_string(use.size()));
  std::vector<TrainingPair> out;
  for (std::size_t i = 0; i < use.size(); ++i) {
    const box::BoxNorm<double> b = box::clamp_unit(use[i].normalized(image_size[0], image_size[1]));
    box::require_valid(b, "training pair box");
    out.push_back({t.focus_spans[i].text, b, image_size, trace_id});
  }
  return out;
}

}  // namespace focuslab::trace
