// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "focuslab/trace/trace.hpp"

namespace focuslab::trace {

namespace rule {
inline constexpr std::string_view parse = "PARSE";
inline constexpr std::string_view guidance_marker = "GUIDANCE_MARKER";
inline constexpr std::string_view cardinality = "CARDINALITY";
inline constexpr std::string_view single_sentence = "SINGLE_SENTENCE";
inline constexpr std::string_view no_numeric = "NO_NUMERIC";
inline constexpr std::string_view no_coordinates = "NO_COORDINATES";
inline constexpr std::string_view no_tag_mention = "NO_TAG_MENTION";
inline constexpr std::string_view distinct_focus = "DISTINCT_FOCUS";
inline constexpr std::string_view focus_order = "FOCUS_ORDER";
inline constexpr std::string_view no_tool_verb = "NO_TOOL_VERB";
inline constexpr std::string_view answer_boxed = "ANSWER_BOXED";
inline constexpr std::string_view recrop_single_focus = "RECROP_SINGLE_FOCUS";
inline constexpr std::string_view flow_order = "FLOW_ORDER";
inline constexpr std::string_view verb_required = "VERB_REQUIRED";
inline constexpr std::string_view no_color = "NO_COLOR";
}  // namespace rule

struct Violation {
  std::string rule_id;
  std::string message;
  CharRange range;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool pass() const { return violations.empty(); }
  bool has(std::string_view id) const {
    return std::any_of(violations.begin(), violations.end(), [&](const Violation& v) { return v.rule_id == id; });
  }
};

struct ValidationOptions {
  bool require_verb = false;
  bool ban_colors = false;
};

namespace detail {

struct Word {
  std::string lower;
  std::size_t begin, end;  // offsets into the scanned text
};

inline std::vector<Word> words(std::string_view s) {
  std::vector<Word> out;
  std::size_t i = 0;
  while (i < s.size()) {
    if (!std::isalnum(static_cast<unsigned char>(s[i]))) {
      ++i;
      continue;
    }
    const std::size_t b = i;
    std::string w;
    while (i < s.size() && std::isalnum(static_cast<unsigned char>(s[i])))
      w.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(s[i++]))));
    out.push_back({std::move(w), b, i});
  }
  return out;
}

/// Word-sequence matches of any phrase in the lexicon; returns [begin,end) in s.
inline std::vector<std::pair<std::string, CharRange>> find_phrases(std::string_view s,
                                                                   const std::vector<std::string_view>& lexicon) {
  const auto ws = words(s);
  std::vector<std::pair<std::string, CharRange>> hits;
  for (std::string_view phrase : lexicon) {
    const auto pw = words(phrase);
    if (pw.empty() || pw.size() > ws.size()) continue;
    for (std::size_t i = 0; i + pw.size() <= ws.size(); ++i) {
      bool match = true;
      for (std::size_t k = 0; k < pw.size() && match; ++k) match = ws[i + k].lower == pw[k].lower;
      if (match) hits.push_back({std::string(phrase), {ws[i].begin, ws[i + pw.size() - 1].end}});
    }
  }
  std::sort(hits.begin(), hits.end(), [](const auto& a, const auto& b) { return a.second.begin < b.second.begin; });
  return hits;
}

inline const std::vector<std::string_view>& tool_lexicon() {
  static const std::vector<std::string_view> v{"zoom in", "crop", "cut", "resize", "scale", "tool", "selection"};
  return v;
}

inline const std::vector<std::string_view>& number_words() {
  static const std::vector<std::string_view> v{
      "two",     "three",   "four",     "five",     "six",      "seven",     "eight",   "nine",
      "ten",     "eleven",  "twelve",   "thirteen", "fourteen", "fifteen",   "sixteen", "seventeen",
      "eighteen", "nineteen", "twenty", "thirty",   "forty",    "fifty",     "sixty",   "seventy",
      "eighty",  "ninety",  "hundred",  "thousand", "million",  "billion",   "dozen",   "percent"};
  return v;
}

inline const std::vector<std::string_view>& color_words() {
  static const std::vector<std::string_view> v{
      "red",  "orange", "yellow", "green", "blue",  "purple", "violet", "pink",   "brown",     "black",  "white",
      "gray", "grey",   "cyan",   "magenta", "beige", "maroon", "navy", "teal", "olive", "gold", "silver",
      "turquoise", "indigo"};
  return v;
}

inline const std::vector<std::string_view>& verb_words() {
  static const std::vector<std::string_view> v{
      "is",       "are",     "was",      "were",     "be",       "been",     "am",        "must",
      "should",   "can",     "will",     "shows",    "show",     "contains", "contain",   "appears",
      "appear",   "examine", "examined", "inspect",  "inspected", "observe", "observed",  "needs",
      "need",     "has",     "have",     "holds",    "indicates", "sits",    "stands",    "lies",
      "represents", "displays", "focus", "look",     "looks",    "checked",  "check",     "matters"};
  return v;
}

/// Runs of terminal punctuation outside (), [], {}.
inline std::vector<CharRange> sentence_terminators(std::string_view s) {
  std::vector<CharRange> out;
  int depth = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    if (c == '(' || c == '[' || c == '{') ++depth;
    if ((c == ')' || c == ']' || c == '}') && depth > 0) --depth;
    if (depth == 0 && (c == '.' || c == '!' || c == '?')) {
      // a '.' between digits is a decimal point
      if (c == '.' && i > 0 && i + 1 < s.size() && std::isdigit(static_cast<unsigned char>(s[i - 1])) &&
          std::isdigit(static_cast<unsigned char>(s[i + 1])))
        continue;
      const std::size_t b = i;
      while (i + 1 < s.size() && (s[i + 1] == '.' || s[i + 1] == '!' || s[i + 1] == '?')) ++i;
      out.push_back({b, i + 1});
    }
  }
  return out;
}

inline bool has_letter(std::string_view s) {
  return std::any_of(s.begin(), s.end(), [](char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; });
}

/// Bracketed numeric lists like [0.1, 0.2, 0.5, 0.6] or (12, 40).
inline std::vector<CharRange> coordinate_lists(std::string_view s) {
  std::vector<CharRange> out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '[' && s[i] != '(') continue;
    const char closer = s[i] == '[' ? ']' : ')';
    const std::size_t j = s.find(closer, i + 1);
    if (j == std::string_view::npos) continue;
    const std::string_view inner = s.substr(i + 1, j - i - 1);
    if (inner.find(',') == std::string_view::npos) continue;
    bool numeric = true;
    std::size_t start = 0;
    while (numeric) {
      const std::size_t comma = inner.find(',', start);
      double v;
      numeric = parse_number(inner.substr(start, comma == inner.npos ? inner.npos : comma - start), v);
      if (comma == inner.npos) break;
      start = comma + 1;
    }
    if (numeric) out.push_back({i, j + 1});
  }
  return out;
}

inline CharRange shift(CharRange r, std::size_t by) { return {r.begin + by, r.end + by}; }

inline std::string collapse(std::string_view s) {
  std::string out;
  for (const auto& w : words(s)) {
    if (!out.empty()) out.push_back(' ');
    out += w.lower;
  }
  return out;
}

inline bool stopword(std::string_view w) {
  static const std::set<std::string_view> v{
      "the", "and", "that", "this", "with", "for", "from", "then", "next", "first", "second", "third", "last",
      "which", "what", "where", "there", "here", "its", "into", "onto", "near", "region", "object", "area", "item",
      "element", "part", "must", "examined", "examine", "look", "looking", "see", "check", "can", "will", "are",
      "was", "were", "has", "have", "image", "picture", "one", "let", "now", "also", "shows", "show", "focus",
      "attention", "closer", "need", "needs", "should", "answer", "question"};
  return w.size() < 3 || v.count(w) > 0;
}

inline std::set<std::string> content_words(std::string_view s) {
  std::set<std::string> out;
  for (auto& w : words(s))
    if (!stopword(w.lower) && !std::isdigit(static_cast<unsigned char>(w.lower[0]))) out.insert(std::move(w.lower));
  return out;
}

/// Marker index each FOCUS names, by content-word overlap with the guidance text leading up to each marker.
/// Empty when any span has no unique best match.
inline std::vector<std::size_t> match_spans_to_markers(const FocusTrace& t, std::string_view guidance,
                                                       const std::vector<SotMarker>& markers) {
  std::vector<std::set<std::string>> ctx;
  std::size_t from = 0;
  for (const auto& m : markers) {
    ctx.push_back(content_words(guidance.substr(from, m.range.begin - from)));
    from = m.range.end;
  }
  std::vector<std::size_t> out;
  for (const auto& sp : t.focus_spans) {
    const auto fw = content_words(sp.text);
    std::size_t best = 0, best_n = 0, ties = 0;
    for (std::size_t k = 0; k < ctx.size(); ++k) {
      std::size_t n = 0;
      for (const auto& w : fw) n += ctx[k].count(w);
      if (n > best_n) best = k, best_n = n, ties = 0;
      else if (n == best_n) ++ties;
    }
    if (best_n == 0 || ties > 0) return {};
    out.push_back(best);
  }
  return out;
}

}  // namespace detail

/// Rule engine shared by the three distillation modes.
inline ValidationReport validate(Mode mode, const FocusTrace& t, std::string_view guidance,
                                 const ValidationOptions& opt = {}) {
  ValidationReport rep;
  auto add = [&](std::string_view id, std::string msg, CharRange r) {
    rep.violations.push_back({std::string(id), std::move(msg), r});
  };
  const CharRange whole{0, t.raw.size()};

  std::optional<std::vector<SotMarker>> markers;
  try {
    markers = count_sot_markers(guidance);
  } catch (const ParseError& e) {
    add(rule::guidance_marker, e.what(), t.think_range);
  }

  // cardinality
  if (mode == Mode::recrop) {
    if (t.focus_spans.size() != 1)
      add(rule::recrop_single_focus,
          "recrop traces need exactly one FOCUS block, found " + std::to_string(t.focus_spans.size()),
          t.focus_spans.size() > 1 ? t.focus_spans[1].tag_range : t.think_range);
  } else if (markers) {
    const std::size_t want = std::max<std::size_t>(1, markers->size());
    if (t.focus_spans.size() != want)
      add(rule::cardinality,
          "expected " + std::to_string(want) + " FOCUS blocks for " + std::to_string(markers->size()) +
              " region markers, found " + std::to_string(t.focus_spans.size()),
          t.think_range);
  }

  // per-span content
  for (const FocusSpan& sp : t.focus_spans) {
    const std::string_view text = sp.text;
    const auto terms = detail::sentence_terminators(text);
    const bool ends_terminated = !terms.empty() && detail::only_space(text, terms.back().end, text.size());
    if (terms.size() != 1 || !ends_terminated)
      add(rule::single_sentence,
          "FOCUS must be exactly one sentence ending in . ! or ? (found " + std::to_string(terms.size()) +
              " terminators)",
          sp.range);

    for (std::size_t i = 0; i < text.size(); ++i)
      if (std::isdigit(static_cast<unsigned char>(text[i])) || text[i] == '%') {
        std::size_t j = i;
        while (j < text.size() && (std::isdigit(static_cast<unsigned char>(text[j])) || text[j] == '%' ||
                                   text[j] == '.' || text[j] == ','))
          ++j;
        add(rule::no_numeric, "FOCUS contains a number '" + std::string(text.substr(i, j - i)) + "'",
            detail::shift({i, j}, sp.range.begin));
        i = j;
      }
    for (const auto& [w, r] : detail::find_phrases(text, detail::number_words()))
      add(rule::no_numeric, "FOCUS contains a number word '" + w + "'", detail::shift(r, sp.range.begin));

    for (const auto& [w, r] : detail::find_phrases(text, {"sot", "eot"}))
      add(rule::no_tag_mention, "FOCUS mentions a region-marker tag", detail::shift(r, sp.range.begin));

    for (const auto& [w, r] : detail::find_phrases(text, {"coordinate", "coordinates", "bbox", "bounding box",
                                                          "x1", "y1", "x2", "y2"}))
      add(rule::no_coordinates, "FOCUS refers to coordinates ('" + w + "')", detail::shift(r, sp.range.begin));

    if (opt.require_verb && detail::find_phrases(text, detail::verb_words()).empty())
      add(rule::verb_required, "FOCUS has no recognizable verb", sp.range);
    if (opt.ban_colors)
      for (const auto& [w, r] : detail::find_phrases(text, detail::color_words()))
        add(rule::no_color, "FOCUS names a color '" + w + "'", detail::shift(r, sp.range.begin));
  }

  // document-wide
  for (CharRange r : detail::coordinate_lists(t.think_text))
    add(rule::no_coordinates, "reasoning contains a coordinate list", detail::shift(r, t.think_range.begin));
  for (CharRange r : detail::coordinate_lists(t.answer_text))
    add(rule::no_coordinates, "answer contains a coordinate list", detail::shift(r, t.answer_range.begin));

  std::map<std::string, std::size_t> seen;
  for (std::size_t i = 0; i < t.focus_spans.size(); ++i) {
    const std::string key = detail::collapse(t.focus_spans[i].text);
    if (auto [it, fresh] = seen.emplace(key, i); !fresh)
      add(rule::distinct_focus, "FOCUS block " + std::to_string(i) + " repeats block " + std::to_string(it->second),
          t.focus_spans[i].range);
  }
  for (std::size_t i = 0; i + 1 < t.focus_spans.size(); ++i)
    if (t.focus_spans[i].tag_range.end > t.focus_spans[i + 1].tag_range.begin)
      add(rule::focus_order, "FOCUS blocks out of document order", t.focus_spans[i + 1].range);
  if (markers && markers->size() >= 2 && t.focus_spans.size() == markers->size()) {
    const auto match = detail::match_spans_to_markers(t, guidance, *markers);
    for (std::size_t i = 0; i + 1 < match.size(); ++i)
      if (match[i] > match[i + 1]) {
        add(rule::focus_order,
            "FOCUS block " + std::to_string(i + 1) + " names region " + std::to_string(match[i + 1] + 1) +
                " of the guidance, which precedes region " + std::to_string(match[i] + 1),
            t.focus_spans[i + 1].range);
        break;
      }
  }

  if (mode == Mode::singlepass || mode == Mode::recrop) {
    for (const auto& [w, r] : detail::find_phrases(t.think_text, detail::tool_lexicon()))
      add(rule::no_tool_verb, "reasoning uses tool term '" + w + "'", detail::shift(r, t.think_range.begin));
    if (t.answer_text.find("boxed{") != std::string::npos)
      add(rule::answer_boxed, "answer keeps a \\boxed{} wrapper", t.answer_range);
  }

  if (mode == Mode::recrop && !t.focus_spans.empty()) {
    const FocusSpan& sp = t.focus_spans.front();
    const std::string_view raw = t.raw;
    const bool before = detail::has_letter(raw.substr(t.think_range.begin, sp.tag_range.begin - t.think_range.begin));
    const std::size_t last_end = t.focus_spans.back().tag_range.end;
    const bool after = detail::has_letter(raw.substr(last_end, t.think_range.end - std::min(last_end, t.think_range.end)));
    if (!before) add(rule::flow_order, "FOCUS is the first sentence; context must come first", sp.tag_range);
    if (!after) add(rule::flow_order, "FOCUS is the last sentence; observation must follow", sp.tag_range);
  }
  (void)whole;
  return rep;
}

inline ValidationReport validate_vgr(const FocusTrace& t, std::string_view g, const ValidationOptions& o = {}) {
  return validate(Mode::vgr, t, g, o);
}
inline ValidationReport validate_singlepass(const FocusTrace& t, std::string_view g,
                                            const ValidationOptions& o = {}) {
  return validate(Mode::singlepass, t, g, o);
}
inline ValidationReport validate_recrop(const FocusTrace& t, std::string_view g, const ValidationOptions& o = {}) {
  return validate(Mode::recrop, t, g, o);
}

/// Parses then validates; a parse failure becomes a PARSE violation.
inline ValidationReport validate_document(Mode mode, const std::string& raw, std::string_view guidance,
                                          const ValidationOptions& opt = {}) {
  try {
    return validate(mode, parse_trace(raw), guidance, opt);
  } catch (const ParseError& e) {
    ValidationReport rep;
    const std::size_t at = std::min(e.offset(), raw.empty() ? 0 : raw.size() - 1);
    rep.violations.push_back({std::string(rule::parse), e.what(), {at, std::min(at + 1, raw.size())}});
    return rep;
  }
}

}  // namespace focuslab::trace
