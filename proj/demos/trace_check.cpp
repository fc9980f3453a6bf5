// SPDX-License-Identifier: Apache-2.0
//
// Validates a small reasoning trace against its guidance and prints the
// (FOCUS text, box) pairs it would contribute to detector training.

#include <cstdio>

#include "focuslab/trace/validate.hpp"

using namespace focuslab;

int main() {
  const std::string guidance =
      "the mug on the desk <SOT>[120,340,310,560]<EOT><image> and the clock on the wall "
      "<SOT>[700,60,860,220]<EOT><image>";
  const std::string response =
      "<think>The question compares two objects. "
      "<FOCUS>The mug on the desk is the first object to inspect.</FOCUS> It is half full. "
      "<FOCUS>The clock on the wall is the second object.</FOCUS> It shows early morning.</think>"
      "<answer>the mug</answer>";

  const auto report = trace::validate_document(trace::Mode::vgr, response, guidance);
  std::printf("valid: %s\n", report.pass() ? "yes" : "no");
  for (const auto& v : report.violations)
    std::printf("  %s: %s (bytes %zu..%zu)\n", v.rule_id.c_str(), v.message.c_str(), v.range.begin, v.range.end);
  if (!report.pass()) return 1;

  const auto t = trace::parse_trace(response);
  const auto pairs = trace::emit_training_pairs(t, trace::count_sot_markers(guidance), {1000, 800}, trace::Mode::vgr);
  for (const auto& p : pairs)
    std::printf("[%.3f %.3f %.3f %.3f] %s\n", p.target_box.x1, p.target_box.y1, p.target_box.x2, p.target_box.y2,
                p.focus_text.c_str());
  return 0;
}
