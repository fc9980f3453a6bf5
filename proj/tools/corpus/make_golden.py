#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Writes data/golden_traces.jsonl. Each record names the rule it exercises and its authored verdict."""
import json
import pathlib

M1 = "<SOT>[0.10,0.20,0.40,0.60]<EOT><image>"
M2 = "<SOT>[0.55,0.15,0.90,0.50]<EOT><image>"
MP = "<SOT>[120,40,360,300]<EOT><image>"


def doc(think, answer):
    return f"<think>{think}</think><answer>{answer}</answer>"


R = []


def rec(rid, rule, expect, guidance, response, mode=None, options=None, size=(640, 480), q="What is shown?"):
    r = {"id": rid, "rule": rule, "expect": expect, "question": q, "guidance": guidance,
         "response": response, "image_size": list(size)}
    if mode:
        r["mode"] = mode
    if options:
        r["options"] = options
    R.append(r)


two = f"The stuffed bear on the left {M1} sits beside the lamp on the shelf {M2}. So the answer is B."

# PARSE
rec("g01", "PARSE", "pass", f"The sign above the door {M1} says OPEN.",
    "<think>I look over the storefront. <FOCUS>The sign above the door is the object that must be examined.</FOCUS> "
    "It reads OPEN.</think>\n<answer>OPEN</answer>\n")
rec("g02", "PARSE", "fail", f"The sign above the door {M1} says OPEN.",
    "Sure! <think>I look over the storefront. <FOCUS>The sign above the door is the object that must be examined."
    "</FOCUS> It reads OPEN.</think><answer>OPEN</answer>")
# GUIDANCE_MARKER
rec("g03", "GUIDANCE_MARKER", "pass", f"The clock on the tower {MP} shows noon.",
    doc("Scanning the square first. <FOCUS>The clock on the tower is the object that must be examined.</FOCUS> "
        "Both hands point up.", "noon"))
rec("g04", "GUIDANCE_MARKER", "fail", "The clock on the tower <SOT>[120,40,360]<EOT><image> shows noon.",
    doc("Scanning the square first. <FOCUS>The clock on the tower is the object that must be examined.</FOCUS> "
        "Both hands point up.", "noon"))
# CARDINALITY
rec("g05", "CARDINALITY", "pass", two,
    doc("<FOCUS>The stuffed bear on the left is the first object that must be examined.</FOCUS> It has a bow. "
        "<FOCUS>The lamp on the shelf is the second object that must be examined.</FOCUS> It is switched off.", "B"))
rec("g06", "CARDINALITY", "fail", two,
    doc("<FOCUS>The stuffed bear on the left is the first object that must be examined.</FOCUS> It has a bow and "
        "the lamp is off.", "B"))
# SINGLE_SENTENCE
rec("g07", "SINGLE_SENTENCE", "pass", "The answer is in the legend.",
    doc("<FOCUS>The legend beside the plot (upper corner, near the title.) is the element that must be examined."
        "</FOCUS> It lists the series.", "Series A"))
rec("g08", "SINGLE_SENTENCE", "fail", "The answer is in the legend.",
    doc("<FOCUS>The legend beside the plot is the element that must be examined. It lists every series.</FOCUS> "
        "The first series is A.", "Series A"))
# NO_NUMERIC
rec("g09", "NO_NUMERIC", "pass", f"The bar for the female category {M1} reaches 44%.",
    doc("<FOCUS>The bar for the female category is the item that must be examined.</FOCUS> It reaches 44% on the "
        "axis, above the 3.5 gridline.", "44%"))
rec("g10", "NO_NUMERIC", "fail", f"The bar for the female category {M1} reaches 44%.",
    doc("<FOCUS>The bar reaching 44% is the item that must be examined.</FOCUS> That is the female category.",
        "44%"))
# NO_COORDINATES
rec("g11", "NO_COORDINATES", "pass", f"The person wearing a jacket {M1} is near the chairs.",
    doc("<FOCUS>The person wearing a jacket near the chairs is the element that must be examined.</FOCUS> "
        "The person is standing (arms folded).", "standing"))
rec("g12", "NO_COORDINATES", "fail", f"The person wearing a jacket {M1} is near the chairs.",
    doc("<FOCUS>The person wearing a jacket near the chairs is the element that must be examined.</FOCUS> "
        "They occupy [0.10, 0.20, 0.40, 0.60] of the frame.", "standing"))
# NO_TAG_MENTION
rec("g13", "NO_TAG_MENTION", "pass", f"The seat of the sofa {M1} is empty.",
    doc("<FOCUS>The seat of the sofa is the region that must be examined.</FOCUS> Nobody sits there.", "empty"))
rec("g14", "NO_TAG_MENTION", "fail", f"The seat of the sofa {M1} is empty.",
    doc("<FOCUS>The region inside the SOT marker is the seat that must be examined.</FOCUS> Nobody sits there.",
        "empty"))
# DISTINCT_FOCUS
rec("g15", "DISTINCT_FOCUS", "pass", two,
    doc("<FOCUS>The stuffed bear on the left is the object that must be examined.</FOCUS> It has a bow. "
        "<FOCUS>The lamp on the shelf is the object that must be examined.</FOCUS> It is off.", "B"))
rec("g16", "DISTINCT_FOCUS", "fail", two,
    doc("<FOCUS>The object on the shelf must be examined.</FOCUS> It has a bow. "
        "<FOCUS>The object on the  shelf must be examined!</FOCUS> It is off.", "B"))
# FOCUS_ORDER
rec("g17", "FOCUS_ORDER", "pass", two,
    doc("<FOCUS>The stuffed bear on the left is the first object that must be examined.</FOCUS> It wears a bow. "
        "<FOCUS>The lamp standing on the shelf is the next object that must be examined.</FOCUS> It is off.", "B"))
rec("g18", "FOCUS_ORDER", "fail", two,
    doc("<FOCUS>The lamp standing on the shelf is the object that must be examined.</FOCUS> It is off. "
        "<FOCUS>The stuffed bear on the left is the other object that must be examined.</FOCUS> It wears a bow.",
        "B"))
# NO_TOOL_VERB
rec("g19", "NO_TOOL_VERB", "pass", f"Zoom in on the label {MP}.",
    doc("I examine the rescaled chart. <FOCUS>The label under the chart is the element that must be examined."
        "</FOCUS> Looking closer at it, the label reads Q3.", "Q3"), mode="singlepass")
rec("g20", "NO_TOOL_VERB", "fail", f"Zoom in on the label {MP}.",
    doc("I will zoom in on the chart. <FOCUS>The label under the chart is the element that must be examined."
        "</FOCUS> The label reads Q3.", "Q3"), mode="singlepass")
# ANSWER_BOXED
rec("g21", "ANSWER_BOXED", "pass", rf"The dial {MP} points at C. \boxed{{C}}",
    doc("I examine the gauge panel. <FOCUS>The dial on the right of the panel is the object that must be examined."
        "</FOCUS> Its needle points at C.", "C"), mode="singlepass")
rec("g22", "ANSWER_BOXED", "fail", rf"The dial {MP} points at C. \boxed{{C}}",
    doc("I examine the gauge panel. <FOCUS>The dial on the right of the panel is the object that must be examined."
        "</FOCUS> Its needle points at C.", r"\boxed{C}"), mode="singlepass")
# RECROP_SINGLE_FOCUS
rec("g23", "RECROP_SINGLE_FOCUS", "pass",
    f"First try {M1} shows nothing. Second try {M2} shows the price tag 12.99.",
    doc("I scan the shelf as a whole. <FOCUS>The price tag below the upper shelf is the item that must be examined."
        "</FOCUS> It reads 12.99. So the price is 12.99.", "12.99"), mode="recrop")
rec("g24", "RECROP_SINGLE_FOCUS", "fail",
    f"First try {M1} shows nothing. Second try {M2} shows the price tag 12.99.",
    doc("I scan the shelf as a whole. <FOCUS>The lower shelf is the first item that must be examined.</FOCUS> "
        "Nothing there. <FOCUS>The price tag below the upper shelf is the item that must be examined.</FOCUS> "
        "It reads 12.99.", "12.99"), mode="recrop")
# FLOW_ORDER
rec("g25", "FLOW_ORDER", "pass", f"The plate number {MP} is KX 204.",
    doc("The street scene has several parked cars. <FOCUS>The plate of the nearest car is the element that must be "
        "examined.</FOCUS> It reads KX 204, which is the answer.", "KX 204"), mode="recrop")
rec("g26", "FLOW_ORDER", "fail", f"The plate number {MP} is KX 204.",
    doc("<FOCUS>The plate of the nearest car is the element that must be examined.</FOCUS> It reads KX 204.",
        "KX 204"), mode="recrop")
# VERB_REQUIRED
rec("g27", "VERB_REQUIRED", "pass", f"The kite above the trees {M1} is a diamond.",
    doc("<FOCUS>The kite above the trees is the object that must be examined.</FOCUS> It has a diamond shape.",
        "diamond"), options={"require_verb": True, "ban_colors": False})
rec("g28", "VERB_REQUIRED", "fail", f"The kite above the trees {M1} is a diamond.",
    doc("<FOCUS>The kite above the trees, in the sky.</FOCUS> It has a diamond shape.", "diamond"),
    options={"require_verb": True, "ban_colors": False})
# NO_COLOR
rec("g29", "NO_COLOR", "pass", f"The car parked by the hydrant {M1} is red.",
    doc("<FOCUS>The car parked by the hydrant is the object that must be examined.</FOCUS> Its body is red and "
        "shiny.", "red"), options={"require_verb": False, "ban_colors": True})
rec("g30", "NO_COLOR", "fail", f"The car parked by the hydrant {M1} is red.",
    doc("<FOCUS>The red car parked by the hydrant is the object that must be examined.</FOCUS> Its body is shiny.",
        "red"), options={"require_verb": False, "ban_colors": True})

out = pathlib.Path(__file__).resolve().parents[2] / "data" / "golden_traces.jsonl"
out.write_text("".join(json.dumps(r, ensure_ascii=False) + "\n" for r in R))
print(f"{len(R)} records -> {out}")
