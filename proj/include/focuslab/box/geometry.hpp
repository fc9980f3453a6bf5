// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>

#include "focuslab/core/error.hpp"

namespace focuslab::box {

/// Normalized corner box. Label boxes live in [0,1]; raw detector corners
/// may leave that range before clamping.
template <typename T = double>
struct BoxNorm {
  T x1{}, y1{}, x2{}, y2{};

  T width() const { return x2 - x1; }
  T height() const { return y2 - y1; }
  T area() const { return width() * height(); }
  T cx() const { return (x1 + x2) / 2; }
  T cy() const { return (y1 + y2) / 2; }
  bool valid() const { return x1 < x2 && y1 < y2; }
  bool in_unit_square() const { return x1 >= 0 && y1 >= 0 && x2 <= 1 && y2 <= 1; }
  std::array<T, 4> as_array() const { return {x1, y1, x2, y2}; }

  template <typename U>
  BoxNorm<U> cast() const {
    return {static_cast<U>(x1), static_cast<U>(y1), static_cast<U>(x2), static_cast<U>(y2)};
  }
  friend bool operator==(const BoxNorm&, const BoxNorm&) = default;
};

/// Center-size box as produced by the detector head.
template <typename T = double>
struct BoxCS {
  T cx{}, cy{}, w{}, h{};
  friend bool operator==(const BoxCS&, const BoxCS&) = default;
};

template <typename T>
BoxNorm<T> cs_to_corners(const BoxCS<T>& u) {
  return {u.cx - u.w / 2, u.cy - u.h / 2, u.cx + u.w / 2, u.cy + u.h / 2};
}

template <typename T>
BoxCS<T> corners_to_cs(const BoxNorm<T>& b) {
  return {(b.x1 + b.x2) / 2, (b.y1 + b.y2) / 2, b.x2 - b.x1, b.y2 - b.y1};
}

template <typename T>
void require_valid(const BoxNorm<T>& b, const char* what = "box") {
  if (!(b.valid() && std::isfinite(static_cast<double>(b.area()))))
    fail(ErrorCode::domain, std::string(what) + " has zero or negative area");
}

template <typename T>
BoxNorm<T> clamp_unit(const BoxNorm<T>& b) {
  auto c = [](T v) { return std::clamp(v, T(0), T(1)); };
  return {c(b.x1), c(b.y1), c(b.x2), c(b.y2)};
}

template <typename T>
T intersection_area(const BoxNorm<T>& a, const BoxNorm<T>& b) {
  const T iw = std::max(T(0), std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const T ih = std::max(T(0), std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  return iw * ih;
}

template <typename T>
BoxNorm<T> enclosing(const BoxNorm<T>& a, const BoxNorm<T>& b) {
  return {std::min(a.x1, b.x1), std::min(a.y1, b.y1), std::max(a.x2, b.x2), std::max(a.y2, b.y2)};
}

template <typename T>
T iou(const BoxNorm<T>& a, const BoxNorm<T>& b) {
  require_valid(a, "iou: first box");
  require_valid(b, "iou: second box");
  const T inter = intersection_area(a, b);
  return inter / (a.area() + b.area() - inter);
}

/// Guard on the enclosing-box area.
inline constexpr double kEnclosingEps = 1e-8;

template <typename T>
T giou(const BoxNorm<T>& a, const BoxNorm<T>& b) {
  require_valid(a, "giou: first box");
  require_valid(b, "giou: second box");
  const T inter = intersection_area(a, b);
  const T uni = a.area() + b.area() - inter;
  const T c = std::max(enclosing(a, b).area(), T(kEnclosingEps));
  return inter / uni - std::max(c - uni, T(0)) / c;  // c >= uni up to rounding
}

template <typename T>
struct DetectionTerms {
  T l1{};
  T giou_term{};  // 1 - GIoU
  std::array<T, 4> d_l1{};    // d l1 / d pred corners
  std::array<T, 4> d_giou{};  // d giou_term / d pred corners
  T total() const { return l1 + giou_term; }
};

/// Number of branch codes reported by detection_terms.
inline constexpr std::size_t kDetectionBranches = 10;

/// L1 + (1 - GIoU) with analytic gradients w.r.t. the predicted corners.
///
/// Subgradient conventions at kinks: sign(0) = 0 for the L1 term; a tie in a
/// min/max of edge coordinates attributes the edge to the ground truth box.
/// `branches` (optional) receives one code per kink so callers can tell
/// when a perturbation crosses a non-smooth point.
template <typename T>
DetectionTerms<T> detection_terms(const BoxNorm<T>& p, const BoxNorm<T>& g,
                                  std::array<std::int8_t, kDetectionBranches>* branches = nullptr) {
  const std::array<T, 4> pa = p.as_array();
  const std::array<T, 4> ga = g.as_array();
  DetectionTerms<T> out;
  for (int i = 0; i < 4; ++i) {
    const T r = pa[i] - ga[i];
    out.l1 += std::abs(r);
    out.d_l1[i] = r > 0 ? T(1) : (r < 0 ? T(-1) : T(0));
    if (branches) (*branches)[i] = static_cast<std::int8_t>(r > 0 ? 1 : (r < 0 ? -1 : 0));
  }

  // Intersection edges; "p_owns" means the prediction supplies that edge.
  const bool p_owns_ix1 = p.x1 > g.x1, p_owns_iy1 = p.y1 > g.y1;
  const bool p_owns_ix2 = p.x2 < g.x2, p_owns_iy2 = p.y2 < g.y2;
  const T iw_raw = (p_owns_ix2 ? p.x2 : g.x2) - (p_owns_ix1 ? p.x1 : g.x1);
  const T ih_raw = (p_owns_iy2 ? p.y2 : g.y2) - (p_owns_iy1 ? p.y1 : g.y1);
  const bool w_pos = iw_raw > 0, h_pos = ih_raw > 0;
  const T iw = w_pos ? iw_raw : T(0), ih = h_pos ? ih_raw : T(0);
  const T inter = iw * ih;

  const T pw = p.x2 - p.x1, ph = p.y2 - p.y1;
  const T uni = pw * ph + g.area() - inter;

  const bool p_owns_cx1 = p.x1 < g.x1, p_owns_cy1 = p.y1 < g.y1;
  const bool p_owns_cx2 = p.x2 > g.x2, p_owns_cy2 = p.y2 > g.y2;
  const T cw = (p_owns_cx2 ? p.x2 : g.x2) - (p_owns_cx1 ? p.x1 : g.x1);
  const T ch = (p_owns_cy2 ? p.y2 : g.y2) - (p_owns_cy1 ? p.y1 : g.y1);
  const T c_raw = cw * ch;
  const bool c_guarded = c_raw < T(kEnclosingEps);
  const T c = c_guarded ? T(kEnclosingEps) : c_raw;

  out.giou_term = T(1) - (inter / uni - (c - uni) / c);

  if (branches) {
    auto& b = *branches;
    b[4] = static_cast<std::int8_t>(p_owns_ix1 | (p_owns_iy1 << 1) | (p_owns_ix2 << 2) | (p_owns_iy2 << 3));
    b[5] = static_cast<std::int8_t>(w_pos | (h_pos << 1));
    b[6] = static_cast<std::int8_t>(p_owns_cx1 | (p_owns_cy1 << 1) | (p_owns_cx2 << 2) | (p_owns_cy2 << 3));
    b[7] = static_cast<std::int8_t>(c_guarded);
    b[8] = static_cast<std::int8_t>(p.x1 == g.x1 || p.x2 == g.x2);
    b[9] = static_cast<std::int8_t>(p.y1 == g.y1 || p.y2 == g.y2);
  }

  std::array<T, 4> d_inter{};
  if (w_pos && h_pos) {
    if (p_owns_ix1) d_inter[0] = -ih;
    if (p_owns_iy1) d_inter[1] = -iw;
    if (p_owns_ix2) d_inter[2] = ih;
    if (p_owns_iy2) d_inter[3] = iw;
  }
  const std::array<T, 4> d_area_p{-ph, -pw, ph, pw};
  std::array<T, 4> d_c{};
  if (!c_guarded) {
    if (p_owns_cx1) d_c[0] = -ch;
    if (p_owns_cy1) d_c[1] = -cw;
    if (p_owns_cx2) d_c[2] = ch;
    if (p_owns_cy2) d_c[3] = cw;
  }
  for (int i = 0; i < 4; ++i) {
    const T d_uni = d_area_p[i] - d_inter[i];
    const T d_iou = (d_inter[i] * uni - inter * d_uni) / (uni * uni);
    // GIoU = IoU - 1 + U/C
    const T d_uc = (d_uni * c - uni * d_c[i]) / (c * c);
    out.d_giou[i] = -(d_iou + d_uc);
  }
  return out;
}

template <typename T>
T detection_loss(const BoxNorm<T>& pred, const BoxNorm<T>& gt) {
  require_valid(pred, "detection_loss: prediction");
  require_valid(gt, "detection_loss: ground truth");
  return detection_terms(pred, gt).total();
}

/// Grounding error iff IoU < tau (strict).
template <typename T>
bool classify_grounding_error(const BoxNorm<T>& pred, const BoxNorm<T>& gt, T tau) {
  if (!(tau >= 0 && tau <= 1)) fail(ErrorCode::domain, "tau must lie in [0,1]");
  return iou(pred, gt) < tau;
}

struct PixelRect {
  int x1 = 0, y1 = 0, x2 = 0, y2 = 0;  // half-open [x1,x2) x [y1,y2)
  int width() const { return x2 - x1; }
  int height() const { return y2 - y1; }
  friend bool operator==(const PixelRect&, const PixelRect&) = default;
};

struct CropSpec {
  BoxNorm<double> source_rect;  // clamped, normalized
  PixelRect rect_px;
  int output_width = 0;
  int output_height = 0;
  double scale_factor = 1.0;
};

namespace detail {
inline int snap_floor(double v) {
  const double r = std::round(v);
  return std::abs(v - r) < 1e-6 ? static_cast<int>(r) : static_cast<int>(std::floor(v));
}
inline int snap_ceil(double v) {
  const double r = std::round(v);
  return std::abs(v - r) < 1e-6 ? static_cast<int>(r) : static_cast<int>(std::ceil(v));
}
// Grow [lo,hi) to at least `min_len` around its center, shifted back inside [0,limit).
inline void expand_interval(int& lo, int& hi, int min_len, int limit) {
  min_len = std::min(min_len, limit);
  const int len = hi - lo;
  if (len >= min_len) return;
  const int grow = min_len - len;
  lo -= grow / 2;
  hi = lo + min_len;
  if (lo < 0) {
    hi -= lo;
    lo = 0;
  }
  if (hi > limit) {
    lo -= hi - limit;
    hi = limit;
  }
}
}  // namespace detail

/// Crop rectangle for the zoom-in pass: clamp, expand to `min_side` pixels
/// per side, then scale so the longer side becomes `zoom_target`.
inline CropSpec crop_zoom(const BoxNorm<double>& box, int image_w, int image_h, int min_side, int zoom_target) {
  if (image_w <= 0 || image_h <= 0) fail(ErrorCode::domain, "crop_zoom: image size must be positive");
  if (zoom_target <= 0) fail(ErrorCode::domain, "crop_zoom: zoom_target must be positive");
  const BoxNorm<double> c = clamp_unit(box);
  if (!c.valid()) fail(ErrorCode::domain, "crop_zoom: box is degenerate after clamping");

  PixelRect r{detail::snap_floor(c.x1 * image_w), detail::snap_floor(c.y1 * image_h),
              detail::snap_ceil(c.x2 * image_w), detail::snap_ceil(c.y2 * image_h)};
  r.x2 = std::max(r.x2, r.x1 + 1);
  r.y2 = std::max(r.y2, r.y1 + 1);
  detail::expand_interval(r.x1, r.x2, std::max(min_side, 1), image_w);
  detail::expand_interval(r.y1, r.y2, std::max(min_side, 1), image_h);

  CropSpec spec;
  spec.source_rect = c;
  spec.rect_px = r;
  spec.scale_factor = static_cast<double>(zoom_target) / std::max(r.width(), r.height());
  spec.output_width = std::max(1, static_cast<int>(std::lround(r.width() * spec.scale_factor)));
  spec.output_height = std::max(1, static_cast<int>(std::lround(r.height() * spec.scale_factor)));
  return spec;
}

}  // namespace focuslab::box
