// SPDX-License-Identifier: Apache-2.0
#pragma once

// Forward/backward kernels used by Graph. Every backward kernel accumulates
// (+=) into the gradient buffers it is handed; null buffers are skipped.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include <Eigen/Core>

#include "focuslab/autodiff/tensor.hpp"

namespace focuslab::ad::kernels {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;
template <typename T>
using StridedMat = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using CStridedMat = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

// ---- matmul: C[M,N] = A[M,K] * B[K,N] -------------------------------------

template <typename T>
void matmul(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  MapMat<T>(c, m, n).noalias() = CMapMat<T>(a, m, k) * CMapMat<T>(b, k, n);
}

template <typename T>
void matmul_backward(const T* a, const T* b, const T* g, T* ga, T* gb, std::size_t m, std::size_t k,
                     std::size_t n) {
  CMapMat<T> A(a, m, k), B(b, k, n), G(g, m, n);
  if (ga) MapMat<T>(ga, m, k).noalias() += G * B.transpose();
  if (gb) MapMat<T>(gb, k, n).noalias() += A.transpose() * G;
}

// ---- conv2d via im2col -----------------------------------------------------

struct ConvGeom {
  std::size_t n, c, h, w;   // input
  std::size_t o, kh, kw;    // weights
  std::size_t stride, pad;  // symmetric zero padding
  std::size_t ho, wo;       // output
  std::size_t k() const { return c * kh * kw; }
  std::size_t l() const { return ho * wo; }
};

/// col is [K, N*L]; column index n*L + oh*Wo + ow.
template <typename T>
void im2col(const T* x, T* col, const ConvGeom& g) {
  const std::size_t nl = g.n * g.l();
  for (std::size_t ci = 0; ci < g.c; ++ci)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        T* row = col + ((ci * g.kh + ki) * g.kw + kj) * nl;
        for (std::size_t ni = 0; ni < g.n; ++ni) {
          const T* plane = x + (ni * g.c + ci) * g.h * g.w;
          T* dst = row + ni * g.l();
          for (std::size_t oh = 0; oh < g.ho; ++oh) {
            const long ih = static_cast<long>(oh * g.stride + ki) - static_cast<long>(g.pad);
            for (std::size_t ow = 0; ow < g.wo; ++ow) {
              const long iw = static_cast<long>(ow * g.stride + kj) - static_cast<long>(g.pad);
              const bool inside = ih >= 0 && iw >= 0 && ih < static_cast<long>(g.h) && iw < static_cast<long>(g.w);
              dst[oh * g.wo + ow] = inside ? plane[ih * static_cast<long>(g.w) + iw] : T(0);
            }
          }
        }
      }
}

template <typename T>
void col2im_add(const T* col, T* gx, const ConvGeom& g) {
  const std::size_t nl = g.n * g.l();
  for (std::size_t ci = 0; ci < g.c; ++ci)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const T* row = col + ((ci * g.kh + ki) * g.kw + kj) * nl;
        for (std::size_t ni = 0; ni < g.n; ++ni) {
          T* plane = gx + (ni * g.c + ci) * g.h * g.w;
          const T* src = row + ni * g.l();
          for (std::size_t oh = 0; oh < g.ho; ++oh) {
            const long ih = static_cast<long>(oh * g.stride + ki) - static_cast<long>(g.pad);
            if (ih < 0 || ih >= static_cast<long>(g.h)) continue;
            for (std::size_t ow = 0; ow < g.wo; ++ow) {
              const long iw = static_cast<long>(ow * g.stride + kj) - static_cast<long>(g.pad);
              if (iw < 0 || iw >= static_cast<long>(g.w)) continue;
              plane[ih * static_cast<long>(g.w) + iw] += src[oh * g.wo + ow];
            }
          }
        }
      }
}

/// out [N,O,Ho,Wo]; scratch receives the [O, N*L] product.
template <typename T>
void conv2d(const T* x, const T* w, const T* bias, T* out, Buffer<T>& col, Buffer<T>& scratch,
            const ConvGeom& g) {
  const std::size_t K = g.k(), L = g.l(), NL = g.n * L;
  col.resize(K * NL);
  scratch.resize(g.o * NL);
  im2col(x, col.data(), g);
  MapMat<T>(scratch.data(), g.o, NL).noalias() = CMapMat<T>(w, g.o, K) * CMapMat<T>(col.data(), K, NL);
  for (std::size_t ni = 0; ni < g.n; ++ni)
    for (std::size_t oi = 0; oi < g.o; ++oi) {
      const T b = bias ? bias[oi] : T(0);
      const T* src = scratch.data() + oi * NL + ni * L;
      T* dst = out + (ni * g.o + oi) * L;
      for (std::size_t l = 0; l < L; ++l) dst[l] = src[l] + b;
    }
}

template <typename T>
void conv2d_backward(const T* w, const T* gout, const Buffer<T>& col, Buffer<T>& scratch, T* gx, T* gw,
                     T* gb, const ConvGeom& g) {
  const std::size_t K = g.k(), L = g.l(), NL = g.n * L;
  scratch.resize(g.o * NL);
  for (std::size_t ni = 0; ni < g.n; ++ni)
    for (std::size_t oi = 0; oi < g.o; ++oi) {
      const T* src = gout + (ni * g.o + oi) * L;
      std::copy(src, src + L, scratch.data() + oi * NL + ni * L);
    }
  CMapMat<T> G(scratch.data(), g.o, NL);
  if (gw) MapMat<T>(gw, g.o, K).noalias() += G * CMapMat<T>(col.data(), K, NL).transpose();
  if (gb)
    for (std::size_t oi = 0; oi < g.o; ++oi) gb[oi] += G.row(static_cast<Eigen::Index>(oi)).sum();
  if (gx) {
    Buffer<T> gcol(K * NL);
    MapMat<T>(gcol.data(), K, NL).noalias() = CMapMat<T>(w, g.o, K).transpose() * G;
    col2im_add(gcol.data(), gx, g);
  }
}

// ---- normalization ---------------------------------------------------------

/// GroupNorm over x [N, C, S]: saved xhat [N*C*S], rstd [N*G].
template <typename T>
void group_norm(const T* x, const T* gamma, const T* beta, T* y, T* xhat, T* rstd, std::size_t n, std::size_t c,
                std::size_t s, std::size_t groups, T eps) {
  const std::size_t cg = c / groups, span = cg * s;
  for (std::size_t ni = 0; ni < n; ++ni)
    for (std::size_t gi = 0; gi < groups; ++gi) {
      const std::size_t base = (ni * c + gi * cg) * s;
      T mean = 0;
      for (std::size_t i = 0; i < span; ++i) mean += x[base + i];
      mean /= static_cast<T>(span);
      T var = 0;
      for (std::size_t i = 0; i < span; ++i) {
        const T d = x[base + i] - mean;
        var += d * d;
      }
      var /= static_cast<T>(span);
      const T r = T(1) / std::sqrt(var + eps);
      rstd[ni * groups + gi] = r;
      for (std::size_t cc = 0; cc < cg; ++cc) {
        const std::size_t ch = gi * cg + cc;
        for (std::size_t si = 0; si < s; ++si) {
          const std::size_t idx = base + cc * s + si;
          xhat[idx] = (x[idx] - mean) * r;
          y[idx] = xhat[idx] * gamma[ch] + beta[ch];
        }
      }
    }
}

template <typename T>
void group_norm_backward(const T* gy, const T* gamma, const T* xhat, const T* rstd, T* gx, T* ggamma, T* gbeta,
                         std::size_t n, std::size_t c, std::size_t s, std::size_t groups) {
  const std::size_t cg = c / groups, span = cg * s;
  for (std::size_t ni = 0; ni < n; ++ni)
    for (std::size_t gi = 0; gi < groups; ++gi) {
      const std::size_t base = (ni * c + gi * cg) * s;
      T m1 = 0, m2 = 0;
      for (std::size_t cc = 0; cc < cg; ++cc) {
        const std::size_t ch = gi * cg + cc;
        for (std::size_t si = 0; si < s; ++si) {
          const std::size_t idx = base + cc * s + si;
          const T gxh = gy[idx] * gamma[ch];
          m1 += gxh;
          m2 += gxh * xhat[idx];
          if (ggamma) ggamma[ch] += gy[idx] * xhat[idx];
          if (gbeta) gbeta[ch] += gy[idx];
        }
      }
      if (!gx) continue;
      m1 /= static_cast<T>(span);
      m2 /= static_cast<T>(span);
      const T r = rstd[ni * groups + gi];
      for (std::size_t cc = 0; cc < cg; ++cc) {
        const std::size_t ch = gi * cg + cc;
        for (std::size_t si = 0; si < s; ++si) {
          const std::size_t idx = base + cc * s + si;
          gx[idx] += r * (gy[idx] * gamma[ch] - m1 - xhat[idx] * m2);
        }
      }
    }
}

/// LayerNorm over the last axis of x [R, D].
template <typename T>
void layer_norm(const T* x, const T* gamma, const T* beta, T* y, T* xhat, T* rstd, std::size_t rows, std::size_t d,
                T eps) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x + r * d;
    T mean = 0;
    for (std::size_t i = 0; i < d; ++i) mean += xr[i];
    mean /= static_cast<T>(d);
    T var = 0;
    for (std::size_t i = 0; i < d; ++i) var += (xr[i] - mean) * (xr[i] - mean);
    var /= static_cast<T>(d);
    const T rs = T(1) / std::sqrt(var + eps);
    rstd[r] = rs;
    for (std::size_t i = 0; i < d; ++i) {
      xhat[r * d + i] = (xr[i] - mean) * rs;
      y[r * d + i] = xhat[r * d + i] * gamma[i] + beta[i];
    }
  }
}

template <typename T>
void layer_norm_backward(const T* gy, const T* gamma, const T* xhat, const T* rstd, T* gx, T* ggamma, T* gbeta,
                         std::size_t rows, std::size_t d) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* g = gy + r * d;
    const T* xh = xhat + r * d;
    T m1 = 0, m2 = 0;
    for (std::size_t i = 0; i < d; ++i) {
      const T gxh = g[i] * gamma[i];
      m1 += gxh;
      m2 += gxh * xh[i];
      if (ggamma) ggamma[i] += g[i] * xh[i];
      if (gbeta) gbeta[i] += g[i];
    }
    if (!gx) continue;
    m1 /= static_cast<T>(d);
    m2 /= static_cast<T>(d);
    for (std::size_t i = 0; i < d; ++i) gx[r * d + i] += rstd[r] * (g[i] * gamma[i] - m1 - xh[i] * m2);
  }
}

// ---- softmax over the last axis ------------------------------------------

template <typename T>
void softmax_rows(const T* x, T* y, std::size_t rows, std::size_t d) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x + r * d;
    T* yr = y + r * d;
    const T mx = *std::max_element(xr, xr + d);
    T sum = 0;
    for (std::size_t i = 0; i < d; ++i) {
      yr[i] = std::exp(xr[i] - mx);
      sum += yr[i];
    }
    const T inv = T(1) / sum;
    for (std::size_t i = 0; i < d; ++i) yr[i] *= inv;
  }
}

template <typename T>
void softmax_rows_backward(const T* y, const T* gy, T* gx, std::size_t rows, std::size_t d) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* yr = y + r * d;
    const T* gr = gy + r * d;
    T dot = 0;
    for (std::size_t i = 0; i < d; ++i) dot += yr[i] * gr[i];
    for (std::size_t i = 0; i < d; ++i) gx[r * d + i] += yr[i] * (gr[i] - dot);
  }
}

// ---- multi-head scaled dot-product attention -------------------------------

struct AttnGeom {
  std::size_t batch, tq, tk, d, heads;
  std::size_t dh() const { return d / heads; }
};

/// q [B,Tq,D], k/v [B,Tk,D] -> out [B,Tq,D]; probs [B,H,Tq,Tk] saved.
template <typename T>
void attention(const T* q, const T* k, const T* v, T* out, T* probs, const AttnGeom& g) {
  const auto dh = static_cast<Eigen::Index>(g.dh());
  const auto tq = static_cast<Eigen::Index>(g.tq), tk = static_cast<Eigen::Index>(g.tk);
  const Eigen::OuterStride<> st(static_cast<Eigen::Index>(g.d));
  const T scale = T(1) / std::sqrt(static_cast<T>(g.dh()));
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t h = 0; h < g.heads; ++h) {
      CStridedMat<T> Q(q + b * g.tq * g.d + h * g.dh(), tq, dh, st);
      CStridedMat<T> K(k + b * g.tk * g.d + h * g.dh(), tk, dh, st);
      CStridedMat<T> V(v + b * g.tk * g.d + h * g.dh(), tk, dh, st);
      T* p = probs + (b * g.heads + h) * g.tq * g.tk;
      MapMat<T> P(p, tq, tk);
      P.noalias() = (Q * K.transpose()) * scale;
      softmax_rows(p, p, g.tq, g.tk);
      StridedMat<T> O(out + b * g.tq * g.d + h * g.dh(), tq, dh, st);
      O.noalias() = P * V;
    }
}

template <typename T>
void attention_backward(const T* q, const T* k, const T* v, const T* probs, const T* gout, T* gq, T* gk, T* gv,
                        const AttnGeom& g) {
  const auto dh = static_cast<Eigen::Index>(g.dh());
  const auto tq = static_cast<Eigen::Index>(g.tq), tk = static_cast<Eigen::Index>(g.tk);
  const Eigen::OuterStride<> st(static_cast<Eigen::Index>(g.d));
  const T scale = T(1) / std::sqrt(static_cast<T>(g.dh()));
  RowMat<T> gp(tq, tk), gs(tq, tk);
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t h = 0; h < g.heads; ++h) {
      const std::size_t qoff = b * g.tq * g.d + h * g.dh(), koff = b * g.tk * g.d + h * g.dh();
      CStridedMat<T> Q(q + qoff, tq, dh, st), K(k + koff, tk, dh, st), V(v + koff, tk, dh, st);
      CStridedMat<T> GO(gout + qoff, tq, dh, st);
      CMapMat<T> P(probs + (b * g.heads + h) * g.tq * g.tk, tq, tk);
      gp.noalias() = GO * V.transpose();
      if (gv) StridedMat<T>(gv + koff, tk, dh, st).noalias() += P.transpose() * GO;
      for (Eigen::Index i = 0; i < tq; ++i) {
        const T dot = P.row(i).dot(gp.row(i));
        gs.row(i) = P.row(i).cwiseProduct((gp.row(i).array() - dot).matrix());
      }
      if (gq) StridedMat<T>(gq + qoff, tq, dh, st).noalias() += (gs * K) * scale;
      if (gk) StridedMat<T>(gk + koff, tk, dh, st).noalias() += (gs.transpose() * Q) * scale;
    }
}

}  // namespace focuslab::ad::kernels
