// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "focuslab/core/error.hpp"

namespace focuslab::ad {

using Shape = std::vector<std::size_t>;

/// Storage aligned to the widest SIMD packet.
template <typename T>
using Buffer = std::vector<T, Eigen::aligned_allocator<T>>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

/// Dense row-major array. `grad` stays empty unless the tensor requires grad.
template <typename T>
struct Tensor {
  Shape dims;
  Buffer<T> data;
  bool requires_grad = false;
  Buffer<T> grad;

  Tensor() = default;
  Tensor(Shape d, const std::vector<T>& values, bool rg = false)
      : Tensor(std::move(d), Buffer<T>(values.begin(), values.end()), rg) {}
  Tensor(Shape d, std::initializer_list<T> values, bool rg = false)
      : Tensor(std::move(d), Buffer<T>(values), rg) {}
  Tensor(Shape d, Buffer<T> values, bool rg = false)
      : dims(std::move(d)), data(std::move(values)), requires_grad(rg) {
    if (numel(dims) != data.size())
      fail(ErrorCode::shape, "tensor dims " + to_string(dims) + " hold " + std::to_string(numel(dims)) +
                                 " values, got " + std::to_string(data.size()));
    if (requires_grad) grad.assign(data.size(), T(0));
  }

  static Tensor zeros(Shape d, bool rg = false) {
    const std::size_t n = numel(d);
    return Tensor(std::move(d), Buffer<T>(n, T(0)), rg);
  }
  static Tensor filled(Shape d, T v, bool rg = false) {
    const std::size_t n = numel(d);
    return Tensor(std::move(d), Buffer<T>(n, v), rg);
  }

  std::size_t size() const { return data.size(); }
  bool has_grad() const { return !grad.empty(); }

  void zero_grad() {
    if (requires_grad) grad.assign(data.size(), T(0));
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.dims = dims;
    out.data.assign(data.begin(), data.end());
    out.requires_grad = requires_grad;
    if (requires_grad) out.grad.assign(data.size(), U(0));
    return out;
  }

  std::span<const T> view() const { return data; }
};

}  // namespace focuslab::ad
