// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "focuslab/autodiff/tensor.hpp"
#include "focuslab/core/rng.hpp"

namespace focuslab::ad {

/// Named, ordered parameter tensors with stable addresses.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    std::unique_ptr<Tensor<T>> tensor;
  };

  Tensor<T>& add(std::string name, Tensor<T> t) {
    if (find(name)) fail(ErrorCode::config, "duplicate parameter '" + name + "'");
    t.requires_grad = true;
    t.grad.assign(t.data.size(), T(0));
    entries_.push_back({std::move(name), std::make_unique<Tensor<T>>(std::move(t))});
    return *entries_.back().tensor;
  }

  /// Uniform(-bound, bound) initialization.
  Tensor<T>& add_uniform(std::string name, Shape dims, double bound, Rng& rng) {
    Buffer<T> v(numel(dims));
    for (T& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
    return add(std::move(name), Tensor<T>(std::move(dims), std::move(v)));
  }

  Tensor<T>& add_filled(std::string name, Shape dims, T value) {
    return add(std::move(name), Tensor<T>::filled(std::move(dims), value));
  }

  Tensor<T>* find(std::string_view name) const {
    for (const Entry& e : entries_)
      if (e.name == name) return e.tensor.get();
    return nullptr;
  }

  Tensor<T>& at(std::string_view name) const {
    Tensor<T>* t = find(name);
    if (!t) fail(ErrorCode::config, "no parameter named '" + std::string(name) + "'");
    return *t;
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const Entry& e : entries_) n += e.tensor->size();
    return n;
  }

  void zero_grad() {
    for (Entry& e : entries_) e.tensor->zero_grad();
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const Entry& e : entries_) out.add(e.name, e.tensor->template cast<U>());
    return out;
  }

  /// Copies values from a store with the same names and shapes.
  template <typename U>
  void assign_from(const ParamStore<U>& other) {
    if (other.size() != size()) fail(ErrorCode::shape, "parameter store size mismatch");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const auto& src = other.entries()[i];
      Tensor<T>& dst = *entries_[i].tensor;
      if (src.name != entries_[i].name || src.tensor->dims != dst.dims)
        fail(ErrorCode::shape, "parameter mismatch at '" + entries_[i].name + "'");
      dst.data.assign(src.tensor->data.begin(), src.tensor->data.end());
    }
  }

 private:
  std::vector<Entry> entries_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moments are kept in the parameter's precision.
template <typename T>
class Adam {
 public:
  explicit Adam(const ParamStore<T>& params, AdamConfig cfg = {}) : cfg_(cfg) {
    for (const auto& e : params.entries()) {
      m_.emplace_back(e.tensor->size(), T(0));
      v_.emplace_back(e.tensor->size(), T(0));
    }
  }

  void step(ParamStore<T>& params) {
    if (params.size() != m_.size()) fail(ErrorCode::shape, "optimizer bound to a different parameter store");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    const T step_size = static_cast<T>(cfg_.lr / bc1);
    const T inv_bc2 = static_cast<T>(1.0 / bc2);
    const T eps = static_cast<T>(cfg_.eps);
    for (std::size_t i = 0; i < m_.size(); ++i) {
      Tensor<T>& p = *params.entries()[i].tensor;
      T* m = m_[i].data();
      T* v = v_[i].data();
      for (std::size_t j = 0; j < p.size(); ++j) {
        const T g = p.grad[j];
        m[j] = b1 * m[j] + (T(1) - b1) * g;
        v[j] = b2 * v[j] + (T(1) - b2) * g * g;
        p.data[j] -= step_size * m[j] / (std::sqrt(v[j] * inv_bc2) + eps);
      }
    }
  }

  std::uint64_t steps() const { return t_; }
  void set_steps(std::uint64_t t) { t_ = t; }
  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  std::vector<std::vector<T>>& first_moments() { return m_; }
  std::vector<std::vector<T>>& second_moments() { return v_; }
  const std::vector<std::vector<T>>& first_moments() const { return m_; }
  const std::vector<std::vector<T>>& second_moments() const { return v_; }

 private:
  AdamConfig cfg_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

}  // namespace focuslab::ad
