// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "focuslab/autodiff/graph.hpp"
#include "focuslab/core/rng.hpp"

namespace focuslab::ad {

struct GradCheckOptions {
  std::size_t sample_count = 200;
  double step = 1e-5;
  double tolerance = 1e-4;
  std::uint64_t seed = 0;
  /// Restrict to parameters whose name starts with one of these prefixes (empty = all).
  std::vector<std::string> prefixes;
};

struct GradCheckEntry {
  std::string name;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  double max_rel_err = 0;
  std::size_t worst_index = 0;
  double analytic = 0;
  double numeric = 0;
};

struct GradCheckReport {
  double max_rel_err = 0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  bool pass = false;
  std::vector<GradCheckEntry> tensors;
};

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-12});
  return std::abs(analytic - numeric) / denom;
}

/// Central-difference check of d(loss)/d(param) on sampled coordinates.
///
/// A coordinate is skipped when a perturbation changes the branch pattern of a
/// non-smooth kernel (kink_signature), since the finite difference then straddles
/// a kink.
template <typename T>
GradCheckReport grad_check(Graph<T>& g, NodeId loss, const Feed<T>& feed, const GradCheckOptions& opt) {
  if (!(opt.step > 0)) fail(ErrorCode::domain, "step must be positive");
  if (opt.sample_count == 0) fail(ErrorCode::domain, "sample_count must be positive");
  if (numel(g.shape(loss)) != 1) fail(ErrorCode::shape, "grad_check loss must be scalar");

  auto params = g.parameters();
  if (!opt.prefixes.empty()) {
    std::erase_if(params, [&](const auto& p) {
      return std::none_of(opt.prefixes.begin(), opt.prefixes.end(),
                          [&](const std::string& pre) { return p.first.starts_with(pre); });
    });
  }
  if (params.empty()) fail(ErrorCode::domain, "grad_check found no parameters to check");

  for (auto& [name, t] : params) t->zero_grad();
  g.run(feed);
  const std::uint64_t base_sig = g.kink_signature();
  g.backward(loss);

  auto eval_loss = [&]() {
    g.run(feed);
    return static_cast<double>(g.value(loss)[0]);
  };

  Rng rng(opt.seed);
  GradCheckReport report;
  for (auto& [name, t] : params) {
    GradCheckEntry entry;
    entry.name = name;
    const Buffer<T> analytic = t->grad;
    std::vector<std::size_t> coords(t->size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > opt.sample_count) {
      // partial Fisher-Yates: first sample_count entries become the sample
      for (std::size_t i = 0; i < opt.sample_count; ++i) std::swap(coords[i], coords[i + rng.index(coords.size() - i)]);
      coords.resize(opt.sample_count);
    }
    for (std::size_t idx : coords) {
      const T orig = t->data[idx];
      const T h = static_cast<T>(opt.step);
      t->data[idx] = orig + h;
      const double up = eval_loss();
      const std::uint64_t sig_up = g.kink_signature();
      t->data[idx] = orig - h;
      const double down = eval_loss();
      const std::uint64_t sig_down = g.kink_signature();
      t->data[idx] = orig;
      if (sig_up != base_sig || sig_down != base_sig) {
        ++entry.skipped;
        continue;
      }
      const double numeric = (up - down) / (2.0 * opt.step);
      const double err = relative_error(static_cast<double>(analytic[idx]), numeric);
      ++entry.checked;
      if (err >= entry.max_rel_err) {
        entry.max_rel_err = err;
        entry.worst_index = idx;
        entry.analytic = static_cast<double>(analytic[idx]);
        entry.numeric = numeric;
      }
    }
    report.checked += entry.checked;
    report.skipped += entry.skipped;
    if (entry.checked > 0 && (report.worst_param.empty() || entry.max_rel_err > report.max_rel_err)) {
      report.max_rel_err = entry.max_rel_err;
      report.worst_param = entry.name;
      report.worst_index = entry.worst_index;
    }
    report.tensors.push_back(std::move(entry));
  }
  g.run(feed);  // leave activations consistent with the unperturbed parameters
  report.pass = report.checked > 0 && report.max_rel_err <= opt.tolerance;
  return report;
}

}  // namespace focuslab::ad
