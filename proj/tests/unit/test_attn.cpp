// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "focuslab/attn/metrics.hpp"
#include "focuslab/core/rng.hpp"
#include "focuslab/synth/generator.hpp"

using namespace focuslab;
using attn::AttentionTensor;
using attn::HeatMap;
using attn::Region;

namespace {

AttentionTensor random_tensor(std::size_t L, std::size_t H, std::size_t Q, std::size_t hp, std::size_t wp,
                              std::uint64_t seed) {
  AttentionTensor a(L, H, Q, hp, wp);
  Rng rng(seed);
  for (float& w : a.weights) w = static_cast<float>(rng.uniform());
  return a;
}

// Naive per-cell mean over heads and query rows.
std::vector<double> triple_loop(const AttentionTensor& a, std::size_t l, const std::vector<std::size_t>& rows) {
  std::vector<double> out(a.patches(), 0.0);
  for (std::size_t p = 0; p < a.patches(); ++p) {
    double s = 0;
    for (std::size_t h = 0; h < a.heads; ++h)
      for (std::size_t q : rows) s += a.at(l, h, q, p);
    out[p] = s / static_cast<double>(a.heads * rows.size());
  }
  return out;
}

double two_means(const HeatMap& h, const Region& r) {
  double in = 0, all = 0;
  for (std::size_t p : r.indices) in += h.values[p];
  for (double v : h.values) all += v;
  return (in / static_cast<double>(r.size())) / (all / static_cast<double>(h.size()));
}

}  // namespace

TEST(AggregateHeatmap, SingleRowIsThatRow) {
  const auto a = random_tensor(3, 1, 1, 4, 4, 1);
  const auto h = attn::aggregate_heatmap(a, 2, {0});
  for (std::size_t p = 0; p < 16; ++p) EXPECT_DOUBLE_EQ(h.values[p], a.at(2, 0, 0, p));
}

TEST(AggregateHeatmap, UniformWeights) {
  AttentionTensor a(2, 3, 2, 4, 4);
  for (float& w : a.weights) w = 1.0f / 16.0f;
  const auto h = attn::aggregate_heatmap(a, 1);
  for (double v : h.values) EXPECT_DOUBLE_EQ(v, 1.0 / 16.0);
}

TEST(AggregateHeatmap, MatchesTripleLoop) {
  const auto a = random_tensor(4, 2, 3, 4, 4, 7);
  for (std::size_t l = 0; l < 4; ++l) {
    const auto h = attn::aggregate_heatmap(a, l, {0, 2});
    const auto ref = triple_loop(a, l, {0, 2});
    for (std::size_t p = 0; p < 16; ++p) EXPECT_NEAR(h.values[p], ref[p], 1e-7);
  }
}

TEST(AggregateHeatmap, QuerySubsetByTokenId) {
  auto a = random_tensor(2, 1, 3, 2, 2, 9);
  a.query_token_ids = {10, 20, 30};
  const auto h = attn::aggregate_heatmap(a, 0, {30});
  for (std::size_t p = 0; p < 4; ++p) EXPECT_DOUBLE_EQ(h.values[p], a.at(0, 0, 2, p));
  EXPECT_THROW(attn::aggregate_heatmap(a, 0, {11}), Error);
  EXPECT_THROW(attn::aggregate_heatmap(a, 0, {}), Error);
  EXPECT_THROW(attn::aggregate_heatmap(a, 2, {10}), Error);
}

TEST(AggregateWindow, SingletonAndComposition) {
  synth::SynthConfig cfg;
  cfg.seed = 7;
  const auto s = synth::gen_sample(cfg, 0, true);
  const auto& a = *s.attn;
  const auto q = a.all_queries();
  const auto one = attn::aggregate_window(a, {22}, q);
  EXPECT_EQ(one.values, attn::aggregate_heatmap(a, 22, q).values);
  const auto three = attn::aggregate_window(a, {21, 22, 23}, q);
  for (std::size_t p = 0; p < a.patches(); ++p) {
    const double ref = (attn::aggregate_heatmap(a, 21, q).values[p] + attn::aggregate_heatmap(a, 22, q).values[p] +
                        attn::aggregate_heatmap(a, 23, q).values[p]) /
                       3.0;
    EXPECT_NEAR(three.values[p], ref, 1e-7);
  }
}

TEST(AggregateWindow, IdenticalLayersGiveSameMap) {
  auto a = random_tensor(2, 1, 1, 3, 3, 4);
  for (std::size_t p = 0; p < 9; ++p) a.at(1, 0, 0, p) = a.at(0, 0, 0, p);
  const auto w = attn::aggregate_window(a, {0, 1}, {0});
  const auto h = attn::aggregate_heatmap(a, 0, {0});
  for (std::size_t p = 0; p < 9; ++p) EXPECT_NEAR(w.values[p], h.values[p], 1e-15);
}

TEST(LayerWindow, ClipsAtEdges) {
  EXPECT_EQ(attn::layer_window(22, 3, 36), (std::vector<std::size_t>{21, 22, 23}));
  EXPECT_EQ(attn::layer_window(0, 5, 36), (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(attn::layer_window(35, 5, 36), (std::vector<std::size_t>{33, 34, 35}));
  EXPECT_THROW(attn::layer_window(3, 4, 36), Error);
}

TEST(Concentration, UniformIsOne) {
  HeatMap h(5, 5, std::vector<double>(25, 0.04));
  EXPECT_NEAR(attn::concentration(h, Region::from_indices({0, 7, 12}, 25)), 1.0, 1e-12);
}

TEST(Concentration, ConfinedMassGivesInverseFraction) {
  HeatMap h(10, 10);
  std::vector<std::size_t> idx;
  for (std::size_t p = 0; p < 10; ++p) {
    idx.push_back(p * 10 + 3);
    h.values[p * 10 + 3] = 0.1;
  }
  EXPECT_NEAR(attn::concentration(h, Region::from_indices(idx, 100)), 10.0, 1e-12);
}

TEST(Concentration, MatchesTwoMeansOnSyntheticMap) {
  synth::SynthConfig cfg;
  cfg.seed = 7;
  const auto s = synth::gen_sample(cfg, 3);
  std::vector<std::size_t> idx;
  for (std::size_t i = 5; i < 8; ++i)
    for (std::size_t j = 10; j < 13; ++j) idx.push_back(i * 24 + j);
  const auto r = Region::from_indices(idx, 576);
  EXPECT_NEAR(attn::concentration(s.heatmap, r), two_means(s.heatmap, r), 1e-9);
}

TEST(Concentration, MaskedCells) {
  HeatMap h(2, 2, {0.5, 0.5, 0.0, 0.0});
  h.mask = {1, 1, 0, 0};
  EXPECT_NEAR(attn::concentration(h, Region::from_indices({0}, 4)), 1.0, 1e-12);
  EXPECT_THROW(attn::concentration(h, Region::from_indices({2}, 4)), Error);
}

TEST(Concentration, DegenerateAndEmptyInputs) {
  HeatMap zero(2, 2);
  EXPECT_THROW(attn::concentration(zero, Region::from_indices({0}, 4)), Error);
  EXPECT_THROW(Region::from_indices({}, 4), Error);
  EXPECT_THROW(Region::from_indices({4}, 4), Error);
}

TEST(PeakLayer, UniqueMaximizer) {
  AttentionTensor a(4, 1, 1, 2, 2);
  for (std::size_t l = 0; l < 4; ++l)
    for (std::size_t p = 0; p < 4; ++p) a.at(l, 0, 0, p) = 0.25f;
  a.at(2, 0, 0, 0) = 0.7f;
  a.at(2, 0, 0, 1) = 0.1f;
  a.at(2, 0, 0, 2) = 0.1f;
  a.at(2, 0, 0, 3) = 0.1f;
  EXPECT_EQ(attn::peak_layer(a, Region::from_indices({0}, 4), {0}), 2u);
}

TEST(PeakLayer, TiesGoToLayerZero) {
  AttentionTensor a(5, 1, 1, 2, 2);
  for (float& w : a.weights) w = 0.25f;
  EXPECT_EQ(attn::peak_layer(a, Region::from_indices({1, 2}, 4), {0}), 0u);
}

TEST(PeakLayer, MatchesExhaustiveScan) {
  Rng rng(11);
  for (int t = 0; t < 100; ++t) {
    const std::size_t L = 1 + rng.index(12), H = 1 + rng.index(3), Q = 1 + rng.index(3);
    const auto a = random_tensor(L, H, Q, 5, 5, 100 + t);
    const auto region = Region::from_indices({rng.index(25), rng.index(25), rng.index(25)}, 25);
    const auto q = a.all_queries();
    std::size_t best = 0;
    double best_s = -1;
    for (std::size_t l = 0; l < L; ++l) {
      HeatMap h(5, 5, triple_loop(a, l, q));
      const double s = two_means(h, region);
      if (s > best_s) best_s = s, best = l;
    }
    EXPECT_EQ(attn::peak_layer(a, region, q), best);
  }
}

TEST(CondensationLoss, WholeImageIsZero) {
  HeatMap h(3, 3, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  EXPECT_NEAR(attn::condensation_loss(h, Region::whole(9)), 0.0, 1e-15);
}

TEST(CondensationLoss, ConcentrationEGivesMinusOne) {
  // region of one cell out of n cells holding fraction f of mass: s = f * n
  const double e = std::exp(1.0);
  const std::size_t n = 10;
  const double f = e / static_cast<double>(n);
  std::vector<double> v(n, (1.0 - f) / static_cast<double>(n - 1));
  v[0] = f;
  HeatMap h(1, n, v);
  EXPECT_NEAR(attn::condensation_loss(h, Region::from_indices({0}, n)), -1.0, 1e-12);
}

TEST(CondensationLoss, GradientMatchesFiniteDifferences) {
  synth::SynthConfig cfg;
  cfg.grid_h = cfg.grid_w = 6;
  const auto s = synth::gen_sample(cfg, 1);
  const auto r = attn::box_to_region(s.target, 6, 6);
  const auto g = attn::condensation_loss_grad(s.heatmap, r);
  double worst = 0;
  for (std::size_t p = 0; p < 36; ++p) {
    HeatMap up = s.heatmap, down = s.heatmap;
    const double h = 1e-7;
    up.values[p] += h;
    down.values[p] -= h;
    const double num = (attn::condensation_loss(up, r) - attn::condensation_loss(down, r)) / (2 * h);
    worst = std::max(worst, std::abs(num - g[p]) / std::max({std::abs(num), std::abs(g[p]), 1e-12}));
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(TotalLoss, LinearCombination) {
  EXPECT_DOUBLE_EQ(attn::total_loss(1.0, 0.0, {0.003}), 1.0);
  EXPECT_NEAR(attn::total_loss(0.0, 2.0, {0.003}), 0.006, 1e-15);
  EXPECT_NEAR(attn::total_loss(0.5, 1.5, {0.1}), 0.65, 1e-15);
  EXPECT_THROW(attn::total_loss(0.0, 1.0, {-0.1}), Error);
  EXPECT_THROW(attn::total_loss(NAN, 1.0, {0.1}), Error);
}

TEST(BoxToRegion, CellCenterContainment) {
  EXPECT_EQ(attn::box_to_region({0, 0, 1, 1}, 4, 4).size(), 16u);
  EXPECT_EQ(attn::box_to_region({0, 0, 0.5, 0.5}, 4, 4).indices, (std::vector<std::size_t>{0, 1, 4, 5}));
  const auto tiny = attn::box_to_region({0.895, 0.895, 0.905, 0.905}, 4, 4);
  EXPECT_EQ(tiny.indices, (std::vector<std::size_t>{15}));
  EXPECT_EQ(tiny.source, attn::RegionSource::box_derived);
  EXPECT_THROW(attn::box_to_region({0.5, 0.5, 0.5, 0.7}, 4, 4), Error);
}

TEST(PeakHist, SumsToOneAndMatchesRecount) {
  std::vector<AttentionTensor> ts;
  std::vector<Region> rs;
  std::vector<std::size_t> counts(6, 0);
  for (int i = 0; i < 40; ++i) {
    ts.push_back(random_tensor(6, 1, 1, 3, 3, 500 + i));
    rs.push_back(Region::from_indices({static_cast<std::size_t>(i % 9)}, 9));
    ++counts[attn::peak_layer(ts.back(), rs.back(), {0})];
  }
  const auto hist = attn::peak_hist(ts, rs, {});
  double total = 0;
  for (std::size_t l = 0; l < 6; ++l) {
    EXPECT_DOUBLE_EQ(hist[l], counts[l] / 40.0);
    total += hist[l];
  }
  EXPECT_NEAR(total, 1.0, 1e-9);
}

TEST(PeakHist, DeltaWhenAllPeakAtZero) {
  std::vector<AttentionTensor> ts;
  std::vector<Region> rs;
  for (int i = 0; i < 5; ++i) {
    AttentionTensor a(3, 1, 1, 2, 2);
    for (float& w : a.weights) w = 0.25f;
    a.at(0, 0, 0, 0) = 0.9f;
    ts.push_back(a);
    rs.push_back(Region::from_indices({0}, 4));
  }
  EXPECT_EQ(attn::peak_hist(ts, rs, {}), (std::vector<double>{1.0, 0.0, 0.0}));
}

TEST(AttentionTensor, ValidateCatchesBadPayload) {
  AttentionTensor a(2, 1, 1, 2, 2);
  a.weights.pop_back();
  EXPECT_THROW(a.validate(), Error);
  AttentionTensor b(1, 1, 1, 2, 2);
  b.weights[0] = -1.0f;
  EXPECT_THROW(b.validate(), Error);
}
