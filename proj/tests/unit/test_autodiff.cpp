// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "focuslab/autodiff/gradcheck.hpp"
#include "focuslab/autodiff/graph.hpp"
#include "focuslab/autodiff/params.hpp"

using namespace focuslab;
using ad::Graph;
using ad::NodeId;
using ad::Tensor;

namespace {

Tensor<double> random_tensor(ad::Shape dims, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  std::vector<double> v(ad::numel(dims));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor<double>(std::move(dims), std::move(v), true);
}

// Runs grad_check on a graph built by `build` over the given parameters.
template <typename Build>
ad::GradCheckReport check_op(std::vector<Tensor<double>*> params, Build build, double step = 1e-5) {
  Graph<double> g;
  std::vector<NodeId> ids;
  for (std::size_t i = 0; i < params.size(); ++i) ids.push_back(g.param(*params[i], "p" + std::to_string(i)));
  const NodeId loss = build(g, ids);
  ad::GradCheckOptions opt;
  opt.step = step;
  opt.tolerance = 1e-6;
  return ad::grad_check(g, loss, ad::Feed<double>{}, opt);
}

}  // namespace

TEST(Tensor, DimsMustMatchData) {
  EXPECT_THROW(Tensor<double>({2, 2}, {1, 2, 3}), Error);
  Tensor<double> t({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  EXPECT_EQ(t.grad.size(), t.data.size());
}

TEST(Graph, IdentityForward) {
  Graph<double> g;
  const NodeId x = g.input("x", {3});
  const NodeId y = g.scale(x, 1.0, "y");
  g.mark_output("y", y);
  Tensor<double> in({3}, {1, 2, 3});
  auto out = g.forward({{"x", std::cref(in)}});
  EXPECT_EQ(out.at("y").data, (ad::Buffer<double>{1, 2, 3}));
}

TEST(Graph, MatmulIdentity) {
  Graph<double> g;
  const NodeId a = g.constant(Tensor<double>({2, 2}, {1, 0, 0, 1}));
  const NodeId b = g.constant(Tensor<double>({2, 1}, {5, 7}));
  const NodeId c = g.matmul(a, b);
  g.run({});
  EXPECT_EQ(g.shape(c), (ad::Shape{2, 1}));
  EXPECT_EQ(g.value(c)[0], 5.0);
  EXPECT_EQ(g.value(c)[1], 7.0);
}

TEST(Graph, SigmoidAtZeroIsHalf) {
  Graph<double> g;
  const NodeId s = g.sigmoid(g.constant(Tensor<double>({1}, {0.0})));
  g.run({});
  EXPECT_EQ(g.value(s)[0], 0.5);
}

TEST(Graph, SquareGradient) {
  Tensor<double> x({1}, {3.0}, true);
  Graph<double> g;
  const NodeId p = g.param(x, "x");
  const NodeId loss = g.sum(g.mul(p, p));
  g.run({});
  g.backward(loss);
  EXPECT_DOUBLE_EQ(x.grad[0], 6.0);
}

TEST(Graph, SigmoidSumGradientIsQuarter) {
  auto x = Tensor<double>::zeros({2, 3, 4}, true);
  Graph<double> g;
  const NodeId loss = g.sum(g.sigmoid(g.param(x, "x")));
  g.run({});
  g.backward(loss);
  for (double v : x.grad) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Graph, BroadcastRules) {
  Graph<double> g;
  const NodeId a = g.input("a", {2, 3});
  EXPECT_NO_THROW(g.add(a, g.input("b", {3})));
  EXPECT_NO_THROW(g.mul(a, g.input("c", {1})));
  EXPECT_THROW(g.add(a, g.input("d", {2})), Error);
  EXPECT_THROW(g.matmul(a, g.input("e", {2, 2})), Error);
}

TEST(Graph, MissingAndUnknownInputs) {
  Graph<double> g;
  const NodeId x = g.input("x", {2});
  g.sum(x);
  Tensor<double> t({2}, {1, 2});
  Tensor<double> wrong({3}, {1, 2, 3});
  EXPECT_THROW(g.run({}), Error);
  EXPECT_THROW(g.run({{"x", std::cref(wrong)}}), Error);
  EXPECT_THROW(g.run({{"x", std::cref(t)}, {"y", std::cref(t)}}), Error);
  EXPECT_NO_THROW(g.run({{"x", std::cref(t)}}));
}

TEST(Graph, BackwardBeforeForwardFails) {
  Tensor<double> x({1}, {1.0}, true);
  Graph<double> g;
  const NodeId loss = g.sum(g.param(x, "x"));
  EXPECT_THROW(g.backward(loss), Error);
}

TEST(Graph, DebugModeFlagsNonFinite) {
  Graph<double> g;
  g.log(g.constant(Tensor<double>({1}, {-1.0})), "bad");
  g.set_debug(true);
  try {
    g.run({});
    FAIL() << "expected a numeric error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::numeric);
    EXPECT_NE(std::string(e.what()).find("bad"), std::string::npos);
  }
}

TEST(Graph, ReplayIsBitIdentical) {
  auto w = random_tensor({8, 5}, 3);
  Graph<double> g;
  const NodeId x = g.input("x", {4, 8});
  const NodeId y = g.softmax(g.silu(g.matmul(x, g.param(w, "w"))));
  auto in = random_tensor({4, 8}, 4);
  in.requires_grad = false;
  g.run({{"x", std::cref(in)}});
  const std::vector<double> first(g.value(y).begin(), g.value(y).end());
  g.run({{"x", std::cref(in)}});
  const std::vector<double> second(g.value(y).begin(), g.value(y).end());
  EXPECT_EQ(first, second);
}

// Every differentiable op against central differences.

TEST(OpGradients, Elementwise) {
  auto a = random_tensor({3, 4}, 1), b = random_tensor({4}, 2, 0.5, 2.0), c = random_tensor({1}, 3, 0.5, 1.5);
  auto r = check_op({&a, &b, &c}, [](Graph<double>& g, const std::vector<NodeId>& p) {
    NodeId x = g.add(p[0], p[1]);
    x = g.sub(x, g.scale(p[1], 0.3));
    x = g.mul(x, p[2]);
    x = g.div(x, p[1]);
    return g.sum(g.mul(x, x));
  });
  EXPECT_TRUE(r.pass) << r.worst_param << " " << r.max_rel_err;
}

TEST(OpGradients, Unary) {
  auto a = random_tensor({5, 3}, 5, 0.2, 2.0);
  auto r = check_op({&a}, [](Graph<double>& g, const std::vector<NodeId>& p) {
    NodeId s = g.add(g.silu(p[0]), g.sigmoid(p[0]));
    return g.sum(g.mul(g.log(p[0]), s));
  });
  EXPECT_TRUE(r.pass) << r.max_rel_err;
}

TEST(OpGradients, SoftmaxAndReductions) {
  auto a = random_tensor({2, 3, 5}, 6), w = random_tensor({2, 3, 5}, 7);
  auto r = check_op({&a, &w}, [](Graph<double>& g, const std::vector<NodeId>& p) {
    NodeId s = g.mul(g.softmax(p[0]), p[1]);
    return g.add(g.mean(g.sum_last(s)), g.scale(g.sum(s), 0.5));
  });
  EXPECT_TRUE(r.pass) << r.max_rel_err;
}

TEST(OpGradients, Matmul) {
  auto a = random_tensor({2, 3, 4}, 8), b = random_tensor({4, 5}, 9), w = random_tensor({2, 3, 5}, 10);
  auto r = check_op({&a, &b, &w}, [](Graph<double>& g, const std::vector<NodeId>& p) {
    return g.sum(g.mul(g.matmul(p[0], p[1]), p[2]));
  });
  EXPECT_TRUE(r.pass) << r.max_rel_err;
}

TEST(OpGradients, Conv2d) {
  auto x = random_tensor({2, 3, 7, 6}, 11), w = random_tensor({4, 3, 3, 3}, 12), b = random_tensor({4}, 13);
  for (std::size_t stride : {1u, 2u}) {
    auto r = check_op({&x, &w, &b}, [&](Graph<double>& g, const std::vector<NodeId>& p) {
      NodeId y = g.conv2d(p[0], p[1], p[2], stride, 1);
      auto m = Tensor<double>(g.shape(y), std::vector<double>(ad::numel(g.shape(y))));
      for (std::size_t i = 0; i < m.size(); ++i) m.data[i] = std::sin(0.37 * static_cast<double>(i));
      return g.sum(g.mul(y, g.constant(std::move(m))));
    });
    EXPECT_TRUE(r.pass) << "stride " << stride << ": " << r.worst_param << " " << r.max_rel_err;
  }
}

TEST(OpGradients, Norms) {
  auto x = random_tensor({2, 4, 3, 3}, 14), gg = random_tensor({4}, 15, 0.5, 1.5), gb = random_tensor({4}, 16);
  auto y = random_tensor({3, 6}, 17), lg = random_tensor({6}, 18, 0.5, 1.5), lb = random_tensor({6}, 19);
  auto r = check_op({&x, &gg, &gb, &y, &lg, &lb}, [](Graph<double>& g, const std::vector<NodeId>& p) {
    NodeId a = g.group_norm(p[0], p[1], p[2], 2);
    NodeId b = g.layer_norm(p[3], p[4], p[5]);
    // cubic readout so the loss is not invariant to the normalization
    return g.add(g.sum(g.mul(g.mul(a, a), a)), g.sum(g.mul(g.mul(b, b), b)));
  });
  EXPECT_TRUE(r.pass) << r.worst_param << " " << r.max_rel_err;
}

TEST(OpGradients, Attention) {
  auto q = random_tensor({2, 3, 8}, 20), k = random_tensor({2, 5, 8}, 21), v = random_tensor({2, 5, 8}, 22);
  auto w = random_tensor({2, 3, 8}, 23);
  auto r = check_op({&q, &k, &v, &w}, [](Graph<double>& g, const std::vector<NodeId>& p) {
    return g.sum(g.mul(g.attention(p[0], p[1], p[2], 2), p[3]));
  });
  EXPECT_TRUE(r.pass) << r.worst_param << " " << r.max_rel_err;
}

TEST(OpGradients, ShapeOps) {
  auto a = random_tensor({2, 3, 4}, 24), b = random_tensor({2, 2, 4}, 25), w = random_tensor({4, 5, 2}, 26);
  auto r = check_op({&a, &b, &w}, [](Graph<double>& g, const std::vector<NodeId>& p) {
    NodeId c = g.concat({p[0], p[1]}, 1);
    NodeId t = g.permute(c, {2, 1, 0});
    return g.sum(g.mul(g.reshape(t, {4, 5, 2}), p[2]));
  });
  EXPECT_TRUE(r.pass) << r.max_rel_err;
}

TEST(OpGradients, BoxLossAwayFromKinks) {
  // pred partially overlaps gt, no coordinate ties
  Tensor<double> pred({2, 4}, {0.10, 0.15, 0.55, 0.62, 0.30, 0.20, 0.90, 0.70}, true);
  auto r = check_op({&pred}, [](Graph<double>& g, const std::vector<NodeId>& p) {
    NodeId gt = g.constant(Tensor<double>({2, 4}, {0.2, 0.1, 0.6, 0.5, 0.25, 0.3, 0.8, 0.95}));
    return g.mean(g.sum_last(g.box_loss(p[0], gt)));
  });
  EXPECT_TRUE(r.pass) << r.max_rel_err;
}

TEST(GradCheck, LinearMseIsExact) {
  auto w = random_tensor({6, 3}, 30), b = random_tensor({3}, 31);
  Graph<double> g;
  const NodeId x = g.input("x", {10, 6});
  const NodeId y = g.input("y", {10, 3});
  const NodeId pred = g.add(g.matmul(x, g.param(w, "w")), g.param(b, "b"));
  const NodeId d = g.sub(pred, y);
  const NodeId loss = g.mean(g.mul(d, d));
  auto xs = random_tensor({10, 6}, 32), ys = random_tensor({10, 3}, 33);
  xs.requires_grad = ys.requires_grad = false;
  ad::GradCheckOptions opt;
  const auto r = ad::grad_check(g, loss, {{"x", std::cref(xs)}, {"y", std::cref(ys)}}, opt);
  EXPECT_TRUE(r.pass);
  EXPECT_LT(r.max_rel_err, 1e-6);
  EXPECT_EQ(r.checked, w.size() + b.size());
}

TEST(GradCheck, RejectsZeroStep) {
  Tensor<double> x({1}, {1.0}, true);
  Graph<double> g;
  const NodeId loss = g.sum(g.param(x, "x"));
  ad::GradCheckOptions opt;
  opt.step = 0;
  try {
    ad::grad_check(g, loss, {}, opt);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(std::string(e.what()), "step must be positive");
  }
}

TEST(GradCheck, SkipsCoordinatesThatCrossAKink) {
  // pred x1 equals gt x1, so the L1 term sits on its kink for that coordinate
  Tensor<double> pred({1, 4}, {0.2, 0.15, 0.55, 0.62}, true);
  Graph<double> g;
  const NodeId gt = g.constant(Tensor<double>({1, 4}, {0.2, 0.1, 0.6, 0.5}));
  const NodeId loss = g.sum(g.box_loss(g.param(pred, "pred"), gt));
  const auto r = ad::grad_check(g, loss, {}, ad::GradCheckOptions{});
  EXPECT_EQ(r.skipped, 1u);
  EXPECT_EQ(r.checked, 3u);
  EXPECT_TRUE(r.pass);
}

TEST(GradCheck, FloatCancellationAtTinyStepIsReported) {
  // in float a 1e-7 step is below the loss resolution, so the differences are roundoff
  Tensor<float> x({3}, {0.3f, 0.7f, 1.1f}, true);
  Graph<float> g;
  const NodeId p = g.param(x, "x");
  const NodeId loss = g.sum(g.mul(g.mul(p, p), p));
  ad::GradCheckOptions opt;
  opt.step = 1e-7;
  opt.tolerance = 1e-6;
  const auto r = ad::grad_check(g, loss, {}, opt);
  EXPECT_FALSE(r.pass);
}

TEST(Adam, FirstStepMatchesHandComputation) {
  ad::ParamStore<double> ps;
  ps.add("w", Tensor<double>({2}, {1.0, -2.0}));
  auto& w = ps.at("w");
  w.grad = {0.5, -3.0};
  ad::Adam<double> opt(ps, {.lr = 0.1});
  opt.step(ps);
  // bias-corrected first step moves each coordinate by lr * sign(g) (up to eps)
  EXPECT_NEAR(w.data[0], 1.0 - 0.1, 1e-7);
  EXPECT_NEAR(w.data[1], -2.0 + 0.1, 1e-7);
  w.grad = {0.5, -3.0};
  opt.step(ps);
  EXPECT_NEAR(w.data[0], 1.0 - 0.2, 1e-7);
  EXPECT_EQ(opt.steps(), 2u);
}

TEST(Adam, MomentFormulaOverSeveralSteps) {
  ad::ParamStore<double> ps;
  ps.add("w", Tensor<double>({1}, {0.0}));
  ad::Adam<double> opt(ps, {.lr = 0.01, .beta1 = 0.8, .beta2 = 0.9, .eps = 1e-8});
  double w = 0.0, m = 0.0, v = 0.0;
  const double grads[] = {1.0, -0.5, 0.25, 2.0};
  for (int t = 1; t <= 4; ++t) {
    ps.at("w").grad = {grads[t - 1]};
    opt.step(ps);
    m = 0.8 * m + 0.2 * grads[t - 1];
    v = 0.9 * v + 0.1 * grads[t - 1] * grads[t - 1];
    w -= 0.01 * (m / (1 - std::pow(0.8, t))) / (std::sqrt(v / (1 - std::pow(0.9, t))) + 1e-8);
    EXPECT_NEAR(ps.at("w").data[0], w, 1e-12);
  }
}

TEST(ParamStore, DuplicateNameRejected) {
  ad::ParamStore<float> ps;
  ps.add_filled("a", {2}, 1.0f);
  EXPECT_THROW(ps.add_filled("a", {2}, 1.0f), Error);
  EXPECT_THROW(ps.at("missing"), Error);
  EXPECT_EQ(ps.scalar_count(), 2u);
}
