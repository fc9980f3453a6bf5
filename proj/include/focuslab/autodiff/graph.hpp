// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "focuslab/autodiff/kernels.hpp"
#include "focuslab/autodiff/tensor.hpp"
#include "focuslab/box/geometry.hpp"
#include "focuslab/core/hash.hpp"

namespace focuslab::ad {

struct NodeId {
  static constexpr std::uint32_t kNone = ~std::uint32_t{0};
  std::uint32_t index = kNone;
  bool valid() const { return index != kNone; }
  friend bool operator==(NodeId, NodeId) = default;
};

enum class Op : std::uint8_t {
  input,
  param,
  constant,
  add,
  sub,
  mul,
  div,
  scale,
  matmul,
  conv2d,
  group_norm,
  layer_norm,
  silu,
  sigmoid,
  softmax,
  log,
  sum,
  mean,
  sum_last,
  concat,
  reshape,
  permute,
  attention,
  box_loss,
};

constexpr std::string_view op_name(Op op) {
  constexpr std::array<std::string_view, 24> names{
      "input",   "param",   "constant", "add",  "sub",  "mul",      "div",    "scale",
      "matmul",  "conv2d",  "group_norm", "layer_norm", "silu", "sigmoid", "softmax", "log",
      "sum",     "mean",    "sum_last", "concat", "reshape", "permute", "attention", "box_loss"};
  return names[static_cast<std::size_t>(op)];
}

template <typename T>
using Feed = std::map<std::string, std::reference_wrapper<const Tensor<T>>, std::less<>>;

/// Static computation graph with a forward tape.
///
/// Nodes are appended by the builder methods, so every input precedes its
/// consumer. `forward` evaluates all nodes in order and keeps the
/// activations each backward kernel needs; `backward` walks the tape in
/// reverse and accumulates into parameter gradients. Parameters are
/// referenced, not owned: the tensors must outlive the graph.
template <typename T>
class Graph {
 public:
  // ---- leaves --------------------------------------------------------------

  NodeId input(std::string name, Shape dims) {
    Node n = make(Op::input, std::move(name), {}, std::move(dims));
    return push(std::move(n));
  }

  /// A parameter leaf. Tensors with requires_grad=false behave as constants.
  NodeId param(Tensor<T>& t, std::string name) {
    Node n = make(Op::param, std::move(name), {}, t.dims);
    n.param = &t;
    n.requires_grad = t.requires_grad;
    return push(std::move(n));
  }

  NodeId constant(Tensor<T> t, std::string name = {}) {
    Node n = make(Op::constant, std::move(name), {}, t.dims);
    n.value = std::move(t.data);
    return push(std::move(n));
  }

  // ---- elementwise ---------------------------------------------------------

  NodeId add(NodeId a, NodeId b, std::string name = {}) { return binary(Op::add, a, b, std::move(name)); }
  NodeId sub(NodeId a, NodeId b, std::string name = {}) { return binary(Op::sub, a, b, std::move(name)); }
  NodeId mul(NodeId a, NodeId b, std::string name = {}) { return binary(Op::mul, a, b, std::move(name)); }
  NodeId div(NodeId a, NodeId b, std::string name = {}) { return binary(Op::div, a, b, std::move(name)); }

  NodeId scale(NodeId a, T factor, std::string name = {}) {
    Node n = make(Op::scale, std::move(name), {a}, shape(a));
    n.factor = factor;
    return push(std::move(n));
  }
  NodeId silu(NodeId a, std::string name = {}) { return unary(Op::silu, a, std::move(name)); }
  NodeId sigmoid(NodeId a, std::string name = {}) { return unary(Op::sigmoid, a, std::move(name)); }
  NodeId log(NodeId a, std::string name = {}) { return unary(Op::log, a, std::move(name)); }

  NodeId softmax(NodeId a, std::string name = {}) {
    check(!shape(a).empty(), name, "softmax needs rank >= 1");
    return unary(Op::softmax, a, std::move(name));
  }

  // ---- linear algebra ------------------------------------------------------

  /// a [..., K] x b [K, N] -> [..., N]; leading dims of a are flattened.
  NodeId matmul(NodeId a, NodeId b, std::string name = {}) {
    const Shape& sa = shape(a);
    const Shape& sb = shape(b);
    check(sa.size() >= 2 && sb.size() == 2 && sa.back() == sb[0], name,
          "matmul shapes " + to_string(sa) + " x " + to_string(sb));
    Shape out(sa.begin(), sa.end() - 1);
    out.push_back(sb[1]);
    return push(make(Op::matmul, std::move(name), {a, b}, std::move(out)));
  }

  /// x [N,C,H,W], w [O,C,k,k], bias [O] (optional) with zero padding.
  NodeId conv2d(NodeId x, NodeId w, NodeId bias, std::size_t stride, std::size_t pad, std::string name = {}) {
    const Shape& sx = shape(x);
    const Shape& sw = shape(w);
    check(sx.size() == 4 && sw.size() == 4 && sx[1] == sw[1], name,
          "conv2d shapes " + to_string(sx) + " * " + to_string(sw));
    check(stride > 0, name, "conv2d stride must be positive");
    if (bias.valid()) check(shape(bias) == Shape{sw[0]}, name, "conv2d bias must be [O]");
    check(sx[2] + 2 * pad >= sw[2] && sx[3] + 2 * pad >= sw[3], name, "conv2d kernel larger than padded input");
    const std::size_t ho = (sx[2] + 2 * pad - sw[2]) / stride + 1;
    const std::size_t wo = (sx[3] + 2 * pad - sw[3]) / stride + 1;
    std::vector<NodeId> ins{x, w};
    if (bias.valid()) ins.push_back(bias);
    Node n = make(Op::conv2d, std::move(name), ins, {sx[0], sw[0], ho, wo});
    n.stride = stride;
    n.pad = pad;
    return push(std::move(n));
  }

  /// x [N, C, ...]; gamma/beta [C].
  NodeId group_norm(NodeId x, NodeId gamma, NodeId beta, std::size_t groups, T eps = T(1e-5),
                    std::string name = {}) {
    const Shape& sx = shape(x);
    check(sx.size() >= 2 && groups > 0 && sx[1] % groups == 0, name,
          "group_norm needs [N,C,...] with C divisible by groups, got " + to_string(sx));
    check(shape(gamma) == Shape{sx[1]} && shape(beta) == Shape{sx[1]}, name, "group_norm affine must be [C]");
    Node n = make(Op::group_norm, std::move(name), {x, gamma, beta}, sx);
    n.groups = groups;
    n.eps = eps;
    return push(std::move(n));
  }

  /// Normalizes the last axis; gamma/beta [D].
  NodeId layer_norm(NodeId x, NodeId gamma, NodeId beta, T eps = T(1e-5), std::string name = {}) {
    const Shape& sx = shape(x);
    check(!sx.empty(), name, "layer_norm needs rank >= 1");
    check(shape(gamma) == Shape{sx.back()} && shape(beta) == Shape{sx.back()}, name, "layer_norm affine must be [D]");
    Node n = make(Op::layer_norm, std::move(name), {x, gamma, beta}, sx);
    n.eps = eps;
    return push(std::move(n));
  }

  /// Multi-head scaled dot-product attention: q [B,Tq,D], k/v [B,Tk,D].
  NodeId attention(NodeId q, NodeId k, NodeId v, std::size_t heads, std::string name = {}) {
    const Shape& sq = shape(q);
    const Shape& sk = shape(k);
    check(sq.size() == 3 && sk.size() == 3 && shape(v) == sk && sq[0] == sk[0] && sq[2] == sk[2], name,
          "attention shapes q" + to_string(sq) + " k" + to_string(sk) + " v" + to_string(shape(v)));
    check(heads > 0 && sq[2] % heads == 0, name, "attention width must be divisible by heads");
    Node n = make(Op::attention, std::move(name), {q, k, v}, sq);
    n.heads = heads;
    return push(std::move(n));
  }

  // ---- reductions and shape ops -------------------------------------------

  NodeId sum(NodeId a, std::string name = {}) { return push(make(Op::sum, std::move(name), {a}, {})); }
  NodeId mean(NodeId a, std::string name = {}) { return push(make(Op::mean, std::move(name), {a}, {})); }

  NodeId sum_last(NodeId a, std::string name = {}) {
    const Shape& sa = shape(a);
    check(!sa.empty(), name, "sum_last needs rank >= 1");
    return push(make(Op::sum_last, std::move(name), {a}, Shape(sa.begin(), sa.end() - 1)));
  }

  NodeId concat(const std::vector<NodeId>& parts, std::size_t axis, std::string name = {}) {
    check(!parts.empty(), name, "concat of nothing");
    Shape out = shape(parts[0]);
    check(axis < out.size(), name, "concat axis out of range");
    out[axis] = 0;
    for (NodeId p : parts) {
      Shape s = shape(p);
      check(s.size() == out.size(), name, "concat rank mismatch");
      for (std::size_t i = 0; i < s.size(); ++i)
        if (i != axis) check(s[i] == out[i], name, "concat extent mismatch " + to_string(s));
      out[axis] += s[axis];
    }
    Node n = make(Op::concat, std::move(name), parts, std::move(out));
    n.axis = axis;
    return push(std::move(n));
  }

  NodeId reshape(NodeId a, Shape dims, std::string name = {}) {
    check(numel(dims) == numel(shape(a)), name, "reshape " + to_string(shape(a)) + " -> " + to_string(dims));
    return push(make(Op::reshape, std::move(name), {a}, std::move(dims)));
  }

  NodeId permute(NodeId a, std::vector<std::size_t> perm, std::string name = {}) {
    const Shape& sa = shape(a);
    check(perm.size() == sa.size(), name, "permute rank mismatch");
    std::vector<std::size_t> sorted = perm;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i) check(sorted[i] == i, name, "permute is not a permutation");
    Shape out(sa.size());
    for (std::size_t i = 0; i < perm.size(); ++i) out[i] = sa[perm[i]];
    Node n = make(Op::permute, std::move(name), {a}, std::move(out));
    n.perm = std::move(perm);
    return push(std::move(n));
  }

  /// Per-sample detection loss terms: pred/gt [N,4] corners -> [N,2] = (L1, 1-GIoU).
  /// No gradient flows into gt.
  NodeId box_loss(NodeId pred, NodeId gt, std::string name = {}) {
    const Shape& sp = shape(pred);
    check(sp.size() == 2 && sp[1] == 4 && shape(gt) == sp, name, "box_loss needs [N,4] inputs");
    check(!nodes_[gt.index].requires_grad, name, "box_loss ground truth must not require grad");
    return push(make(Op::box_loss, std::move(name), {pred, gt}, {sp[0], 2}));
  }

  // ---- evaluation ------------------------------------------------------------

  void mark_output(std::string name, NodeId id) { outputs_.emplace_back(std::move(name), id); }

  /// Non-finite activations raise an error naming the node.
  void set_debug(bool on) { debug_ = on; }

  /// Accumulates wall time per op kind (forward, backward) while enabled.
  void set_profile(bool on) { profile_ = on; }
  struct OpTime {
    double forward = 0, backward = 0;
  };
  const std::array<OpTime, 24>& profile() const { return op_time_; }

  /// Evaluates every node; returns the marked outputs.
  std::map<std::string, Tensor<T>> forward(const Feed<T>& feed) {
    run(feed);
    std::map<std::string, Tensor<T>> out;
    for (const auto& [name, id] : outputs_) {
      const Node& n = nodes_[id.index];
      out.emplace(name, Tensor<T>(n.shape, Buffer<T>(val(n), val(n) + numel(n.shape))));
    }
    return out;
  }

  /// forward without materializing outputs; read them with value().
  void run(const Feed<T>& feed) {
    std::size_t matched = 0;
    for (Node& n : nodes_) {
      if (n.op != Op::input) continue;
      auto it = feed.find(n.name);
      if (it == feed.end()) fail(ErrorCode::shape, "missing input '" + n.name + "'");
      const Tensor<T>& t = it->second.get();
      if (t.dims != n.shape)
        fail(ErrorCode::shape, "input '" + n.name + "' expects dims " + to_string(n.shape) + ", got " +
                                   to_string(t.dims));
      n.value = t.data;
      ++matched;
    }
    if (matched != feed.size()) {
      for (const auto& [name, t] : feed) {
        const bool known = std::any_of(nodes_.begin(), nodes_.end(),
                                       [&](const Node& n) { return n.op == Op::input && n.name == name; });
        if (!known) fail(ErrorCode::shape, "unknown input '" + name + "'");
      }
    }
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (profile_) {
        const auto t0 = std::chrono::steady_clock::now();
        eval(nodes_[i]);
        op_time_[static_cast<std::size_t>(nodes_[i].op)].forward +=
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      } else {
        eval(nodes_[i]);
      }
      if (debug_) check_finite(i);
    }
    forward_done_ = true;
  }

  /// Reverse pass from a scalar node; parameter gradients accumulate.
  void backward(NodeId loss) {
    if (!forward_done_) fail(ErrorCode::domain, "backward called before forward");
    require_id(loss);
    if (numel(nodes_[loss.index].shape) != 1)
      fail(ErrorCode::shape, "loss node '" + nodes_[loss.index].name + "' is not scalar: " +
                                 to_string(nodes_[loss.index].shape));
    for (Node& n : nodes_)
      if (n.requires_grad && n.op != Op::param) n.grad.assign(numel(n.shape), T(0));
    Node& top = nodes_[loss.index];
    if (!top.requires_grad) return;
    gptr(top)[0] += T(1);
    for (std::size_t i = loss.index + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.op == Op::param) continue;
      if (profile_) {
        const auto t0 = std::chrono::steady_clock::now();
        back(n);
        op_time_[static_cast<std::size_t>(n.op)].backward +=
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      } else {
        back(n);
      }
    }
  }

  // ---- inspection ----------------------------------------------------------

  const Shape& shape(NodeId id) const {
    require_id(id);
    return nodes_[id.index].shape;
  }
  std::span<const T> value(NodeId id) const {
    require_id(id);
    const Node& n = nodes_[id.index];
    return {val(n), numel(n.shape)};
  }
  /// Gradient of a non-parameter node from the last backward (empty if none).
  std::span<const T> grad(NodeId id) const {
    require_id(id);
    const Node& n = nodes_[id.index];
    if (n.op == Op::param) return n.param->grad;
    return n.grad;
  }
  bool requires_grad(NodeId id) const { return nodes_[id.index].requires_grad; }
  std::string_view name(NodeId id) const { return nodes_[id.index].name; }
  Op op(NodeId id) const { return nodes_[id.index].op; }
  std::size_t size() const { return nodes_.size(); }
  bool forward_done() const { return forward_done_; }

  /// Trainable parameters in registration order.
  std::vector<std::pair<std::string, Tensor<T>*>> parameters() const {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    for (const Node& n : nodes_)
      if (n.op == Op::param && n.param->requires_grad) out.emplace_back(n.name, n.param);
    return out;
  }

  /// Hash of the branch decisions taken by non-smooth kernels in the last forward.
  std::uint64_t kink_signature() const {
    Fnv1a h;
    for (const Node& n : nodes_)
      if (!n.branches.empty())
        h.update(std::span(reinterpret_cast<const unsigned char*>(n.branches.data()), n.branches.size()));
    return h.digest();
  }

 private:
  struct Node {
    Op op{};
    std::string name;
    std::vector<std::uint32_t> in;
    Shape shape;
    bool requires_grad = false;
    Tensor<T>* param = nullptr;
    Buffer<T> value;
    Buffer<T> grad;
    Buffer<T> saved;   // op-specific activations (xhat, col, probs, ...)
    Buffer<T> saved2;  // op-specific (rstd, ...)
    std::vector<std::int8_t> branches;
    std::size_t stride = 1, pad = 0, groups = 1, heads = 1, axis = 0;
    T factor = T(1), eps = T(0);
    std::vector<std::size_t> perm;
  };

  std::vector<Node> nodes_;
  std::vector<std::pair<std::string, NodeId>> outputs_;
  Buffer<T> scratch_;
  bool forward_done_ = false;
  bool debug_ = false;
  bool profile_ = false;
  std::array<OpTime, 24> op_time_{};

  void require_id(NodeId id) const {
    if (id.index >= nodes_.size()) fail(ErrorCode::shape, "node id out of range");
  }

  void check(bool cond, const std::string& name, const std::string& what) const {
    if (!cond)
      fail(ErrorCode::shape,
           "node #" + std::to_string(nodes_.size()) + (name.empty() ? "" : " '" + name + "'") + ": " + what);
  }

  Node make(Op op, std::string name, const std::vector<NodeId>& ins, Shape out) const {
    Node n;
    n.op = op;
    n.name = name.empty() ? std::string(op_name(op)) + "#" + std::to_string(nodes_.size()) : std::move(name);
    for (NodeId id : ins) {
      require_id(id);
      n.in.push_back(id.index);
      n.requires_grad = n.requires_grad || nodes_[id.index].requires_grad;
    }
    n.shape = std::move(out);
    return n;
  }

  NodeId push(Node n) {
    nodes_.push_back(std::move(n));
    forward_done_ = false;
    return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  NodeId unary(Op op, NodeId a, std::string name) { return push(make(op, std::move(name), {a}, shape(a))); }

  /// b matches a, is a suffix of a's dims (broadcast over leading axes), or is a scalar.
  NodeId binary(Op op, NodeId a, NodeId b, std::string name) {
    const Shape& sa = shape(a);
    const Shape& sb = shape(b);
    bool ok = numel(sb) == 1 || (sb.size() <= sa.size() && std::equal(sb.rbegin(), sb.rend(), sa.rbegin()));
    check(ok, name, std::string(op_name(op)) + " cannot broadcast " + to_string(sb) + " onto " + to_string(sa));
    return push(make(op, std::move(name), {a, b}, sa));
  }

  const T* val(const Node& n) const { return n.op == Op::param ? n.param->data.data() : n.value.data(); }
  const T* val(std::uint32_t i) const { return val(nodes_[i]); }
  T* gptr(Node& n) {
    if (!n.requires_grad) return nullptr;
    return n.op == Op::param ? n.param->grad.data() : n.grad.data();
  }
  T* gptr(std::uint32_t i) { return gptr(nodes_[i]); }

  void check_finite(std::size_t i) const {
    const Node& n = nodes_[i];
    const T* v = val(n);
    for (std::size_t j = 0; j < numel(n.shape); ++j)
      if (!std::isfinite(static_cast<double>(v[j])))
        fail(ErrorCode::numeric, "non-finite value at node #" + std::to_string(i) + " '" + n.name + "' (" +
                                     std::string(op_name(n.op)) + ")");
  }

  using Arr = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
  using CArr = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

  void eval(Node& n) {
    const std::size_t count = numel(n.shape);
    switch (n.op) {
      case Op::input:
      case Op::param:
      case Op::constant:
        return;
      default:
        break;
    }
    n.value.resize(count);
    T* y = n.value.data();
    switch (n.op) {
      case Op::add:
      case Op::sub:
      case Op::mul:
      case Op::div: {
        const T* a = val(n.in[0]);
        const T* b = val(n.in[1]);
        const std::size_t inner = numel(nodes_[n.in[1]].shape);
        for (std::size_t o = 0; o < count; o += inner) {
          const T* ao = a + o;
          T* yo = y + o;
          switch (n.op) {
            case Op::add: for (std::size_t j = 0; j < inner; ++j) yo[j] = ao[j] + b[j]; break;
            case Op::sub: for (std::size_t j = 0; j < inner; ++j) yo[j] = ao[j] - b[j]; break;
            case Op::mul: for (std::size_t j = 0; j < inner; ++j) yo[j] = ao[j] * b[j]; break;
            default: for (std::size_t j = 0; j < inner; ++j) yo[j] = ao[j] / b[j]; break;
          }
        }
        return;
      }
      case Op::scale: {
        const T* a = val(n.in[0]);
        for (std::size_t i = 0; i < count; ++i) y[i] = a[i] * n.factor;
        return;
      }
      case Op::silu: {
        n.saved.resize(count);
        const CArr x(val(n.in[0]), static_cast<Eigen::Index>(count));
        Arr sig(n.saved.data(), static_cast<Eigen::Index>(count));
        sig = (T(1) + (-x).exp()).inverse();
        Arr(y, static_cast<Eigen::Index>(count)) = x * sig;
        return;
      }
      case Op::sigmoid: {
        const CArr x(val(n.in[0]), static_cast<Eigen::Index>(count));
        Arr(y, static_cast<Eigen::Index>(count)) = (T(1) + (-x).exp()).inverse();
        return;
      }
      case Op::log: {
        const T* a = val(n.in[0]);
        for (std::size_t i = 0; i < count; ++i) y[i] = std::log(a[i]);
        return;
      }
      case Op::softmax: {
        const std::size_t d = n.shape.back();
        kernels::softmax_rows(val(n.in[0]), y, count / d, d);
        return;
      }
      case Op::matmul: {
        const Shape& sb = nodes_[n.in[1]].shape;
        const std::size_t k = sb[0], m = numel(nodes_[n.in[0]].shape) / k;
        kernels::matmul(val(n.in[0]), val(n.in[1]), y, m, k, sb[1]);
        return;
      }
      case Op::conv2d: {
        const auto g = conv_geom(n);
        kernels::conv2d(val(n.in[0]), val(n.in[1]), n.in.size() > 2 ? val(n.in[2]) : nullptr, y, n.saved, scratch_,
                        g);
        return;
      }
      case Op::group_norm: {
        const Shape& sx = n.shape;
        const std::size_t s = count / (sx[0] * sx[1]);
        n.saved.resize(count);
        n.saved2.resize(sx[0] * n.groups);
        kernels::group_norm(val(n.in[0]), val(n.in[1]), val(n.in[2]), y, n.saved.data(), n.saved2.data(), sx[0],
                            sx[1], s, n.groups, n.eps);
        return;
      }
      case Op::layer_norm: {
        const std::size_t d = n.shape.back();
        n.saved.resize(count);
        n.saved2.resize(count / d);
        kernels::layer_norm(val(n.in[0]), val(n.in[1]), val(n.in[2]), y, n.saved.data(), n.saved2.data(), count / d,
                            d, n.eps);
        return;
      }
      case Op::attention: {
        const auto g = attn_geom(n);
        n.saved.resize(g.batch * g.heads * g.tq * g.tk);
        kernels::attention(val(n.in[0]), val(n.in[1]), val(n.in[2]), y, n.saved.data(), g);
        return;
      }
      case Op::sum:
      case Op::mean: {
        const Node& a = nodes_[n.in[0]];
        const std::size_t len = numel(a.shape);
        const T* x = val(a);
        T acc = 0;
        for (std::size_t i = 0; i < len; ++i) acc += x[i];
        y[0] = n.op == Op::sum ? acc : acc / static_cast<T>(len);
        return;
      }
      case Op::sum_last: {
        const std::size_t d = nodes_[n.in[0]].shape.back();
        const T* x = val(n.in[0]);
        for (std::size_t r = 0; r < count; ++r) {
          T acc = 0;
          for (std::size_t i = 0; i < d; ++i) acc += x[r * d + i];
          y[r] = acc;
        }
        return;
      }
      case Op::concat: {
        const auto [outer, inner_unit] = concat_geom(n);
        std::size_t offset = 0;
        const std::size_t out_row = n.shape[n.axis] * inner_unit;
        for (std::uint32_t in : n.in) {
          const std::size_t row = nodes_[in].shape[n.axis] * inner_unit;
          const T* x = val(in);
          for (std::size_t o = 0; o < outer; ++o) std::copy(x + o * row, x + (o + 1) * row, y + o * out_row + offset);
          offset += row;
        }
        return;
      }
      case Op::reshape: {
        const T* x = val(n.in[0]);
        std::copy(x, x + count, y);
        return;
      }
      case Op::permute: {
        permute_copy(n, val(n.in[0]), y, false);
        return;
      }
      case Op::box_loss: {
        const std::size_t rows = n.shape[0];
        const T* p = val(n.in[0]);
        const T* g = val(n.in[1]);
        n.saved.resize(rows * 8);
        n.branches.resize(rows * box::kDetectionBranches);
        for (std::size_t r = 0; r < rows; ++r) {
          const box::BoxNorm<T> pb{p[4 * r], p[4 * r + 1], p[4 * r + 2], p[4 * r + 3]};
          const box::BoxNorm<T> gb{g[4 * r], g[4 * r + 1], g[4 * r + 2], g[4 * r + 3]};
          std::array<std::int8_t, box::kDetectionBranches> br{};
          const auto terms = box::detection_terms(pb, gb, &br);
          y[2 * r] = terms.l1;
          y[2 * r + 1] = terms.giou_term;
          std::copy(terms.d_l1.begin(), terms.d_l1.end(), n.saved.begin() + 8 * r);
          std::copy(terms.d_giou.begin(), terms.d_giou.end(), n.saved.begin() + 8 * r + 4);
          std::copy(br.begin(), br.end(), n.branches.begin() + r * box::kDetectionBranches);
        }
        return;
      }
      default:
        return;
    }
  }

  void back(Node& n) {
    const std::size_t count = numel(n.shape);
    const T* gy = n.grad.data();
    switch (n.op) {
      case Op::add:
      case Op::sub:
      case Op::mul:
      case Op::div: {
        T* ga = gptr(n.in[0]);
        T* gb = gptr(n.in[1]);
        const T* a = val(n.in[0]);
        const T* b = val(n.in[1]);
        const std::size_t inner = numel(nodes_[n.in[1]].shape);
        for (std::size_t o = 0; o < count; o += inner) {
          const T* g = gy + o;
          const T* ao = a + o;
          const T* yo = n.value.data() + o;
          T* gao = ga ? ga + o : nullptr;
          switch (n.op) {
            case Op::add:
              if (gao) for (std::size_t k = 0; k < inner; ++k) gao[k] += g[k];
              if (gb) for (std::size_t k = 0; k < inner; ++k) gb[k] += g[k];
              break;
            case Op::sub:
              if (gao) for (std::size_t k = 0; k < inner; ++k) gao[k] += g[k];
              if (gb) for (std::size_t k = 0; k < inner; ++k) gb[k] -= g[k];
              break;
            case Op::mul:
              if (gao) for (std::size_t k = 0; k < inner; ++k) gao[k] += g[k] * b[k];
              if (gb) for (std::size_t k = 0; k < inner; ++k) gb[k] += g[k] * ao[k];
              break;
            default:
              if (gao) for (std::size_t k = 0; k < inner; ++k) gao[k] += g[k] / b[k];
              if (gb) for (std::size_t k = 0; k < inner; ++k) gb[k] -= g[k] * yo[k] / b[k];
              break;
          }
        }
        return;
      }
      case Op::scale: {
        T* ga = gptr(n.in[0]);
        if (ga)
          for (std::size_t i = 0; i < count; ++i) ga[i] += gy[i] * n.factor;
        return;
      }
      case Op::silu: {
        T* ga = gptr(n.in[0]);
        if (!ga) return;
        const T* a = val(n.in[0]);
        const T* sig = n.saved.data();
        for (std::size_t i = 0; i < count; ++i) ga[i] += gy[i] * (sig[i] * (T(1) + a[i] * (T(1) - sig[i])));
        return;
      }
      case Op::sigmoid: {
        T* ga = gptr(n.in[0]);
        if (!ga) return;
        for (std::size_t i = 0; i < count; ++i) ga[i] += gy[i] * n.value[i] * (T(1) - n.value[i]);
        return;
      }
      case Op::log: {
        T* ga = gptr(n.in[0]);
        if (!ga) return;
        const T* a = val(n.in[0]);
        for (std::size_t i = 0; i < count; ++i) ga[i] += gy[i] / a[i];
        return;
      }
      case Op::softmax: {
        T* ga = gptr(n.in[0]);
        if (!ga) return;
        const std::size_t d = n.shape.back();
        kernels::softmax_rows_backward(n.value.data(), gy, ga, count / d, d);
        return;
      }
      case Op::matmul: {
        const Shape& sb = nodes_[n.in[1]].shape;
        const std::size_t k = sb[0], m = numel(nodes_[n.in[0]].shape) / k;
        kernels::matmul_backward(val(n.in[0]), val(n.in[1]), gy, gptr(n.in[0]), gptr(n.in[1]), m, k, sb[1]);
        return;
      }
      case Op::conv2d: {
        const auto g = conv_geom(n);
        kernels::conv2d_backward(val(n.in[1]), gy, n.saved, scratch_, gptr(n.in[0]), gptr(n.in[1]),
                                 n.in.size() > 2 ? gptr(n.in[2]) : nullptr, g);
        return;
      }
      case Op::group_norm: {
        const Shape& sx = n.shape;
        kernels::group_norm_backward(gy, val(n.in[1]), n.saved.data(), n.saved2.data(), gptr(n.in[0]),
                                     gptr(n.in[1]), gptr(n.in[2]), sx[0], sx[1], count / (sx[0] * sx[1]),
                                     n.groups);
        return;
      }
      case Op::layer_norm: {
        const std::size_t d = n.shape.back();
        kernels::layer_norm_backward(gy, val(n.in[1]), n.saved.data(), n.saved2.data(), gptr(n.in[0]),
                                     gptr(n.in[1]), gptr(n.in[2]), count / d, d);
        return;
      }
      case Op::attention: {
        kernels::attention_backward(val(n.in[0]), val(n.in[1]), val(n.in[2]), n.saved.data(), gy, gptr(n.in[0]),
                                    gptr(n.in[1]), gptr(n.in[2]), attn_geom(n));
        return;
      }
      case Op::sum:
      case Op::mean: {
        T* ga = gptr(n.in[0]);
        if (!ga) return;
        const std::size_t len = numel(nodes_[n.in[0]].shape);
        const T g = n.op == Op::sum ? gy[0] : gy[0] / static_cast<T>(len);
        for (std::size_t i = 0; i < len; ++i) ga[i] += g;
        return;
      }
      case Op::sum_last: {
        T* ga = gptr(n.in[0]);
        if (!ga) return;
        const std::size_t d = nodes_[n.in[0]].shape.back();
        for (std::size_t r = 0; r < count; ++r)
          for (std::size_t i = 0; i < d; ++i) ga[r * d + i] += gy[r];
        return;
      }
      case Op::concat: {
        const auto [outer, inner_unit] = concat_geom(n);
        std::size_t offset = 0;
        const std::size_t out_row = n.shape[n.axis] * inner_unit;
        for (std::uint32_t in : n.in) {
          const std::size_t row = nodes_[in].shape[n.axis] * inner_unit;
          if (T* ga = gptr(in))
            for (std::size_t o = 0; o < outer; ++o)
              for (std::size_t i = 0; i < row; ++i) ga[o * row + i] += gy[o * out_row + offset + i];
          offset += row;
        }
        return;
      }
      case Op::reshape: {
        T* ga = gptr(n.in[0]);
        if (ga)
          for (std::size_t i = 0; i < count; ++i) ga[i] += gy[i];
        return;
      }
      case Op::permute: {
        T* ga = gptr(n.in[0]);
        if (ga) permute_copy(n, gy, ga, true);
        return;
      }
      case Op::box_loss: {
        T* gp = gptr(n.in[0]);
        if (!gp) return;
        const std::size_t rows = n.shape[0];
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < 4; ++c)
            gp[4 * r + c] += gy[2 * r] * n.saved[8 * r + c] + gy[2 * r + 1] * n.saved[8 * r + 4 + c];
        return;
      }
      default:
        return;
    }
  }

  kernels::ConvGeom conv_geom(const Node& n) const {
    const Shape& sx = nodes_[n.in[0]].shape;
    const Shape& sw = nodes_[n.in[1]].shape;
    return {sx[0], sx[1], sx[2], sx[3], sw[0], sw[2], sw[3], n.stride, n.pad, n.shape[2], n.shape[3]};
  }

  kernels::AttnGeom attn_geom(const Node& n) const {
    const Shape& sq = nodes_[n.in[0]].shape;
    const Shape& sk = nodes_[n.in[1]].shape;
    return {sq[0], sq[1], sk[1], sq[2], n.heads};
  }

  std::pair<std::size_t, std::size_t> concat_geom(const Node& n) const {
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < n.axis; ++i) outer *= n.shape[i];
    for (std::size_t i = n.axis + 1; i < n.shape.size(); ++i) inner *= n.shape[i];
    return {outer, inner};
  }

  /// forward: dst[out_index] = src[in_index]; reverse: dst[in_index] += src[out_index].
  void permute_copy(const Node& n, const T* src, T* dst, bool reverse) const {
    const Shape& in_shape = nodes_[n.in[0]].shape;
    const std::size_t rank = in_shape.size();
    std::vector<std::size_t> in_stride(rank, 1);
    for (std::size_t i = rank; i-- > 1;) in_stride[i - 1] = in_stride[i] * in_shape[i];
    std::vector<std::size_t> idx(rank, 0);
    const std::size_t count = numel(n.shape);
    for (std::size_t o = 0; o < count; ++o) {
      std::size_t src_off = 0;
      for (std::size_t d = 0; d < rank; ++d) src_off += idx[d] * in_stride[n.perm[d]];
      if (reverse)
        dst[src_off] += src[o];
      else
        dst[o] = src[src_off];
      for (std::size_t d = rank; d-- > 0;) {
        if (++idx[d] < n.shape[d]) break;
        idx[d] = 0;
      }
    }
  }
};

}  // namespace focuslab::ad
