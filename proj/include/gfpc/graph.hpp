#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "gfpc/kernels.hpp"
#include "gfpc/tensor.hpp"

namespace gfpc {

/// Handle to a node recorded in a Graph.
struct Var {
  std::size_t id = 0;
};

enum class GradMode { enabled, disabled };

enum class OpKind {
  input,
  param,
  conv2d,
  add_bias,
  linear,
  relu,
  softplus,
  max_pool,
  global_avg_pool,
  scale,
  reshape,
  dot,
  add,
  sum,
  concat,
  l2_normalize,
  upsample2x,
  softmax_cross_entropy,
  masked_l1,
};

/// Tape of primitive operations for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the tape is topologically
/// sorted by construction. Parameter leaves reference tensors owned by the
/// caller, which must outlive the graph and stay unmodified while it is used.
/// With GradMode::disabled parameters are recorded as constants and nothing
/// needed only for the backward pass is saved.
template <class T>
class Graph {
 public:
  explicit Graph(GradMode mode = GradMode::enabled) : mode_(mode) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) noexcept = default;
  Graph& operator=(Graph&&) noexcept = default;

  bool grad_enabled() const noexcept { return mode_ == GradMode::enabled; }
  std::size_t size() const noexcept { return nodes_.size(); }

  void reset() {
    nodes_.clear();
    param_index_.clear();
    held_.clear();
  }

  const Tensor<T>& value(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.ref ? *n.ref : n.value;
  }

  const Shape& shape(Var v) const { return value(v).shape(); }

  Var input(Tensor<T> t) {
    Node n(OpKind::input);
    n.value = std::move(t);
    return push(std::move(n));
  }

  /// Takes ownership of `obj` for the lifetime of the graph (until reset) and
  /// returns a stable reference, for tensors or networks built on the fly
  /// that graph nodes will reference.
  template <class U>
  U& hold(U obj) {
    auto p = std::make_shared<U>(std::move(obj));
    held_.push_back(p);
    return *p;
  }

  /// Constant that references a caller-owned tensor instead of copying it.
  Var constant_ref(const Tensor<T>& t) {
    Node n(OpKind::input);
    n.ref = &t;
    return push(std::move(n));
  }

  /// Registers a named trainable tensor. Registering the same name twice
  /// returns the existing node.
  Var param(const std::string& name, const Tensor<T>& t) {
    if (auto it = param_index_.find(name); it != param_index_.end()) return Var{it->second};
    Node n(OpKind::param);
    n.ref = &t;
    n.name = name;
    n.requires_grad = grad_enabled();
    Var v = push(std::move(n));
    param_index_.emplace(name, v.id);
    return v;
  }
  Var param(const std::string&, Tensor<T>&&) = delete;  // would dangle
  Var constant_ref(Tensor<T>&&) = delete;

  /// Cross-correlation of x[c_in,h,w] with kernel[c_out,c_in,kh,kw].
  Var conv2d(Var x, Var kernel, std::size_t stride = 1, std::size_t pad = 0) {
    const auto g = kernels::conv_geometry(shape(x), shape(kernel), stride, pad);
    Tensor<T> col({g.patch(), g.positions()});
    kernels::im2col(g, value(x).data(), col.data());
    Tensor<T> out({g.c_out, g.out_h, g.out_w});
    kernels::conv_forward(g, col.data(), value(kernel).data(), out.data());
    Node n(OpKind::conv2d, {x.id, kernel.id});
    n.value = std::move(out);
    n.stride = stride;
    n.pad = pad;
    if (needs_grad(kernel)) n.saved = std::move(col);
    return push_op(std::move(n));
  }

  /// Adds b[c] to every spatial position of x[c,h,w], or b[n] to x[n].
  Var add_bias(Var x, Var b) {
    const Shape& xs = shape(x);
    const Shape& bs = shape(b);
    if (bs.size() != 1 || xs.empty() || xs[0] != bs[0])
      throw DimensionError("bias " + shape_str(bs) + " incompatible with " + shape_str(xs));
    Tensor<T> out = value(x);
    const std::size_t inner = out.size() / xs[0];
    const Tensor<T>& bv = value(b);
    for (std::size_t c = 0; c < xs[0]; ++c)
      for (std::size_t i = 0; i < inner; ++i) out[c * inner + i] += bv[c];
    Node n(OpKind::add_bias, {x.id, b.id});
    n.value = std::move(out);
    return push_op(std::move(n));
  }

  /// y = W x (+ b) for x[n], W[m,n], b[m].
  Var linear(Var x, Var weight, std::optional<Var> bias = std::nullopt) {
    const Shape& xs = shape(x);
    const Shape& ws = shape(weight);
    if (xs.size() != 1 || ws.size() != 2 || ws[1] != xs[0])
      throw DimensionError("linear weight " + shape_str(ws) + " incompatible with input " + shape_str(xs));
    const std::size_t m = ws[0], k = ws[1];
    Tensor<T> out({m});
    const T* w = value(weight).data();
    const T* xv = value(x).data();
    for (std::size_t i = 0; i < m; ++i) out[i] = kernels::dot(w + i * k, xv, k);
    Node n(OpKind::linear, {x.id, weight.id});
    n.value = std::move(out);
    Var y = push_op(std::move(n));
    return bias ? add_bias(y, *bias) : y;
  }

  Var relu(Var x) {
    Tensor<T> out = value(x);
    for (auto& v : out.values()) v = v > T(0) ? v : T(0);
    Node n(OpKind::relu, {x.id});
    n.value = std::move(out);
    return push_op(std::move(n));
  }

  /// log(1 + exp(x)), strictly positive.
  Var softplus(Var x) {
    Tensor<T> out = value(x);
    for (auto& v : out.values()) v = std::max(v, T(0)) + std::log1p(std::exp(-std::abs(v)));
    Node n(OpKind::softplus, {x.id});
    n.value = std::move(out);
    return push_op(std::move(n));
  }

  Var max_pool(Var x, std::size_t kernel, std::size_t stride) {
    const Shape& s = shape(x);
    if (s.size() != 3) throw DimensionError("max_pool input must be [c,h,w], got " + shape_str(s));
    if (kernel == 0 || stride == 0 || kernel > s[1] || kernel > s[2])
      throw DimensionError("max_pool window " + std::to_string(kernel) + " invalid for " + shape_str(s));
    const std::size_t oh = (s[1] - kernel) / stride + 1, ow = (s[2] - kernel) / stride + 1;
    Tensor<T> out({s[0], oh, ow});
    std::vector<std::size_t> arg(out.size());
    const Tensor<T>& xv = value(x);
    for (std::size_t c = 0; c < s[0]; ++c)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          std::size_t best = (c * s[1] + oy * stride) * s[2] + ox * stride;
          for (std::size_t i = 0; i < kernel; ++i)
            for (std::size_t j = 0; j < kernel; ++j) {
              const std::size_t idx = (c * s[1] + oy * stride + i) * s[2] + ox * stride + j;
              if (xv[idx] > xv[best]) best = idx;
            }
          const std::size_t o = (c * oh + oy) * ow + ox;
          out[o] = xv[best];
          arg[o] = best;
        }
    Node n(OpKind::max_pool, {x.id});
    n.value = std::move(out);
    n.index = std::move(arg);
    return push_op(std::move(n));
  }

  /// [c,h,w] -> [c], mean over the spatial extent.
  Var global_avg_pool(Var x) {
    const Shape& s = shape(x);
    if (s.size() != 3) throw DimensionError("global_avg_pool input must be [c,h,w], got " + shape_str(s));
    const std::size_t hw = s[1] * s[2];
    Tensor<T> out({s[0]});
    const Tensor<T>& xv = value(x);
    for (std::size_t c = 0; c < s[0]; ++c) {
      T acc = 0;
      for (std::size_t i = 0; i < hw; ++i) acc += xv[c * hw + i];
      out[c] = acc / static_cast<T>(hw);
    }
    Node n(OpKind::global_avg_pool, {x.id});
    n.value = std::move(out);
    return push_op(std::move(n));
  }

  Var scale(Var x, T alpha) {
    Tensor<T> out = value(x);
    for (auto& v : out.values()) v *= alpha;
    Node n(OpKind::scale, {x.id});
    n.value = std::move(out);
    n.scalar = alpha;
    return push_op(std::move(n));
  }

  Var reshape(Var x, Shape s) {
    Node n(OpKind::reshape, {x.id});
    n.value = value(x).reshaped(std::move(s));
    return push_op(std::move(n));
  }

  /// Scalar product of two equally shaped tensors, as shape [1].
  Var dot(Var a, Var b) {
    require_same_shape(shape(a), shape(b), "dot");
    const auto& av = value(a);
    Node n(OpKind::dot, {a.id, b.id});
    n.value = Tensor<T>({1}, {kernels::dot(av.data(), value(b).data(), av.size())});
    return push_op(std::move(n));
  }

  Var add(Var a, Var b) {
    require_same_shape(shape(a), shape(b), "add");
    Tensor<T> out = value(a);
    const auto& bv = value(b);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    Node n(OpKind::add, {a.id, b.id});
    n.value = std::move(out);
    return push_op(std::move(n));
  }

  Var sum(Var x) {
    T acc = 0;
    for (T v : value(x).values()) acc += v;
    Node n(OpKind::sum, {x.id});
    n.value = Tensor<T>({1}, {acc});
    return push_op(std::move(n));
  }

  /// Joins two rank-1 tensors.
  Var concat(Var a, Var b) {
    const auto& av = value(a);
    const auto& bv = value(b);
    if (av.rank() != 1 || bv.rank() != 1)
      throw DimensionError("concat expects vectors, got " + shape_str(av.shape()) + " and " + shape_str(bv.shape()));
    std::vector<T> data(av.storage());
    data.insert(data.end(), bv.storage().begin(), bv.storage().end());
    Node n(OpKind::concat, {a.id, b.id});
    const std::size_t len = data.size();
    n.value = Tensor<T>({len}, std::move(data));
    return push_op(std::move(n));
  }

  /// x / ||x||_2; a zero vector has no direction and is rejected.
  Var l2_normalize(Var x) {
    const auto& xv = value(x);
    const T norm = std::sqrt(kernels::dot(xv.data(), xv.data(), xv.size()));
    if (!(norm > T(0))) throw DegenerateError("cannot normalize a zero vector");
    Tensor<T> out = xv;
    for (auto& v : out.values()) v /= norm;
    Node n(OpKind::l2_normalize, {x.id});
    n.value = std::move(out);
    n.scalar = norm;
    return push_op(std::move(n));
  }

  /// Bilinear 2x upsampling of [c,h,w] to [c,2h,2w] with half-pixel centers.
  Var upsample2x(Var x) {
    const Shape& s = shape(x);
    if (s.size() != 3) throw DimensionError("upsample2x input must be [c,h,w], got " + shape_str(s));
    const auto ty = kernels::upsample_taps(s[1]);
    const auto tx = kernels::upsample_taps(s[2]);
    const std::size_t oh = 2 * s[1], ow = 2 * s[2];
    Tensor<T> out({s[0], oh, ow});
    const Tensor<T>& xv = value(x);
    for (std::size_t c = 0; c < s[0]; ++c) {
      const T* src = xv.data() + c * s[1] * s[2];
      for (std::size_t oy = 0; oy < oh; ++oy) {
        const T* r0 = src + ty.lo[oy] * s[2];
        const T* r1 = src + ty.hi[oy] * s[2];
        const T wy = static_cast<T>(ty.w_hi[oy]);
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const T wx = static_cast<T>(tx.w_hi[ox]);
          const T top = r0[tx.lo[ox]] * (T(1) - wx) + r0[tx.hi[ox]] * wx;
          const T bot = r1[tx.lo[ox]] * (T(1) - wx) + r1[tx.hi[ox]] * wx;
          out[(c * oh + oy) * ow + ox] = top * (T(1) - wy) + bot * wy;
        }
      }
    }
    Node n(OpKind::upsample2x, {x.id});
    n.value = std::move(out);
    return push_op(std::move(n));
  }

  /// -log softmax(logits)[target], evaluated with the max logit subtracted.
  Var softmax_cross_entropy(Var logits, std::size_t target) {
    const auto& z = value(logits);
    if (z.rank() != 1) throw DimensionError("softmax_cross_entropy expects a logit vector, got " + shape_str(z.shape()));
    if (target >= z.size()) throw BoundsError("softmax target index out of range");
    const T zmax = *std::max_element(z.storage().begin(), z.storage().end());
    Tensor<T> prob({z.size()});
    T denom = 0;
    for (std::size_t i = 0; i < z.size(); ++i) {
      prob[i] = std::exp(z[i] - zmax);
      denom += prob[i];
    }
    for (auto& p : prob.values()) p /= denom;
    const T loss = -(z[target] - zmax - std::log(denom));
    Node n(OpKind::softmax_cross_entropy, {logits.id});
    n.value = Tensor<T>({1}, {loss});
    n.saved = std::move(prob);
    n.index = {target};
    return push_op(std::move(n));
  }

  /// sum(mask * |pred - target|) / sum(mask); target and mask are constants.
  Var masked_l1(Var pred, const Tensor<T>& target, const Tensor<T>& mask) {
    const auto& p = value(pred);
    if (p.size() != target.size() || p.size() != mask.size())
      throw DimensionError("masked_l1 shapes " + shape_str(p.shape()) + ", " + shape_str(target.shape()) + ", " +
                           shape_str(mask.shape()));
    T count = 0, acc = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      count += mask[i];
      acc += mask[i] * std::abs(p[i] - target[i]);
    }
    if (!(count > T(0))) throw DegenerateError("masked_l1: mask has no valid pixels");
    Node n(OpKind::masked_l1, {pred.id});
    n.value = Tensor<T>({1}, {acc / count});
    n.saved = target;
    n.saved2 = mask;
    n.scalar = count;
    return push_op(std::move(n));
  }

  /// Reverse pass from a scalar node. Returns d(loss)/d(param) keyed by
  /// parameter name; intermediate gradients are discarded.
  Gradients<T> backward(Var loss) {
    if (loss.id >= nodes_.size()) throw ContractError("backward: unknown loss node");
    if (value(loss).size() != 1)
      throw ContractError("backward requires a scalar loss, got shape " + shape_str(shape(loss)));
    std::vector<Tensor<T>> grads(loss.id + 1);
    grads[loss.id] = Tensor<T>(value(loss).shape(), T(1));
    Gradients<T> out;
    for (std::size_t id = loss.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.requires_grad || grads[id].empty()) continue;
      if (n.kind == OpKind::param) {
        out.insert_or_assign(n.name, std::move(grads[id]));
        continue;
      }
      propagate(n, grads[id], grads);
      grads[id] = Tensor<T>();
    }
    return out;
  }

 private:
  struct Node {
    explicit Node(OpKind k, std::vector<std::size_t> in = {}) : kind(k), inputs(std::move(in)) {}
    OpKind kind;
    std::vector<std::size_t> inputs;
    Tensor<T> value;
    const Tensor<T>* ref = nullptr;
    std::string name;
    bool requires_grad = false;
    std::size_t stride = 1, pad = 0;
    T scalar = 0;
    std::vector<std::size_t> index;
    Tensor<T> saved, saved2;
  };

  bool needs_grad(Var v) const { return nodes_[v.id].requires_grad; }

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  Var push_op(Node n) {
    for (auto i : n.inputs) n.requires_grad = n.requires_grad || nodes_[i].requires_grad;
    if (!n.requires_grad) {
      n.saved = Tensor<T>();
      n.saved2 = Tensor<T>();
      n.index.clear();
    }
    return push(std::move(n));
  }

  Tensor<T>& grad_slot(std::vector<Tensor<T>>& grads, std::size_t id) {
    if (grads[id].empty()) grads[id] = Tensor<T>(value(Var{id}).shape());
    return grads[id];
  }

  void propagate(const Node& n, const Tensor<T>& g, std::vector<Tensor<T>>& grads) {
    auto wants = [&](std::size_t k) { return nodes_[n.inputs[k]].requires_grad; };
    switch (n.kind) {
      case OpKind::input:
      case OpKind::param:
        break;
      case OpKind::conv2d: {
        const auto& x = value(Var{n.inputs[0]});
        const auto& w = value(Var{n.inputs[1]});
        const auto geo = kernels::conv_geometry(x.shape(), w.shape(), n.stride, n.pad);
        if (wants(1)) kernels::conv_backward_weight(geo, n.saved.data(), g.data(), grad_slot(grads, n.inputs[1]).data());
        if (wants(0)) {
          std::vector<T> dcol(geo.patch() * geo.positions());
          kernels::conv_backward_col(geo, w.data(), g.data(), dcol.data());
          kernels::col2im_add(geo, dcol.data(), grad_slot(grads, n.inputs[0]).data());
        }
        break;
      }
      case OpKind::add_bias: {
        if (wants(0)) accumulate(grad_slot(grads, n.inputs[0]), g);
        if (wants(1)) {
          auto& gb = grad_slot(grads, n.inputs[1]);
          const std::size_t inner = g.size() / gb.size();
          for (std::size_t c = 0; c < gb.size(); ++c) {
            T acc = 0;
            for (std::size_t i = 0; i < inner; ++i) acc += g[c * inner + i];
            gb[c] += acc;
          }
        }
        break;
      }
      case OpKind::linear: {
        const auto& x = value(Var{n.inputs[0]});
        const auto& w = value(Var{n.inputs[1]});
        const std::size_t m = w.dim(0), k = w.dim(1);
        if (wants(1)) {
          auto& gw = grad_slot(grads, n.inputs[1]);
          for (std::size_t i = 0; i < m; ++i) kernels::axpy(g[i], x.data(), gw.data() + i * k, k);
        }
        if (wants(0)) {
          auto& gx = grad_slot(grads, n.inputs[0]);
          for (std::size_t i = 0; i < m; ++i) kernels::axpy(g[i], w.data() + i * k, gx.data(), k);
        }
        break;
      }
      case OpKind::relu: {
        auto& gx = grad_slot(grads, n.inputs[0]);
        const auto& x = value(Var{n.inputs[0]});
        for (std::size_t i = 0; i < g.size(); ++i)
          if (x[i] > T(0)) gx[i] += g[i];
        break;
      }
      case OpKind::softplus: {
        auto& gx = grad_slot(grads, n.inputs[0]);
        const auto& x = value(Var{n.inputs[0]});
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / (T(1) + std::exp(-x[i]));
        break;
      }
      case OpKind::max_pool: {
        auto& gx = grad_slot(grads, n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) gx[n.index[i]] += g[i];
        break;
      }
      case OpKind::global_avg_pool: {
        auto& gx = grad_slot(grads, n.inputs[0]);
        const std::size_t hw = gx.size() / g.size();
        for (std::size_t c = 0; c < g.size(); ++c) {
          const T share = g[c] / static_cast<T>(hw);
          for (std::size_t i = 0; i < hw; ++i) gx[c * hw + i] += share;
        }
        break;
      }
      case OpKind::scale: {
        auto& gx = grad_slot(grads, n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += n.scalar * g[i];
        break;
      }
      case OpKind::reshape:
        accumulate(grad_slot(grads, n.inputs[0]), g);
        break;
      case OpKind::dot: {
        const auto& a = value(Var{n.inputs[0]});
        const auto& b = value(Var{n.inputs[1]});
        if (wants(0)) kernels::axpy(g[0], b.data(), grad_slot(grads, n.inputs[0]).data(), b.size());
        if (wants(1)) kernels::axpy(g[0], a.data(), grad_slot(grads, n.inputs[1]).data(), a.size());
        break;
      }
      case OpKind::add:
        if (wants(0)) accumulate(grad_slot(grads, n.inputs[0]), g);
        if (wants(1)) accumulate(grad_slot(grads, n.inputs[1]), g);
        break;
      case OpKind::sum: {
        auto& gx = grad_slot(grads, n.inputs[0]);
        for (auto& v : gx.values()) v += g[0];
        break;
      }
      case OpKind::concat: {
        const std::size_t na = value(Var{n.inputs[0]}).size();
        if (wants(0)) {
          auto& ga = grad_slot(grads, n.inputs[0]);
          for (std::size_t i = 0; i < na; ++i) ga[i] += g[i];
        }
        if (wants(1)) {
          auto& gb = grad_slot(grads, n.inputs[1]);
          for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[na + i];
        }
        break;
      }
      case OpKind::l2_normalize: {
        // d(x/|x|) = (g - y (y.g)) / |x|
        const auto& y = n.value;
        const T yg = kernels::dot(y.data(), g.data(), g.size());
        auto& gx = grad_slot(grads, n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += (g[i] - y[i] * yg) / n.scalar;
        break;
      }
      case OpKind::upsample2x: {
        auto& gx = grad_slot(grads, n.inputs[0]);
        const Shape& s = gx.shape();
        const auto ty = kernels::upsample_taps(s[1]);
        const auto tx = kernels::upsample_taps(s[2]);
        const std::size_t oh = 2 * s[1], ow = 2 * s[2];
        for (std::size_t c = 0; c < s[0]; ++c) {
          T* dst = gx.data() + c * s[1] * s[2];
          for (std::size_t oy = 0; oy < oh; ++oy) {
            T* r0 = dst + ty.lo[oy] * s[2];
            T* r1 = dst + ty.hi[oy] * s[2];
            const T wy = static_cast<T>(ty.w_hi[oy]);
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const T wx = static_cast<T>(tx.w_hi[ox]);
              const T go = g[(c * oh + oy) * ow + ox];
              const T gtop = go * (T(1) - wy), gbot = go * wy;
              r0[tx.lo[ox]] += gtop * (T(1) - wx);
              r0[tx.hi[ox]] += gtop * wx;
              r1[tx.lo[ox]] += gbot * (T(1) - wx);
              r1[tx.hi[ox]] += gbot * wx;
            }
          }
        }
        break;
      }
      case OpKind::softmax_cross_entropy: {
        auto& gx = grad_slot(grads, n.inputs[0]);
        for (std::size_t i = 0; i < gx.size(); ++i)
          gx[i] += g[0] * (n.saved[i] - (i == n.index[0] ? T(1) : T(0)));
        break;
      }
      case OpKind::masked_l1: {
        auto& gx = grad_slot(grads, n.inputs[0]);
        const auto& p = value(Var{n.inputs[0]});
        for (std::size_t i = 0; i < gx.size(); ++i) {
          const T d = p[i] - n.saved[i];
          const T sgn = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
          gx[i] += g[0] * n.saved2[i] * sgn / n.scalar;
        }
        break;
      }
    }
  }

  static void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

  GradMode mode_;
  std::vector<Node> nodes_;
  std::unordered_map<std::string, std::size_t> param_index_;
  std::vector<std::shared_ptr<void>> held_;
};

}  // namespace gfpc
