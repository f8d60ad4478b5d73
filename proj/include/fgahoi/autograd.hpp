// Copyright 2026 The fgahoi Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

// Reverse-mode tape and the differentiable primitives the detector is built
// from. A Tape is append-only: every op pushes one node whose inputs already
// exist, so reverse append order is a valid topological order.

#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "fgahoi/tensor.hpp"

namespace fga {

class Tape;

/// Handle to a node on a tape. Cheap to copy; only valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Appends an op node. The backward closure is dropped when no input
  /// requires a gradient.
  Var push(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& value(Var v) const { return value(v.id); }

  /// Gradient accumulated by the last backward(); zeros if the node was not
  /// reached.
  Tensor grad(Var v) const;

  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  /// Mutable gradient buffer of a node, allocated as zeros on first use.
  Tensor& grad_buffer(std::size_t id);
  const Tensor& upstream(std::size_t id) const { return nodes_[id].grad; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }

  /// Clears previous gradients, seeds d(loss)/d(loss) = 1 and walks the
  /// nodes in reverse append order.
  void backward(Var loss);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
};

// Elementwise arithmetic. Binary ops require identical shapes.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var maximum(Var a, Var b);
Var minimum(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var add_const(Var a, const Tensor& c);
Var mul_const(Var a, const Tensor& c);

Var relu(Var a);
Var logistic(Var a);
/// clamp(x / 6 + 1/2, 0, 1); subgradient 1/6 strictly inside, 0 elsewhere.
Var hard_sigmoid(Var a);
Var log(Var a);
Var abs(Var a);

/// a[..., k] x b[k, n] -> [..., n]. Leading extents of a are kept.
Var matmul(Var a, Var b);
/// x[..., n] + b[n] broadcast over rows.
Var add_bias(Var x, Var b);
inline Var linear(Var x, Var w, Var b) { return add_bias(matmul(x, w), b); }

Var sum(Var a);
Var mean(Var a);

Var reshape(Var a, Shape shape);
Var slice_cols(Var a, std::size_t start, std::size_t count);
Var slice_rows(Var a, std::size_t start, std::size_t count);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var gather_rows(Var a, std::vector<std::size_t> index);
/// [N, 1] -> [N, width] by repeating the single column.
Var expand_cols(Var c, std::size_t width);
/// [G * n, D] -> [G, D], mean of each consecutive block of n rows.
Var group_mean_rows(Var a, std::size_t group);

/// Max-subtracted softmax along any axis.
Var softmax(Var a, std::size_t axis);
/// Normalizes each row over the last extent, then applies gamma/beta.
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);

/// Bilinear read of map[H, W, C] at normalized points[P, 2] given as (x, y).
/// Pixel convention is align-corners-false (x * W - 0.5); neighbours outside
/// the map read as zero.
Var bilinear_sample(Var map, Var points);

struct AttentionOutput {
  Var out;
  /// Softmax weights, [groups, heads, Lq, Lk].
  Tensor weights;
};

/// Scaled dot-product attention split into heads, computed independently in
/// each of `groups` blocks: q[groups*Lq, D], k/v[groups*Lk, D].
AttentionOutput attention_core(Var q, Var k, Var v, std::size_t groups, std::size_t heads);

/// Projection matrices of one multi-head attention block, each [D, D].
struct AttentionProjections {
  Var query, key, value, output;
};

/// concat_n(softmax(q Wq_n (k Wk_n)^T / sqrt(d_k)) v Wv_n) Wo, with the
/// attention computed independently inside each of `groups` row blocks.
AttentionOutput multi_head_attention(Var q, Var k, Var v, const AttentionProjections& w, std::size_t heads,
                                     std::size_t groups = 1);

/// Per-level geometry of a flattened multi-scale memory.
struct LevelLayout {
  std::vector<std::size_t> heights;
  std::vector<std::size_t> widths;
  std::vector<std::size_t> offsets;

  static LevelLayout from_shapes(const std::vector<std::pair<std::size_t, std::size_t>>& hw);
  std::size_t levels() const { return heights.size(); }
  std::size_t total() const;
};

/// Multi-scale deformable sampling core. value[N_s, D] holds the flattened
/// levels; locations[Nq, H*L*P*2] and weights[Nq, H*L*P] are laid out as
/// (head, level, point). Head h reads channels [h*D/H, (h+1)*D/H).
/// Output [Nq, D] is the weighted sum of bilinear reads.
Var deform_sample(Var value, const LevelLayout& layout, Var locations, Var weights,
                  std::size_t heads, std::size_t points);

}  // namespace fga
