// Copyright (c) 2026, The sgda3d Authors
// SPDX-License-Identifier: Apache-2.0
//
// Tape-based reverse-mode differentiation over sgda::Tensor.
//
// A Var is a handle to a graph node. Leaves enter the graph either as
// constants (never differentiated) or through Tape::watch(Parameter&). Any op
// that sees at least one grad-requiring input records a backward closure on
// that input's tape; Tape::backward replays the closures in reverse order and
// accumulates leaf gradients into Parameter::grad.

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sgda/tensor.hpp"

namespace sgda::ad {

struct Parameter {
  Tensor value;
  Tensor grad;
  bool requires_grad = true;

  Parameter() = default;
  explicit Parameter(Tensor v, bool trainable = true)
      : value(std::move(v)), grad(value.shape(), 0.0), requires_grad(trainable) {}

  void zero_grad() { grad.fill(0.0); }
  std::size_t size() const { return value.size(); }
};

struct NamedParameter {
  std::string name;
  Parameter* param;
};

class Tape;

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  Tape* tape = nullptr;
  Parameter* param = nullptr;

  bool has_grad() const { return !grad.empty(); }
  /// Zero-initialized gradient buffer with the value's shape.
  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(std::size_t axis) const { return node_->value.dim(axis); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Tape* tape() const { return node_ ? node_->tape : nullptr; }
  bool valid() const { return node_ != nullptr; }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

using BackwardFn = std::function<void(Node& out, std::span<Node* const> inputs)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf bound to `p`. Gradients reach p.grad on backward(). Parameters with
  /// requires_grad == false enter as constants.
  Var watch(Parameter& p);

  /// Populates Parameter::grad for every watched parameter, then clears the tape.
  void backward(const Var& loss);

  void clear();
  std::size_t size() const { return entries_.size(); }

  /// Called once per entry during backward(), in visiting order.
  void set_backward_observer(std::function<void(std::size_t, std::string_view)> obs) {
    observer_ = std::move(obs);
  }

  void record(std::string_view op, std::vector<std::shared_ptr<Node>> inputs,
              std::shared_ptr<Node> output, BackwardFn fn);

 private:
  struct Entry {
    std::string op;
    std::vector<std::shared_ptr<Node>> inputs;
    std::shared_ptr<Node> output;
    BackwardFn backward;
  };
  std::vector<Entry> entries_;
  std::vector<std::shared_ptr<Node>> leaves_;
  std::function<void(std::size_t, std::string_view)> observer_;
};

/// Watches `p` on `tape`, or wraps its value as a constant when tape is null.
Var bind(Tape* tape, Parameter& p);

Var constant(Tensor t);

// ---- shape ops ------------------------------------------------------------

Var reshape(const Var& x, Shape shape);
Var transpose(const Var& x);  // 2-D only
Var slice(const Var& x, std::size_t axis, std::size_t begin, std::size_t length);
/// G equal parts along `axis`. Throws ConfigError when the extent is not divisible.
std::vector<Var> split(const Var& x, std::size_t axis, std::size_t groups);
Var concat(std::span<const Var> parts, std::size_t axis);

// ---- elementwise ----------------------------------------------------------

enum class Activation { relu, sigmoid };

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, double factor);
Var add_scalar(const Var& x, double v);
Var relu(const Var& x);
Var sigmoid(const Var& x);
Var elementwise(const Var& x, Activation f);
Var log(const Var& x);
Var abs(const Var& x);
/// Clamps into [lo, hi]; gradient passes only strictly inside.
Var clamp(const Var& x, double lo, double hi);

// ---- reductions -----------------------------------------------------------

Var sum(const Var& x);
Var mean(const Var& x);
Var softmax(const Var& x, std::size_t axis);

// ---- linear algebra and volumetric ops ------------------------------------

Var matmul(const Var& a, const Var& b);
/// [C,D,H,W] -> [C], mean over all voxels of each channel.
Var global_avg_pool3d(const Var& x);
/// out[c,...] = x[c,...] * s[c].
Var channel_scale(const Var& x, const Var& s);
/// out[c,...] = x[c,...] + b[c].
Var channel_bias(const Var& x, const Var& b);
/// Per-voxel channel mixing with w of shape [C', C].
Var conv1x1x1(const Var& x, const Var& w);
/// Kernel 2, stride 2. Extents must be even.
Var max_pool3d(const Var& x);
/// Cubic kernel w of shape [Co, Ci, k, k, k], zero padding `pad`.
Var conv3d(const Var& x, const Var& w, std::size_t stride, std::size_t pad);
Var upsample_nearest2x(const Var& x);

}  // namespace sgda::ad
