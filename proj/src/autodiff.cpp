// Copyright (c) 2026, The sgda3d Authors
// SPDX-License-Identifier: Apache-2.0

#include "sgda/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "sgda/errors.hpp"

namespace sgda::ad {

Tensor& Node::grad_buffer() {
  if (grad.empty()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

// ---- tape -----------------------------------------------------------------

Var Tape::watch(Parameter& p) {
  auto node = std::make_shared<Node>();
  node->value = p.value;
  node->requires_grad = p.requires_grad;
  if (p.requires_grad) {
    node->tape = this;
    node->param = &p;
    leaves_.push_back(node);
  }
  return Var(node);
}

void Tape::record(std::string_view op, std::vector<std::shared_ptr<Node>> inputs,
                  std::shared_ptr<Node> output, BackwardFn fn) {
  entries_.push_back(Entry{std::string(op), std::move(inputs), std::move(output), std::move(fn)});
}

void Tape::clear() {
  entries_.clear();
  leaves_.clear();
}

void Tape::backward(const Var& loss) {
  if (!loss.valid() || loss.value().size() != 1) {
    throw UsageError("backward() needs a scalar loss, got " +
                     (loss.valid() ? shape_str(loss.shape()) : std::string("<null>")));
  }
  if (loss.requires_grad()) {
    if (loss.tape() != this) throw UsageError("backward() on a loss recorded by another tape");
    loss.node()->grad_buffer()[0] += 1.0;
  }
  std::vector<Node*> raw;
  for (std::size_t k = entries_.size(); k-- > 0;) {
    Entry& e = entries_[k];
    if (observer_) observer_(k, e.op);
    if (!e.output->has_grad()) continue;
    raw.clear();
    for (auto& in : e.inputs) raw.push_back(in.get());
    e.backward(*e.output, raw);
  }
  for (auto& leaf : leaves_) {
    if (!leaf->has_grad()) continue;
    Parameter& p = *leaf->param;
    if (p.grad.shape() != p.value.shape()) p.grad = Tensor(p.value.shape(), 0.0);
    for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += leaf->grad[i];
  }
  clear();
}

Var bind(Tape* tape, Parameter& p) {
  if (tape) return tape->watch(p);
  return constant(p.value);
}

Var constant(Tensor t) {
  auto node = std::make_shared<Node>();
  node->value = std::move(t);
  return Var(node);
}

namespace {

Var make_result(std::string_view op, Tensor value, std::vector<Var> inputs, BackwardFn fn) {
  Tape* tape = nullptr;
  for (const Var& v : inputs) {
    if (!v.requires_grad()) continue;
    if (tape && v.tape() != tape) throw UsageError("inputs recorded on different tapes");
    tape = v.tape();
  }
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (tape) {
    node->requires_grad = true;
    node->tape = tape;
    std::vector<std::shared_ptr<Node>> in;
    in.reserve(inputs.size());
    for (const Var& v : inputs) in.push_back(v.node());
    tape->record(op, std::move(in), node, std::move(fn));
  }
  return Var(node);
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void require_rank(const Var& x, std::size_t rank, const char* op) {
  if (x.value().ndim() != rank) {
    throw DimensionError(std::string(op) + ": expected " + std::to_string(rank) +
                         "-axis input, got " + shape_str(x.shape()));
  }
}

// Outer / axis / inner decomposition for axis-wise ops on row-major data.
struct AxisView {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisView axis_view(const Shape& s, std::size_t axis) {
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= s[i];
  v.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
  return v;
}

}  // namespace

// ---- shape ops ------------------------------------------------------------

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return make_result("reshape", std::move(out), {x}, [](Node& o, std::span<Node* const> in) {
    if (!in[0]->requires_grad) return;
    Tensor& g = in[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
  });
}

Var transpose(const Var& x) {
  require_rank(x, 2, "transpose");
  const std::size_t r = x.dim(0), c = x.dim(1);
  Tensor out({c, r});
  const Tensor& v = x.value();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = v[i * c + j];
  return make_result("transpose", std::move(out), {x}, [r, c](Node& o, std::span<Node* const> in) {
    if (!in[0]->requires_grad) return;
    Tensor& g = in[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += o.grad[j * r + i];
  });
}

Var slice(const Var& x, std::size_t axis, std::size_t begin, std::size_t length) {
  const Shape& s = x.shape();
  if (axis >= s.size()) throw DimensionError("slice: axis out of range");
  if (length == 0 || begin + length > s[axis]) {
    throw DimensionError("slice: range [" + std::to_string(begin) + ", " +
                         std::to_string(begin + length) + ") exceeds extent " +
                         std::to_string(s[axis]));
  }
  const AxisView v = axis_view(s, axis);
  Shape os = s;
  os[axis] = length;
  Tensor out(os);
  const Tensor& src = x.value();
  const std::size_t run = length * v.inner;
  for (std::size_t o = 0; o < v.outer; ++o) {
    const double* from = src.data().data() + (o * v.extent + begin) * v.inner;
    std::copy(from, from + run, out.data().data() + o * run);
  }
  return make_result("slice", std::move(out), {x},
                     [v, begin, run](Node& out_node, std::span<Node* const> in) {
                       if (!in[0]->requires_grad) return;
                       Tensor& g = in[0]->grad_buffer();
                       for (std::size_t o = 0; o < v.outer; ++o) {
                         double* to = g.data().data() + (o * v.extent + begin) * v.inner;
                         const double* from = out_node.grad.data().data() + o * run;
                         for (std::size_t i = 0; i < run; ++i) to[i] += from[i];
                       }
                     });
}

std::vector<Var> split(const Var& x, std::size_t axis, std::size_t groups) {
  if (axis >= x.shape().size()) throw DimensionError("split: axis out of range");
  if (groups == 0 || x.dim(axis) % groups != 0) {
    throw ConfigError("split: extent " + std::to_string(x.dim(axis)) + " on axis " +
                      std::to_string(axis) + " is not divisible into " +
                      std::to_string(groups) + " groups");
  }
  const std::size_t len = x.dim(axis) / groups;
  std::vector<Var> parts;
  parts.reserve(groups);
  for (std::size_t g = 0; g < groups; ++g) parts.push_back(slice(x, axis, g * len, len));
  return parts;
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw DimensionError("concat: axis out of range");
  Shape os = s0;
  os[axis] = 0;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == s0[i];
    if (!ok) {
      throw DimensionError("concat: shape " + shape_str(s) + " incompatible with " +
                           shape_str(s0) + " along axis " + std::to_string(axis));
    }
    os[axis] += s[axis];
  }
  const AxisView ov = axis_view(os, axis);
  Tensor out(os);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    offsets.push_back(off);
    const std::size_t run = p.dim(axis) * ov.inner;
    const Tensor& src = p.value();
    for (std::size_t o = 0; o < ov.outer; ++o) {
      std::copy(src.data().begin() + o * run, src.data().begin() + (o + 1) * run,
                out.data().begin() + (o * ov.extent + off) * ov.inner);
    }
    off += p.dim(axis);
  }
  std::vector<std::size_t> extents;
  for (const Var& p : parts) extents.push_back(p.dim(axis));
  std::vector<Var> inputs(parts.begin(), parts.end());
  return make_result(
      "concat", std::move(out), std::move(inputs),
      [ov, offsets, extents](Node& o, std::span<Node* const> in) {
        for (std::size_t k = 0; k < in.size(); ++k) {
          if (!in[k]->requires_grad) continue;
          Tensor& g = in[k]->grad_buffer();
          const std::size_t run = extents[k] * ov.inner;
          for (std::size_t q = 0; q < ov.outer; ++q) {
            const double* from = o.grad.data().data() + (q * ov.extent + offsets[k]) * ov.inner;
            double* to = g.data().data() + q * run;
            for (std::size_t i = 0; i < run; ++i) to[i] += from[i];
          }
        }
      });
}

// ---- elementwise ----------------------------------------------------------

namespace {

template <class Fwd, class Deriv>
Var unary(std::string_view op, const Var& x, Fwd fwd, Deriv deriv) {
  const Tensor& v = x.value();
  Tensor out(v.shape());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = fwd(v[i]);
  return make_result(op, std::move(out), {x}, [deriv](Node& o, std::span<Node* const> in) {
    if (!in[0]->requires_grad) return;
    Tensor& g = in[0]->grad_buffer();
    const Tensor& xv = in[0]->value;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * deriv(xv[i], o.value[i]);
  });
}

double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return make_result("add", std::move(out), {a, b}, [](Node& o, std::span<Node* const> in) {
    for (Node* n : in) {
      if (!n->requires_grad) continue;
      Tensor& g = n->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return make_result("sub", std::move(out), {a, b}, [](Node& o, std::span<Node* const> in) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (!in[k]->requires_grad) continue;
      const double sign = k == 0 ? 1.0 : -1.0;
      Tensor& g = in[k]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * o.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_result("mul", std::move(out), {a, b}, [](Node& o, std::span<Node* const> in) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (!in[k]->requires_grad) continue;
      const Tensor& other = in[1 - k]->value;
      Tensor& g = in[k]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * other[i];
    }
  });
}

Var scale(const Var& x, double factor) {
  return unary("scale", x, [factor](double v) { return v * factor; },
               [factor](double, double) { return factor; });
}

Var add_scalar(const Var& x, double c) {
  return unary("add_scalar", x, [c](double v) { return v + c; },
               [](double, double) { return 1.0; });
}

Var relu(const Var& x) {
  return unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(const Var& x) {
  return unary("sigmoid", x, sigmoid_scalar, [](double, double y) { return y * (1.0 - y); });
}

Var elementwise(const Var& x, Activation f) {
  return f == Activation::relu ? relu(x) : sigmoid(x);
}

Var log(const Var& x) {
  return unary("log", x, [](double v) { return std::log(v); },
               [](double v, double) { return 1.0 / v; });
}

Var abs(const Var& x) {
  return unary("abs", x, [](double v) { return std::abs(v); },
               [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Var clamp(const Var& x, double lo, double hi) {
  return unary("clamp", x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
               [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

// ---- reductions -----------------------------------------------------------

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return make_result("sum", Tensor::scalar(s), {x}, [](Node& o, std::span<Node* const> in) {
    if (!in[0]->requires_grad) return;
    Tensor& g = in[0]->grad_buffer();
    const double go = o.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += go;
  });
}

Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

Var softmax(const Var& x, std::size_t axis) {
  if (axis >= x.shape().size()) throw DimensionError("softmax: axis out of range");
  const AxisView v = axis_view(x.shape(), axis);
  const Tensor& in = x.value();
  Tensor out(x.shape());
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t i = 0; i < v.inner; ++i) {
      const std::size_t base = o * v.extent * v.inner + i;
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < v.extent; ++k) m = std::max(m, in[base + k * v.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < v.extent; ++k) {
        const double e = std::exp(in[base + k * v.inner] - m);
        out[base + k * v.inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < v.extent; ++k) out[base + k * v.inner] /= z;
    }
  }
  return make_result("softmax", std::move(out), {x}, [v](Node& o, std::span<Node* const> inp) {
    if (!inp[0]->requires_grad) return;
    Tensor& g = inp[0]->grad_buffer();
    for (std::size_t q = 0; q < v.outer; ++q) {
      for (std::size_t i = 0; i < v.inner; ++i) {
        const std::size_t base = q * v.extent * v.inner + i;
        double dot = 0.0;
        for (std::size_t k = 0; k < v.extent; ++k) {
          const std::size_t at = base + k * v.inner;
          dot += o.grad[at] * o.value[at];
        }
        for (std::size_t k = 0; k < v.extent; ++k) {
          const std::size_t at = base + k * v.inner;
          g[at] += o.value[at] * (o.grad[at] - dot);
        }
      }
    }
  });
}

// ---- linear algebra and volumetric ops ------------------------------------

Var matmul(const Var& a, const Var& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), p = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  Tensor out({m, p});
  const double* A = a.value().data().data();
  const double* B = b.value().data().data();
  double* C = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = C + i * p;
    for (std::size_t q = 0; q < k; ++q) {
      const double av = A[i * k + q];
      const double* brow = B + q * p;
      for (std::size_t j = 0; j < p; ++j) crow[j] += av * brow[j];
    }
  }
  return make_result("matmul", std::move(out), {a, b}, [m, k, p](Node& o, std::span<Node* const> in) {
    const double* G = o.grad.data().data();
    if (in[0]->requires_grad) {
      Tensor& ga = in[0]->grad_buffer();
      const double* B = in[1]->value.data().data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t q = 0; q < k; ++q) {
          double s = 0.0;
          for (std::size_t j = 0; j < p; ++j) s += G[i * p + j] * B[q * p + j];
          ga[i * k + q] += s;
        }
      }
    }
    if (in[1]->requires_grad) {
      Tensor& gb = in[1]->grad_buffer();
      const double* A = in[0]->value.data().data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t q = 0; q < k; ++q) {
          const double av = A[i * k + q];
          double* grow = gb.data().data() + q * p;
          for (std::size_t j = 0; j < p; ++j) grow[j] += av * G[i * p + j];
        }
      }
    }
  });
}

Var global_avg_pool3d(const Var& x) {
  require_rank(x, 4, "global_avg_pool3d");
  const std::size_t c = x.dim(0);
  const std::size_t n = x.value().size() / c;
  Tensor out({c});
  const Tensor& v = x.value();
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += v[ch * n + i];
    out[ch] = s / static_cast<double>(n);
  }
  return make_result("global_avg_pool3d", std::move(out), {x},
                     [c, n](Node& o, std::span<Node* const> in) {
                       if (!in[0]->requires_grad) return;
                       Tensor& g = in[0]->grad_buffer();
                       for (std::size_t ch = 0; ch < c; ++ch) {
                         const double gv = o.grad[ch] / static_cast<double>(n);
                         for (std::size_t i = 0; i < n; ++i) g[ch * n + i] += gv;
                       }
                     });
}

Var channel_scale(const Var& x, const Var& s) {
  require_rank(s, 1, "channel_scale");
  const std::size_t c = x.dim(0);
  if (s.dim(0) != c) {
    throw DimensionError("channel_scale: " + std::to_string(s.dim(0)) + " factors for " +
                         std::to_string(c) + " channels");
  }
  const std::size_t n = x.value().size() / c;
  Tensor out(x.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double f = s.value()[ch];
    for (std::size_t i = 0; i < n; ++i) out[ch * n + i] = x.value()[ch * n + i] * f;
  }
  return make_result("channel_scale", std::move(out), {x, s},
                     [c, n](Node& o, std::span<Node* const> in) {
                       if (in[0]->requires_grad) {
                         Tensor& g = in[0]->grad_buffer();
                         for (std::size_t ch = 0; ch < c; ++ch) {
                           const double f = in[1]->value[ch];
                           for (std::size_t i = 0; i < n; ++i) g[ch * n + i] += o.grad[ch * n + i] * f;
                         }
                       }
                       if (in[1]->requires_grad) {
                         Tensor& g = in[1]->grad_buffer();
                         for (std::size_t ch = 0; ch < c; ++ch) {
                           double acc = 0.0;
                           for (std::size_t i = 0; i < n; ++i)
                             acc += o.grad[ch * n + i] * in[0]->value[ch * n + i];
                           g[ch] += acc;
                         }
                       }
                     });
}

Var channel_bias(const Var& x, const Var& b) {
  require_rank(b, 1, "channel_bias");
  const std::size_t c = x.dim(0);
  if (b.dim(0) != c) throw DimensionError("channel_bias: bias length does not match channels");
  const std::size_t n = x.value().size() / c;
  Tensor out(x.shape());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < n; ++i) out[ch * n + i] = x.value()[ch * n + i] + b.value()[ch];
  return make_result("channel_bias", std::move(out), {x, b},
                     [c, n](Node& o, std::span<Node* const> in) {
                       if (in[0]->requires_grad) {
                         Tensor& g = in[0]->grad_buffer();
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                       }
                       if (in[1]->requires_grad) {
                         Tensor& g = in[1]->grad_buffer();
                         for (std::size_t ch = 0; ch < c; ++ch) {
                           double acc = 0.0;
                           for (std::size_t i = 0; i < n; ++i) acc += o.grad[ch * n + i];
                           g[ch] += acc;
                         }
                       }
                     });
}

Var conv1x1x1(const Var& x, const Var& w) {
  require_rank(x, 4, "conv1x1x1");
  require_rank(w, 2, "conv1x1x1");
  const std::size_t ci = x.dim(0), co = w.dim(0);
  if (w.dim(1) != ci) {
    throw DimensionError("conv1x1x1: weight " + shape_str(w.shape()) + " for " +
                         std::to_string(ci) + " input channels");
  }
  const std::size_t n = x.value().size() / ci;
  Shape os = x.shape();
  os[0] = co;
  Tensor out(os);
  const double* X = x.value().data().data();
  const double* W = w.value().data().data();
  double* O = out.data().data();
  for (std::size_t o = 0; o < co; ++o) {
    double* orow = O + o * n;
    for (std::size_t c = 0; c < ci; ++c) {
      const double wv = W[o * ci + c];
      const double* xrow = X + c * n;
      for (std::size_t i = 0; i < n; ++i) orow[i] += wv * xrow[i];
    }
  }
  return make_result("conv1x1x1", std::move(out), {x, w},
                     [ci, co, n](Node& on, std::span<Node* const> in) {
                       const double* G = on.grad.data().data();
                       if (in[0]->requires_grad) {
                         double* GX = in[0]->grad_buffer().data().data();
                         const double* W = in[1]->value.data().data();
                         for (std::size_t o = 0; o < co; ++o)
                           for (std::size_t c = 0; c < ci; ++c) {
                             const double wv = W[o * ci + c];
                             for (std::size_t i = 0; i < n; ++i) GX[c * n + i] += wv * G[o * n + i];
                           }
                       }
                       if (in[1]->requires_grad) {
                         double* GW = in[1]->grad_buffer().data().data();
                         const double* X = in[0]->value.data().data();
                         for (std::size_t o = 0; o < co; ++o)
                           for (std::size_t c = 0; c < ci; ++c) {
                             double acc = 0.0;
                             for (std::size_t i = 0; i < n; ++i) acc += G[o * n + i] * X[c * n + i];
                             GW[o * ci + c] += acc;
                           }
                       }
                     });
}

Var max_pool3d(const Var& x) {
  require_rank(x, 4, "max_pool3d");
  const std::size_t c = x.dim(0), d = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (d % 2 || h % 2 || w % 2) {
    throw ConfigError("max_pool3d: extents " + shape_str(x.shape()) +
                      " must be even for kernel 2 / stride 2");
  }
  const std::size_t od = d / 2, oh = h / 2, ow = w / 2;
  Tensor out({c, od, oh, ow});
  std::vector<std::size_t> argmax(out.size());
  const Tensor& v = x.value();
  std::size_t k = 0;
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t z = 0; z < od; ++z)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t q = 0; q < ow; ++q, ++k) {
          double best = -std::numeric_limits<double>::infinity();
          std::size_t best_i = 0;
          for (std::size_t dz = 0; dz < 2; ++dz)
            for (std::size_t dy = 0; dy < 2; ++dy)
              for (std::size_t dx = 0; dx < 2; ++dx) {
                const std::size_t i = ((ch * d + 2 * z + dz) * h + 2 * y + dy) * w + 2 * q + dx;
                if (v[i] > best) {
                  best = v[i];
                  best_i = i;
                }
              }
          out[k] = best;
          argmax[k] = best_i;
        }
  return make_result("max_pool3d", std::move(out), {x},
                     [argmax = std::move(argmax)](Node& o, std::span<Node* const> in) {
                       if (!in[0]->requires_grad) return;
                       Tensor& g = in[0]->grad_buffer();
                       for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += o.grad[i];
                     });
}

namespace {

struct ConvGeom {
  std::size_t ci, d, h, w;
  std::size_t co, k;
  std::size_t od, oh, ow;
  std::size_t stride, pad;
};

// Valid output index range [lo, hi) along one axis for kernel tap `kk`.
inline void tap_range(std::size_t extent, std::size_t out_extent, std::size_t kk,
                      std::size_t stride, std::size_t pad, std::size_t& lo, std::size_t& hi) {
  // input = o*stride + kk - pad must lie in [0, extent)
  lo = 0;
  if (kk < pad) lo = (pad - kk + stride - 1) / stride;
  const std::ptrdiff_t top = static_cast<std::ptrdiff_t>(extent) - 1 +
                             static_cast<std::ptrdiff_t>(pad) - static_cast<std::ptrdiff_t>(kk);
  if (top < 0) {
    hi = lo;
    return;
  }
  hi = std::min(out_extent, static_cast<std::size_t>(top) / stride + 1);
  if (hi < lo) hi = lo;
}

template <class Body>
void for_each_tap(const ConvGeom& g, Body body) {
  for (std::size_t kd = 0; kd < g.k; ++kd) {
    std::size_t zlo, zhi;
    tap_range(g.d, g.od, kd, g.stride, g.pad, zlo, zhi);
    for (std::size_t kh = 0; kh < g.k; ++kh) {
      std::size_t ylo, yhi;
      tap_range(g.h, g.oh, kh, g.stride, g.pad, ylo, yhi);
      for (std::size_t kw = 0; kw < g.k; ++kw) {
        std::size_t xlo, xhi;
        tap_range(g.w, g.ow, kw, g.stride, g.pad, xlo, xhi);
        body(kd, kh, kw, zlo, zhi, ylo, yhi, xlo, xhi);
      }
    }
  }
}

}  // namespace

Var conv3d(const Var& x, const Var& w, std::size_t stride, std::size_t pad) {
  require_rank(x, 4, "conv3d");
  require_rank(w, 5, "conv3d");
  const Shape& ws = w.shape();
  if (ws[1] != x.dim(0) || ws[2] != ws[3] || ws[3] != ws[4]) {
    throw DimensionError("conv3d: weight " + shape_str(ws) + " for input " + shape_str(x.shape()));
  }
  if (stride == 0) throw ConfigError("conv3d: stride must be positive");
  ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), ws[0], ws[2], 0, 0, 0, stride, pad};
  auto out_extent = [&](std::size_t e) -> std::size_t {
    if (e + 2 * pad < g.k) throw DimensionError("conv3d: input smaller than kernel");
    return (e + 2 * pad - g.k) / stride + 1;
  };
  g.od = out_extent(g.d);
  g.oh = out_extent(g.h);
  g.ow = out_extent(g.w);
  Tensor out({g.co, g.od, g.oh, g.ow});
  const double* X = x.value().data().data();
  const double* W = w.value().data().data();
  double* O = out.data().data();
  const std::size_t k3 = g.k * g.k * g.k;
  for (std::size_t o = 0; o < g.co; ++o) {
    for (std::size_t c = 0; c < g.ci; ++c) {
      const double* wk = W + (o * g.ci + c) * k3;
      const double* xc = X + c * g.d * g.h * g.w;
      double* oc = O + o * g.od * g.oh * g.ow;
      for_each_tap(g, [&](std::size_t kd, std::size_t kh, std::size_t kw, std::size_t zlo,
                          std::size_t zhi, std::size_t ylo, std::size_t yhi, std::size_t xlo,
                          std::size_t xhi) {
        const double wv = wk[(kd * g.k + kh) * g.k + kw];
        for (std::size_t z = zlo; z < zhi; ++z) {
          const std::size_t iz = z * stride + kd - pad;
          for (std::size_t y = ylo; y < yhi; ++y) {
            const std::size_t iy = y * stride + kh - pad;
            const double* xrow = xc + (iz * g.h + iy) * g.w;
            double* orow = oc + (z * g.oh + y) * g.ow;
            if (stride == 1) {
              const double* xs = xrow + (xlo + kw - pad);
              double* os = orow + xlo;
              for (std::size_t q = 0; q < xhi - xlo; ++q) os[q] += wv * xs[q];
            } else {
              for (std::size_t q = xlo; q < xhi; ++q) orow[q] += wv * xrow[q * stride + kw - pad];
            }
          }
        }
      });
    }
  }
  return make_result("conv3d", std::move(out), {x, w}, [g](Node& on, std::span<Node* const> in) {
    const std::size_t k3 = g.k * g.k * g.k;
    const double* G = on.grad.data().data();
    const double* X = in[0]->value.data().data();
    const double* W = in[1]->value.data().data();
    double* GX = in[0]->requires_grad ? in[0]->grad_buffer().data().data() : nullptr;
    double* GW = in[1]->requires_grad ? in[1]->grad_buffer().data().data() : nullptr;
    for (std::size_t o = 0; o < g.co; ++o) {
      for (std::size_t c = 0; c < g.ci; ++c) {
        const double* wk = W + (o * g.ci + c) * k3;
        double* gwk = GW ? GW + (o * g.ci + c) * k3 : nullptr;
        const std::size_t xoff = c * g.d * g.h * g.w;
        const double* gc = G + o * g.od * g.oh * g.ow;
        for_each_tap(g, [&](std::size_t kd, std::size_t kh, std::size_t kw, std::size_t zlo,
                            std::size_t zhi, std::size_t ylo, std::size_t yhi, std::size_t xlo,
                            std::size_t xhi) {
          const std::size_t tap = (kd * g.k + kh) * g.k + kw;
          const double wv = wk[tap];
          double acc = 0.0;
          for (std::size_t z = zlo; z < zhi; ++z) {
            const std::size_t iz = z * g.stride + kd - g.pad;
            for (std::size_t y = ylo; y < yhi; ++y) {
              const std::size_t iy = y * g.stride + kh - g.pad;
              const std::size_t rowoff = xoff + (iz * g.h + iy) * g.w;
              const double* grow = gc + (z * g.oh + y) * g.ow;
              if (g.stride == 1) {
                const std::size_t n = xhi - xlo;
                const std::size_t shift = xlo + kw - g.pad;
                const double* gs = grow + xlo;
                if (GX) {
                  double* gxs = GX + rowoff + shift;
                  for (std::size_t q = 0; q < n; ++q) gxs[q] += wv * gs[q];
                }
                if (gwk) {
                  const double* xs = X + rowoff + shift;
                  double a[4] = {0.0, 0.0, 0.0, 0.0};
                  std::size_t q = 0;
                  for (; q + 4 <= n; q += 4) {
                    a[0] += gs[q] * xs[q];
                    a[1] += gs[q + 1] * xs[q + 1];
                    a[2] += gs[q + 2] * xs[q + 2];
                    a[3] += gs[q + 3] * xs[q + 3];
                  }
                  for (; q < n; ++q) a[0] += gs[q] * xs[q];
                  acc += (a[0] + a[1]) + (a[2] + a[3]);
                }
                continue;
              }
              if (GX) {
                double* gxrow = GX + rowoff;
                for (std::size_t q = xlo; q < xhi; ++q) gxrow[q * g.stride + kw - g.pad] += wv * grow[q];
              }
              if (gwk) {
                const double* xrow = X + rowoff;
                for (std::size_t q = xlo; q < xhi; ++q) acc += grow[q] * xrow[q * g.stride + kw - g.pad];
              }
            }
          }
          if (gwk) gwk[tap] += acc;
        });
      }
    }
  });
}

Var upsample_nearest2x(const Var& x) {
  require_rank(x, 4, "upsample_nearest2x");
  const std::size_t c = x.dim(0), d = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor out({c, 2 * d, 2 * h, 2 * w});
  const Tensor& v = x.value();
  std::size_t k = 0;
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t z = 0; z < 2 * d; ++z)
      for (std::size_t y = 0; y < 2 * h; ++y)
        for (std::size_t q = 0; q < 2 * w; ++q, ++k)
          out[k] = v[((ch * d + z / 2) * h + y / 2) * w + q / 2];
  return make_result("upsample_nearest2x", std::move(out), {x},
                     [c, d, h, w](Node& o, std::span<Node* const> in) {
                       if (!in[0]->requires_grad) return;
                       Tensor& g = in[0]->grad_buffer();
                       std::size_t k = 0;
                       for (std::size_t ch = 0; ch < c; ++ch)
                         for (std::size_t z = 0; z < 2 * d; ++z)
                           for (std::size_t y = 0; y < 2 * h; ++y)
                             for (std::size_t q = 0; q < 2 * w; ++q, ++k)
                               g[((ch * d + z / 2) * h + y / 2) * w + q / 2] += o.grad[k];
                     });
}

}  // namespace sgda::ad
