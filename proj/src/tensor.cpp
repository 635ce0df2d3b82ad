// Copyright 2026 The mudet Authors
// SPDX-License-Identifier: Apache-2.0

#include "mudet/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_set>

#include "mudet/error.hpp"

namespace mudet {

namespace detail {

// 64-byte aligned so that vectorized reductions peel identically on every run.
using Buffer = std::vector<double, Eigen::aligned_allocator<double>>;

struct Node {
  Shape shape;
  Buffer value;
  Buffer grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads self.grad, accumulates into inputs that require grad.
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }
};

}  // namespace detail

using detail::Buffer;
using detail::Node;
using NodePtr = std::shared_ptr<Node>;

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

NodePtr make_leaf(Shape shape, Buffer values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor data has " + std::to_string(values.size()) +
                     " values but shape " + shape_str(shape) + " needs " +
                     std::to_string(shape_numel(shape)));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return node;
}

Buffer& grad_buffer(Node& n) {
  if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

// Builds an op result. The backward closure is kept only when some input
// requires a gradient.
Tensor make_result(Shape shape, Buffer values, std::vector<NodePtr> inputs,
                   std::function<void(Node&)> backward_fn) {
  auto node = make_leaf(std::move(shape), std::move(values), false);
  bool any = std::any_of(inputs.begin(), inputs.end(),
                         [](const NodePtr& p) { return p && p->requires_grad; });
  if (any) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(node);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " differ");
  }
}

void require_rank(const Tensor& a, std::size_t rank, const char* op) {
  if (a.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(a.shape()));
  }
}

// Elementwise unary op given value and local derivative as functions of the
// input value and output value.
template <class F, class D>
Tensor unary(const Tensor& a, F f, D dfdx) {
  const auto& in = a.node()->value;
  Buffer out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return make_result(a.shape(), std::move(out), {a.node()}, [dfdx](Node& self) {
    Node& x = *self.inputs[0];
    auto& g = grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += self.grad[i] * dfdx(x.value[i], self.value[i]);
    }
  });
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor handle

Tensor::Tensor() : node_(make_leaf({}, {0.0}, false)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  return Tensor(make_leaf(std::move(shape), Buffer(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  return Tensor(make_leaf(std::move(shape), Buffer(values.begin(), values.end()), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(make_leaf({}, {value}, requires_grad));
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                                       shape_str(shape()));
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_->value.size(); }

std::span<const double> Tensor::data() const { return node_->value; }

std::span<double> Tensor::mutable_data() {
  if (!node_->is_leaf()) throw Error("mutable_data() on a non-leaf tensor");
  return node_->value;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

bool Tensor::has_grad() const { return !node_->grad.empty(); }

std::span<const double> Tensor::grad() const { return node_->grad; }

void Tensor::zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

Tensor Tensor::detach() const { return Tensor(make_leaf(shape(), node_->value, false)); }

void Tensor::backward() const {
  if (numel() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " + shape_str(shape()));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order (inputs first).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      Node* child = n->inputs[next++].get();
      if (child && child->requires_grad && visited.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (n->is_leaf()) {
      grad_buffer(*n);
    } else {
      n->grad.assign(n->value.size(), 0.0);
    }
  }
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if (!(*it)->is_leaf()) (*it)->backward_fn(**it);
  }
}

// ---------------------------------------------------------------------------
// Elementwise binary

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const auto& x = a.node()->value;
  const auto& y = b.node()->value;
  Buffer out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return make_result(a.shape(), std::move(out), {a.node(), b.node()}, [](Node& self) {
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      auto& g = grad_buffer(*in);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const auto& x = a.node()->value;
  const auto& y = b.node()->value;
  Buffer out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return make_result(a.shape(), std::move(out), {a.node(), b.node()}, [](Node& self) {
    if (self.inputs[0]->requires_grad) {
      auto& g = grad_buffer(*self.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.inputs[1]->requires_grad) {
      auto& g = grad_buffer(*self.inputs[1]);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const auto& x = a.node()->value;
  const auto& y = b.node()->value;
  Buffer out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return make_result(a.shape(), std::move(out), {a.node(), b.node()}, [](Node& self) {
    Node& p = *self.inputs[0];
    Node& q = *self.inputs[1];
    if (p.requires_grad) {
      auto& g = grad_buffer(p);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * q.value[i];
    }
    if (q.requires_grad) {
      auto& g = grad_buffer(q);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * p.value[i];
    }
  });
}

namespace {

Tensor select(const Tensor& a, const Tensor& b, bool take_min) {
  require_same_shape(a, b, take_min ? "minimum" : "maximum");
  const auto& x = a.node()->value;
  const auto& y = b.node()->value;
  Buffer out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    bool first = take_min ? x[i] <= y[i] : x[i] >= y[i];
    out[i] = first ? x[i] : y[i];
  }
  if (BranchTrace::active()) {
    for (std::size_t i = 0; i < out.size(); ++i) BranchTrace::fold(out[i] == x[i] ? 1 : 2);
  }
  return make_result(a.shape(), std::move(out), {a.node(), b.node()}, [take_min](Node& self) {
    Node& p = *self.inputs[0];
    Node& q = *self.inputs[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      bool first = take_min ? p.value[i] <= q.value[i] : p.value[i] >= q.value[i];
      Node& winner = first ? p : q;
      if (winner.requires_grad) grad_buffer(winner)[i] += self.grad[i];
    }
  });
}

}  // namespace

Tensor minimum(const Tensor& a, const Tensor& b) { return select(a, b, true); }
Tensor maximum(const Tensor& a, const Tensor& b) { return select(a, b, false); }

// ---------------------------------------------------------------------------
// Elementwise unary

Tensor add_scalar(const Tensor& a, double s) {
  return unary(a, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double s) {
  return unary(a, [s](double v) { return v * s; }, [s](double, double) { return s; });
}

Tensor pow(const Tensor& a, double exponent) {
  return unary(
      a, [exponent](double v) { return std::pow(v, exponent); },
      [exponent](double v, double) {
        return exponent == 0.0 ? 0.0 : exponent * std::pow(v, exponent - 1.0);
      });
}

Tensor log(const Tensor& a) {
  return unary(a, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor exp(const Tensor& a) {
  return unary(a, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a,
      [](double v) {
        // Split by sign so exp never overflows.
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor leaky_relu(const Tensor& a, double slope) {
  if (BranchTrace::active()) {
    for (double v : a.data()) BranchTrace::fold(v > 0 ? 1 : 2);
  }
  return unary(
      a, [slope](double v) { return v > 0 ? v : slope * v; },
      [slope](double v, double) { return v > 0 ? 1.0 : slope; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  if (BranchTrace::active()) {
    for (double v : a.data()) BranchTrace::fold(v < lo ? 1 : (v > hi ? 3 : 2));
  }
  return unary(
      a, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& a) {
  const auto& x = a.node()->value;
  double s = 0.0;
  for (double v : x) s += v;
  return make_result({}, {s}, {a.node()}, [](Node& self) {
    auto& g = grad_buffer(*self.inputs[0]);
    for (double& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ShapeError("mean of an empty tensor");
  return mul_scalar(sum(a), 1.0 / static_cast<double>(a.numel()));
}

// ---------------------------------------------------------------------------
// Matrix ops

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  Buffer out(m * n);
  MapMat(out.data(), m, n).noalias() =
      ConstMapMat(a.node()->value.data(), m, k) * ConstMapMat(b.node()->value.data(), k, n);
  return make_result({m, n}, std::move(out), {a.node(), b.node()}, [m, k, n](Node& self) {
    Node& p = *self.inputs[0];
    Node& q = *self.inputs[1];
    ConstMapMat dy(self.grad.data(), m, n);
    if (p.requires_grad) {
      MapMat(grad_buffer(p).data(), m, k).noalias() +=
          dy * ConstMapMat(q.value.data(), k, n).transpose();
    }
    if (q.requires_grad) {
      MapMat(grad_buffer(q).data(), k, n).noalias() +=
          ConstMapMat(p.value.data(), m, k).transpose() * dy;
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Buffer out(m * n);
  MapMat(out.data(), n, m) = ConstMapMat(a.node()->value.data(), m, n).transpose();
  return make_result({n, m}, std::move(out), {a.node()}, [m, n](Node& self) {
    MapMat(grad_buffer(*self.inputs[0]).data(), m, n) +=
        ConstMapMat(self.grad.data(), n, m).transpose();
  });
}

Tensor softmax_rows(const Tensor& a) {
  require_rank(a, 2, "softmax_rows");
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  const auto& x = a.node()->value;
  Buffer out(x.size());
  using ConstRow = Eigen::Map<const Eigen::ArrayXd>;
  using Row = Eigen::Map<Eigen::ArrayXd>;
  const auto n = static_cast<Eigen::Index>(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    ConstRow in(x.data() + r * cols, n);
    Row o(out.data() + r * cols, n);
    o = (in - in.maxCoeff()).exp();
    o /= o.sum();
  }
  return make_result(a.shape(), std::move(out), {a.node()}, [rows, cols, n](Node& self) {
    auto& g = grad_buffer(*self.inputs[0]);
    for (std::size_t r = 0; r < rows; ++r) {
      ConstRow y(self.value.data() + r * cols, n);
      ConstRow dy(self.grad.data() + r * cols, n);
      const double dot = (y * dy).sum();
      Row(g.data() + r * cols, n) += y * (dy - dot);
    }
  });
}

// ---------------------------------------------------------------------------
// Structural

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  return make_result(std::move(shape), a.node()->value, {a.node()}, [](Node& self) {
    auto& g = grad_buffer(*self.inputs[0]);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor slice_channels(const Tensor& a, std::size_t begin, std::size_t end) {
  require_rank(a, 3, "slice_channels");
  if (begin >= end || end > a.dim(0)) {
    throw ShapeError("slice_channels: [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of range for " + shape_str(a.shape()));
  }
  const std::size_t plane = a.dim(1) * a.dim(2);
  const auto& x = a.node()->value;
  Buffer out(x.begin() + static_cast<std::ptrdiff_t>(begin * plane),
                          x.begin() + static_cast<std::ptrdiff_t>(end * plane));
  return make_result({end - begin, a.dim(1), a.dim(2)}, std::move(out), {a.node()},
                     [begin, plane](Node& self) {
                       auto& g = grad_buffer(*self.inputs[0]);
                       for (std::size_t i = 0; i < self.grad.size(); ++i) {
                         g[begin * plane + i] += self.grad[i];
                       }
                     });
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  std::size_t channels = 0;
  for (const auto& p : parts) {
    require_rank(p, 3, "concat_channels");
    if (p.dim(1) != parts[0].dim(1) || p.dim(2) != parts[0].dim(2)) {
      throw ShapeError("concat_channels: spatial extents " + shape_str(p.shape()) + " and " +
                       shape_str(parts[0].shape()) + " differ");
    }
    channels += p.dim(0);
  }
  Buffer out;
  out.reserve(channels * parts[0].dim(1) * parts[0].dim(2));
  std::vector<NodePtr> inputs;
  for (const auto& p : parts) {
    out.insert(out.end(), p.node()->value.begin(), p.node()->value.end());
    inputs.push_back(p.node());
  }
  return make_result({channels, parts[0].dim(1), parts[0].dim(2)}, std::move(out),
                     std::move(inputs), [](Node& self) {
                       std::size_t offset = 0;
                       for (auto& in : self.inputs) {
                         if (in->requires_grad) {
                           auto& g = grad_buffer(*in);
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             g[i] += self.grad[offset + i];
                           }
                         }
                         offset += in->value.size();
                       }
                     });
}

Tensor expand_channels(const Tensor& a, std::size_t channels) {
  require_rank(a, 3, "expand_channels");
  if (a.dim(0) != 1) throw ShapeError("expand_channels: expected one channel, got " +
                                      shape_str(a.shape()));
  const std::size_t plane = a.numel();
  Buffer out;
  out.reserve(channels * plane);
  for (std::size_t c = 0; c < channels; ++c) {
    out.insert(out.end(), a.node()->value.begin(), a.node()->value.end());
  }
  return make_result({channels, a.dim(1), a.dim(2)}, std::move(out), {a.node()},
                     [channels, plane](Node& self) {
                       auto& g = grad_buffer(*self.inputs[0]);
                       for (std::size_t c = 0; c < channels; ++c) {
                         for (std::size_t i = 0; i < plane; ++i) {
                           g[i] += self.grad[c * plane + i];
                         }
                       }
                     });
}

// ---------------------------------------------------------------------------
// Convolution

namespace {

struct ConvGeom {
  std::size_t cin, h, w, cout, k, stride, pad, hout, wout;
  std::size_t patch() const { return cin * k * k; }
  std::size_t pixels() const { return hout * wout; }
};

void im2col(const double* x, const ConvGeom& g, double* cols) {
  const std::size_t p = g.pixels();
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        double* row = cols + ((c * g.k + ky) * g.k + kx) * p;
        for (std::size_t oy = 0; oy < g.hout; ++oy) {
          auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                    static_cast<std::ptrdiff_t>(g.pad);
          double* dst = row + oy * g.wout;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill(dst, dst + g.wout, 0.0);
            continue;
          }
          const double* src = x + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.wout; ++ox) {
            auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                      static_cast<std::ptrdiff_t>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w))
                          ? 0.0
                          : src[static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, const ConvGeom& g, double* dx) {
  const std::size_t p = g.pixels();
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const double* row = cols + ((c * g.k + ky) * g.k + kx) * p;
        for (std::size_t oy = 0; oy < g.hout; ++oy) {
          auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                    static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          double* dst = dx + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          const double* src = row + oy * g.wout;
          for (std::size_t ox = 0; ox < g.wout; ++ox) {
            auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                      static_cast<std::ptrdiff_t>(g.pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) {
              dst[static_cast<std::size_t>(ix)] += src[ox];
            }
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  require_rank(x, 3, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  if (weight.dim(1) != x.dim(0) || weight.dim(2) != weight.dim(3)) {
    throw ShapeError("conv2d: weight " + shape_str(weight.shape()) + " does not fit input " +
                     shape_str(x.shape()));
  }
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  ConvGeom g{x.dim(0), x.dim(1), x.dim(2), weight.dim(0), weight.dim(2), stride, padding, 0, 0};
  if (g.h + 2 * g.pad < g.k || g.w + 2 * g.pad < g.k) {
    throw ShapeError("conv2d: kernel larger than padded input " + shape_str(x.shape()));
  }
  g.hout = (g.h + 2 * g.pad - g.k) / g.stride + 1;
  g.wout = (g.w + 2 * g.pad - g.k) / g.stride + 1;
  const bool has_bias = bias.rank() == 1;
  if (has_bias && bias.dim(0) != g.cout) {
    throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " does not match " +
                     std::to_string(g.cout) + " output channels");
  }

  // A 1x1 stride-1 unpadded conv reads the input directly as its column matrix.
  const bool direct = g.k == 1 && g.stride == 1 && g.pad == 0;
  auto cols = std::make_shared<Buffer>();
  if (!direct) {
    cols->resize(g.patch() * g.pixels());
    im2col(x.node()->value.data(), g, cols->data());
  }
  const double* col_ptr = direct ? x.node()->value.data() : cols->data();

  Buffer out(g.cout * g.pixels());
  MapMat y(out.data(), g.cout, g.pixels());
  y.noalias() = ConstMapMat(weight.node()->value.data(), g.cout, g.patch()) *
                ConstMapMat(col_ptr, g.patch(), g.pixels());
  if (has_bias) {
    for (std::size_t c = 0; c < g.cout; ++c) y.row(c).array() += bias.node()->value[c];
  }

  std::vector<NodePtr> inputs{x.node(), weight.node()};
  if (has_bias) inputs.push_back(bias.node());
  return make_result(
      {g.cout, g.hout, g.wout}, std::move(out), std::move(inputs),
      [g, direct, cols, has_bias](Node& self) {
        Node& xin = *self.inputs[0];
        Node& w = *self.inputs[1];
        ConstMapMat dy(self.grad.data(), g.cout, g.pixels());
        const double* col_ptr = direct ? xin.value.data() : cols->data();
        if (w.requires_grad) {
          MapMat(grad_buffer(w).data(), g.cout, g.patch()).noalias() +=
              dy * ConstMapMat(col_ptr, g.patch(), g.pixels()).transpose();
        }
        if (has_bias && self.inputs[2]->requires_grad) {
          auto& gb = grad_buffer(*self.inputs[2]);
          for (std::size_t c = 0; c < g.cout; ++c) gb[c] += dy.row(c).sum();
        }
        if (xin.requires_grad) {
          auto wt = ConstMapMat(w.value.data(), g.cout, g.patch()).transpose();
          auto& gx = grad_buffer(xin);
          if (direct) {
            MapMat(gx.data(), g.patch(), g.pixels()).noalias() += wt * dy;
          } else {
            Buffer dcols(g.patch() * g.pixels());
            MapMat(dcols.data(), g.patch(), g.pixels()).noalias() = wt * dy;
            col2im_add(dcols.data(), g, gx.data());
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Batch norm

Tensor batch_norm(const Tensor& x, BatchNormState& bn, bool training) {
  require_rank(x, 3, "batch_norm");
  const std::size_t channels = x.dim(0);
  const std::size_t plane = x.dim(1) * x.dim(2);
  for (const Tensor* t : {&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var}) {
    if (t->rank() != 1 || t->dim(0) != channels) {
      throw ShapeError("batch_norm: parameter " + shape_str(t->shape()) + " does not match " +
                       std::to_string(channels) + " channels");
    }
  }
  const auto& in = x.node()->value;
  std::vector<double> mu(channels), inv_std(channels);
  if (training) {
    auto rm = bn.running_mean.mutable_data();
    auto rv = bn.running_var.mutable_data();
    for (std::size_t c = 0; c < channels; ++c) {
      const double* p = in.data() + c * plane;
      double m = 0.0;
      for (std::size_t i = 0; i < plane; ++i) m += p[i];
      m /= static_cast<double>(plane);
      double v = 0.0;
      for (std::size_t i = 0; i < plane; ++i) v += (p[i] - m) * (p[i] - m);
      v /= static_cast<double>(plane);
      mu[c] = m;
      inv_std[c] = 1.0 / std::sqrt(v + bn.eps);
      double unbiased = plane > 1 ? v * static_cast<double>(plane) / (plane - 1.0) : v;
      rm[c] = bn.momentum * rm[c] + (1.0 - bn.momentum) * m;
      rv[c] = bn.momentum * rv[c] + (1.0 - bn.momentum) * unbiased;
    }
  } else {
    for (std::size_t c = 0; c < channels; ++c) {
      if (!(bn.running_var[c] + bn.eps > 0.0)) {
        throw ValidationError("batch_norm: running variance must be positive");
      }
      mu[c] = bn.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(bn.running_var[c] + bn.eps);
    }
  }

  const auto& gamma = bn.gamma.node()->value;
  const auto& beta = bn.beta.node()->value;
  Buffer out(in.size());
  auto xhat = std::make_shared<Buffer>(in.size());
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      std::size_t j = c * plane + i;
      (*xhat)[j] = (in[j] - mu[c]) * inv_std[c];
      out[j] = gamma[c] * (*xhat)[j] + beta[c];
    }
  }
  return make_result(
      x.shape(), std::move(out), {x.node(), bn.gamma.node(), bn.beta.node()},
      [channels, plane, training, xhat, inv_std](Node& self) {
        Node& xin = *self.inputs[0];
        Node& gm = *self.inputs[1];
        Node& bt = *self.inputs[2];
        const double m = static_cast<double>(plane);
        for (std::size_t c = 0; c < channels; ++c) {
          const double* dy = self.grad.data() + c * plane;
          const double* xh = xhat->data() + c * plane;
          double sum_dy = 0.0, sum_dy_xh = 0.0;
          for (std::size_t i = 0; i < plane; ++i) {
            sum_dy += dy[i];
            sum_dy_xh += dy[i] * xh[i];
          }
          if (gm.requires_grad) grad_buffer(gm)[c] += sum_dy_xh;
          if (bt.requires_grad) grad_buffer(bt)[c] += sum_dy;
          if (!xin.requires_grad) continue;
          double* dx = grad_buffer(xin).data() + c * plane;
          const double scale = gm.value[c] * inv_std[c];
          if (training) {
            for (std::size_t i = 0; i < plane; ++i) {
              dx[i] += scale / m * (m * dy[i] - sum_dy - xh[i] * sum_dy_xh);
            }
          } else {
            for (std::size_t i = 0; i < plane; ++i) dx[i] += scale * dy[i];
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Finite differences

namespace {

thread_local BranchTrace* g_trace = nullptr;

}  // namespace

BranchTrace::BranchTrace() : digest_(0xcbf29ce484222325ULL), outer_(g_trace) { g_trace = this; }

BranchTrace::~BranchTrace() { g_trace = outer_; }

bool BranchTrace::active() { return g_trace != nullptr; }

void BranchTrace::fold(std::uint64_t v) {
  if (!g_trace) return;
  std::uint64_t& d = g_trace->digest_;
  d ^= v + 0x9e3779b97f4a7c15ULL + (d << 6) + (d >> 2);
}

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double h) {
  return finite_diff_check([&]() { return f(x); }, {x}, h);
}

FiniteDiffReport finite_diff_report(const std::function<Tensor()>& f, std::vector<Tensor> leaves,
                                    double h, std::size_t max_coords, unsigned long long seed) {
  if (!(h > 0.0)) throw ValidationError("finite_diff_check: step must be positive");
  for (auto& leaf : leaves) {
    if (!leaf.requires_grad()) throw ValidationError("finite_diff_check: leaf without grad");
    leaf.zero_grad();
  }
  std::uint64_t base;
  {
    BranchTrace trace;
    f().backward();
    base = trace.digest();
  }
  auto traced = [&](double& value) {
    BranchTrace trace;
    value = f().item();
    return trace.digest();
  };

  std::vector<std::vector<double>> analytic;
  std::vector<std::pair<std::size_t, std::size_t>> pool;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    auto g = leaves[l].grad();
    analytic.emplace_back(g.begin(), g.end());
    if (analytic.back().empty()) analytic.back().assign(leaves[l].numel(), 0.0);
    for (std::size_t i = 0; i < leaves[l].numel(); ++i) pool.emplace_back(l, i);
  }
  if (max_coords != 0) {
    std::mt19937_64 rng(seed);
    std::shuffle(pool.begin(), pool.end(), rng);
  }

  FiniteDiffReport r;
  for (const auto& [l, i] : pool) {
    if (max_coords != 0 && r.checked == max_coords) break;
    auto values = leaves[l].mutable_data();
    const double saved = values[i];
    double fp = 0.0, fm = 0.0;
    values[i] = saved + h;
    const std::uint64_t dp = traced(fp);
    values[i] = saved - h;
    const std::uint64_t dm = traced(fm);
    values[i] = saved;
    if (dp != base || dm != base) {
      ++r.skipped;
      continue;
    }
    const double numeric = (fp - fm) / (2.0 * h);
    const double a = analytic[l][i];
    r.max_error = std::max(r.max_error, std::abs(a - numeric) / std::max(1.0, std::abs(numeric)));
    ++r.checked;
  }
  if (r.checked == 0 && !pool.empty()) {
    throw ValidationError("finite_diff_check: every coordinate straddles a branch");
  }
  return r;
}

double finite_diff_check(const std::function<Tensor()>& f, std::vector<Tensor> leaves, double h,
                         std::size_t max_coords, unsigned long long seed) {
  return finite_diff_report(f, std::move(leaves), h, max_coords, seed).max_error;
}

}  // namespace mudet
