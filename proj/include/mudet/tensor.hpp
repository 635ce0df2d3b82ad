// Copyright 2026 The mudet Authors
// SPDX-License-Identifier: Apache-2.0

// Dense float64 tensor with a reverse-mode gradient tape over a fixed op set.
//
// A Tensor is a cheap handle; copies share storage. Values produced by ops
// are never mutated after construction, except leaf parameters which the
// optimizer updates in place through mutable_data().

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mudet {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct Node;
}

class Tensor {
 public:
  /// Empty scalar 0.
  Tensor();

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  /// In-place access for leaves (parameters, buffers). Throws on op results.
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t i) const { return data()[i]; }

  bool requires_grad() const;
  bool has_grad() const;
  /// Gradient buffer; empty span until backward() reaches this tensor.
  std::span<const double> grad() const;
  void zero_grad();

  /// Reverse sweep from this scalar. Leaf gradients accumulate across calls.
  void backward() const;

  /// Same values, no history.
  Tensor detach() const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  // Used by op implementations.
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);

Tensor pow(const Tensor& a, double exponent);
Tensor log(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope);
/// Gradient passes only where lo <= a <= hi.
Tensor clamp(const Tensor& a, double lo, double hi);
/// Subgradient goes to the winning operand; ties go to `a`.
Tensor minimum(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// 2-D.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
/// Row-wise softmax with max subtraction.
Tensor softmax_rows(const Tensor& a);

// Structural.
Tensor reshape(const Tensor& a, Shape shape);
/// Channels [begin, end) of a (C, M, N) tensor.
Tensor slice_channels(const Tensor& a, std::size_t begin, std::size_t end);
Tensor concat_channels(const std::vector<Tensor>& parts);
/// Repeat a (1, M, N) map across `channels`.
Tensor expand_channels(const Tensor& a, std::size_t channels);

/// 2-D cross-correlation of x (Cin, H, W) with w (Cout, Cin, k, k), square
/// kernel, symmetric zero padding. `bias` may be a default Tensor (no bias).
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding);

/// Per-channel batch norm of x (C, H, W). In training mode statistics come
/// from x (biased variance) and the running buffers move by
/// running = momentum * running + (1 - momentum) * batch.
struct BatchNormState {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
  double eps = 1e-5;
  double momentum = 0.9;
};
Tensor batch_norm(const Tensor& x, BatchNormState& bn, bool training);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }
inline Tensor operator+(double s, const Tensor& a) { return add_scalar(a, s); }
inline Tensor operator-(const Tensor& a, double s) { return add_scalar(a, -s); }
inline Tensor operator-(double s, const Tensor& a) { return add_scalar(mul_scalar(a, -1.0), s); }
inline Tensor operator*(const Tensor& a, double s) { return mul_scalar(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return mul_scalar(a, s); }

/// While a BranchTrace is alive on the current thread, ops with a
/// non-differentiable point (leaky_relu, clamp, minimum, maximum) and the
/// fusion mask builder fold the branch taken by every element into a digest.
/// Two evaluations with equal digests lie on the same smooth piece.
class BranchTrace {
 public:
  BranchTrace();
  ~BranchTrace();
  BranchTrace(const BranchTrace&) = delete;
  BranchTrace& operator=(const BranchTrace&) = delete;
  std::uint64_t digest() const { return digest_; }

  /// True when some trace is recording on this thread.
  static bool active();
  /// Folds one branch decision into the innermost active trace.
  static void fold(std::uint64_t v);

 private:
  std::uint64_t digest_;
  BranchTrace* outer_;
};

struct FiniteDiffReport {
  double max_error = 0.0;
  std::size_t checked = 0;
  /// Coordinates whose +h or -h evaluation changed a branch; the central
  /// difference is not a valid oracle there, so they were redrawn.
  std::size_t skipped = 0;
};

/// Max over coordinates of |analytic - numeric| / max(1, |numeric|), with the
/// numeric gradient from central differences of step h. `x` must be a leaf
/// with requires_grad; its values are restored on return.
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double h);

/// Same check over a set of leaves. With `max_coords` > 0, that many
/// coordinates are drawn from all leaves with a seeded RNG; otherwise every
/// coordinate is checked. Coordinates straddling a branch are skipped.
FiniteDiffReport finite_diff_report(const std::function<Tensor()>& f, std::vector<Tensor> leaves,
                                    double h, std::size_t max_coords = 0,
                                    unsigned long long seed = 0);
double finite_diff_check(const std::function<Tensor()>& f, std::vector<Tensor> leaves, double h,
                         std::size_t max_coords = 0, unsigned long long seed = 0);

}  // namespace mudet
