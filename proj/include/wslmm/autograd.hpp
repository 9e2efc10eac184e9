#pragma once

// Define-by-run reverse-mode differentiation over dense tensors.
//
// Every primitive records its parents and a backward rule on the produced
// node; `backward` walks the reachable graph in reverse topological order.
// Leaf parameters accumulate gradients across calls, intermediate nodes are
// re-zeroed on every call.

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "wslmm/tensor.hpp"

namespace wsl::ag {

inline constexpr double kLogEps = 1e-8;

template <typename T>
struct Node {
  Tensor<T> value;
  std::vector<T> grad;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  std::string op = "leaf";
  bool requires_grad = false;
  bool detached = false;
};

/// Shared handle to a graph node.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var constant(Tensor<T> value);
  static Var parameter(Tensor<T> value);

  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape; }
  std::size_t size() const { return node_->value.data.size(); }
  T item() const;

  const std::vector<T>& grad() const { return node_->grad; }
  std::vector<T>& mutable_grad() { return node_->grad; }
  void zero_grad();

  bool requires_grad() const { return node_->requires_grad; }
  bool detached() const { return node_->detached; }
  const std::string& op() const { return node_->op; }
  const std::vector<std::shared_ptr<Node<T>>>& parents() const { return node_->parents; }

  bool valid() const { return static_cast<bool>(node_); }
  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Propagates d(loss)/d(node) to every reachable node that requires grad.
/// `loss` must hold exactly one element.
template <typename T>
void backward(const Var<T>& loss);

// ---- primitives -----------------------------------------------------------

/// x: [N,C,H,W], weight: [O,C,k,k], bias: [O] or invalid Var.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, std::size_t stride,
              std::size_t pad);

/// x: [N,F], weight: [O,F], bias: [O] or invalid Var. y = x W^T + b.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

/// Batched product: a [B,M,K] x b [B,K,P] -> [B,M,P].
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> relu(const Var<T>& x);
template <typename T>
Var<T> sigmoid(const Var<T>& x);
/// log(max(x, eps)); zero gradient where the clamp is active.
template <typename T>
Var<T> log(const Var<T>& x, double eps = kLogEps);
template <typename T>
Var<T> exp(const Var<T>& x);
/// Softmax along the last axis.
template <typename T>
Var<T> softmax(const Var<T>& x);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
/// Elementwise max; ties route the gradient to `a`.
template <typename T>
Var<T> maximum(const Var<T>& a, const Var<T>& b);
/// scale * x + shift.
template <typename T>
Var<T> affine(const Var<T>& x, double scale, double shift);

/// Sum of all elements, shape {1}.
template <typename T>
Var<T> sum(const Var<T>& x);
/// Reductions over a single axis; the axis is removed from the shape.
template <typename T>
Var<T> sum_axis(const Var<T>& x, std::size_t axis);
template <typename T>
Var<T> mean_axis(const Var<T>& x, std::size_t axis);

/// x: [R,n]. Mean of the k largest (or smallest) entries of every row -> [R].
/// Equal values are ordered by flat index.
template <typename T>
Var<T> topk_mean(const Var<T>& x, std::size_t k, bool largest);

/// Align-corners bilinear resize of the two trailing axes. A detached output
/// records its parent but never propagates gradient to it.
template <typename T>
Var<T> bilinear_upsample(const Var<T>& x, std::size_t out_h, std::size_t out_w, bool detach);

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape);
template <typename T>
Var<T> concat(std::span<const Var<T>> parts, std::size_t axis);
/// x * mask with a constant mask of the same shape.
template <typename T>
Var<T> dropout_mask_apply(const Var<T>& x, const Tensor<T>& mask);

/// Copy of x cut from the graph: value shared, no parents, no gradient.
template <typename T>
Var<T> detach(const Var<T>& x);

// ---- gradient checking ----------------------------------------------------

struct GradCheckReport {
  bool passed = false;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::string message;
};

/// Compares the analytic gradient of f at x with central differences.
/// Relative error per coordinate is |a - n| / max(1, |a|, |n|).
GradCheckReport grad_check(const std::function<Var<double>(const Var<double>&)>& f,
                           const Tensor<double>& x, double tol, double h = 1e-5);

}  // namespace wsl::ag
