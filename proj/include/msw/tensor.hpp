#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "msw/array.hpp"

namespace msw {

template <class T>
class Tape;

// Immutable handle onto a dense value plus its position in the tape's
// recorded graph. Copies are cheap; the underlying storage is shared and
// never mutated after construction.
template <class T>
class Tensor {
 public:
  Tensor() = default;

  bool defined() const { return static_cast<bool>(arr_); }
  const Shape& shape() const { return arr_->shape; }
  int64_t size() const { return arr_->size(); }
  const Array<T>& array() const { return *arr_; }
  const std::vector<T>& values() const { return arr_->v; }
  std::shared_ptr<const Array<T>> storage() const { return arr_; }

  T item() const {
    if (size() != 1) throw ValueError(cat("item() on tensor of shape ", shape_str(shape())));
    return arr_->v[0];
  }

  // Recorded tensors participate in the backward pass.
  bool recorded() const { return node_ >= 0; }
  int node() const { return node_; }
  Tape<T>* tape() const { return tape_; }

 private:
  friend class Tape<T>;
  std::shared_ptr<const Array<T>> arr_;
  Tape<T>* tape_ = nullptr;
  int node_ = -1;
};

// Single-owner record of executed operations. Nodes are appended in
// execution order, so reverse id order is a valid reverse-topological
// order; backward visits each reachable node exactly once and gradients
// accumulate additively at fan-out.
template <class T>
class Tape {
 public:
  Tape() = default;
  // record_all forces leaves onto the tape regardless of requires_grad,
  // so activation gradients exist even when all parameters are frozen.
  explicit Tape(bool record_all) : record_all_(record_all) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor<T> leaf(Array<T> value, bool requires_grad = true) {
    return leaf(std::make_shared<const Array<T>>(std::move(value)), requires_grad);
  }
  Tensor<T> leaf(std::shared_ptr<const Array<T>> value, bool requires_grad = true);
  Tensor<T> constant(Array<T> value) {
    return leaf(std::make_shared<const Array<T>>(std::move(value)), false);
  }
  Tensor<T> constant(std::shared_ptr<const Array<T>> value) { return leaf(std::move(value), false); }

  bool record_all() const { return record_all_; }
  bool consumed() const { return consumed_; }
  size_t num_nodes() const { return nodes_.size(); }

  // Reverse sweep from a scalar root. Single use; the tape is consumed.
  void backward(const Tensor<T>& root);

  // Gradient of a recorded tensor after backward(); nullptr when the
  // reverse sweep never reached it (i.e. its gradient is zero).
  const Array<T>* grad(const Tensor<T>& t) const;
  Array<T> grad_or_zero(const Tensor<T>& t) const;

  // --- op-implementation interface ---
  using BackFn = std::function<void(Tape&, const Array<T>&)>;
  int add_node(Shape shape, std::vector<int> parents, BackFn back);
  Array<T>& grad_buffer(int node, const Shape& shape);
  Tensor<T> make(std::shared_ptr<const Array<T>> value, int node);

 private:
  struct Node {
    Shape shape;
    std::vector<int> parents;
    BackFn back;
  };
  std::vector<Node> nodes_;
  std::vector<std::unique_ptr<Array<T>>> grads_;
  bool record_all_ = false;
  bool consumed_ = false;
};

// ---- differentiable primitives ----
// All ops validate shapes (DimensionError names both sides) and record a
// backward rule when any input is recorded.

template <class T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> add_scalar(const Tensor<T>& a, T s);
template <class T> Tensor<T> mul_scalar(const Tensor<T>& a, T s);
// bias.shape must be a suffix of x.shape; gradient of bias sums the lead dims.
template <class T> Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);
// NCHW helper: bias has shape (C) and is added per channel.
template <class T> Tensor<T> add_channel_bias_nchw(const Tensor<T>& x, const Tensor<T>& bias);

template <class T> Tensor<T> gelu(const Tensor<T>& x);  // tanh approximation
template <class T> Tensor<T> relu(const Tensor<T>& x);

template <class T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <class T> Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& axes);
template <class T> Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis);
// Cyclic shift of the two spatial axes of (B,H,W,C).
template <class T> Tensor<T> roll2d(const Tensor<T>& x, int shift_h, int shift_w);
// (B,H,W,C) -> (B,H/2,W/2,4C); channel blocks ordered (0,0),(1,0),(0,1),(1,1).
template <class T> Tensor<T> space_to_depth2(const Tensor<T>& x);
template <class T> Tensor<T> pad_bottom_right(const Tensor<T>& x, int pad_h, int pad_w);
template <class T> Tensor<T> crop_to(const Tensor<T>& x, int new_h, int new_w);

template <class T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool ta = false, bool tb = false);
template <class T> Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool tb = false);
// NCHW cross-correlation; weight (K,C,kh,kw); zero padding on both sides.
template <class T> Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, int stride, int padding);

template <class T> Tensor<T> sum(const Tensor<T>& x);
template <class T> Tensor<T> mean(const Tensor<T>& x);
template <class T> Tensor<T> mean_axis(const Tensor<T>& x, int axis);
template <class T> Tensor<T> softmax(const Tensor<T>& x, int axis);
// Normalizes the last dimension; eps sits inside the square root.
template <class T> Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5));
template <class T> Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels);
template <class T> Tensor<T> select(const Tensor<T>& x, int64_t flat_index);

}  // namespace msw
