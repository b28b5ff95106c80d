#pragma once

// Reverse-mode automatic differentiation over dense tensors.
//
// A Tape records every operation of one computation in topological order.
// Var is a light handle (tape pointer + node index). Ops are free functions;
// each one computes its forward value eagerly and registers a backward rule
// that accumulates into the gradients of those inputs that require them.

#include <functional>
#include <type_traits>
#include <vector>

#include "trinet/tensor.hpp"

namespace trinet::ad {

template <typename T>
class Tape;

template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, int id) : tape_(tape), id_(id) {}

  Tape<T>* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr && id_ >= 0; }

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t numel() const { return value().numel(); }
  /// Convenience for scalar nodes.
  T item() const { return value().item(); }

 private:
  Tape<T>* tape_ = nullptr;
  int id_ = -1;
};

template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Gradient-tracked input.
  Var<T> leaf(Tensor<T> value);
  /// Input excluded from differentiation.
  Var<T> constant(Tensor<T> value);
  /// Appends an op result. `inputs` must already be on this tape.
  Var<T> record(Tensor<T> value, std::vector<int> inputs, BackwardFn backward);

  const Tensor<T>& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  /// Gradient accumulator of a node, allocated (zeroed) on first use.
  std::vector<T>& grad_buffer(int id);
  /// Read-only gradient of a node during backward; empty if nothing flowed in.
  const std::vector<T>& grad_of(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }

  /// Runs reverse accumulation from a scalar root. Gradients from a previous
  /// call are discarded first, so repeated calls give identical results.
  void backward(Var<T> root);

  /// Gradient of `v` after backward(); zeros when `v` is unreachable.
  Tensor<T> grad(Var<T> v) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    std::vector<int> inputs;
    BackwardFn backward;
    std::vector<T> grad;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(id_);
}

// ---- elementwise arithmetic (equal shapes, or either side a one-element tensor)
template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> div(Var<T> a, Var<T> b);
template <typename T> Var<T> add_scalar(Var<T> a, std::type_identity_t<T> s);
template <typename T> Var<T> mul_scalar(Var<T> a, std::type_identity_t<T> s);

// ---- unary
template <typename T> Var<T> neg(Var<T> a);
template <typename T> Var<T> abs(Var<T> a);
template <typename T> Var<T> square(Var<T> a);
template <typename T> Var<T> exp(Var<T> a);
/// Throws on any non-positive element.
template <typename T> Var<T> log(Var<T> a);
template <typename T> Var<T> sigmoid(Var<T> a);
/// ELU with alpha = 1.
template <typename T> Var<T> elu(Var<T> a);
/// Gradient is 1 on [lo, hi] (knots inclusive) and 0 outside.
template <typename T> Var<T> clamp(Var<T> a, std::type_identity_t<T> lo, std::type_identity_t<T> hi);

// ---- reductions
template <typename T> Var<T> sum(Var<T> a);
template <typename T> Var<T> mean(Var<T> a);

// ---- image ops on [B,C,H,W]
/// 3x3 box mean per channel; the window is clamped at the borders.
template <typename T> Var<T> box_mean3(Var<T> a);
/// Cross-correlation with zero padding. kernel: [Cout,Cin,kH,kW].
template <typename T> Var<T> conv2d(Var<T> input, Var<T> kernel, int stride, int padding);
/// Adds bias[c] to every pixel of channel c.
template <typename T> Var<T> add_channel_bias(Var<T> input, Var<T> bias);
/// Bilinear 2x upsampling; output centre (i+0.5)/2-0.5 in input coordinates.
template <typename T> Var<T> upsample2x(Var<T> input);
/// 2x2 mean pooling; extents must be even.
template <typename T> Var<T> avg_pool2(Var<T> input);
template <typename T> Var<T> concat_channels(const std::vector<Var<T>>& parts);
template <typename T> Var<T> slice_channels(Var<T> input, int begin, int count);
template <typename T> Var<T> channel_mean(Var<T> input);
/// Forward differences along x: out[..., x] = in[..., x+1] - in[..., x], width W-1.
template <typename T> Var<T> diff_x(Var<T> input);
/// Forward differences along y, height H-1.
template <typename T> Var<T> diff_y(Var<T> input);
template <typename T> Var<T> flip_x(Var<T> input);

template <typename T> Var<T> operator+(Var<T> a, Var<T> b) { return add(a, b); }
template <typename T> Var<T> operator-(Var<T> a, Var<T> b) { return sub(a, b); }
template <typename T> Var<T> operator*(Var<T> a, Var<T> b) { return mul(a, b); }
template <typename T> Var<T> operator/(Var<T> a, Var<T> b) { return div(a, b); }
template <typename T> Var<T> operator-(Var<T> a) { return neg(a); }
template <typename T> Var<T> operator+(Var<T> a, std::type_identity_t<T> s) { return add_scalar(a, s); }
template <typename T> Var<T> operator+(std::type_identity_t<T> s, Var<T> a) { return add_scalar(a, s); }
template <typename T> Var<T> operator-(Var<T> a, std::type_identity_t<T> s) { return add_scalar(a, -s); }
template <typename T> Var<T> operator-(std::type_identity_t<T> s, Var<T> a) { return add_scalar(neg(a), s); }
template <typename T> Var<T> operator*(Var<T> a, std::type_identity_t<T> s) { return mul_scalar(a, s); }
template <typename T> Var<T> operator*(std::type_identity_t<T> s, Var<T> a) { return mul_scalar(a, s); }

}  // namespace trinet::ad
