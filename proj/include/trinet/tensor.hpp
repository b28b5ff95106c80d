#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace trinet {

using Shape = std::vector<int>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major array. Images use the [batch, channels, height, width]
/// layout; scalars have an empty shape.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_)) {
      throw std::invalid_argument("Tensor: " + std::to_string(data_.size()) +
                                  " elements do not fit shape " + shape_str(shape_));
    }
  }

  static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // 4-D accessors; no bounds checks.
  T& at(int b, int c, int y, int x) { return data_[offset(b, c, y, x)]; }
  const T& at(int b, int c, int y, int x) const { return data_[offset(b, c, y, x)]; }

  T item() const {
    if (data_.size() != 1) {
      throw std::invalid_argument("Tensor::item on shape " + shape_str(shape_));
    }
    return data_[0];
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  bool operator==(const Tensor& other) const = default;

 private:
  std::size_t offset(int b, int c, int y, int x) const {
    return ((static_cast<std::size_t>(b) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x;
  }

  Shape shape_;
  std::vector<T> data_;
};

/// Throws unless `t` is a 4-D image tensor.
template <typename T>
void require_image(const Tensor<T>& t, const char* what) {
  if (t.rank() != 4) {
    throw std::invalid_argument(std::string(what) + ": expected [B,C,H,W], got " +
                                shape_str(t.shape()));
  }
}

/// Mirrors columns (x -> W-1-x) of a 4-D tensor.
template <typename T>
Tensor<T> flip_horizontal(const Tensor<T>& t) {
  require_image(t, "flip_horizontal");
  Tensor<T> out(t.shape());
  const int B = t.dim(0), C = t.dim(1), H = t.dim(2), W = t.dim(3);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) out.at(b, c, y, x) = t.at(b, c, y, W - 1 - x);
  return out;
}

/// Extracts batch element `b` as a [1,C,H,W] tensor.
template <typename T>
Tensor<T> batch_slice(const Tensor<T>& t, int b) {
  require_image(t, "batch_slice");
  const std::size_t per = t.numel() / static_cast<std::size_t>(t.dim(0));
  std::vector<T> out(t.storage().begin() + static_cast<std::ptrdiff_t>(per * b),
                     t.storage().begin() + static_cast<std::ptrdiff_t>(per * (b + 1)));
  return Tensor<T>({1, t.dim(1), t.dim(2), t.dim(3)}, std::move(out));
}

/// Stacks [1,C,H,W] tensors along the batch axis.
template <typename T>
Tensor<T> stack_batch(std::span<const Tensor<T>> items) {
  if (items.empty()) throw std::invalid_argument("stack_batch: no tensors");
  const Shape& s = items.front().shape();
  std::vector<T> out;
  out.reserve(items.front().numel() * items.size());
  for (const auto& t : items) {
    if (t.rank() != 4 || t.dim(0) != 1 || t.dim(1) != s[1] || t.dim(2) != s[2] ||
        t.dim(3) != s[3]) {
      throw std::invalid_argument("stack_batch: shape " + shape_str(t.shape()) +
                                  " does not match " + shape_str(s));
    }
    out.insert(out.end(), t.storage().begin(), t.storage().end());
  }
  return Tensor<T>({static_cast<int>(items.size()), s[1], s[2], s[3]}, std::move(out));
}

}  // namespace trinet
