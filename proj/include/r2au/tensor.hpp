#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace r2au {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Raised when a function under evaluation produces a non-finite value.
class EvaluationError : public Error {
 public:
  using Error::Error;
};

/// Extents of a dense (batch, channels, height, width) array.
struct Shape {
  std::size_t n = 1;
  std::size_t c = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  constexpr std::size_t size() const { return n * c * h * w; }
  constexpr std::size_t plane() const { return h * w; }
  constexpr std::size_t image() const { return c * h * w; }

  friend constexpr bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);

/// Dense row-major 4-D array. Scalars are represented as shape (1,1,1,1).
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : shape_{0, 0, 0, 0} {}
  explicit Tensor(Shape shape, T fill = T{0}) : shape_(shape), data_(shape.size(), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.size()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + to_string(shape_));
    }
  }

  static Tensor scalar(T v) { return Tensor(Shape{1, 1, 1, 1}, v); }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::size_t index(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) { return data_[index(n, c, h, w)]; }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[index(n, c, h, w)];
  }

  /// View of image `n` (all channels), contiguous.
  std::span<T> image(std::size_t n) { return {data_.data() + n * shape_.image(), shape_.image()}; }
  std::span<const T> image(std::size_t n) const {
    return {data_.data() + n * shape_.image(), shape_.image()};
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    for (const T& v : data_) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return Tensor<U>(shape_, std::move(out));
  }

  /// Same data viewed under a different shape of equal size.
  Tensor reshaped(Shape s) const { return Tensor(s, data_); }

 private:
  Shape shape_;
  std::vector<T> data_;
};

}  // namespace r2au
