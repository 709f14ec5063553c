#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace affnet {

namespace detail {

inline void require(bool condition, const std::string& message) {
  if (!condition) throw std::invalid_argument(message);
}

}  // namespace detail

// Dense row-major tensor over float or double. Shape is fixed at
// construction; the flat buffer is exposed for kernel loops.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(numel(shape_), T(0)) {}

  Tensor(std::vector<std::size_t> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    detail::require(data_.size() == numel(shape_),
                    "tensor data length does not match shape");
  }

  static std::size_t numel(const std::vector<std::size_t>& shape) {
    std::size_t n = shape.empty() ? 0 : 1;
    for (std::size_t d : shape) n *= d;
    return n;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Index into a [N, H, W, C] tensor.
  std::size_t offset4(std::size_t n, std::size_t h, std::size_t w,
                      std::size_t c) const {
    return ((n * shape_[1] + h) * shape_[2] + w) * shape_[3] + c;
  }

  T& at4(std::size_t n, std::size_t h, std::size_t w, std::size_t c) {
    return data_[offset4(n, h, w, c)];
  }
  const T& at4(std::size_t n, std::size_t h, std::size_t w,
               std::size_t c) const {
    return data_[offset4(n, h, w, c)];
  }

  // Index into a [N, C] tensor.
  T& at2(std::size_t n, std::size_t c) { return data_[n * shape_[1] + c]; }
  const T& at2(std::size_t n, std::size_t c) const {
    return data_[n * shape_[1] + c];
  }

  void fill(T value) { data_.assign(data_.size(), value); }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool all_finite() const {
    for (const T& v : data_) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i)
      out[i] = static_cast<U>(data_[i]);
    return Tensor<U>(shape_, std::move(out));
  }

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<T> data_;
};

// Forward/backward contract: layer outputs must stay finite.
template <typename T>
void ensure_finite(const Tensor<T>& t, const char* what) {
  if (!t.all_finite())
    throw std::runtime_error(std::string(what) +
                             " contains non-finite values");
}

}  // namespace affnet
