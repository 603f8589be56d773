#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "fsf/error.hpp"

namespace fsf {

using Shape = std::vector<std::size_t>;

// Read-only span that does not take part in template argument deduction.
template <typename T>
using cspan = std::type_identity_t<std::span<const T>>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

// Dense row-major tensor. Images and feature maps are C x H x W.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_))
      throw DimensionError("data length " + std::to_string(data_.size()) + " does not match shape " +
                           shape_str(shape_));
  }
  Tensor(std::size_t c, std::size_t h, std::size_t w, T fill = T(0)) : Tensor(Shape{c, h, w}, fill) {}

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  // C x H x W accessors (rank-3 tensors only).
  std::size_t channels() const { return shape_.at(0); }
  std::size_t height() const { return shape_.at(1); }
  std::size_t width() const { return shape_.at(2); }
  std::size_t plane_size() const { return shape_.at(1) * shape_.at(2); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> span() noexcept { return data_; }
  std::span<const T> span() const noexcept { return data_; }
  std::vector<T>& vec() noexcept { return data_; }
  const std::vector<T>& vec() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T& operator()(std::size_t c, std::size_t y, std::size_t x) noexcept {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }
  const T& operator()(std::size_t c, std::size_t y, std::size_t x) const noexcept {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }

  std::span<T> channel(std::size_t c) { return std::span<T>(data_).subspan(c * plane_size(), plane_size()); }
  std::span<const T> channel(std::size_t c) const {
    return std::span<const T>(data_).subspan(c * plane_size(), plane_size());
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor reshaped(Shape s) const { return Tensor(std::move(s), data_); }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Image = Tensor<double>;

inline void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) throw DimensionError(std::string(what) + ": shape " + shape_str(a) + " vs " + shape_str(b));
}

inline void require_rank3(const Shape& s, const char* what) {
  if (s.size() != 3) throw DimensionError(std::string(what) + ": expected C x H x W, got " + shape_str(s));
}

// Maximum over elements of |a - b| / max(|b|, floor).
template <typename T>
double max_rel_err(std::span<const T> a, std::span<const T> b, double floor = 1e-300) {
  if (a.size() != b.size()) throw DimensionError("max_rel_err: length mismatch");
  double scale = floor;
  for (auto v : b) scale = std::max(scale, std::abs(static_cast<double>(v)));
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])) / scale);
  return worst;
}

}  // namespace fsf
