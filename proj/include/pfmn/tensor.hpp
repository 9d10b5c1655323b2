#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "pfmn/error.hpp"

namespace pfmn {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape) noexcept;
std::string shape_string(const Shape& shape);

/// Dense row-major tensor. Rank-0 tensors hold a single scalar; zero extents
/// are allowed so that empty memory banks have a natural representation.
template <class T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
  BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_)) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(shape_));
    }
  }

  static BasicTensor scalar(T value) { return BasicTensor(Shape{}, std::vector<T>{value}); }
  static BasicTensor vector(std::vector<T> values) {
    Shape s{values.size()};
    return BasicTensor(std::move(s), std::move(values));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const {
    if (axis >= shape_.size()) throw DimensionError("axis out of range for shape " + shape_string(shape_));
    return shape_[axis];
  }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* raw() noexcept { return data_.data(); }
  const T* raw() const noexcept { return data_.data(); }
  const std::vector<T>& values() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  /// Scalar value of a single-element tensor.
  T item() const {
    if (data_.size() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape_));
    return data_[0];
  }

  BasicTensor reshape(Shape shape) const& {
    BasicTensor out = *this;
    return std::move(out).reshape(std::move(shape));
  }
  BasicTensor reshape(Shape shape) && {
    if (shape_size(shape) != data_.size()) {
      throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    shape_ = std::move(shape);
    return std::move(*this);
  }

  /// Rows [begin, end) of the leading axis.
  BasicTensor slice(std::size_t begin, std::size_t end) const {
    if (rank() == 0 || begin > end || end > shape_[0]) {
      throw DimensionError("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                           shape_string(shape_));
    }
    const std::size_t stride = shape_[0] == 0 ? 0 : data_.size() / shape_[0];
    Shape s = shape_;
    s[0] = end - begin;
    return BasicTensor(std::move(s), std::vector<T>(data_.begin() + static_cast<std::ptrdiff_t>(begin * stride),
                                                    data_.begin() + static_cast<std::ptrdiff_t>(end * stride)));
  }

  template <class U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }
  bool all_finite() const noexcept;

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

}  // namespace pfmn
