#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "gcaps/errors.hpp"

namespace gcaps {

using Index = std::ptrdiff_t;
using Shape = std::vector<Index>;

inline Index shape_size(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Dense row-major n-dimensional array. Storage is a contiguous Eigen array
/// so whole-tensor arithmetic can go through Eigen expressions.
template <typename Scalar>
class BasicTensor {
 public:
  using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape)
      : shape_(std::move(shape)), data_(Storage::Zero(shape_size(shape_))) {
    check_extents();
  }

  BasicTensor(Shape shape, Storage data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents();
    if (data_.size() != shape_size(shape_))
      throw ShapeError("tensor", shape_string(shape_) + " vs " +
                                     std::to_string(data_.size()) + " values");
  }

  BasicTensor(Shape shape, std::initializer_list<Scalar> values)
      : BasicTensor(std::move(shape), from_list(values)) {}

  static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape)); }

  static BasicTensor constant(Shape shape, Scalar value) {
    BasicTensor t(std::move(shape));
    t.data_.setConstant(value);
    return t;
  }

  const Shape& shape() const noexcept { return shape_; }
  Index rank() const noexcept { return static_cast<Index>(shape_.size()); }
  Index size() const noexcept { return data_.size(); }
  Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }

  Storage& array() noexcept { return data_; }
  const Storage& array() const noexcept { return data_; }

  Scalar* data() noexcept { return data_.data(); }
  const Scalar* data() const noexcept { return data_.data(); }

  std::span<Scalar> values() noexcept { return {data_.data(), static_cast<std::size_t>(data_.size())}; }
  std::span<const Scalar> values() const noexcept {
    return {data_.data(), static_cast<std::size_t>(data_.size())};
  }

  Scalar& operator[](Index i) noexcept { return data_[i]; }
  const Scalar& operator[](Index i) const noexcept { return data_[i]; }

  template <typename... I>
  Scalar& at(I... idx) {
    return data_[offset({static_cast<Index>(idx)...})];
  }
  template <typename... I>
  const Scalar& at(I... idx) const {
    return data_[offset({static_cast<Index>(idx)...})];
  }

  /// Reinterprets the extents; the element count must not change.
  void reshape(Shape shape) {
    if (shape_size(shape) != size())
      throw ShapeError("reshape", shape_string(shape_) + " -> " + shape_string(shape));
    shape_ = std::move(shape);
  }

  bool all_finite() const { return data_.isFinite().all(); }

 private:
  static Storage from_list(std::initializer_list<Scalar> values) {
    Storage s(static_cast<Index>(values.size()));
    Index i = 0;
    for (Scalar v : values) s[i++] = v;
    return s;
  }

  void check_extents() const {
    for (Index d : shape_)
      if (d <= 0) throw ShapeError("tensor", "non-positive extent in " + shape_string(shape_));
  }

  Index offset(std::initializer_list<Index> idx) const {
    if (idx.size() != shape_.size())
      throw ShapeError("at", "rank " + std::to_string(idx.size()) + " index into " + shape_string(shape_));
    Index off = 0;
    std::size_t d = 0;
    for (Index i : idx) off = off * shape_[d++] + i;
    return off;
  }

  Shape shape_;
  Storage data_;
};

using Tensor = BasicTensor<double>;

}  // namespace gcaps
