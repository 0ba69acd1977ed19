#pragma once

#include <array>
#include <string>

#include <Eigen/Core>

#include "stoneseg/errors.hpp"
#include "stoneseg/image.hpp"

namespace stoneseg::nn {

using Index = Eigen::Index;

/// (batch, channels, height, width)
using Shape = std::array<Index, 4>;

std::string to_string(const Shape& shape);

/// Dense NCHW tensor templated on its scalar type.
template <typename Scalar>
class Tensor {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<RowMatrix>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix>;
  using PlaneMap = Eigen::Map<Plane<Scalar>>;
  using ConstPlaneMap = Eigen::Map<const Plane<Scalar>>;

  Tensor() = default;
  explicit Tensor(const Shape& shape) : shape_(shape), values_(Vector::Zero(count(shape))) {}
  Tensor(const Shape& shape, Vector values) : shape_(shape), values_(std::move(values)) {
    if (values_.size() != count(shape)) throw ShapeError("tensor data does not match shape " + to_string(shape));
  }

  static Tensor Zero(const Shape& shape) { return Tensor(shape); }
  static Tensor Constant(const Shape& shape, Scalar value) {
    return Tensor(shape, Vector::Constant(count(shape), value));
  }

  static Index count(const Shape& s) { return s[0] * s[1] * s[2] * s[3]; }

  const Shape& shape() const { return shape_; }
  Index batch() const { return shape_[0]; }
  Index channels() const { return shape_[1]; }
  Index height() const { return shape_[2]; }
  Index width() const { return shape_[3]; }
  Index size() const { return values_.size(); }
  bool empty() const { return values_.size() == 0; }

  Vector& values() { return values_; }
  const Vector& values() const { return values_; }
  Scalar* data() { return values_.data(); }
  const Scalar* data() const { return values_.data(); }

  Scalar& operator()(Index n, Index c, Index y, Index x) {
    return values_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }
  Scalar operator()(Index n, Index c, Index y, Index x) const {
    return values_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }

  /// Sample n viewed as a (channels, height*width) matrix.
  MatrixMap sample(Index n) { return MatrixMap(data() + n * sample_size(), shape_[1], shape_[2] * shape_[3]); }
  ConstMatrixMap sample(Index n) const {
    return ConstMatrixMap(data() + n * sample_size(), shape_[1], shape_[2] * shape_[3]);
  }

  PlaneMap plane(Index n, Index c) { return PlaneMap(data() + plane_offset(n, c), shape_[2], shape_[3]); }
  ConstPlaneMap plane(Index n, Index c) const {
    return ConstPlaneMap(data() + plane_offset(n, c), shape_[2], shape_[3]);
  }

  Index sample_size() const { return shape_[1] * shape_[2] * shape_[3]; }

  bool all_finite() const { return values_.allFinite(); }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, values_.template cast<Other>());
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.values_ == b.values_;
  }

 private:
  Index plane_offset(Index n, Index c) const { return (n * shape_[1] + c) * shape_[2] * shape_[3]; }

  Shape shape_{0, 0, 0, 0};
  Vector values_;
};

}  // namespace stoneseg::nn
