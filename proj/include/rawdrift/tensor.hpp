#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace rawdrift {

enum class DType { F32, F64 };

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array. Values are held in double storage; a F32 tensor
/// keeps every stored value representable as a 32-bit float, so arithmetic
/// on it behaves as single precision with correctly rounded results.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, DType dtype = DType::F64);
  Tensor(Shape shape, std::vector<double> values, DType dtype = DType::F64);

  static Tensor scalar(double value, DType dtype = DType::F64);
  static Tensor filled(Shape shape, double value, DType dtype = DType::F64);
  static Tensor from(Shape shape, std::initializer_list<double> values,
                     DType dtype = DType::F64);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return values_.size(); }
  DType dtype() const noexcept { return dtype_; }

  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }
  const std::vector<double>& storage() const noexcept { return values_; }

  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }

  /// Scalar value of a single-element tensor.
  double item() const;

  bool all_finite() const noexcept;

  /// Same values, new shape with equal element count.
  Tensor reshaped(Shape shape) const;
  Tensor as(DType dtype) const;

  /// Rounds stored values to the tensor's dtype (no-op for F64).
  void round_to_dtype() noexcept;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.values_ == b.values_;
  }

 private:
  Shape shape_;
  std::vector<double> values_;
  DType dtype_ = DType::F64;
};

/// Maximum absolute elementwise difference; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);

/// Shape and value bytes identical (distinguishes -0.0 from 0.0).
bool bitwise_equal(const Tensor& a, const Tensor& b);

}  // namespace rawdrift
