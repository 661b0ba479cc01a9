#include "rawdrift/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "rawdrift/error.hpp"

namespace rawdrift {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::Config: return "config";
    case ErrorCode::Shape: return "shape";
    case ErrorCode::Domain: return "domain";
    case ErrorCode::Io: return "io";
    case ErrorCode::FormatMagic: return "format.magic";
    case ErrorCode::FormatMaxval: return "format.maxval";
    case ErrorCode::FormatOddDimensions: return "format.odd_dimensions";
    case ErrorCode::FormatTruncated: return "format.truncated";
    case ErrorCode::MissingSidecar: return "format.missing_sidecar";
    case ErrorCode::Sidecar: return "format.sidecar";
    case ErrorCode::Schema: return "schema";
    case ErrorCode::NonFinite: return "non_finite";
    case ErrorCode::Unsupported: return "unsupported";
    case ErrorCode::Checksum: return "checksum";
    case ErrorCode::Network: return "network";
  }
  return "unknown";
}

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, DType dtype)
    : shape_(std::move(shape)), values_(element_count(shape_), 0.0), dtype_(dtype) {}

Tensor::Tensor(Shape shape, std::vector<double> values, DType dtype)
    : shape_(std::move(shape)), values_(std::move(values)), dtype_(dtype) {
  if (values_.size() != element_count(shape_)) {
    fail(ErrorCode::Shape, "tensor shape " + shape_string(shape_) + " does not match " +
                               std::to_string(values_.size()) + " values");
  }
  round_to_dtype();
}

Tensor Tensor::scalar(double value, DType dtype) { return Tensor({}, {value}, dtype); }

Tensor Tensor::filled(Shape shape, double value, DType dtype) {
  Tensor t(std::move(shape), dtype);
  std::fill(t.values_.begin(), t.values_.end(), value);
  t.round_to_dtype();
  return t;
}

Tensor Tensor::from(Shape shape, std::initializer_list<double> values, DType dtype) {
  return Tensor(std::move(shape), std::vector<double>(values), dtype);
}

double Tensor::item() const {
  if (values_.size() != 1) {
    fail(ErrorCode::Shape, "item() on tensor of shape " + shape_string(shape_));
  }
  return values_[0];
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

Tensor Tensor::reshaped(Shape shape) const {
  if (element_count(shape) != values_.size()) {
    fail(ErrorCode::Shape, "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  Tensor t = *this;
  t.shape_ = std::move(shape);
  return t;
}

Tensor Tensor::as(DType dtype) const {
  Tensor t = *this;
  t.dtype_ = dtype;
  t.round_to_dtype();
  return t;
}

void Tensor::round_to_dtype() noexcept {
  if (dtype_ != DType::F32) return;
  for (auto& v : values_) v = static_cast<double>(static_cast<float>(v));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    fail(ErrorCode::Shape, "max_abs_diff shape mismatch " + shape_string(a.shape()) + " vs " +
                               shape_string(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.storage().data(), b.storage().data(), a.size() * sizeof(double)) == 0;
}

}  // namespace rawdrift
