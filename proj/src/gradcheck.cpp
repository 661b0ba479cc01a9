#include "rawdrift/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "rawdrift/error.hpp"

namespace rawdrift {

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& point,
                        double step) {
  if (!(step > 0.0)) fail(ErrorCode::Config, "finite_diff_grad: step must be positive");
  Tensor grad(point.shape());
  Tensor probe = point.as(DType::F64);
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double x = probe[i];
    probe[i] = x + step;
    const double up = f(probe);
    probe[i] = x - step;
    const double down = f(probe);
    probe[i] = x;
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

double gradient_relative_error(const Tensor& analytic, const Tensor& numeric) {
  if (analytic.shape() != numeric.shape()) {
    fail(ErrorCode::Shape, "gradient_relative_error: shape mismatch");
  }
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  }
  if (scale == 0.0) return 0.0;
  return diff / scale;
}

}  // namespace rawdrift
