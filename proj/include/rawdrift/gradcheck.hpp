#pragma once

#include <functional>

#include "rawdrift/tensor.hpp"

namespace rawdrift {

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every
/// coordinate of `point`.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& point,
                        double step);

/// max_i |a_i - n_i| / max(max_i |a_i|, max_i |n_i|): the worst coordinate
/// error measured against the gradient's own scale. Zero when both vanish.
double gradient_relative_error(const Tensor& analytic, const Tensor& numeric);

}  // namespace rawdrift
