#pragma once

#include <functional>

#include "cil/autodiff.hpp"

namespace cil {

// Builds a scalar on the given tape from a leaf holding the evaluation point.
using ScalarFn = std::function<Var(Tape&, Var)>;

// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
double check_gradients(const ScalarFn& fn, const Tensor& point, double step = 1e-5);

// Analytic gradient of fn at point.
Tensor gradient_at(const ScalarFn& fn, const Tensor& point);

}  // namespace cil
