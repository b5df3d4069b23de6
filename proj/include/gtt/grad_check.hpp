#pragma once

#include <functional>
#include <vector>

#include "gtt/tensor.hpp"

namespace gtt {

// Max over coordinates of |analytic - central| / max(1, |analytic|, |central|)
// where central = (f(x + h e_i) - f(x - h e_i)) / 2h. `fn` must return a
// scalar. Throws Error if fn produces NaN.
double grad_check(const std::function<Tensor(const Tensor&)>& fn, const Tensor& x, double h = 1e-6);

// Same measure over a set of parameters that `loss_fn` closes over. The
// parameters are perturbed in place and restored afterwards.
double grad_check_params(const std::function<Tensor()>& loss_fn, std::vector<Tensor> params,
                         double h = 1e-6);

}  // namespace gtt
