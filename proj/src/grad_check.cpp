#include "gtt/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "gtt/error.hpp"

namespace gtt {

namespace {

double checked(double v) {
  if (std::isnan(v)) throw Error("grad_check: function returned NaN");
  return v;
}

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

}  // namespace

double grad_check(const std::function<Tensor(const Tensor&)>& fn, const Tensor& x, double h) {
  Tensor probe = x.detach_copy();
  probe.set_requires_grad(true);
  return grad_check_params([&] { return fn(probe); }, {probe}, h);
}

double grad_check_params(const std::function<Tensor()>& loss_fn, std::vector<Tensor> params, double h) {
  for (auto& p : params) p.zero_grad();
  {
    GraphScope scope;
    Tensor loss = loss_fn();
    checked(loss.item());
    if (!scope.graph().empty() && loss.requires_grad()) scope.graph().backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  for (auto& p : params) analytic.push_back(p.grad());

  NoGradGuard no_grad;
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto values = params[k].mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = checked(loss_fn().item());
      values[i] = saved - h;
      const double down = checked(loss_fn().item());
      values[i] = saved;
      worst = std::max(worst, relative_error(analytic[k][i], (up - down) / (2.0 * h)));
    }
  }
  for (auto& p : params) p.zero_grad();
  return worst;
}

}  // namespace gtt
