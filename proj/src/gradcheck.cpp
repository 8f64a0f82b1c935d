#include "videostudio/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vs {

GradCheckResult finite_diff_check(const std::function<double()>& loss, const std::vector<Tensor*>& inputs,
                                  const std::vector<Tensor>& analytic, double eps) {
  if (inputs.size() != analytic.size()) throw std::invalid_argument("finite_diff_check: input/grad count differs");
  GradCheckResult result;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    Tensor& x = *inputs[t];
    require_same_shape(x, analytic[t], "finite_diff_check");
    for (std::size_t i = 0; i < x.numel(); ++i) {
      const double saved = x[i];
      x[i] = saved + eps;
      const double up = loss();
      x[i] = saved - eps;
      const double down = loss();
      x[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[t][i];
      const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      result.max_rel_error = std::max(result.max_rel_error, err);
      ++result.coordinates;
    }
  }
  return result;
}

GradCheckResult finite_diff_check(const std::function<double()>& loss,
                                  const std::function<void()>& forward_backward,
                                  const std::vector<Parameter*>& params, double eps) {
  zero_grads(params);
  forward_backward();
  std::vector<Tensor*> inputs;
  std::vector<Tensor> analytic;
  for (auto* p : params) {
    inputs.push_back(&p->value);
    analytic.push_back(p->grad);
  }
  return finite_diff_check(loss, inputs, analytic, eps);
}

}  // namespace vs
