#pragma once

#include <functional>
#include <vector>

#include "videostudio/optim.hpp"
#include "videostudio/tensor.hpp"

namespace vs {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
};

// Central differences of `loss` w.r.t. every coordinate of `inputs`, compared
// against `analytic` (same order and shapes). Error per coordinate is
// |a - n| / max(1, |a|, |n|); the maximum is returned. Inputs are restored.
GradCheckResult finite_diff_check(const std::function<double()>& loss, const std::vector<Tensor*>& inputs,
                                  const std::vector<Tensor>& analytic, double eps = 1e-5);

// Parameter form: `forward_backward` must run the loss and accumulate into
// each Parameter::grad. Grads are zeroed before the call.
GradCheckResult finite_diff_check(const std::function<double()>& loss,
                                  const std::function<void()>& forward_backward,
                                  const std::vector<Parameter*>& params, double eps = 1e-5);

}  // namespace vs
