#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "videostudio/rng.hpp"
#include "videostudio/tensor.hpp"

namespace vs {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string name_, Tensor value_, bool trainable_ = true)
      : name(std::move(name_)), value(std::move(value_)), grad(Tensor::zeros_like(value)), trainable(trainable_) {}

  void zero_grad() { grad.fill(0.0); }
};

// Gaussian init with the given std; zero std gives a zero tensor.
Tensor random_normal(Shape shape, Rng& rng, double stddev);

struct AdamWHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// First/second moments per parameter, keyed by position in the parameter list.
struct AdamWState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::int64_t step = 0;
};

// Decoupled weight decay: p -= lr * (mhat / (sqrt(vhat) + eps) + wd * p).
// Frozen parameters are skipped entirely.
void adamw_step(const std::vector<Parameter*>& params, const AdamWHyper& hyper, AdamWState& state);

void zero_grads(const std::vector<Parameter*>& params);

}  // namespace vs
