#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace vs {

struct GradSuiteEntry {
  std::string block;
  std::size_t trials = 0;
  std::size_t coordinates = 0;
  double max_rel_error = 0.0;
};

// Finite-difference checks of every differentiable block over randomized
// shapes: cross-attention, tri-context, spatio-temporal, 3x3 conv, temporal
// conv, action embedding and both denoisers.
std::vector<GradSuiteEntry> run_gradient_suite(std::uint64_t seed, std::size_t trials_per_block = 20);

}  // namespace vs
