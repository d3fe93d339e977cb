#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "easynlp/tensor.hpp"

namespace easynlp {

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

using ParameterList = std::vector<NamedParameter>;

/// Adam with bias correction. Moment buffers are allocated on the first
/// step and bound to the parameter order of that call.
struct AdamState {
  double lr = 3e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

/// One update over `params`, then zeroes their gradients. Throws StateError
/// naming the first parameter that has no gradient slot.
void adam_step(const ParameterList& params, AdamState& state);

/// Allocates (or resets to zero) every gradient slot.
void zero_grads(const ParameterList& params);

}  // namespace easynlp
