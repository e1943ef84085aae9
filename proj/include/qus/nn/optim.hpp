#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "qus/nn/tensor.hpp"

namespace qus::nn {

using ParamMap = std::map<std::string, Tensor4>;

constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

// First/second-moment estimates per tensor plus the shared step counter.
struct AdamState {
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
  std::int64_t t = 0;
};

// One Adam update with bias correction over every tensor present in grads.
// Tensors in params that have no gradient entry are left untouched.  Throws
// ShapeError when a gradient has no matching parameter or the shapes differ.
void adam_step(ParamMap& params, const ParamMap& grads, AdamState& state,
               double lr, double beta1);

}  // namespace qus::nn
