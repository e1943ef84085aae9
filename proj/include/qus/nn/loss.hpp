#pragma once

#include "qus/nn/tensor.hpp"

namespace qus::nn {

// Soft Dice loss, computed per sample and averaged over the batch:
//   L_i = 1 - (2 sum(p*t) + eps) / (sum(p) + sum(t) + eps),   eps = 1
// target must be binary (0/1).  Throws ShapeError on dim mismatch and
// InvalidInputError on non-binary targets.
constexpr double kDiceEps = 1.0;

double dice_loss(const Tensor4& pred, const Tensor4& target);

// dL/dpred of the batch-averaged loss above.
Tensor4 dice_loss_backward(const Tensor4& pred, const Tensor4& target);

}  // namespace qus::nn
