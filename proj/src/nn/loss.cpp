#include "qus/nn/loss.hpp"

#include "qus/errors.hpp"

namespace qus::nn {

namespace {

void check_pair(const Tensor4& pred, const Tensor4& target) {
  if (!pred.same_shape(target))
    throw ShapeError("dice loss: prediction " + shape_string(pred) +
                     " vs target " + shape_string(target));
  if (pred.n == 0) throw ShapeError("dice loss: empty batch");
  for (double v : target.data)
    if (v != 0.0 && v != 1.0)
      throw InvalidInputError("dice loss: target must be binary");
}

}  // namespace

double dice_loss(const Tensor4& pred, const Tensor4& target) {
  check_pair(pred, target);
  const std::size_t per = pred.c * pred.h * pred.w;
  double loss = 0.0;
  for (std::size_t n = 0; n < pred.n; ++n) {
    const double* p = pred.data.data() + n * per;
    const double* t = target.data.data() + n * per;
    double inter = 0.0, sum = 0.0;
    for (std::size_t i = 0; i < per; ++i) {
      inter += p[i] * t[i];
      sum += p[i] + t[i];
    }
    loss += 1.0 - (2.0 * inter + kDiceEps) / (sum + kDiceEps);
  }
  return loss / static_cast<double>(pred.n);
}

Tensor4 dice_loss_backward(const Tensor4& pred, const Tensor4& target) {
  check_pair(pred, target);
  const std::size_t per = pred.c * pred.h * pred.w;
  Tensor4 dpred(pred.n, pred.c, pred.h, pred.w);
  const double batch = static_cast<double>(pred.n);
  for (std::size_t n = 0; n < pred.n; ++n) {
    const double* p = pred.data.data() + n * per;
    const double* t = target.data.data() + n * per;
    double* dp = dpred.data.data() + n * per;
    double inter = 0.0, sum = 0.0;
    for (std::size_t i = 0; i < per; ++i) {
      inter += p[i] * t[i];
      sum += p[i] + t[i];
    }
    const double a = 2.0 * inter + kDiceEps;
    const double b = sum + kDiceEps;
    // d/dp_j of (a / b)  =  (2 t_j b - a) / b^2; loss contributes -1/N of it.
    for (std::size_t i = 0; i < per; ++i)
      dp[i] = -(2.0 * t[i] * b - a) / (b * b) / batch;
  }
  return dpred;
}

}  // namespace qus::nn
