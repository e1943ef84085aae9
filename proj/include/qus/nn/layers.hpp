#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "qus/nn/tensor.hpp"

namespace qus::nn {

// All layers are hand-differentiated.  Forward functions return outputs (and
// caches where needed); backward functions take the upstream gradient dy and
// return gradients with respect to inputs and parameters.  Bias vectors are
// indexed by output channel.

// -- 2-D convolution (cross-correlation), weights [out_c, in_c, kh, kw] -----
Tensor4 conv2d_forward(const Tensor4& x, const Tensor4& w,
                       const std::vector<double>& b, std::size_t stride = 1,
                       std::size_t pad = 0);

struct Conv2dGrads {
  Tensor4 dx;
  Tensor4 dw;
  std::vector<double> db;
};

Conv2dGrads conv2d_backward(const Tensor4& x, const Tensor4& w,
                            const Tensor4& dy, std::size_t stride = 1,
                            std::size_t pad = 0);

// -- transposed convolution, kernel 2x2 / stride 2, weights [in_c, out_c, 2, 2]
// Output spatial dims are exactly doubled.
Tensor4 tconv2x2_forward(const Tensor4& x, const Tensor4& w,
                         const std::vector<double>& b);
Conv2dGrads tconv2x2_backward(const Tensor4& x, const Tensor4& w,
                              const Tensor4& dy);

// -- 2x2 max pooling (stride 2); requires even H and W ----------------------
struct MaxPoolResult {
  Tensor4 y;
  std::vector<std::size_t> argmax;  // flat input index per output element
};

MaxPoolResult maxpool2x2_forward(const Tensor4& x);
Tensor4 maxpool2x2_backward(const Tensor4& dy,
                            const std::vector<std::size_t>& argmax,
                            const Tensor4& x_shape);

// -- batch normalization -----------------------------------------------------
// Per-channel statistics over N*H*W (biased variance), eps = 1e-5.  Training
// mode updates running stats with momentum 0.9 (running keeps 0.9 of its
// value); inference mode normalizes with the running stats.
struct BatchNormCache {
  Tensor4 xhat;
  std::vector<double> mean;
  std::vector<double> inv_std;
};

struct BatchNormGrads {
  Tensor4 dx;
  std::vector<double> dgamma;
  std::vector<double> dbeta;
};

constexpr double kBatchNormEps = 1e-5;
constexpr double kBatchNormMomentum = 0.9;

Tensor4 batchnorm_forward(const Tensor4& x, const std::vector<double>& gamma,
                          const std::vector<double>& beta, bool training,
                          std::vector<double>& running_mean,
                          std::vector<double>& running_var,
                          BatchNormCache* cache = nullptr);

BatchNormGrads batchnorm_backward(const Tensor4& dy,
                                  const std::vector<double>& gamma,
                                  const BatchNormCache& cache);

// -- pointwise activations ---------------------------------------------------
Tensor4 relu_forward(const Tensor4& x);
Tensor4 relu_backward(const Tensor4& x, const Tensor4& dy);

Tensor4 sigmoid_forward(const Tensor4& x);
// Takes the forward *output* y = sigmoid(x).
Tensor4 sigmoid_backward(const Tensor4& y, const Tensor4& dy);

// -- bilinear upsampling (half-pixel centers) --------------------------------
Tensor4 upsample_bilinear_forward(const Tensor4& x, std::size_t out_h,
                                  std::size_t out_w);
// Adjoint of the forward interpolation.
Tensor4 upsample_bilinear_backward(const Tensor4& dy, std::size_t in_h,
                                   std::size_t in_w);

// -- matching layer: learnable 1x1 conv, 1 -> 3 channels, no activation -----
// Throws ShapeError unless x has exactly one channel and w is [3,1,1,1].
Tensor4 matching_forward(const Tensor4& x, const Tensor4& w,
                         const std::vector<double>& b);
Conv2dGrads matching_backward(const Tensor4& x, const Tensor4& w,
                              const Tensor4& dy);

// -- channel concatenation ----------------------------------------------------
Tensor4 concat_channels(const Tensor4& a, const Tensor4& b);
std::pair<Tensor4, Tensor4> split_channels(const Tensor4& dy,
                                           std::size_t c_first);

// -- additive attention gate --------------------------------------------------
// x: skip features [N, xc, H, W]; g: gating features [N, gc, H/2, W/2].
// alpha = sigmoid(psi(relu(theta(x) + phi(g)))) computed at g's resolution,
// upsampled bilinearly to x's, then y = x (*) alpha broadcast over channels.
// theta is a 1x1 stride-2 conv without bias; phi and psi are 1x1 convs with
// bias; psi has a single output channel.
struct AttentionParams {
  Tensor4 theta_w;            // [inter, xc, 1, 1]
  Tensor4 phi_w;              // [inter, gc, 1, 1]
  std::vector<double> phi_b;  // [inter]
  Tensor4 psi_w;              // [1, inter, 1, 1]
  std::vector<double> psi_b;  // [1]
};

struct AttentionCache {
  Tensor4 pre_relu;     // theta(x) + phi(g)
  Tensor4 q;            // relu(pre_relu)
  Tensor4 alpha_small;  // sigmoid(psi(q)), at g resolution
  Tensor4 alpha;        // upsampled to x resolution
};

struct AttentionGrads {
  Tensor4 dx;
  Tensor4 dg;
  Tensor4 dtheta_w;
  Tensor4 dphi_w;
  std::vector<double> dphi_b;
  Tensor4 dpsi_w;
  std::vector<double> dpsi_b;
};

Tensor4 attention_forward(const Tensor4& x, const Tensor4& g,
                          const AttentionParams& p,
                          AttentionCache* cache = nullptr);
AttentionGrads attention_backward(const Tensor4& x, const Tensor4& g,
                                  const AttentionParams& p,
                                  const AttentionCache& cache,
                                  const Tensor4& dy);

}  // namespace qus::nn
