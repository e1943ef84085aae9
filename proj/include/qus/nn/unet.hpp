#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "qus/nn/optim.hpp"
#include "qus/nn/tensor.hpp"

namespace qus::nn {

// Attention-gated U-Net operating on single-channel inputs.  Encoder level i
// carries base_channels * 2^i filters, each level is two 3x3 "same" convs
// (optionally batch-normalized) with ReLU; levels are joined by 2x2 max
// pooling down and 2x2/stride-2 transposed convs up, with skip features
// passed through attention gates before channel concatenation.  A final 1x1
// conv plus sigmoid yields a per-pixel probability.  An optional matching
// layer (1x1 conv, 1 -> 3 channels, no activation) precedes the encoder for
// pretrained-weight compatibility.
struct NetworkConfig {
  std::size_t depth = 4;
  std::size_t base_channels = 16;
  std::size_t input_h = 224;
  std::size_t input_w = 224;
  bool use_attention = true;
  bool use_matching_layer = true;
  bool use_batchnorm = true;
};

// depth >= 2, base_channels >= 1, dims positive and divisible by 2^depth.
void validate(const NetworkConfig& cfg);

struct UNetCache;  // forward/backward intermediates, defined in the .cpp

class UNet {
 public:
  explicit UNet(const NetworkConfig& cfg);

  const NetworkConfig& config() const { return cfg_; }
  ParamMap& params() { return params_; }
  const ParamMap& params() const { return params_; }

  // He-normal conv weights, zero biases, gamma=1 / beta=0 and unit running
  // variance for batchnorm; deterministic per seed.
  void init_params(std::uint64_t seed);

  // x must be [N, 1, input_h, input_w].  Training mode updates batchnorm
  // running statistics.  Output is [N, 1, input_h, input_w] in (0, 1).
  Tensor4 forward(const Tensor4& x, bool training = false);
  Tensor4 forward_cached(const Tensor4& x, bool training,
                         std::shared_ptr<UNetCache>& cache);

  // Gradients of every trainable tensor given dL/doutput; keys mirror
  // params() minus batchnorm running statistics.
  ParamMap backward(const UNetCache& cache, const Tensor4& dy) const;

  // Batchnorm running statistics are state, not trainable parameters.
  static bool is_trainable(const std::string& name);

 private:
  NetworkConfig cfg_;
  ParamMap params_;
};

}  // namespace qus::nn
