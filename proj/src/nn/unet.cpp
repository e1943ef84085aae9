#include "qus/nn/unet.hpp"

#include <cmath>
#include <random>

#include "qus/errors.hpp"
#include "qus/nn/layers.hpp"
#include "qus/rng.hpp"

namespace qus::nn {

void validate(const NetworkConfig& cfg) {
  if (cfg.depth < 2) throw ParameterError("network depth must be >= 2");
  if (cfg.base_channels < 1)
    throw ParameterError("base_channels must be >= 1");
  const std::size_t factor = std::size_t{1} << cfg.depth;
  if (cfg.input_h == 0 || cfg.input_w == 0 || cfg.input_h % factor != 0 ||
      cfg.input_w % factor != 0)
    throw ParameterError(
        "input dims must be positive and divisible by 2^depth");
}

namespace {

const Tensor4& P(const ParamMap& m, const std::string& name) {
  auto it = m.find(name);
  if (it == m.end())
    throw ParameterError("missing parameter tensor " + name);
  return it->second;
}

Tensor4& P(ParamMap& m, const std::string& name) {
  auto it = m.find(name);
  if (it == m.end())
    throw ParameterError("missing parameter tensor " + name);
  return it->second;
}

Tensor4 channel_vector(std::vector<double> v) {
  Tensor4 t(v.size(), 1, 1, 1);
  t.data = std::move(v);
  return t;
}

std::string enc_name(std::size_t i) { return "enc" + std::to_string(i); }
std::string dec_name(std::size_t i) { return "dec" + std::to_string(i); }

struct BlockCache {
  Tensor4 x_in;
  Tensor4 pre1;
  BatchNormCache bn1;
  Tensor4 act_in1;
  Tensor4 mid;
  Tensor4 pre2;
  BatchNormCache bn2;
  Tensor4 act_in2;
  Tensor4 out;
};

Tensor4 conv_block_forward(ParamMap& params, const std::string& prefix,
                           const Tensor4& x, bool use_bn, bool training,
                           BlockCache* cache) {
  Tensor4 pre1 = conv2d_forward(x, P(params, prefix + ".conv1.w"),
                                P(params, prefix + ".conv1.b").data, 1, 1);
  Tensor4 act_in1 =
      use_bn ? batchnorm_forward(pre1, P(params, prefix + ".bn1.gamma").data,
                                 P(params, prefix + ".bn1.beta").data,
                                 training,
                                 P(params, prefix + ".bn1.running_mean").data,
                                 P(params, prefix + ".bn1.running_var").data,
                                 cache ? &cache->bn1 : nullptr)
             : pre1;
  Tensor4 mid = relu_forward(act_in1);
  Tensor4 pre2 = conv2d_forward(mid, P(params, prefix + ".conv2.w"),
                                P(params, prefix + ".conv2.b").data, 1, 1);
  Tensor4 act_in2 =
      use_bn ? batchnorm_forward(pre2, P(params, prefix + ".bn2.gamma").data,
                                 P(params, prefix + ".bn2.beta").data,
                                 training,
                                 P(params, prefix + ".bn2.running_mean").data,
                                 P(params, prefix + ".bn2.running_var").data,
                                 cache ? &cache->bn2 : nullptr)
             : pre2;
  Tensor4 out = relu_forward(act_in2);
  if (cache) {
    cache->x_in = x;
    cache->pre1 = std::move(pre1);
    cache->act_in1 = std::move(act_in1);
    cache->mid = std::move(mid);
    cache->pre2 = std::move(pre2);
    cache->act_in2 = std::move(act_in2);
    cache->out = out;
  }
  return out;
}

Tensor4 conv_block_backward(const ParamMap& params, const std::string& prefix,
                            const BlockCache& cache, const Tensor4& dout,
                            bool use_bn, ParamMap& grads) {
  Tensor4 d_act2 = relu_backward(cache.act_in2, dout);
  Tensor4 d_pre2;
  if (use_bn) {
    BatchNormGrads g = batchnorm_backward(
        d_act2, P(params, prefix + ".bn2.gamma").data, cache.bn2);
    grads[prefix + ".bn2.gamma"] = channel_vector(std::move(g.dgamma));
    grads[prefix + ".bn2.beta"] = channel_vector(std::move(g.dbeta));
    d_pre2 = std::move(g.dx);
  } else {
    d_pre2 = std::move(d_act2);
  }
  Conv2dGrads c2 = conv2d_backward(cache.mid, P(params, prefix + ".conv2.w"),
                                   d_pre2, 1, 1);
  grads[prefix + ".conv2.w"] = std::move(c2.dw);
  grads[prefix + ".conv2.b"] = channel_vector(std::move(c2.db));
  Tensor4 d_act1 = relu_backward(cache.act_in1, c2.dx);
  Tensor4 d_pre1;
  if (use_bn) {
    BatchNormGrads g = batchnorm_backward(
        d_act1, P(params, prefix + ".bn1.gamma").data, cache.bn1);
    grads[prefix + ".bn1.gamma"] = channel_vector(std::move(g.dgamma));
    grads[prefix + ".bn1.beta"] = channel_vector(std::move(g.dbeta));
    d_pre1 = std::move(g.dx);
  } else {
    d_pre1 = std::move(d_act1);
  }
  Conv2dGrads c1 = conv2d_backward(cache.x_in, P(params, prefix + ".conv1.w"),
                                   d_pre1, 1, 1);
  grads[prefix + ".conv1.w"] = std::move(c1.dw);
  grads[prefix + ".conv1.b"] = channel_vector(std::move(c1.db));
  return std::move(c1.dx);
}

AttentionParams gate_params(const ParamMap& m, const std::string& prefix) {
  AttentionParams p;
  p.theta_w = P(m, prefix + ".att.theta.w");
  p.phi_w = P(m, prefix + ".att.phi.w");
  p.phi_b = P(m, prefix + ".att.phi.b").data;
  p.psi_w = P(m, prefix + ".att.psi.w");
  p.psi_b = P(m, prefix + ".att.psi.b").data;
  return p;
}

}  // namespace

struct UNetCache {
  struct Level {
    BlockCache enc;
    std::vector<std::size_t> pool_argmax;
    Tensor4 g;  // gating feature = decoder input before upsampling
    AttentionCache att;
    BlockCache dec;
  };
  Tensor4 x_in;  // network input (matching-layer input)
  std::vector<Level> levels;
  BlockCache bott;
  Tensor4 y;  // final sigmoid output
};

UNet::UNet(const NetworkConfig& cfg) : cfg_(cfg) {
  validate(cfg_);
  const std::size_t in0 = cfg_.use_matching_layer ? 3 : 1;
  auto channels = [&](std::size_t level) {
    return cfg_.base_channels << level;
  };
  auto add = [&](const std::string& name, std::size_t n, std::size_t c,
                 std::size_t h, std::size_t w) {
    params_[name] = Tensor4(n, c, h, w);
  };
  auto add_block = [&](const std::string& prefix, std::size_t in_c,
                       std::size_t out_c) {
    add(prefix + ".conv1.w", out_c, in_c, 3, 3);
    add(prefix + ".conv1.b", out_c, 1, 1, 1);
    add(prefix + ".conv2.w", out_c, out_c, 3, 3);
    add(prefix + ".conv2.b", out_c, 1, 1, 1);
    if (cfg_.use_batchnorm)
      for (const char* bn : {".bn1", ".bn2"}) {
        add(prefix + bn + ".gamma", out_c, 1, 1, 1);
        add(prefix + bn + ".beta", out_c, 1, 1, 1);
        add(prefix + bn + ".running_mean", out_c, 1, 1, 1);
        add(prefix + bn + ".running_var", out_c, 1, 1, 1);
      }
  };

  if (cfg_.use_matching_layer) {
    add("match.w", 3, 1, 1, 1);
    add("match.b", 3, 1, 1, 1);
  }
  for (std::size_t i = 0; i < cfg_.depth; ++i)
    add_block(enc_name(i), i == 0 ? in0 : channels(i - 1), channels(i));
  add_block("bott", channels(cfg_.depth - 1), channels(cfg_.depth));
  for (std::size_t i = 0; i < cfg_.depth; ++i) {
    const std::size_t skip_c = channels(i);
    const std::size_t deep_c = channels(i + 1);
    const std::string prefix = dec_name(i);
    add(prefix + ".up.w", deep_c, skip_c, 2, 2);
    add(prefix + ".up.b", skip_c, 1, 1, 1);
    if (cfg_.use_attention) {
      const std::size_t inter = std::max<std::size_t>(1, skip_c / 2);
      add(prefix + ".att.theta.w", inter, skip_c, 1, 1);
      add(prefix + ".att.phi.w", inter, deep_c, 1, 1);
      add(prefix + ".att.phi.b", inter, 1, 1, 1);
      add(prefix + ".att.psi.w", 1, inter, 1, 1);
      add(prefix + ".att.psi.b", 1, 1, 1, 1);
    }
    add_block(prefix, 2 * skip_c, skip_c);
  }
  add("out.w", 1, channels(0), 1, 1);
  add("out.b", 1, 1, 1, 1);
}

bool UNet::is_trainable(const std::string& name) {
  return name.find(".running_") == std::string::npos;
}

void UNet::init_params(std::uint64_t seed) {
  std::mt19937_64 rng(splitmix64(seed ^ 0x9c0ffee1ULL));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& [name, t] : params_) {
    const bool is_weight = name.size() > 2 &&
                           name.compare(name.size() - 2, 2, ".w") == 0;
    if (is_weight) {
      // He-normal over the fan-in; transposed-conv weights are laid out
      // [in_c, out_c, kh, kw], everything else [out_c, in_c, kh, kw].
      const bool transposed = name.find(".up.w") != std::string::npos;
      const double fan_in = static_cast<double>(
          (transposed ? t.n : t.c) * t.h * t.w);
      const double std_dev = std::sqrt(2.0 / fan_in);
      for (double& v : t.data) v = std_dev * normal(rng);
    } else if (name.ends_with(".gamma") || name.ends_with(".running_var")) {
      for (double& v : t.data) v = 1.0;
    } else {
      for (double& v : t.data) v = 0.0;
    }
  }
}

namespace {

Tensor4 run_forward(ParamMap& params, const NetworkConfig& cfg,
                    const Tensor4& x, bool training, UNetCache* cache) {
  if (x.n < 1 || x.c != 1 || x.h != cfg.input_h || x.w != cfg.input_w)
    throw ShapeError("network input must be [N,1," +
                     std::to_string(cfg.input_h) + "," +
                     std::to_string(cfg.input_w) + "], got " +
                     shape_string(x));
  if (cache) {
    cache->levels.resize(cfg.depth);
    cache->x_in = x;
  }

  Tensor4 a = cfg.use_matching_layer
                  ? matching_forward(x, P(params, "match.w"),
                                     P(params, "match.b").data)
                  : x;
  std::vector<Tensor4> skips(cfg.depth);
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    a = conv_block_forward(params, enc_name(i), a, cfg.use_batchnorm,
                           training, cache ? &cache->levels[i].enc : nullptr);
    skips[i] = a;
    MaxPoolResult pool = maxpool2x2_forward(a);
    if (cache) cache->levels[i].pool_argmax = std::move(pool.argmax);
    a = std::move(pool.y);
  }
  a = conv_block_forward(params, "bott", a, cfg.use_batchnorm, training,
                         cache ? &cache->bott : nullptr);
  for (std::size_t ii = cfg.depth; ii-- > 0;) {
    const std::string prefix = dec_name(ii);
    if (cache) cache->levels[ii].g = a;
    Tensor4 up = tconv2x2_forward(a, P(params, prefix + ".up.w"),
                                  P(params, prefix + ".up.b").data);
    Tensor4 skip = std::move(skips[ii]);
    if (cfg.use_attention)
      skip = attention_forward(skip, a, gate_params(params, prefix),
                               cache ? &cache->levels[ii].att : nullptr);
    a = conv_block_forward(params, prefix, concat_channels(skip, up),
                           cfg.use_batchnorm, training,
                           cache ? &cache->levels[ii].dec : nullptr);
  }
  Tensor4 y = sigmoid_forward(
      conv2d_forward(a, P(params, "out.w"), P(params, "out.b").data, 1, 0));
  if (cache) cache->y = y;
  return y;
}

}  // namespace

Tensor4 UNet::forward(const Tensor4& x, bool training) {
  return run_forward(params_, cfg_, x, training, nullptr);
}

Tensor4 UNet::forward_cached(const Tensor4& x, bool training,
                             std::shared_ptr<UNetCache>& cache) {
  cache = std::make_shared<UNetCache>();
  return run_forward(params_, cfg_, x, training, cache.get());
}

ParamMap UNet::backward(const UNetCache& cache, const Tensor4& dy) const {
  if (cache.levels.size() != cfg_.depth || cache.y.size() == 0)
    throw ParameterError("backward needs a cache from forward_cached");
  ParamMap grads;
  // ParamMap is const here; P(const&) returns const refs for reads.
  const ParamMap& params = params_;

  Tensor4 d_pre_out = sigmoid_backward(cache.y, dy);
  const BlockCache& dec0 = cache.levels[0].dec;
  Conv2dGrads out_conv =
      conv2d_backward(dec0.out, P(params, "out.w"), d_pre_out, 1, 0);
  grads["out.w"] = std::move(out_conv.dw);
  grads["out.b"] = channel_vector(std::move(out_conv.db));
  Tensor4 d_a = std::move(out_conv.dx);

  std::vector<Tensor4> skip_grads(cfg_.depth);
  for (std::size_t i = 0; i < cfg_.depth; ++i) {
    const std::string prefix = dec_name(i);
    const UNetCache::Level& level = cache.levels[i];
    const std::size_t skip_c = level.enc.out.c;
    Tensor4 d_cat = conv_block_backward(params, prefix, level.dec, d_a,
                                        cfg_.use_batchnorm, grads);
    auto [d_skip_gated, d_up] = split_channels(d_cat, skip_c);
    Conv2dGrads up =
        tconv2x2_backward(level.g, P(params, prefix + ".up.w"), d_up);
    grads[prefix + ".up.w"] = std::move(up.dw);
    grads[prefix + ".up.b"] = channel_vector(std::move(up.db));
    Tensor4 d_g = std::move(up.dx);
    if (cfg_.use_attention) {
      AttentionGrads att = attention_backward(
          level.enc.out, level.g, gate_params(params, prefix), level.att,
          d_skip_gated);
      skip_grads[i] = std::move(att.dx);
      for (std::size_t k = 0; k < d_g.size(); ++k)
        d_g.data[k] += att.dg.data[k];
      grads[prefix + ".att.theta.w"] = std::move(att.dtheta_w);
      grads[prefix + ".att.phi.w"] = std::move(att.dphi_w);
      grads[prefix + ".att.phi.b"] = channel_vector(std::move(att.dphi_b));
      grads[prefix + ".att.psi.w"] = std::move(att.dpsi_w);
      grads[prefix + ".att.psi.b"] = channel_vector(std::move(att.dpsi_b));
    } else {
      skip_grads[i] = std::move(d_skip_gated);
    }
    d_a = std::move(d_g);
  }

  d_a = conv_block_backward(params, "bott", cache.bott, d_a,
                            cfg_.use_batchnorm, grads);

  for (std::size_t ii = cfg_.depth; ii-- > 0;) {
    const UNetCache::Level& level = cache.levels[ii];
    Tensor4 d_enc_out =
        maxpool2x2_backward(d_a, level.pool_argmax, level.enc.out);
    for (std::size_t k = 0; k < d_enc_out.size(); ++k)
      d_enc_out.data[k] += skip_grads[ii].data[k];
    d_a = conv_block_backward(params, enc_name(ii), level.enc, d_enc_out,
                              cfg_.use_batchnorm, grads);
  }

  if (cfg_.use_matching_layer) {
    Conv2dGrads match =
        matching_backward(cache.x_in, P(params, "match.w"), d_a);
    grads["match.w"] = std::move(match.dw);
    grads["match.b"] = channel_vector(std::move(match.db));
  }
  return grads;
}

}  // namespace qus::nn
