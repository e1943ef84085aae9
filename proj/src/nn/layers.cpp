#include "qus/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "qus/errors.hpp"
#include "qus/parallel.hpp"

namespace qus::nn {

std::string shape_string(const Tensor4& t) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "[%zu,%zu,%zu,%zu]", t.n, t.c, t.h, t.w);
  return buf;
}

void check_finite(const Tensor4& t, const char* who) {
  for (double v : t.data)
    if (!std::isfinite(v))
      throw InvalidInputError(std::string(who) +
                              ": tensor contains non-finite values");
}

namespace {

std::size_t conv_out_dim(std::size_t in, std::size_t k, std::size_t stride,
                         std::size_t pad) {
  if (in + 2 * pad < k)
    throw ShapeError("convolution kernel exceeds padded input");
  return (in + 2 * pad - k) / stride + 1;
}

void check_conv_shapes(const Tensor4& x, const Tensor4& w,
                       const std::vector<double>& b) {
  if (x.size() == 0 || w.size() == 0)
    throw ShapeError("conv2d: empty tensor");
  if (w.c != x.c)
    throw ShapeError("conv2d: weight input channels " + shape_string(w) +
                     " do not match input " + shape_string(x));
  if (b.size() != w.n)
    throw ShapeError("conv2d: bias length does not match output channels");
}

}  // namespace

Tensor4 conv2d_forward(const Tensor4& x, const Tensor4& w,
                       const std::vector<double>& b, std::size_t stride,
                       std::size_t pad) {
  check_conv_shapes(x, w, b);
  if (stride == 0) throw ParameterError("conv2d: stride must be positive");
  const std::size_t oh = conv_out_dim(x.h, w.h, stride, pad);
  const std::size_t ow = conv_out_dim(x.w, w.w, stride, pad);
  Tensor4 y(x.n, w.n, oh, ow);
  const auto ih = static_cast<std::ptrdiff_t>(x.h);
  const auto iw = static_cast<std::ptrdiff_t>(x.w);
  parallel_for(x.n, [&](std::size_t n) {
    for (std::size_t oc = 0; oc < w.n; ++oc) {
      double* yp = y.plane(n, oc);
      std::fill(yp, yp + oh * ow, b[oc]);
      for (std::size_t ic = 0; ic < x.c; ++ic) {
        const double* xp = x.plane(n, ic);
        for (std::size_t ky = 0; ky < w.h; ++ky)
          for (std::size_t kx = 0; kx < w.w; ++kx) {
            const double wv = w.at(oc, ic, ky, kx);
            if (wv == 0.0) continue;
            for (std::size_t oy = 0; oy < oh; ++oy) {
              const std::ptrdiff_t iy =
                  static_cast<std::ptrdiff_t>(oy * stride + ky) -
                  static_cast<std::ptrdiff_t>(pad);
              if (iy < 0 || iy >= ih) continue;
              double* yrow = yp + oy * ow;
              const double* xrow = xp + static_cast<std::size_t>(iy) * x.w;
              for (std::size_t ox = 0; ox < ow; ++ox) {
                const std::ptrdiff_t ix =
                    static_cast<std::ptrdiff_t>(ox * stride + kx) -
                    static_cast<std::ptrdiff_t>(pad);
                if (ix < 0 || ix >= iw) continue;
                yrow[ox] += wv * xrow[ix];
              }
            }
          }
      }
    }
  });
  return y;
}

Conv2dGrads conv2d_backward(const Tensor4& x, const Tensor4& w,
                            const Tensor4& dy, std::size_t stride,
                            std::size_t pad) {
  check_conv_shapes(x, w, std::vector<double>(w.n, 0.0));
  const std::size_t oh = conv_out_dim(x.h, w.h, stride, pad);
  const std::size_t ow = conv_out_dim(x.w, w.w, stride, pad);
  if (dy.n != x.n || dy.c != w.n || dy.h != oh || dy.w != ow)
    throw ShapeError("conv2d backward: upstream gradient has shape " +
                     shape_string(dy));

  Conv2dGrads g;
  g.dx = Tensor4(x.n, x.c, x.h, x.w);
  g.dw = Tensor4(w.n, w.c, w.h, w.w);
  g.db.assign(w.n, 0.0);

  const auto ih = static_cast<std::ptrdiff_t>(x.h);
  const auto iw = static_cast<std::ptrdiff_t>(x.w);

  // dx: each worker owns one sample.
  parallel_for(x.n, [&](std::size_t n) {
    for (std::size_t oc = 0; oc < w.n; ++oc) {
      const double* dyp = dy.plane(n, oc);
      for (std::size_t ic = 0; ic < x.c; ++ic) {
        double* dxp = g.dx.plane(n, ic);
        for (std::size_t ky = 0; ky < w.h; ++ky)
          for (std::size_t kx = 0; kx < w.w; ++kx) {
            const double wv = w.at(oc, ic, ky, kx);
            if (wv == 0.0) continue;
            for (std::size_t oy = 0; oy < oh; ++oy) {
              const std::ptrdiff_t iy =
                  static_cast<std::ptrdiff_t>(oy * stride + ky) -
                  static_cast<std::ptrdiff_t>(pad);
              if (iy < 0 || iy >= ih) continue;
              const double* dyrow = dyp + oy * ow;
              double* dxrow = dxp + static_cast<std::size_t>(iy) * x.w;
              for (std::size_t ox = 0; ox < ow; ++ox) {
                const std::ptrdiff_t ix =
                    static_cast<std::ptrdiff_t>(ox * stride + kx) -
                    static_cast<std::ptrdiff_t>(pad);
                if (ix < 0 || ix >= iw) continue;
                dxrow[ix] += wv * dyrow[ox];
              }
            }
          }
      }
    }
  });

  // dw/db: each worker owns one output channel, accumulating over samples in
  // index order so results do not depend on the worker count.
  parallel_for(w.n, [&](std::size_t oc) {
    for (std::size_t n = 0; n < x.n; ++n) {
      const double* dyp = dy.plane(n, oc);
      for (std::size_t i = 0; i < oh * ow; ++i) g.db[oc] += dyp[i];
      for (std::size_t ic = 0; ic < x.c; ++ic) {
        const double* xp = x.plane(n, ic);
        for (std::size_t ky = 0; ky < w.h; ++ky)
          for (std::size_t kx = 0; kx < w.w; ++kx) {
            double acc = 0.0;
            for (std::size_t oy = 0; oy < oh; ++oy) {
              const std::ptrdiff_t iy =
                  static_cast<std::ptrdiff_t>(oy * stride + ky) -
                  static_cast<std::ptrdiff_t>(pad);
              if (iy < 0 || iy >= ih) continue;
              const double* dyrow = dyp + oy * ow;
              const double* xrow = xp + static_cast<std::size_t>(iy) * x.w;
              for (std::size_t ox = 0; ox < ow; ++ox) {
                const std::ptrdiff_t ix =
                    static_cast<std::ptrdiff_t>(ox * stride + kx) -
                    static_cast<std::ptrdiff_t>(pad);
                if (ix < 0 || ix >= iw) continue;
                acc += xrow[ix] * dyrow[ox];
              }
            }
            g.dw.at(oc, ic, ky, kx) += acc;
          }
      }
    }
  });
  return g;
}

Tensor4 tconv2x2_forward(const Tensor4& x, const Tensor4& w,
                         const std::vector<double>& b) {
  if (w.h != 2 || w.w != 2)
    throw ShapeError("transposed conv kernel must be 2x2");
  if (w.n != x.c)
    throw ShapeError("transposed conv: weight input channels " +
                     shape_string(w) + " do not match input " +
                     shape_string(x));
  if (b.size() != w.c)
    throw ShapeError("transposed conv: bias length mismatch");
  Tensor4 y(x.n, w.c, 2 * x.h, 2 * x.w);
  parallel_for(x.n, [&](std::size_t n) {
    for (std::size_t oc = 0; oc < w.c; ++oc) {
      double* yp = y.plane(n, oc);
      std::fill(yp, yp + y.h * y.w, b[oc]);
      for (std::size_t ic = 0; ic < x.c; ++ic) {
        const double* xp = x.plane(n, ic);
        for (std::size_t ky = 0; ky < 2; ++ky)
          for (std::size_t kx = 0; kx < 2; ++kx) {
            const double wv = w.at(ic, oc, ky, kx);
            for (std::size_t i = 0; i < x.h; ++i) {
              double* yrow = yp + (2 * i + ky) * y.w + kx;
              const double* xrow = xp + i * x.w;
              for (std::size_t j = 0; j < x.w; ++j)
                yrow[2 * j] += wv * xrow[j];
            }
          }
      }
    }
  });
  return y;
}

Conv2dGrads tconv2x2_backward(const Tensor4& x, const Tensor4& w,
                              const Tensor4& dy) {
  if (dy.n != x.n || dy.c != w.c || dy.h != 2 * x.h || dy.w != 2 * x.w)
    throw ShapeError("transposed conv backward: upstream gradient has shape " +
                     shape_string(dy));
  Conv2dGrads g;
  g.dx = Tensor4(x.n, x.c, x.h, x.w);
  g.dw = Tensor4(w.n, w.c, w.h, w.w);
  g.db.assign(w.c, 0.0);

  parallel_for(x.n, [&](std::size_t n) {
    for (std::size_t ic = 0; ic < x.c; ++ic) {
      double* dxp = g.dx.plane(n, ic);
      for (std::size_t oc = 0; oc < w.c; ++oc) {
        const double* dyp = dy.plane(n, oc);
        for (std::size_t ky = 0; ky < 2; ++ky)
          for (std::size_t kx = 0; kx < 2; ++kx) {
            const double wv = w.at(ic, oc, ky, kx);
            for (std::size_t i = 0; i < x.h; ++i) {
              const double* dyrow = dyp + (2 * i + ky) * dy.w + kx;
              double* dxrow = dxp + i * x.w;
              for (std::size_t j = 0; j < x.w; ++j)
                dxrow[j] += wv * dyrow[2 * j];
            }
          }
      }
    }
  });

  // dw: one worker per input channel (disjoint dw slices).
  parallel_for(x.c, [&](std::size_t ic) {
    for (std::size_t n = 0; n < x.n; ++n) {
      const double* xp = x.plane(n, ic);
      for (std::size_t oc = 0; oc < w.c; ++oc) {
        const double* dyp = dy.plane(n, oc);
        for (std::size_t ky = 0; ky < 2; ++ky)
          for (std::size_t kx = 0; kx < 2; ++kx) {
            double acc = 0.0;
            for (std::size_t i = 0; i < x.h; ++i) {
              const double* dyrow = dyp + (2 * i + ky) * dy.w + kx;
              const double* xrow = xp + i * x.w;
              for (std::size_t j = 0; j < x.w; ++j)
                acc += xrow[j] * dyrow[2 * j];
            }
            g.dw.at(ic, oc, ky, kx) += acc;
          }
      }
    }
  });

  for (std::size_t oc = 0; oc < w.c; ++oc)
    for (std::size_t n = 0; n < x.n; ++n) {
      const double* dyp = dy.plane(n, oc);
      for (std::size_t i = 0; i < dy.h * dy.w; ++i) g.db[oc] += dyp[i];
    }
  return g;
}

MaxPoolResult maxpool2x2_forward(const Tensor4& x) {
  if (x.h % 2 != 0 || x.w % 2 != 0)
    throw ShapeError("max pooling needs even spatial dims, got " +
                     shape_string(x));
  MaxPoolResult r;
  r.y = Tensor4(x.n, x.c, x.h / 2, x.w / 2);
  r.argmax.resize(r.y.size());
  parallel_for(x.n, [&](std::size_t n) {
    for (std::size_t c = 0; c < x.c; ++c) {
      const double* xp = x.plane(n, c);
      double* yp = r.y.plane(n, c);
      const std::size_t base = (n * x.c + c) * x.h * x.w;
      const std::size_t obase = (n * x.c + c) * r.y.h * r.y.w;
      for (std::size_t oy = 0; oy < r.y.h; ++oy)
        for (std::size_t ox = 0; ox < r.y.w; ++ox) {
          std::size_t best = (2 * oy) * x.w + 2 * ox;
          double best_v = xp[best];
          const std::size_t cand[3] = {(2 * oy) * x.w + 2 * ox + 1,
                                       (2 * oy + 1) * x.w + 2 * ox,
                                       (2 * oy + 1) * x.w + 2 * ox + 1};
          for (std::size_t k : cand)
            if (xp[k] > best_v) {
              best_v = xp[k];
              best = k;
            }
          yp[oy * r.y.w + ox] = best_v;
          r.argmax[obase + oy * r.y.w + ox] = base + best;
        }
    }
  });
  return r;
}

Tensor4 maxpool2x2_backward(const Tensor4& dy,
                            const std::vector<std::size_t>& argmax,
                            const Tensor4& x_shape) {
  if (argmax.size() != dy.size())
    throw ShapeError("max pooling backward: argmax/gradient size mismatch");
  Tensor4 dx(x_shape.n, x_shape.c, x_shape.h, x_shape.w);
  for (std::size_t i = 0; i < dy.size(); ++i) dx.data[argmax[i]] += dy.data[i];
  return dx;
}

Tensor4 batchnorm_forward(const Tensor4& x, const std::vector<double>& gamma,
                          const std::vector<double>& beta, bool training,
                          std::vector<double>& running_mean,
                          std::vector<double>& running_var,
                          BatchNormCache* cache) {
  if (gamma.size() != x.c || beta.size() != x.c ||
      running_mean.size() != x.c || running_var.size() != x.c)
    throw ShapeError("batchnorm: parameter length does not match channels");
  const std::size_t m = x.n * x.h * x.w;
  Tensor4 y(x.n, x.c, x.h, x.w);
  if (!training) {
    for (std::size_t n = 0; n < x.n; ++n)
      for (std::size_t c = 0; c < x.c; ++c) {
        const double inv = 1.0 / std::sqrt(running_var[c] + kBatchNormEps);
        const double* xp = x.plane(n, c);
        double* yp = y.plane(n, c);
        for (std::size_t i = 0; i < x.h * x.w; ++i)
          yp[i] = gamma[c] * (xp[i] - running_mean[c]) * inv + beta[c];
      }
    return y;
  }
  if (m < 2)
    throw SizeError("batchnorm training mode needs at least 2 values per "
                    "channel");
  if (cache) {
    cache->xhat = Tensor4(x.n, x.c, x.h, x.w);
    cache->mean.assign(x.c, 0.0);
    cache->inv_std.assign(x.c, 0.0);
  }
  const double md = static_cast<double>(m);
  for (std::size_t c = 0; c < x.c; ++c) {
    double mean = 0.0;
    for (std::size_t n = 0; n < x.n; ++n) {
      const double* xp = x.plane(n, c);
      for (std::size_t i = 0; i < x.h * x.w; ++i) mean += xp[i];
    }
    mean /= md;
    double var = 0.0;
    for (std::size_t n = 0; n < x.n; ++n) {
      const double* xp = x.plane(n, c);
      for (std::size_t i = 0; i < x.h * x.w; ++i) {
        const double d = xp[i] - mean;
        var += d * d;
      }
    }
    var /= md;  // biased, matching the normalization actually applied
    const double inv = 1.0 / std::sqrt(var + kBatchNormEps);
    for (std::size_t n = 0; n < x.n; ++n) {
      const double* xp = x.plane(n, c);
      double* yp = y.plane(n, c);
      double* xh = cache ? cache->xhat.plane(n, c) : nullptr;
      for (std::size_t i = 0; i < x.h * x.w; ++i) {
        const double xhat = (xp[i] - mean) * inv;
        if (xh) xh[i] = xhat;
        yp[i] = gamma[c] * xhat + beta[c];
      }
    }
    running_mean[c] =
        kBatchNormMomentum * running_mean[c] + (1.0 - kBatchNormMomentum) * mean;
    running_var[c] =
        kBatchNormMomentum * running_var[c] + (1.0 - kBatchNormMomentum) * var;
    if (cache) {
      cache->mean[c] = mean;
      cache->inv_std[c] = inv;
    }
  }
  return y;
}

BatchNormGrads batchnorm_backward(const Tensor4& dy,
                                  const std::vector<double>& gamma,
                                  const BatchNormCache& cache) {
  if (!dy.same_shape(cache.xhat))
    throw ShapeError("batchnorm backward: gradient shape mismatch");
  const std::size_t m = dy.n * dy.h * dy.w;
  const double md = static_cast<double>(m);
  BatchNormGrads g;
  g.dx = Tensor4(dy.n, dy.c, dy.h, dy.w);
  g.dgamma.assign(dy.c, 0.0);
  g.dbeta.assign(dy.c, 0.0);
  for (std::size_t c = 0; c < dy.c; ++c) {
    double sum_dy = 0.0;
    double sum_dy_xhat = 0.0;
    for (std::size_t n = 0; n < dy.n; ++n) {
      const double* dyp = dy.plane(n, c);
      const double* xh = cache.xhat.plane(n, c);
      for (std::size_t i = 0; i < dy.h * dy.w; ++i) {
        sum_dy += dyp[i];
        sum_dy_xhat += dyp[i] * xh[i];
      }
    }
    g.dbeta[c] = sum_dy;
    g.dgamma[c] = sum_dy_xhat;
    const double k = gamma[c] * cache.inv_std[c] / md;
    for (std::size_t n = 0; n < dy.n; ++n) {
      const double* dyp = dy.plane(n, c);
      const double* xh = cache.xhat.plane(n, c);
      double* dxp = g.dx.plane(n, c);
      for (std::size_t i = 0; i < dy.h * dy.w; ++i)
        dxp[i] = k * (md * dyp[i] - sum_dy - xh[i] * sum_dy_xhat);
    }
  }
  return g;
}

Tensor4 relu_forward(const Tensor4& x) {
  Tensor4 y = x;
  for (double& v : y.data) v = v > 0.0 ? v : 0.0;
  return y;
}

Tensor4 relu_backward(const Tensor4& x, const Tensor4& dy) {
  if (!x.same_shape(dy)) throw ShapeError("relu backward: shape mismatch");
  Tensor4 dx = dy;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x.data[i] <= 0.0) dx.data[i] = 0.0;
  return dx;
}

Tensor4 sigmoid_forward(const Tensor4& x) {
  Tensor4 y = x;
  for (double& v : y.data) v = 1.0 / (1.0 + std::exp(-v));
  return y;
}

Tensor4 sigmoid_backward(const Tensor4& y, const Tensor4& dy) {
  if (!y.same_shape(dy)) throw ShapeError("sigmoid backward: shape mismatch");
  Tensor4 dx = dy;
  for (std::size_t i = 0; i < y.size(); ++i)
    dx.data[i] *= y.data[i] * (1.0 - y.data[i]);
  return dx;
}

namespace {

struct Lerp {
  std::size_t lo;
  std::size_t hi;
  double frac;
};

Lerp lerp_coord(std::size_t dst, std::size_t out_n, std::size_t in_n) {
  const double scale = static_cast<double>(in_n) / static_cast<double>(out_n);
  double src = (static_cast<double>(dst) + 0.5) * scale - 0.5;
  src = std::clamp(src, 0.0, static_cast<double>(in_n - 1));
  const double f = std::floor(src);
  Lerp c;
  c.lo = static_cast<std::size_t>(f);
  c.hi = std::min(c.lo + 1, in_n - 1);
  c.frac = src - f;
  return c;
}

}  // namespace

Tensor4 upsample_bilinear_forward(const Tensor4& x, std::size_t out_h,
                                  std::size_t out_w) {
  if (out_h == 0 || out_w == 0)
    throw ShapeError("upsample target dims must be positive");
  std::vector<Lerp> rows(out_h), cols(out_w);
  for (std::size_t i = 0; i < out_h; ++i) rows[i] = lerp_coord(i, out_h, x.h);
  for (std::size_t j = 0; j < out_w; ++j) cols[j] = lerp_coord(j, out_w, x.w);
  Tensor4 y(x.n, x.c, out_h, out_w);
  parallel_for(x.n, [&](std::size_t n) {
    for (std::size_t c = 0; c < x.c; ++c) {
      const double* xp = x.plane(n, c);
      double* yp = y.plane(n, c);
      for (std::size_t i = 0; i < out_h; ++i) {
        const Lerp& r = rows[i];
        for (std::size_t j = 0; j < out_w; ++j) {
          const Lerp& cc = cols[j];
          const double top = (1.0 - cc.frac) * xp[r.lo * x.w + cc.lo] +
                             cc.frac * xp[r.lo * x.w + cc.hi];
          const double bot = (1.0 - cc.frac) * xp[r.hi * x.w + cc.lo] +
                             cc.frac * xp[r.hi * x.w + cc.hi];
          yp[i * out_w + j] = (1.0 - r.frac) * top + r.frac * bot;
        }
      }
    }
  });
  return y;
}

Tensor4 upsample_bilinear_backward(const Tensor4& dy, std::size_t in_h,
                                   std::size_t in_w) {
  std::vector<Lerp> rows(dy.h), cols(dy.w);
  for (std::size_t i = 0; i < dy.h; ++i) rows[i] = lerp_coord(i, dy.h, in_h);
  for (std::size_t j = 0; j < dy.w; ++j) cols[j] = lerp_coord(j, dy.w, in_w);
  Tensor4 dx(dy.n, dy.c, in_h, in_w);
  parallel_for(dy.n, [&](std::size_t n) {
    for (std::size_t c = 0; c < dy.c; ++c) {
      const double* dyp = dy.plane(n, c);
      double* dxp = dx.plane(n, c);
      for (std::size_t i = 0; i < dy.h; ++i) {
        const Lerp& r = rows[i];
        for (std::size_t j = 0; j < dy.w; ++j) {
          const Lerp& cc = cols[j];
          const double g = dyp[i * dy.w + j];
          dxp[r.lo * in_w + cc.lo] += (1.0 - r.frac) * (1.0 - cc.frac) * g;
          dxp[r.lo * in_w + cc.hi] += (1.0 - r.frac) * cc.frac * g;
          dxp[r.hi * in_w + cc.lo] += r.frac * (1.0 - cc.frac) * g;
          dxp[r.hi * in_w + cc.hi] += r.frac * cc.frac * g;
        }
      }
    }
  });
  return dx;
}

Tensor4 matching_forward(const Tensor4& x, const Tensor4& w,
                         const std::vector<double>& b) {
  if (x.c != 1)
    throw ShapeError("matching layer expects a single input channel, got " +
                     shape_string(x));
  if (w.n != 3 || w.c != 1 || w.h != 1 || w.w != 1)
    throw ShapeError("matching layer weights must be [3,1,1,1]");
  return conv2d_forward(x, w, b, 1, 0);
}

Conv2dGrads matching_backward(const Tensor4& x, const Tensor4& w,
                              const Tensor4& dy) {
  if (x.c != 1 || w.n != 3 || w.c != 1 || w.h != 1 || w.w != 1)
    throw ShapeError("matching layer backward: bad shapes");
  return conv2d_backward(x, w, dy, 1, 0);
}

Tensor4 concat_channels(const Tensor4& a, const Tensor4& b) {
  if (a.n != b.n || a.h != b.h || a.w != b.w)
    throw ShapeError("concat: " + shape_string(a) + " vs " + shape_string(b));
  Tensor4 y(a.n, a.c + b.c, a.h, a.w);
  for (std::size_t n = 0; n < a.n; ++n) {
    for (std::size_t c = 0; c < a.c; ++c)
      std::copy(a.plane(n, c), a.plane(n, c) + a.h * a.w, y.plane(n, c));
    for (std::size_t c = 0; c < b.c; ++c)
      std::copy(b.plane(n, c), b.plane(n, c) + b.h * b.w,
                y.plane(n, a.c + c));
  }
  return y;
}

std::pair<Tensor4, Tensor4> split_channels(const Tensor4& dy,
                                           std::size_t c_first) {
  if (c_first == 0 || c_first >= dy.c)
    throw ShapeError("split: channel cut outside tensor");
  Tensor4 da(dy.n, c_first, dy.h, dy.w);
  Tensor4 db(dy.n, dy.c - c_first, dy.h, dy.w);
  for (std::size_t n = 0; n < dy.n; ++n) {
    for (std::size_t c = 0; c < c_first; ++c)
      std::copy(dy.plane(n, c), dy.plane(n, c) + dy.h * dy.w, da.plane(n, c));
    for (std::size_t c = c_first; c < dy.c; ++c)
      std::copy(dy.plane(n, c), dy.plane(n, c) + dy.h * dy.w,
                db.plane(n, c - c_first));
  }
  return {std::move(da), std::move(db)};
}

namespace {

void check_attention_shapes(const Tensor4& x, const Tensor4& g,
                            const AttentionParams& p) {
  if (x.n != g.n || x.h != 2 * g.h || x.w != 2 * g.w)
    throw ShapeError("attention gate: skip " + shape_string(x) +
                     " must be one level above gate " + shape_string(g));
  if (p.theta_w.c != x.c || p.theta_w.h != 1 || p.theta_w.w != 1)
    throw ShapeError("attention gate: theta weights mismatch");
  if (p.phi_w.c != g.c || p.phi_w.n != p.theta_w.n || p.phi_w.h != 1 ||
      p.phi_w.w != 1)
    throw ShapeError("attention gate: phi weights mismatch");
  if (p.psi_w.n != 1 || p.psi_w.c != p.theta_w.n || p.psi_w.h != 1 ||
      p.psi_w.w != 1)
    throw ShapeError("attention gate: psi weights mismatch");
  if (p.phi_b.size() != p.phi_w.n || p.psi_b.size() != 1)
    throw ShapeError("attention gate: bias length mismatch");
}

}  // namespace

Tensor4 attention_forward(const Tensor4& x, const Tensor4& g,
                          const AttentionParams& p, AttentionCache* cache) {
  check_attention_shapes(x, g, p);
  const std::vector<double> no_bias(p.theta_w.n, 0.0);
  Tensor4 pre = conv2d_forward(x, p.theta_w, no_bias, 2, 0);
  const Tensor4 phig = conv2d_forward(g, p.phi_w, p.phi_b, 1, 0);
  for (std::size_t i = 0; i < pre.size(); ++i) pre.data[i] += phig.data[i];
  Tensor4 q = relu_forward(pre);
  Tensor4 alpha_small =
      sigmoid_forward(conv2d_forward(q, p.psi_w, p.psi_b, 1, 0));
  Tensor4 alpha = upsample_bilinear_forward(alpha_small, x.h, x.w);
  Tensor4 y(x.n, x.c, x.h, x.w);
  for (std::size_t n = 0; n < x.n; ++n) {
    const double* ap = alpha.plane(n, 0);
    for (std::size_t c = 0; c < x.c; ++c) {
      const double* xp = x.plane(n, c);
      double* yp = y.plane(n, c);
      for (std::size_t i = 0; i < x.h * x.w; ++i) yp[i] = xp[i] * ap[i];
    }
  }
  if (cache) {
    cache->pre_relu = std::move(pre);
    cache->q = std::move(q);
    cache->alpha_small = std::move(alpha_small);
    cache->alpha = std::move(alpha);
  }
  return y;
}

AttentionGrads attention_backward(const Tensor4& x, const Tensor4& g,
                                  const AttentionParams& p,
                                  const AttentionCache& cache,
                                  const Tensor4& dy) {
  check_attention_shapes(x, g, p);
  if (!dy.same_shape(x))
    throw ShapeError("attention backward: gradient shape mismatch");

  AttentionGrads out;
  out.dx = Tensor4(x.n, x.c, x.h, x.w);
  Tensor4 dalpha(x.n, 1, x.h, x.w);
  for (std::size_t n = 0; n < x.n; ++n) {
    const double* ap = cache.alpha.plane(n, 0);
    double* dap = dalpha.plane(n, 0);
    for (std::size_t c = 0; c < x.c; ++c) {
      const double* xp = x.plane(n, c);
      const double* dyp = dy.plane(n, c);
      double* dxp = out.dx.plane(n, c);
      for (std::size_t i = 0; i < x.h * x.w; ++i) {
        dxp[i] = dyp[i] * ap[i];
        dap[i] += dyp[i] * xp[i];
      }
    }
  }

  const Tensor4 dalpha_small = upsample_bilinear_backward(dalpha, g.h, g.w);
  Tensor4 ds = sigmoid_backward(cache.alpha_small, dalpha_small);
  const Conv2dGrads psi = conv2d_backward(cache.q, p.psi_w, ds, 1, 0);
  const Tensor4 dpre = relu_backward(cache.pre_relu, psi.dx);
  const Conv2dGrads theta = conv2d_backward(x, p.theta_w, dpre, 2, 0);
  const Conv2dGrads phi = conv2d_backward(g, p.phi_w, dpre, 1, 0);

  for (std::size_t i = 0; i < out.dx.size(); ++i)
    out.dx.data[i] += theta.dx.data[i];
  out.dg = phi.dx;
  out.dtheta_w = theta.dw;
  out.dphi_w = phi.dw;
  out.dphi_b = phi.db;
  out.dpsi_w = psi.dw;
  out.dpsi_b = psi.db;
  return out;
}

}  // namespace qus::nn
