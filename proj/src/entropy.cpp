#include "qus/entropy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "qus/errors.hpp"
#include "qus/parallel.hpp"

namespace qus {

void validate(const WindowSpec& spec) {
  if (spec.axial == 0 || spec.lines == 0)
    throw ParameterError("window sizes must be positive");
  if (spec.axial_stride == 0 || spec.line_stride == 0)
    throw ParameterError("window strides must be positive");
  if (spec.bins < 2) throw ParameterError("histogram needs at least 2 bins");
}

WindowSpec window_from_wavelengths(double n_wavelengths, const RfFrame& frame,
                                   std::optional<std::size_t> lateral_lines) {
  if (!(n_wavelengths > 0.0))
    throw ParameterError("n_wavelengths must be positive");
  validate(frame);
  const double lambda = frame.sound_speed / frame.f0;
  const double spacing = frame.sound_speed / (2.0 * frame.fs);
  const double samples = std::round(n_wavelengths * lambda / spacing);
  if (samples < 1.0) throw ParameterError("window rounds to zero samples");
  WindowSpec spec;
  spec.axial = static_cast<std::size_t>(samples);
  if (frame.line_pitch) {
    const double lines = std::round(n_wavelengths * lambda / *frame.line_pitch);
    if (lines < 1.0) throw ParameterError("window rounds to zero lines");
    spec.lines = static_cast<std::size_t>(lines);
  } else if (lateral_lines) {
    spec.lines = *lateral_lines;
  } else {
    throw ParameterError(
        "frame has no line pitch; supply the lateral window extent");
  }
  validate(spec);
  return spec;
}

namespace {

// Core estimator on values known to be finite with max > min.
double binned_entropy(std::span<const double> values, std::size_t bins,
                      double lo, double hi) {
  const double width = (hi - lo) / static_cast<double>(bins);
  std::vector<std::size_t> counts(bins, 0);
  for (double v : values) {
    auto idx = static_cast<std::size_t>((v - lo) / width);
    if (idx >= bins) idx = bins - 1;
    ++counts[idx];
  }
  const double n = static_cast<double>(values.size());
  double h = 0.0;
  for (std::size_t c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / n;
    h -= p * std::log(p);
  }
  return h + std::log(width);
}

}  // namespace

double estimate_entropy(std::span<const double> values, std::size_t bins) {
  if (bins < 2) throw ParameterError("histogram needs at least 2 bins");
  if (values.empty()) throw InvalidInputError("entropy of empty sample");
  double lo = values[0];
  double hi = values[0];
  for (double v : values) {
    if (!std::isfinite(v))
      throw InvalidInputError("entropy input contains non-finite values");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (!(hi > lo))
    throw DegenerateInputError("entropy of constant sample is undefined");
  return binned_entropy(values, bins, lo, hi);
}

EntropyMap entropy_map(const EnvelopeFrame& env, const WindowSpec& spec) {
  validate(spec);
  const RasterF64& amp = env.amplitude;
  if (amp.empty()) throw SizeError("empty envelope frame");
  const std::size_t n_lines = amp.rows();
  const std::size_t n_axial = amp.cols();
  if (spec.lines > n_lines || spec.axial > n_axial)
    throw SizeError("analysis window exceeds frame dimensions");
  for (double v : amp.storage())
    if (!std::isfinite(v))
      throw InvalidInputError("envelope contains non-finite values");

  const std::size_t out_rows = (n_lines - spec.lines) / spec.line_stride + 1;
  const std::size_t out_cols = (n_axial - spec.axial) / spec.axial_stride + 1;

  EntropyMap map;
  map.values = RasterF64(out_rows, out_cols);
  map.window = spec;
  map.line_origin = static_cast<double>(spec.lines - 1) / 2.0;
  map.axial_origin = static_cast<double>(spec.axial - 1) / 2.0;

  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::size_t> degenerate_per_row(out_rows, 0);

  parallel_for(out_rows, [&](std::size_t i) {
    std::vector<double> window(spec.lines * spec.axial);
    const std::size_t line0 = i * spec.line_stride;
    for (std::size_t j = 0; j < out_cols; ++j) {
      const std::size_t ax0 = j * spec.axial_stride;
      double lo = amp(line0, ax0);
      double hi = lo;
      std::size_t k = 0;
      for (std::size_t l = 0; l < spec.lines; ++l) {
        const double* row = amp.row(line0 + l) + ax0;
        for (std::size_t a = 0; a < spec.axial; ++a) {
          const double v = row[a];
          window[k++] = v;
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
      }
      if (!(hi > lo)) {
        map.values(i, j) = nan;
        ++degenerate_per_row[i];
      } else {
        map.values(i, j) = binned_entropy(window, spec.bins, lo, hi);
      }
    }
  });

  std::size_t degenerate = 0;
  for (std::size_t d : degenerate_per_row) degenerate += d;
  if (degenerate == out_rows * out_cols)
    throw DegenerateInputError("every analysis window is constant");
  if (degenerate > 0) {
    // Constant windows carry no spread; give them the lowest entropy seen
    // elsewhere so the map stays continuous under later normalization.
    double min_seen = std::numeric_limits<double>::infinity();
    for (double v : map.values.storage())
      if (!std::isnan(v)) min_seen = std::min(min_seen, v);
    for (double& v : map.values.storage())
      if (std::isnan(v)) v = min_seen;
  }
  return map;
}

namespace {

struct LerpCoord {
  std::size_t lo;
  std::size_t hi;
  double frac;  // weight of hi
};

LerpCoord source_coord(std::size_t dst, std::size_t out_n, std::size_t in_n) {
  const double scale = static_cast<double>(in_n) / static_cast<double>(out_n);
  double src = (static_cast<double>(dst) + 0.5) * scale - 0.5;
  src = std::clamp(src, 0.0, static_cast<double>(in_n - 1));
  const double f = std::floor(src);
  LerpCoord c;
  c.lo = static_cast<std::size_t>(f);
  c.hi = std::min(c.lo + 1, in_n - 1);
  c.frac = src - f;
  return c;
}

template <typename T, typename Out>
Raster<Out> resize_bilinear_impl(const Raster<T>& in, std::size_t out_rows,
                                 std::size_t out_cols) {
  if (in.empty()) throw SizeError("resize of empty raster");
  if (out_rows == 0 || out_cols == 0)
    throw SizeError("resize to empty raster");
  std::vector<LerpCoord> col_map(out_cols);
  for (std::size_t j = 0; j < out_cols; ++j)
    col_map[j] = source_coord(j, out_cols, in.cols());
  Raster<Out> out(out_rows, out_cols);
  for (std::size_t i = 0; i < out_rows; ++i) {
    const LerpCoord r = source_coord(i, out_rows, in.rows());
    for (std::size_t j = 0; j < out_cols; ++j) {
      const LerpCoord& c = col_map[j];
      const double top = (1.0 - c.frac) * static_cast<double>(in(r.lo, c.lo)) +
                         c.frac * static_cast<double>(in(r.lo, c.hi));
      const double bot = (1.0 - c.frac) * static_cast<double>(in(r.hi, c.lo)) +
                         c.frac * static_cast<double>(in(r.hi, c.hi));
      const double v = (1.0 - r.frac) * top + r.frac * bot;
      if constexpr (std::is_same_v<Out, std::uint8_t>) {
        out(i, j) = static_cast<std::uint8_t>(
            std::clamp(std::round(v), 0.0, 255.0));
      } else {
        out(i, j) = v;
      }
    }
  }
  return out;
}

}  // namespace

RasterF64 resize_bilinear(const RasterF64& in, std::size_t out_rows,
                          std::size_t out_cols) {
  return resize_bilinear_impl<double, double>(in, out_rows, out_cols);
}

RasterU8 resize_bilinear(const RasterU8& in, std::size_t out_rows,
                         std::size_t out_cols) {
  return resize_bilinear_impl<std::uint8_t, std::uint8_t>(in, out_rows,
                                                          out_cols);
}

RasterU8 resize_nearest(const RasterU8& in, std::size_t out_rows,
                        std::size_t out_cols) {
  if (in.empty()) throw SizeError("resize of empty raster");
  if (out_rows == 0 || out_cols == 0)
    throw SizeError("resize to empty raster");
  RasterU8 out(out_rows, out_cols);
  std::vector<std::size_t> col_map(out_cols);
  for (std::size_t j = 0; j < out_cols; ++j) {
    const LerpCoord c = source_coord(j, out_cols, in.cols());
    col_map[j] = c.frac < 0.5 ? c.lo : c.hi;
  }
  for (std::size_t i = 0; i < out_rows; ++i) {
    const LerpCoord r = source_coord(i, out_rows, in.rows());
    const std::size_t ri = r.frac < 0.5 ? r.lo : r.hi;
    for (std::size_t j = 0; j < out_cols; ++j) out(i, j) = in(ri, col_map[j]);
  }
  return out;
}

RasterF64 map_to_frame_raster(const EntropyMap& map, std::size_t n_lines,
                              std::size_t n_axial) {
  if (map.values.empty()) throw SizeError("empty entropy map");
  if (n_lines == 0 || n_axial == 0)
    throw SizeError("target frame must be non-empty");
  const RasterF64& v = map.values;
  RasterF64 out(n_lines, n_axial);
  const auto coord = [](double frame_pos, double origin, std::size_t stride,
                        std::size_t n) {
    double x = (frame_pos - origin) / static_cast<double>(stride);
    x = std::clamp(x, 0.0, static_cast<double>(n - 1));
    const double f = std::floor(x);
    LerpCoord c;
    c.lo = static_cast<std::size_t>(f);
    c.hi = std::min(c.lo + 1, n - 1);
    c.frac = x - f;
    return c;
  };
  std::vector<LerpCoord> col_map(n_axial);
  for (std::size_t a = 0; a < n_axial; ++a)
    col_map[a] = coord(static_cast<double>(a), map.axial_origin,
                       map.window.axial_stride, v.cols());
  for (std::size_t l = 0; l < n_lines; ++l) {
    const LerpCoord r = coord(static_cast<double>(l), map.line_origin,
                              map.window.line_stride, v.rows());
    for (std::size_t a = 0; a < n_axial; ++a) {
      const LerpCoord& c = col_map[a];
      const double top = (1.0 - c.frac) * v(r.lo, c.lo) +
                         c.frac * v(r.lo, c.hi);
      const double bot = (1.0 - c.frac) * v(r.hi, c.lo) +
                         c.frac * v(r.hi, c.hi);
      out(l, a) = (1.0 - r.frac) * top + r.frac * bot;
    }
  }
  return out;
}

}  // namespace qus
