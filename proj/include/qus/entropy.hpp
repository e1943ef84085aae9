#pragma once

#include <cstddef>
#include <optional>
#include <span>

#include "qus/raster.hpp"
#include "qus/rf.hpp"

namespace qus {

// Sliding analysis window over an envelope frame.  Sizes/strides are in
// samples: `axial` along a scan line, `lines` across adjacent lines.
struct WindowSpec {
  std::size_t axial = 100;
  std::size_t lines = 14;
  std::size_t axial_stride = 1;
  std::size_t line_stride = 1;
  std::size_t bins = 64;
};

// Throws ParameterError on zero sizes/strides or bins < 2.
void validate(const WindowSpec& spec);

// Window sized as a multiple of the transmit wavelength.  With
// lambda = sound_speed / f0 and axial sample spacing sound_speed / (2 fs),
// axial = round(n_wavelengths * lambda / spacing) = round(n * 2 * fs / f0).
// The lateral extent is round(n_wavelengths * lambda / line_pitch) when the
// frame carries a line pitch; otherwise `lateral_lines` must be supplied.
// Throws ParameterError when neither source is available.
WindowSpec window_from_wavelengths(
    double n_wavelengths, const RfFrame& frame,
    std::optional<std::size_t> lateral_lines = std::nullopt);

// Shannon entropy (nats) of the binned amplitude distribution:
//   E = -sum_i p_i * ln(p_i / width) = -sum p_i ln p_i + ln(width)
// with `bins` equal-width cells spanning [min, max].  Throws
// DegenerateInputError when all values coincide (zero-width support) and
// InvalidInputError on non-finite input or empty span.
double estimate_entropy(std::span<const double> values, std::size_t bins);

// Parametric map of windowed entropy values plus the geometry needed to
// relate map cells back to frame samples.  values(i, j) is the entropy of
// the window whose top-left frame sample is
// (line = i * line_stride, axial = j * axial_stride).
struct EntropyMap {
  RasterF64 values;
  WindowSpec window;
  // Frame coordinates (line index, axial index) of the center of map cell
  // (0, 0); centers of subsequent cells advance by the strides.
  double line_origin = 0.0;
  double axial_origin = 0.0;

  std::size_t rows() const { return values.rows(); }
  std::size_t cols() const { return values.cols(); }
};

// Slides the window over the envelope and evaluates estimate_entropy per
// position.  Output dims: rows = floor((n_lines - lines) / line_stride) + 1,
// cols = floor((n_axial - axial) / axial_stride) + 1.  Throws SizeError when
// the window does not fit.  Windows with degenerate (constant) content take
// the minimum entropy observed over the non-degenerate windows, keeping the
// map continuous; if every window is degenerate throws DegenerateInputError.
EntropyMap entropy_map(const EnvelopeFrame& env, const WindowSpec& spec);

// Bilinear resize with half-pixel center alignment (the sample at output
// pixel center maps to input coordinates via scale = in/out, clamped at the
// borders).  Throws SizeError on empty input or zero output dims.
RasterF64 resize_bilinear(const RasterF64& in, std::size_t out_rows,
                          std::size_t out_cols);
RasterU8 resize_bilinear(const RasterU8& in, std::size_t out_rows,
                         std::size_t out_cols);

// Nearest-neighbour resize with the same half-pixel convention.
RasterU8 resize_nearest(const RasterU8& in, std::size_t out_rows,
                        std::size_t out_cols);

// Paints the map back onto the frame sample grid: each frame sample takes
// the bilinearly interpolated value of the surrounding window centers
// (clamped outside the center span).
RasterF64 map_to_frame_raster(const EntropyMap& map, std::size_t n_lines,
                              std::size_t n_axial);

}  // namespace qus
