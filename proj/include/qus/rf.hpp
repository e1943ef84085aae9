#pragma once

#include <complex>
#include <optional>
#include <vector>

#include "qus/raster.hpp"

namespace qus {

// One beamformed RF frame. rows = scan lines, cols = axial samples.
struct RfFrame {
  RasterF64 samples;
  double fs = 0.0;  // sampling rate, Hz
  double f0 = 0.0;  // center imaging frequency, Hz
  std::optional<double> line_pitch;  // lateral line spacing, m
  double sound_speed = 1540.0;       // m/s

  std::size_t lines() const { return samples.rows(); }
  std::size_t axial() const { return samples.cols(); }
};

// Throws when the frame violates its invariants: n_lines >= 1, n_axial >= 2,
// fs > 2*f0 (Nyquist), all samples finite, sound_speed > 0.
void validate(const RfFrame& frame);

struct EnvelopeFrame {
  RasterF64 amplitude;  // nonnegative, same dims as the source frame
};

struct BModeImage {
  RasterU8 pixels;
  double dynamic_range_db = 50.0;
};

// x + i*H[x] via the one-sided-spectrum construction: DC and Nyquist bins at
// weight 1, positive frequencies doubled, negative frequencies zeroed.
// |result| is the envelope.
std::vector<std::complex<double>> analytic_signal(
    const std::vector<double>& line);

// Per-scanline magnitude of the analytic signal; dims preserved.
EnvelopeFrame envelope(const RfFrame& frame);

// pixel = round(255 * clamp(20*log10(A/A_max) + dr, 0, dr) / dr) with
// round-half-away-from-zero; A_max is the frame maximum.
BModeImage log_compress(const EnvelopeFrame& env,
                        double dynamic_range_db = 50.0);

}  // namespace qus
