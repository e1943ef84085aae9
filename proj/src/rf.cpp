#include "qus/rf.hpp"

#include <cmath>
#include <string>

#include "qus/errors.hpp"
#include "qus/fft.hpp"
#include "qus/parallel.hpp"

namespace qus {

void validate(const RfFrame& frame) {
  if (frame.lines() < 1 || frame.axial() < 2)
    throw SizeError("RfFrame: need n_lines >= 1 and n_axial >= 2, got " +
                    std::to_string(frame.lines()) + "x" +
                    std::to_string(frame.axial()));
  if (!(frame.fs > 0.0) || !(frame.f0 > 0.0))
    throw ParameterError("RfFrame: fs and f0 must be positive");
  if (!(frame.fs > 2.0 * frame.f0))
    throw ParameterError("RfFrame: fs must exceed 2*f0 (Nyquist)");
  if (!(frame.sound_speed > 0.0))
    throw ParameterError("RfFrame: sound_speed must be positive");
  for (const double v : frame.samples.storage())
    if (!std::isfinite(v))
      throw InvalidInputError("RfFrame: non-finite sample value");
}

namespace {

// Core Hilbert step shared by analytic_signal and envelope; the caller owns
// the plan so per-frame work reuses one table set.
void analytic_inplace(std::vector<std::complex<double>>& spec,
                      const FftPlan& plan) {
  const std::size_t n = plan.size();
  plan.forward(spec.data());
  // One-sided spectrum: k=0 and (even n) k=n/2 keep weight 1, positive
  // frequencies are doubled, negative frequencies zeroed.
  const std::size_t half = n / 2;
  for (std::size_t k = 1; k < (n + 1) / 2; ++k) spec[k] *= 2.0;
  for (std::size_t k = half + 1; k < n; ++k) spec[k] = {0.0, 0.0};
  plan.inverse(spec.data());
}

}  // namespace

std::vector<std::complex<double>> analytic_signal(
    const std::vector<double>& line) {
  if (line.size() < 2)
    throw SizeError("analytic_signal: need at least 2 samples");
  for (const double v : line)
    if (!std::isfinite(v))
      throw InvalidInputError("analytic_signal: non-finite sample");
  std::vector<std::complex<double>> spec(line.begin(), line.end());
  FftPlan plan(line.size());
  analytic_inplace(spec, plan);
  return spec;
}

EnvelopeFrame envelope(const RfFrame& frame) {
  validate(frame);
  const std::size_t n = frame.axial();
  FftPlan plan(n);
  EnvelopeFrame out;
  out.amplitude = RasterF64(frame.lines(), n);
  parallel_for(frame.lines(), [&](std::size_t r) {
    std::vector<std::complex<double>> spec(n);
    const double* src = frame.samples.row(r);
    for (std::size_t i = 0; i < n; ++i) spec[i] = {src[i], 0.0};
    analytic_inplace(spec, plan);
    double* dst = out.amplitude.row(r);
    for (std::size_t i = 0; i < n; ++i) dst[i] = std::abs(spec[i]);
  });
  return out;
}

BModeImage log_compress(const EnvelopeFrame& env, double dynamic_range_db) {
  if (env.amplitude.empty()) throw SizeError("log_compress: empty envelope");
  if (!(dynamic_range_db > 0.0))
    throw ParameterError("log_compress: dynamic range must be positive");
  double a_max = 0.0;
  for (const double v : env.amplitude.storage()) {
    if (!std::isfinite(v) || v < 0.0)
      throw InvalidInputError("log_compress: envelope must be finite and >= 0");
    if (v > a_max) a_max = v;
  }
  if (a_max <= 0.0)
    throw DegenerateInputError(
        "log_compress: all-zero envelope has no reference amplitude");

  BModeImage img;
  img.dynamic_range_db = dynamic_range_db;
  img.pixels = RasterU8(env.amplitude.rows(), env.amplitude.cols());
  const double dr = dynamic_range_db;
  for (std::size_t i = 0; i < env.amplitude.size(); ++i) {
    const double a = env.amplitude.storage()[i];
    double db = (a > 0.0) ? 20.0 * std::log10(a / a_max) + dr : 0.0;
    if (db < 0.0) db = 0.0;
    if (db > dr) db = dr;
    double q = std::round(255.0 * db / dr);
    if (q < 0.0) q = 0.0;
    if (q > 255.0) q = 255.0;
    img.pixels.storage()[i] = static_cast<std::uint8_t>(q);
  }
  return img;
}

}  // namespace qus
