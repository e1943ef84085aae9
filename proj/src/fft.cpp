#include "qus/fft.hpp"

#include <cmath>
#include <numbers>

#include "qus/errors.hpp"

namespace qus {

namespace {

bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

std::size_t next_pow2(std::size_t n) {
  std::size_t m = 1;
  while (m < n) m <<= 1;
  return m;
}

}  // namespace

FftPlan::FftPlan(std::size_t n) : n_(n) {
  if (n_ < 1) throw SizeError("FftPlan: size must be >= 1");
  m_ = is_pow2(n_) ? n_ : next_pow2(2 * n_ - 1);

  // Bit-reversal permutation for size m_.
  bitrev_.assign(m_, 0);
  std::size_t log2m = 0;
  while ((std::size_t{1} << log2m) < m_) ++log2m;
  for (std::size_t i = 0; i < m_; ++i) {
    std::size_t r = 0;
    for (std::size_t b = 0; b < log2m; ++b)
      if (i & (std::size_t{1} << b)) r |= std::size_t{1} << (log2m - 1 - b);
    bitrev_[i] = r;
  }

  // Forward twiddles exp(-2*pi*i*j/len) for each stage len = 2,4,...,m_.
  stage_offset_.assign(log2m + 1, 0);
  std::size_t total = 0;
  for (std::size_t s = 1; s <= log2m; ++s) {
    stage_offset_[s] = total;
    total += (std::size_t{1} << s) / 2;
  }
  twiddle_.resize(total);
  for (std::size_t s = 1; s <= log2m; ++s) {
    const std::size_t len = std::size_t{1} << s;
    const double base = -2.0 * std::numbers::pi / static_cast<double>(len);
    for (std::size_t j = 0; j < len / 2; ++j)
      twiddle_[stage_offset_[s] + j] =
          std::polar(1.0, base * static_cast<double>(j));
  }

  if (m_ != n_) {
    // Bluestein: chirp_[k] = exp(-i*pi*k^2/n); k^2 taken mod 2n keeps the
    // angle argument small for precision.
    chirp_.resize(n_);
    const double base = -std::numbers::pi / static_cast<double>(n_);
    for (std::size_t k = 0; k < n_; ++k) {
      const std::size_t q = (k * k) % (2 * n_);
      chirp_[k] = std::polar(1.0, base * static_cast<double>(q));
    }
    // b_j = conj(chirp_[|j|]) wrapped circularly into length m_.
    chirp_fft_.assign(m_, {0.0, 0.0});
    chirp_fft_[0] = std::conj(chirp_[0]);
    for (std::size_t j = 1; j < n_; ++j) {
      chirp_fft_[j] = std::conj(chirp_[j]);
      chirp_fft_[m_ - j] = std::conj(chirp_[j]);
    }
    pow2_forward(chirp_fft_.data());
  }
}

void FftPlan::pow2_forward(std::complex<double>* a) const {
  const std::size_t m = m_;
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t j = bitrev_[i];
    if (i < j) std::swap(a[i], a[j]);
  }
  std::size_t s = 1;
  for (std::size_t len = 2; len <= m; len <<= 1, ++s) {
    const std::size_t half = len / 2;
    const std::complex<double>* tw = twiddle_.data() + stage_offset_[s];
    for (std::size_t i0 = 0; i0 < m; i0 += len) {
      for (std::size_t j = 0; j < half; ++j) {
        const std::complex<double> u = a[i0 + j];
        const std::complex<double> v = a[i0 + j + half] * tw[j];
        a[i0 + j] = u + v;
        a[i0 + j + half] = u - v;
      }
    }
  }
}

void FftPlan::pow2_inverse(std::complex<double>* a) const {
  for (std::size_t i = 0; i < m_; ++i) a[i] = std::conj(a[i]);
  pow2_forward(a);
  const double scale = 1.0 / static_cast<double>(m_);
  for (std::size_t i = 0; i < m_; ++i) a[i] = std::conj(a[i]) * scale;
}

void FftPlan::forward(std::complex<double>* data) const {
  if (m_ == n_) {
    pow2_forward(data);
    return;
  }
  std::vector<std::complex<double>> buf(m_, {0.0, 0.0});
  for (std::size_t j = 0; j < n_; ++j) buf[j] = data[j] * chirp_[j];
  pow2_forward(buf.data());
  for (std::size_t i = 0; i < m_; ++i) buf[i] *= chirp_fft_[i];
  pow2_inverse(buf.data());
  for (std::size_t k = 0; k < n_; ++k) data[k] = chirp_[k] * buf[k];
}

void FftPlan::inverse(std::complex<double>* data) const {
  for (std::size_t i = 0; i < n_; ++i) data[i] = std::conj(data[i]);
  forward(data);
  const double scale = 1.0 / static_cast<double>(n_);
  for (std::size_t i = 0; i < n_; ++i) data[i] = std::conj(data[i]) * scale;
}

}  // namespace qus
