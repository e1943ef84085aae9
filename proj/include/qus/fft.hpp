#pragma once

#include <complex>
#include <cstddef>
#include <vector>

namespace qus {

// Complex DFT plan: iterative radix-2 for power-of-two sizes, Bluestein's
// chirp-z algorithm for everything else. Tables are precomputed once so
// repeated transforms of the same length (one per scan line) stay cheap, and
// the computation is table-driven, hence bit-deterministic.
class FftPlan {
 public:
  explicit FftPlan(std::size_t n);

  std::size_t size() const { return n_; }

  void forward(std::complex<double>* data) const;  // in place, unscaled
  void inverse(std::complex<double>* data) const;  // in place, scaled by 1/n

 private:
  void pow2_forward(std::complex<double>* data) const;  // size m_
  void pow2_inverse(std::complex<double>* data) const;

  std::size_t n_;
  std::size_t m_;  // power-of-two working size (== n_ when n_ is one)
  std::vector<std::size_t> bitrev_;
  std::vector<std::complex<double>> twiddle_;   // per-stage forward twiddles
  std::vector<std::size_t> stage_offset_;       // twiddle offset per stage
  // Bluestein tables; empty when n_ is a power of two.
  std::vector<std::complex<double>> chirp_;      // exp(-i*pi*k^2/n)
  std::vector<std::complex<double>> chirp_fft_;  // DFT of the wrapped inverse chirp
};

}  // namespace qus
