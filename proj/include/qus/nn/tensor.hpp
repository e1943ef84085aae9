#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace qus::nn {

// Dense NCHW tensor of doubles; the whole engine runs in double precision so
// analytic gradients can be checked against central finite differences.
struct Tensor4 {
  std::size_t n = 0, c = 0, h = 0, w = 0;
  std::vector<double> data;

  Tensor4() = default;
  Tensor4(std::size_t n_, std::size_t c_, std::size_t h_, std::size_t w_,
          double fill = 0.0)
      : n(n_), c(c_), h(h_), w(w_), data(n_ * c_ * h_ * w_, fill) {}

  std::size_t size() const { return data.size(); }

  double& at(std::size_t i, std::size_t j, std::size_t y, std::size_t x) {
    return data[((i * c + j) * h + y) * w + x];
  }
  double at(std::size_t i, std::size_t j, std::size_t y, std::size_t x) const {
    return data[((i * c + j) * h + y) * w + x];
  }

  // Contiguous H*W plane for sample i, channel j.
  double* plane(std::size_t i, std::size_t j) {
    return data.data() + (i * c + j) * h * w;
  }
  const double* plane(std::size_t i, std::size_t j) const {
    return data.data() + (i * c + j) * h * w;
  }

  bool same_shape(const Tensor4& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }

  friend bool operator==(const Tensor4&, const Tensor4&) = default;
};

std::string shape_string(const Tensor4& t);

// Throws InvalidInputError when any element is non-finite; used to enforce
// the all-finite invariant after forward/backward passes in tests.
void check_finite(const Tensor4& t, const char* who);

}  // namespace qus::nn
