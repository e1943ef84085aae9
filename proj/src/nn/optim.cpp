#include "qus/nn/optim.hpp"

#include <cmath>

#include "qus/errors.hpp"

namespace qus::nn {

void adam_step(ParamMap& params, const ParamMap& grads, AdamState& state,
               double lr, double beta1) {
  if (!(lr >= 0.0)) throw ParameterError("adam: lr must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0))
    throw ParameterError("adam: beta1 must lie in [0, 1)");
  state.t += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.t));
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end())
      throw ShapeError("adam: gradient for unknown tensor " + name);
    Tensor4& p = it->second;
    if (!p.same_shape(g))
      throw ShapeError("adam: gradient shape mismatch for " + name);
    std::vector<double>& m = state.m[name];
    std::vector<double>& v = state.v[name];
    if (m.empty()) m.assign(p.size(), 0.0);
    if (v.empty()) v.assign(p.size(), 0.0);
    if (m.size() != p.size() || v.size() != p.size())
      throw ShapeError("adam: stale state for " + name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g.data[i];
      v[i] = kAdamBeta2 * v[i] + (1.0 - kAdamBeta2) * g.data[i] * g.data[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p.data[i] -= lr * mhat / (std::sqrt(vhat) + kAdamEps);
    }
  }
}

}  // namespace qus::nn
