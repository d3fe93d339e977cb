#include "easynlp/optim.hpp"

#include <cmath>

#include "easynlp/errors.hpp"

namespace easynlp {

void zero_grads(const ParameterList& params) {
  for (const auto& p : params) Tensor(p.tensor).zero_grad();
}

void adam_step(const ParameterList& params, AdamState& state) {
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) throw StateError("parameter '" + p.name + "' has no gradient");
  }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor.size(), 0.0);
      state.v.emplace_back(p.tensor.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    throw StateError("optimizer state tracks " + std::to_string(state.m.size()) + " parameters, got " +
                     std::to_string(params.size()));
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor t = params[k].tensor;
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.size() != t.size()) throw StateError("moment size mismatch for '" + params[k].name + "'");
    auto w = t.mutable_data();
    auto g = t.mutable_grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
      g[i] = 0.0;
    }
  }
}

}  // namespace easynlp
