// SPDX-License-Identifier: Apache-2.0

#include "vmolora/optim.hpp"

#include <cmath>

namespace vmolora {

void Adam::step(std::span<const ParamGrad> params) {
  for (const auto& p : params) {
    if (p.grad == nullptr || p.grad->empty()) {
      throw ContractError("adam: missing gradient for '" + p.name + "'");
    }
    require_same_shape(*p.value, *p.grad, ("adam: " + p.name).c_str());
  }
  ++step_;
  const double t = static_cast<double>(step_);
  const double c1 = 1.0 - std::pow(config_.beta1, t);
  const double c2 = 1.0 - std::pow(config_.beta2, t);
  for (const auto& p : params) {
    auto [it, fresh] = moments_.try_emplace(p.name);
    if (fresh) {
      it->second.m = Matrix(p.value->rows(), p.value->cols());
      it->second.v = Matrix(p.value->rows(), p.value->cols());
    }
    auto m = it->second.m.data();
    auto v = it->second.v.data();
    auto g = p.grad->data();
    auto x = p.value->data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      x[i] -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps);
    }
  }
}

}  // namespace vmolora
