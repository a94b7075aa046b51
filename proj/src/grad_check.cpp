// SPDX-License-Identifier: Apache-2.0

#include "vmolora/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace vmolora {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

GradCheckResult grad_check_probes(std::span<GradProbe> probes,
                                  const std::function<double()>& loss, double h) {
  GradCheckResult result;
  result.numeric.reserve(probes.size());
  for (std::size_t i = 0; i < probes.size(); ++i) {
    GradProbe& p = probes[i];
    double& x = p.target->data()[p.index];
    const double saved = x;
    x = saved + h;
    const double up = loss();
    x = saved - h;
    const double down = loss();
    x = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw ContractError("grad_check: non-finite evaluation at probe " + std::to_string(i));
    }
    const double numeric = (up - down) / (2.0 * h);
    result.numeric.push_back(numeric);
    const double err = relative_error(p.analytic, numeric);
    if (i == 0 || err > result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_probe = i;
    }
  }
  return result;
}

GradCheckResult grad_check(const ScalarFn& f, std::vector<Matrix> point, double h) {
  std::vector<GradProbe> probes;
  {
    Tape tape;
    std::vector<Var> inputs;
    for (std::size_t i = 0; i < point.size(); ++i) {
      inputs.push_back(tape.parameter("p" + std::to_string(i), point[i], true));
    }
    Var out = f(tape, inputs);
    tape.backward(out);
    for (std::size_t i = 0; i < point.size(); ++i) {
      const Matrix& g = tape.gradient("p" + std::to_string(i));
      for (std::size_t j = 0; j < g.size(); ++j) probes.push_back({&point[i], j, g.data()[j]});
    }
  }
  auto evaluate = [&] {
    Tape tape(false);
    std::vector<Var> inputs;
    for (std::size_t i = 0; i < point.size(); ++i) {
      inputs.push_back(tape.parameter("p" + std::to_string(i), point[i], false));
    }
    return f(tape, inputs).value()(0, 0);
  };
  return grad_check_probes(probes, evaluate, h);
}

}  // namespace vmolora
