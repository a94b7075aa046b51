// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <span>
#include <vector>

#include "vmolora/tape.hpp"

namespace vmolora {

/// One scalar entry whose analytic derivative is compared against central
/// differences. `target` is perturbed in place and restored afterwards.
struct GradProbe {
  Matrix* target = nullptr;
  std::size_t index = 0;
  double analytic = 0.0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_probe = 0;
  std::vector<double> numeric;
};

/// Relative error with the denominator floored at 1e-8.
double relative_error(double analytic, double numeric);

/// Compares each probe's analytic derivative with (f(x+h) - f(x-h)) / 2h,
/// where `loss` evaluates the scalar at the current parameter values.
/// Throws ContractError on a non-finite evaluation.
GradCheckResult grad_check_probes(std::span<GradProbe> probes,
                                  const std::function<double()>& loss, double h);

/// Function of a list of trainable inputs producing a 1x1 Var.
using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;

/// Checks every entry of every matrix in `point`.
GradCheckResult grad_check(const ScalarFn& f, std::vector<Matrix> point, double h);

}  // namespace vmolora
