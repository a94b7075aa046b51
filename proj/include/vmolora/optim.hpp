// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>

#include "vmolora/matrix.hpp"

namespace vmolora {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct ParamGrad {
  std::string name;
  Matrix* value = nullptr;
  /// Null means the gradient was never populated.
  const Matrix* grad = nullptr;
};

/// Bias-corrected Adam. Moment buffers are keyed by parameter name and
/// created on first update.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  /// Updates exactly the listed parameters; anything not listed is untouched.
  void step(std::span<const ParamGrad> params);

  std::int64_t steps() const { return step_; }
  const AdamConfig& config() const { return config_; }
  const Matrix& first_moment(const std::string& name) const { return moments_.at(name).m; }
  const Matrix& second_moment(const std::string& name) const { return moments_.at(name).v; }

 private:
  struct Moments {
    Matrix m;
    Matrix v;
  };
  AdamConfig config_;
  std::int64_t step_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace vmolora
