// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "vmolora/config.hpp"
#include "vmolora/grad_check.hpp"

namespace vmolora {

/// Deliberate defects for mutation-testing the oracle suite.
enum class Fault {
  None,
  /// Decompress by repeating each element instead of tiling the whole
  /// concatenation.
  Tiling,
};

Fault parse_fault(const std::string& name);

struct SweepCell {
  std::size_t r_hat = 0;
  std::size_t k = 0;
  std::size_t d = 0;
  /// max |f(M g(x)) - delta_W x| over every trial.
  double max_error = 0.0;
};

/// Compares mora_forward against the materialized matrix for random M and x
/// over r_hat in {2,4,8}, k in {4,8,16}, d in {k, 2k, 3k, k+2}.
std::vector<SweepCell> mora_equivalence_sweep(std::size_t matrices, std::size_t inputs,
                                              std::uint64_t seed, Fault fault = Fault::None);

/// Largest |logit difference| between a freshly built adapted model and the
/// same model with adapter branches skipped, over random prompts.
double zero_init_max_diff(const DecoderConfig& config, const RankVector& lora_ranks,
                          const RankVector& mora_ranks, std::size_t prompts, std::uint64_t seed);

/// Central-difference check of the full-model loss against `probes` random
/// entries of A, B and M spread over the blocks. Adapters are randomized
/// first since B = 0 and M = 0 make most derivatives vanish.
GradCheckResult adapter_grad_check(const DecoderConfig& config, const RankVector& lora_ranks,
                                   const RankVector& mora_ranks, std::size_t probes, double h,
                                   std::uint64_t seed);

struct CheckLine {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct CheckReport {
  std::vector<CheckLine> lines;
  bool passed() const;
};

/// Equivalence sweep, gradient checks and zero-init neutrality for `config`.
CheckReport run_checks(const RunConfig& config, Fault fault = Fault::None);

void print_report(std::ostream& out, const CheckReport& report);

}  // namespace vmolora
