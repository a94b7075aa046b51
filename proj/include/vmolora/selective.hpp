// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string>
#include <vector>

#include "vmolora/model.hpp"

namespace vmolora {

struct ScoredSample {
  std::size_t id = 0;
  std::string reference;
  std::string generated;
  /// Mean per-token entropy in nats.
  double uncertainty = 0.0;
  double rouge_l = 0.0;
  double token_accuracy = 0.0;
};

struct RiskCoveragePoint {
  double coverage = 0.0;
  /// Largest uncertainty among retained samples.
  double threshold = 0.0;
  double value = 0.0;
  std::size_t retained = 0;
};

enum class CurveMetric { RougeL, TokenAccuracy };

/// Arithmetic mean of the trace's per-token entropies.
double answer_uncertainty(const GenerationTrace& trace);

/// True when the sample should be referred, i.e. u > tau.
bool reject(double uncertainty, double tau);

/// Keeps the round(c * N) least uncertain samples (ties by id) for each
/// coverage c of a strictly descending grid in (0, 1] and reports the mean
/// metric on the retained set.
std::vector<RiskCoveragePoint> risk_coverage(std::span<const ScoredSample> samples,
                                             std::span<const double> grid, CurveMetric metric);

/// 1.0, 0.9, ..., 0.5
std::vector<double> default_coverage_grid();

/// Parses "1.0,0.9,0.8".
std::vector<double> parse_grid(const std::string& text);

}  // namespace vmolora
