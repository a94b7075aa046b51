// SPDX-License-Identifier: Apache-2.0

#include "vmolora/selective.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace vmolora {

double answer_uncertainty(const GenerationTrace& trace) {
  if (trace.entropies.empty()) throw ContractError("answer_uncertainty: empty generation");
  double total = 0.0;
  for (double h : trace.entropies) total += h;
  return total / static_cast<double>(trace.entropies.size());
}

bool reject(double uncertainty, double tau) {
  if (tau < 0.0) throw ContractError("reject: negative threshold");
  return uncertainty > tau;
}

std::vector<RiskCoveragePoint> risk_coverage(std::span<const ScoredSample> samples,
                                             std::span<const double> grid, CurveMetric metric) {
  if (grid.empty()) throw ContractError("risk_coverage: empty coverage grid");
  if (samples.empty()) throw ContractError("risk_coverage: no samples");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] > 0.0 && grid[i] <= 1.0)) {
      throw ContractError("risk_coverage: coverage " + std::to_string(grid[i]) +
                          " outside (0, 1]");
    }
    if (i > 0 && grid[i] >= grid[i - 1]) {
      throw ContractError("risk_coverage: grid must be strictly descending");
    }
  }
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (const auto& s : samples) {
    if (s.uncertainty < 0.0) throw ContractError("risk_coverage: negative uncertainty");
  }
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const ScoredSample& x = samples[a];
    const ScoredSample& y = samples[b];
    if (x.uncertainty != y.uncertainty) return x.uncertainty < y.uncertainty;
    return x.id < y.id;
  });

  const auto n = static_cast<double>(samples.size());
  std::vector<RiskCoveragePoint> curve;
  curve.reserve(grid.size());
  std::vector<bool> kept(samples.size());
  for (double c : grid) {
    const auto keep = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(c * n)));
    std::fill(kept.begin(), kept.end(), false);
    for (std::size_t i = 0; i < keep; ++i) kept[order[i]] = true;
    // Sum in input order so full coverage reproduces the plain mean bit for bit.
    double total = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (!kept[i]) continue;
      total += metric == CurveMetric::RougeL ? samples[i].rouge_l : samples[i].token_accuracy;
    }
    curve.push_back(
        {c, samples[order[keep - 1]].uncertainty, total / static_cast<double>(keep), keep});
  }
  return curve;
}

std::vector<double> default_coverage_grid() { return {1.0, 0.9, 0.8, 0.7, 0.6, 0.5}; }

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (item.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ContractError("grid: cannot parse '" + item + "'");
    }
  }
  if (out.empty()) throw ContractError("grid: empty");
  return out;
}

}  // namespace vmolora
