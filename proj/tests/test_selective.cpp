// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <vector>

#include "vmolora/rng.hpp"
#include "vmolora/selective.hpp"

using namespace vmolora;

namespace {

ScoredSample sample(std::size_t id, double u, double rouge, double acc) {
  ScoredSample s;
  s.id = id;
  s.uncertainty = u;
  s.rouge_l = rouge;
  s.token_accuracy = acc;
  return s;
}

}  // namespace

TEST_CASE("answer uncertainty") {
  GenerationTrace t;
  t.entropies = {0.0, 0.0, 0.0};
  CHECK(answer_uncertainty(t) == 0.0);
  t.entropies = {std::log(2.0), std::log(2.0)};
  CHECK(answer_uncertainty(t) == doctest::Approx(0.693147).epsilon(1e-6));
  t.entropies = {0.0, std::log(4.0)};
  CHECK(answer_uncertainty(t) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  t.entropies.clear();
  CHECK_THROWS_AS(answer_uncertainty(t), ContractError);
}

TEST_CASE("reject boundary") {
  CHECK_FALSE(reject(0.0, 0.0));
  CHECK_FALSE(reject(0.0, 3.0));
  CHECK(reject(5.0, 1.0));
  CHECK_FALSE(reject(1.25, 1.25));
  CHECK_THROWS_AS(reject(1.0, -0.1), ContractError);
}

TEST_CASE("flat curve for constant metric") {
  Rng rng(41);
  std::vector<ScoredSample> s;
  for (std::size_t i = 0; i < 37; ++i) s.push_back(sample(i, rng.uniform(0.0, 3.0), 0.6, 0.25));
  const auto grid = default_coverage_grid();
  for (const auto& p : risk_coverage(s, grid, CurveMetric::RougeL)) CHECK(p.value == doctest::Approx(0.6).epsilon(1e-14));
  for (const auto& p : risk_coverage(s, grid, CurveMetric::TokenAccuracy)) CHECK(p.value == doctest::Approx(0.25).epsilon(1e-14));
}

TEST_CASE("uncertainty rank matching error rank gives a non-decreasing curve") {
  Rng rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 10 + rng.index(90);
    std::vector<double> u(n);
    for (double& v : u) v = rng.uniform(0.0, 4.0);
    std::vector<ScoredSample> s;
    for (std::size_t i = 0; i < n; ++i) {
      // Metric strictly decreasing in uncertainty.
      s.push_back(sample(i, u[i], 1.0 / (1.0 + u[i]), std::exp(-u[i])));
    }
    const std::vector<double> grid = {1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1};
    const auto curve = risk_coverage(s, grid, CurveMetric::RougeL);
    REQUIRE(curve.size() == grid.size());
    for (std::size_t i = 1; i < curve.size(); ++i) {
      CHECK(curve[i].coverage < curve[i - 1].coverage);
      CHECK(curve[i].value >= curve[i - 1].value - 1e-15);
      CHECK(curve[i].threshold <= curve[i - 1].threshold);
    }
    for (const auto& p : curve) {
      CHECK(p.retained == std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(p.coverage * n))));
      CHECK(p.retained >= 1);
    }
  }
}

TEST_CASE("full coverage equals the plain mean exactly") {
  Rng rng(43);
  std::vector<ScoredSample> s;
  double total = 0.0;
  for (std::size_t i = 0; i < 64; ++i) {
    s.push_back(sample(i, rng.uniform(0.0, 2.0), rng.uniform(), rng.uniform()));
    total += s.back().rouge_l;
  }
  const std::vector<double> grid = {1.0};
  CHECK(risk_coverage(s, grid, CurveMetric::RougeL)[0].value == total / 64.0);
}

TEST_CASE("exact retained sets and tie breaking") {
  std::vector<ScoredSample> s = {
      sample(3, 0.5, 0.1, 0.0), sample(1, 0.2, 0.9, 1.0), sample(0, 0.5, 0.4, 0.5),
      sample(2, 0.9, 0.0, 0.0)};
  const std::vector<double> grid = {1.0, 0.75, 0.5, 0.25};
  const auto curve = risk_coverage(s, grid, CurveMetric::RougeL);
  // Order by (u, id): 1, 0, 3, 2.
  CHECK(curve[0].value == doctest::Approx((0.1 + 0.9 + 0.4 + 0.0) / 4));
  CHECK(curve[1].value == doctest::Approx((0.9 + 0.4 + 0.1) / 3));
  CHECK(curve[1].threshold == 0.5);
  CHECK(curve[2].value == doctest::Approx((0.9 + 0.4) / 2));
  CHECK(curve[3].value == doctest::Approx(0.9));
  CHECK(curve[3].retained == 1);

  auto reversed = s;
  std::reverse(reversed.begin(), reversed.end());
  const auto again = risk_coverage(reversed, grid, CurveMetric::RougeL);
  for (std::size_t i = 0; i < curve.size(); ++i) {
    CHECK(again[i].retained == curve[i].retained);
    CHECK(again[i].threshold == curve[i].threshold);
    CHECK(again[i].value == doctest::Approx(curve[i].value).epsilon(1e-15));
  }
  const auto twice = risk_coverage(s, grid, CurveMetric::RougeL);
  for (std::size_t i = 0; i < curve.size(); ++i) CHECK(twice[i].value == curve[i].value);
}

TEST_CASE("grid contract") {
  std::vector<ScoredSample> s = {sample(0, 0.1, 0.5, 0.5)};
  CHECK_THROWS_AS(risk_coverage(s, std::vector<double>{}, CurveMetric::RougeL), ContractError);
  CHECK_THROWS_AS(risk_coverage(s, std::vector<double>{0.5, 0.9}, CurveMetric::RougeL), ContractError);
  CHECK_THROWS_AS(risk_coverage(s, std::vector<double>{1.5}, CurveMetric::RougeL), ContractError);
  CHECK_THROWS_AS(risk_coverage(s, std::vector<double>{0.0}, CurveMetric::RougeL), ContractError);
  CHECK_THROWS_AS(risk_coverage({}, std::vector<double>{1.0}, CurveMetric::RougeL), ContractError);
  // A tiny coverage still keeps one sample.
  CHECK(risk_coverage(s, std::vector<double>{0.01}, CurveMetric::RougeL)[0].retained == 1);

  CHECK(parse_grid("1.0,0.9, 0.8") == std::vector<double>{1.0, 0.9, 0.8});
  CHECK(default_coverage_grid() == std::vector<double>{1.0, 0.9, 0.8, 0.7, 0.6, 0.5});
  CHECK_THROWS_AS(parse_grid("1.0,abc"), ContractError);
  CHECK_THROWS_AS(parse_grid("1.0x"), ContractError);
  CHECK_THROWS_AS(parse_grid(""), ContractError);
}
