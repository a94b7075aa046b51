// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "vmolora/adapters.hpp"
#include "vmolora/grad_check.hpp"
#include "vmolora/model.hpp"
#include "vmolora/ops.hpp"

using namespace vmolora;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c) {
  Matrix m(r, c);
  for (double& v : m.data()) v = rng.normal();
  return m;
}

double norm(std::span<const double> v) {
  return std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
}

// Independent reference for the MoRA map: entry (i, c) of the dense update
// written out from the rotation formula directly. Output row i reads source
// row s = i mod (n_in * r_hat) of the block-diagonal matrix.
Matrix reference_delta_w(const Matrix& m, std::size_t r_hat, std::size_t k, std::size_t d) {
  const std::size_t n_in = (k + r_hat - 1) / r_hat;
  const std::size_t width = n_in * r_hat;
  Matrix out(d, k);
  for (std::size_t i = 0; i < d; ++i) {
    const std::size_t s = i % width;
    const std::size_t j = s / r_hat;
    const std::size_t a = s % r_hat;
    for (std::size_t b = 0; b < r_hat && j * r_hat + b < k; ++b) {
      // (M R_j)(a, b) = sum_q M(a, q) R_j(q, b); R_j is 2x2 block diagonal.
      const std::size_t pair = b / 2;
      const double angle =
          static_cast<double>(j) * std::pow(10000.0, -2.0 * static_cast<double>(pair) / r_hat);
      const double c = std::cos(angle);
      const double sn = std::sin(angle);
      const std::size_t q0 = 2 * pair;
      const double r0 = (b % 2 == 0) ? c : -sn;  // R(q0, b)
      const double r1 = (b % 2 == 0) ? sn : c;   // R(q0 + 1, b)
      out(i, j * r_hat + b) = m(a, q0) * r0 + m(a, q0 + 1) * r1;
    }
  }
  return out;
}

}  // namespace

TEST_CASE("stepped schedules") {
  CHECK(stepped_schedule(64, 24, 8, 2, 12).ranks() ==
        std::vector<int>{64, 64, 56, 56, 48, 48, 40, 40, 32, 32, 24, 24});
  CHECK(stepped_schedule(32, 12, 4, 2, 12).ranks() ==
        std::vector<int>{32, 32, 28, 28, 24, 24, 20, 20, 16, 16, 12, 12});
  CHECK(stepped_schedule(8, 8, 0, 1, 12).ranks() == std::vector<int>(12, 8));

  CHECK_THROWS_AS(stepped_schedule(64, 24, 8, 2, 10), ContractError);
  CHECK_THROWS_AS(stepped_schedule(64, 24, 7, 2, 12), ContractError);
  CHECK_THROWS_AS(stepped_schedule(8, 4, 0, 1, 12), ContractError);
  CHECK_THROWS_AS(stepped_schedule(4, 8, 2, 1, 3), ContractError);
  CHECK_THROWS_AS(stepped_schedule(8, 0, 2, 1, 5), ContractError);
  CHECK_THROWS_AS(stepped_schedule(8, 4, 2, 0, 3), ContractError);
}

TEST_CASE("stepped schedules are monotone and hit their endpoints") {
  for (int start = 1; start <= 40; ++start) {
    for (int step = 1; step <= 6; ++step) {
      for (int period = 1; period <= 3; ++period) {
        for (int drops = 0; drops * step < start; ++drops) {
          const int end = start - drops * step;
          const int layers = drops * period + 1;
          const RankVector r = stepped_schedule(start, end, step, period, layers);
          REQUIRE(r.size() == static_cast<std::size_t>(layers));
          CHECK(r[0] == start);
          CHECK(r[r.size() - 1] == end);
          for (std::size_t i = 1; i < r.size(); ++i) CHECK(r[i - 1] >= r[i]);
        }
      }
    }
  }
}

TEST_CASE("rank vector validation") {
  CHECK_THROWS_AS(RankVector({4, 8}), ContractError);
  CHECK_THROWS_AS(RankVector({4, 0}), ContractError);
  CHECK_THROWS_AS(RankVector(std::vector<int>{}), ContractError);
  CHECK_THROWS_AS(RankVector({8, 8}).require_length(3, "LoRA"), ContractError);
  CHECK_THROWS_AS(RankVector({8, 7}).require_even("MoRA"), ContractError);
}

TEST_CASE("lora forward") {
  Rng rng(1);
  MoLoraLayer layer = MoLoraLayer::init(Matrix(2, 2, 0.0), 1, 2, 1.0, 0, rng);
  layer.lora.b = Matrix(2, 1, {1, 0});
  layer.lora.a = Matrix(1, 2, {1, 0});
  const std::vector<double> x = {2, 5};
  CHECK(lora_forward(layer, x) == std::vector<double>{2, 0});

  Rng r2(2);
  MoLoraLayer big = MoLoraLayer::init(random_matrix(r2, 6, 5), 3, 2, 1.0, 0, r2);
  const auto input = random_vec(r2, 5);
  const auto base = matvec(big.weight, input);
  CHECK(lora_forward(big, input) == base);  // B = 0 at init

  big.lora.b = random_matrix(r2, 6, 3);
  const auto once = lora_forward(big, input);
  big.lora.scale = 2.0;
  const auto twice = lora_forward(big, input);
  for (std::size_t i = 0; i < base.size(); ++i) {
    CHECK(twice[i] - base[i] == doctest::Approx(2.0 * (once[i] - base[i])).epsilon(1e-12));
  }
  CHECK_THROWS_AS(lora_forward(big, random_vec(r2, 4)), ShapeError);
}

TEST_CASE("lora init") {
  Rng rng(3);
  const LoraAdapter a = LoraAdapter::init(40, 30, 8, 1.0, rng);
  CHECK(a.b == Matrix(40, 8, 0.0));
  double sq = 0.0;
  for (double v : a.a.data()) sq += v * v;
  CHECK(std::sqrt(sq / static_cast<double>(a.a.size())) == doctest::Approx(0.02).epsilon(0.1));
  CHECK_THROWS_AS(LoraAdapter::init(40, 30, 30, 1.0, rng), ContractError);
  CHECK_THROWS_AS(LoraAdapter::init(40, 30, 0, 1.0, rng), ContractError);
}

TEST_CASE("rope angles") {
  CHECK(rope_angles(4).size() == 2);
  CHECK(rope_angles(4)[0] == 1.0);
  CHECK(rope_angles(4)[1] == doctest::Approx(0.01).epsilon(1e-15));
  CHECK(rope_angles(2) == std::vector<double>{1.0});
  const auto a = rope_angles(64);
  for (std::size_t k = 0; k < a.size(); ++k) {
    CHECK(a[k] == doctest::Approx(std::pow(10000.0, -2.0 * static_cast<double>(k) / 64.0)));
  }
  CHECK_THROWS_AS(rope_angles(3), ContractError);
  CHECK_THROWS_AS(rope_angles(0), ContractError);
}

TEST_CASE("rotate chunk") {
  const RotaryCodec codec(2, 4, 4);
  const auto r = rotate_chunk(std::vector<double>{1, 0}, 1, codec);
  CHECK(r[0] == doctest::Approx(0.540302).epsilon(1e-6));
  CHECK(r[1] == doctest::Approx(0.841471).epsilon(1e-6));
  CHECK(r[0] == doctest::Approx(std::cos(1.0)).epsilon(1e-15));

  Rng rng(4);
  for (std::size_t r_hat : {2, 4, 8, 64}) {
    const RotaryCodec c(r_hat, 3 * r_hat, 3 * r_hat);
    for (std::size_t j = 0; j < 3; ++j) {
      const auto chunk = random_vec(rng, r_hat);
      const auto out = rotate_chunk(chunk, j, c);
      CHECK(std::abs(norm(out) - norm(chunk)) < 1e-12);
      if (j == 0) CHECK(out == chunk);
    }
  }
  CHECK_THROWS_AS(rotate_chunk(std::vector<double>{1, 0, 0}, 1, codec), ShapeError);
}

TEST_CASE("mora compress") {
  const RotaryCodec even(2, 4, 4);
  const auto chunks = mora_compress(std::vector<double>{1, 2, 3, 4}, even);
  REQUIRE(chunks.size() == 2);
  CHECK(chunks[0] == std::vector<double>{1, 2});
  CHECK(chunks[1][0] == doctest::Approx(3 * std::cos(1.0) - 4 * std::sin(1.0)));
  CHECK(chunks[1][1] == doctest::Approx(3 * std::sin(1.0) + 4 * std::cos(1.0)));

  const RotaryCodec odd(2, 3, 3);
  const auto padded = mora_compress(std::vector<double>{1, 2, 5}, odd);
  REQUIRE(padded.size() == 2);
  CHECK(padded[1] == rotate_chunk(std::vector<double>{5, 0}, 1, odd));

  for (const auto& c : mora_compress(std::vector<double>(7, 0.0), RotaryCodec(4, 7, 9))) {
    CHECK(c == std::vector<double>(4, 0.0));
  }
  CHECK_THROWS_AS(mora_compress(std::vector<double>{1, 2}, even), ShapeError);
}

TEST_CASE("mora forward") {
  MoraAdapter z = MoraAdapter::init(12, 8, 4);
  CHECK(z.m == Matrix(4, 4, 0.0));
  CHECK(mora_forward(z, std::vector<double>(8, 1.5)) == std::vector<double>(12, 0.0));
  CHECK(materialize_delta_w(z) == Matrix(12, 8, 0.0));
  CHECK_THROWS_AS(MoraAdapter::init(8, 8, 3), ContractError);

  // d = k, r_hat | k, M = I: the chunks come back rotated and in place.
  MoraAdapter id = MoraAdapter::init(8, 8, 4);
  id.m = Matrix::identity(4);
  Rng rng(5);
  const auto x = random_vec(rng, 8);
  const auto y = mora_forward(id, x);
  const auto chunks = mora_compress(x, id.codec);
  for (std::size_t i = 0; i < 8; ++i) CHECK(y[i] == doctest::Approx(chunks[i / 4][i % 4]));
}

TEST_CASE("materialized update for M = I") {
  MoraAdapter a = MoraAdapter::init(4, 4, 2);
  a.m = Matrix::identity(2);
  const Matrix w = materialize_delta_w(a);
  const Matrix expect(4, 4, {1, 0, 0, 0,  //
                             0, 1, 0, 0,  //
                             0, 0, 0.540302, -0.841471,
                             0, 0, 0.841471, 0.540302});
  CHECK(max_abs_diff(w, expect) < 1e-6);
}

TEST_CASE("materialization matches an independent construction and the forward map") {
  Rng rng(6);
  for (std::size_t r_hat : {2, 4, 8}) {
    for (std::size_t k : {4, 8, 16, 3, 7}) {
      for (std::size_t d : {k, 2 * k, 3 * k, k + 2, std::size_t{5}}) {
        CAPTURE(r_hat);
        CAPTURE(k);
        CAPTURE(d);
        MoraAdapter a = MoraAdapter::init(d, k, r_hat);
        a.m = random_matrix(rng, r_hat, r_hat);
        const Matrix dense = materialize_delta_w(a);
        CHECK(max_abs_diff(dense, reference_delta_w(a.m, r_hat, k, d)) < 1e-12);
        double worst = 0.0;
        for (int s = 0; s < 100; ++s) {
          const auto x = random_vec(rng, k);
          worst = std::max(worst, max_abs_diff(mora_forward(a, x), matvec(dense, x)));
        }
        CHECK(worst < 1e-9);
      }
    }
  }
}

TEST_CASE("molora forward") {
  Rng rng(7);
  MoLoraLayer layer = MoLoraLayer::init(random_matrix(rng, 12, 8), 3, 4, 1.0, 0, rng);
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = random_vec(rng, 8);
    CHECK(molora_forward(layer, x) == matvec(layer.weight, x));
  }

  layer.lora.b = random_matrix(rng, 12, 3);
  const auto x = random_vec(rng, 8);
  CHECK(molora_forward(layer, x) == lora_forward(layer, x));

  layer.mora.m = random_matrix(rng, 4, 4);
  layer.lora.scale = 0.7;
  Matrix full = add(layer.weight, scale(matmul(layer.lora.b, layer.lora.a), 0.7));
  full = add(full, materialize_delta_w(layer.mora));
  for (int trial = 0; trial < 50; ++trial) {
    const auto v = random_vec(rng, 8);
    CHECK(max_abs_diff(molora_forward(layer, v), matvec(full, v)) < 1e-9);
  }
  CHECK_THROWS_AS(molora_forward(layer, random_vec(rng, 9)), ShapeError);
}

TEST_CASE("batched adapter paths match the vector forms and pass grad check") {
  Rng rng(8);
  MoLoraLayer layer = MoLoraLayer::init(random_matrix(rng, 10, 6), 2, 4, 1.3, 0, rng);
  layer.lora.b = random_matrix(rng, 10, 2);
  layer.mora.m = random_matrix(rng, 4, 4);
  const Matrix x = random_matrix(rng, 3, 6);

  Tape tape(false);
  Var xv = tape.constant(x);
  const Matrix lora = lora_delta(xv, tape.constant(layer.lora.a), tape.constant(layer.lora.b), 1.3).value();
  const Matrix mora = mora_delta(xv, tape.constant(layer.mora.m), layer.mora.codec).value();
  for (std::size_t r = 0; r < 3; ++r) {
    const auto base = matvec(layer.weight, x.row(r));
    const auto want = molora_forward(layer, x.row(r));
    for (std::size_t i = 0; i < 10; ++i) {
      CHECK(base[i] + lora(r, i) + mora(r, i) == doctest::Approx(want[i]).epsilon(1e-12));
    }
  }

  // Scalar loss of the combined site w.r.t. A, B and M; W is frozen.
  const Matrix weights = random_matrix(rng, 3, 10);
  const ScalarFn f = [&](Tape& t, std::span<const Var> p) {
    Var in = t.constant(x);
    Var h = ops::matmul_nt(in, t.constant(layer.weight));
    h = ops::add(h, lora_delta(in, p[0], p[1], 1.3));
    h = ops::add(h, mora_delta(in, p[2], layer.mora.codec));
    return ops::sum(ops::mul(ops::gelu(h), t.constant(weights)));
  };
  CHECK(grad_check(f, {layer.lora.a, layer.lora.b, layer.mora.m}, 1e-4).max_rel_error < 1e-4);

  Tape grad_tape;
  Var w = grad_tape.parameter("w", layer.weight, false);
  Var a = grad_tape.parameter("a", layer.lora.a, true);
  Var b = grad_tape.parameter("b", layer.lora.b, true);
  Var in = grad_tape.constant(x);
  grad_tape.backward(ops::sum(ops::add(ops::matmul_nt(in, w), lora_delta(in, a, b, 1.3))));
  CHECK(grad_tape.gradient("w") == Matrix(10, 6, 0.0));
  CHECK(frobenius_norm(grad_tape.gradient("b")) > 0.0);
}

TEST_CASE("parameter budget") {
  const ParamBudget one = param_count(2304, 768, RankVector({32}), RankVector({64}));
  REQUIRE(one.layers.size() == 1);
  CHECK(one.layers[0].lora_params == 98304);
  CHECK(one.layers[0].mora_params == 4096);
  CHECK(one.total == 98304 + 4096);

  // Best schedule at the 768 -> 2304 site, summed by hand.
  const ParamBudget best = param_count(2304, 768, stepped_schedule(32, 12, 4, 2, 12),
                                       stepped_schedule(64, 24, 8, 2, 12));
  CHECK(best.total == 2 * (32 + 28 + 24 + 20 + 16 + 12) * 3072 +
                          2 * (64 * 64 + 56 * 56 + 48 * 48 + 40 * 40 + 32 * 32 + 24 * 24));

  const ParamBudget desk = param_count(192, 64, stepped_schedule(8, 8, 0, 1, 12),
                                       stepped_schedule(8, 8, 0, 1, 12));
  for (const auto& l : desk.layers) CHECK(l.total() == 2112);

  CHECK_THROWS_AS(param_count(192, 64, RankVector({8, 8}), RankVector({8})), ContractError);
}

TEST_CASE("parameter budget equals the enumerated trainable scalars") {
  struct Setup {
    RankVector lora;
    RankVector mora;
  };
  DecoderConfig cfg;
  cfg.layers = 4;
  cfg.vocab = 32;
  cfg.max_seq = 8;
  const std::vector<Setup> setups = {
      {stepped_schedule(8, 8, 0, 1, 4), stepped_schedule(8, 8, 0, 1, 4)},
      {stepped_schedule(32, 20, 4, 1, 4), stepped_schedule(64, 40, 8, 1, 4)},
      {RankVector({5, 3, 2, 1}), RankVector({10, 6, 6, 2})},
  };
  for (const auto& s : setups) {
    const TinyDecoder model = build_model(cfg, s.lora, s.mora, 3);
    Tape tape;
    const std::vector<int> tokens = {3, 4};
    tape.backward(ops::sum(forward(model, tape, 0, tokens, TrainMode::FrozenBackbone)));
    std::size_t trainable = 0;
    for (const auto& name : tape.parameter_names()) {
      if (tape.trainable(name)) trainable += tape.gradient(name).size();
    }
    const ParamBudget budget = param_count(cfg.fused_dim(), cfg.d_model, s.lora, s.mora);
    CHECK(trainable == budget.total);
    CHECK(model.adapter_parameter_count() == budget.total);
  }
}
