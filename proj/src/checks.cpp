// SPDX-License-Identifier: Apache-2.0

#include "vmolora/checks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "vmolora/ops.hpp"
#include "vmolora/rng.hpp"
#include "vmolora/train.hpp"

namespace vmolora {

Fault parse_fault(const std::string& name) {
  if (name.empty() || name == "none") return Fault::None;
  if (name == "tiling") return Fault::Tiling;
  throw ContractError("unknown fault '" + name + "' (expected none or tiling)");
}

namespace {

// f(M g(x)) with the defective decompressor: element i of the concatenation
// is repeated `tile` times in place.
std::vector<double> faulty_mora_forward(const MoraAdapter& adapter, std::span<const double> x) {
  const RotaryCodec& codec = adapter.codec;
  std::vector<double> concat;
  concat.reserve(codec.padded_width());
  for (const auto& chunk : mora_compress(x, codec)) {
    const auto y = matvec(adapter.m, chunk);
    concat.insert(concat.end(), y.begin(), y.end());
  }
  std::vector<double> out(codec.out_dim());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = concat[(i / codec.tile()) % concat.size()];
  return out;
}

std::string format(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

}  // namespace

std::vector<SweepCell> mora_equivalence_sweep(std::size_t matrices, std::size_t inputs,
                                              std::uint64_t seed, Fault fault) {
  std::vector<SweepCell> cells;
  for (std::size_t r_hat : {2, 4, 8}) {
    for (std::size_t k : {4, 8, 16}) {
      for (std::size_t d : {k, 2 * k, 3 * k, k + 2}) {
        SweepCell cell{r_hat, k, d, 0.0};
        Rng rng(seed, "sweep/r" + std::to_string(r_hat) + "/k" + std::to_string(k) + "/d" +
                          std::to_string(d));
        MoraAdapter adapter = MoraAdapter::init(d, k, r_hat);
        std::vector<double> x(k);
        for (std::size_t t = 0; t < matrices; ++t) {
          for (double& v : adapter.m.data()) v = rng.normal();
          const Matrix dense = materialize_delta_w(adapter);
          for (std::size_t s = 0; s < inputs; ++s) {
            for (double& v : x) v = rng.normal();
            const auto got = fault == Fault::Tiling ? faulty_mora_forward(adapter, x)
                                                    : mora_forward(adapter, x);
            cell.max_error = std::max(cell.max_error, max_abs_diff(got, matvec(dense, x)));
          }
        }
        cells.push_back(cell);
      }
    }
  }
  return cells;
}

double zero_init_max_diff(const DecoderConfig& config, const RankVector& lora_ranks,
                          const RankVector& mora_ranks, std::size_t prompts, std::uint64_t seed) {
  const TinyDecoder model = build_model(config, lora_ranks, mora_ranks, seed);
  Rng rng(seed, "zero-init/prompts");
  double worst = 0.0;
  for (std::size_t p = 0; p < prompts; ++p) {
    const std::size_t len = 1 + rng.index(std::min<std::size_t>(config.max_seq - 1, 16));
    std::vector<int> tokens(len);
    for (int& t : tokens) t = static_cast<int>(rng.index(config.vocab));
    const int scene = static_cast<int>(rng.index(config.scenes));
    const Matrix adapted = forward_logits(model, scene, tokens, true);
    const Matrix base = forward_logits(model, scene, tokens, false);
    worst = std::max(worst, max_abs_diff(adapted, base));
  }
  return worst;
}

GradCheckResult adapter_grad_check(const DecoderConfig& config, const RankVector& lora_ranks,
                                   const RankVector& mora_ranks, std::size_t probes, double h,
                                   std::uint64_t seed) {
  TinyDecoder model = build_model(config, lora_ranks, mora_ranks, seed);
  Rng rng(seed, "grad-check");
  for (auto& block : model.blocks) {
    for (double& v : block.qkv.lora.b.data()) v = rng.normal(0.0, 0.05);
    for (double& v : block.qkv.mora.m.data()) v = rng.normal(0.0, 0.05);
  }

  Example ex;
  ex.scene = static_cast<int>(rng.index(config.scenes));
  const std::size_t len = std::min<std::size_t>(config.max_seq - 1, 8);
  for (std::size_t i = 0; i < len; ++i) ex.inputs.push_back(static_cast<int>(rng.index(config.vocab)));
  ex.targets.assign(len + 1, ops::kIgnore);
  for (std::size_t i = len / 2; i <= len; ++i) {
    ex.targets[i] = i < len ? ex.inputs[i] : static_cast<int>(rng.index(config.vocab));
  }

  Tape tape;
  Var loss = example_loss(model, tape, ex, TrainMode::FrozenBackbone);
  tape.backward(loss);

  std::vector<GradProbe> list;
  for (std::size_t i = 0; i < probes; ++i) {
    auto& block = model.blocks[rng.index(model.blocks.size())];
    Matrix* target = nullptr;
    std::string name = "h." + std::to_string(block.qkv.layer_index) + ".attn.qkv.";
    switch (i % 3) {
      case 0: target = &block.qkv.lora.a; name += "lora_a"; break;
      case 1: target = &block.qkv.lora.b; name += "lora_b"; break;
      default: target = &block.qkv.mora.m; name += "mora_m"; break;
    }
    const std::size_t index = rng.index(target->data().size());
    list.push_back({target, index, tape.gradient(name).data()[index]});
  }
  return grad_check_probes(list, [&] {
    Tape t(false);
    return example_loss(model, t, ex, TrainMode::FrozenBackbone).value()(0, 0);
  }, h);
}

bool CheckReport::passed() const {
  return std::all_of(lines.begin(), lines.end(), [](const CheckLine& l) { return l.passed; });
}

CheckReport run_checks(const RunConfig& config, Fault fault) {
  CheckReport report;
  for (const auto& cell : mora_equivalence_sweep(5, 50, config.seed, fault)) {
    CheckLine line;
    line.name = "mora-equivalence r_hat=" + std::to_string(cell.r_hat) +
                " k=" + std::to_string(cell.k) + " d=" + std::to_string(cell.d);
    line.passed = cell.max_error < 1e-9;
    line.detail = format("max_err=%.3e", cell.max_error);
    report.lines.push_back(std::move(line));
  }

  const double diff =
      zero_init_max_diff(config.model, config.lora_ranks, config.mora_ranks, 20, config.seed);
  report.lines.push_back({"zero-init neutrality (20 prompts)", diff == 0.0,
                          format("max_diff=%.3e", diff)});

  const GradCheckResult g =
      adapter_grad_check(config.model, config.lora_ranks, config.mora_ranks, 50, 1e-4, config.seed);
  report.lines.push_back({"adapter gradients (50 probes, h=1e-4)", g.max_rel_error < 1e-4,
                          format("max_rel_err=%.3e", g.max_rel_error)});
  return report;
}

void print_report(std::ostream& out, const CheckReport& report) {
  std::size_t failed = 0;
  for (const auto& line : report.lines) {
    out << (line.passed ? "PASS " : "FAIL ") << line.name << "  " << line.detail << '\n';
    failed += line.passed ? 0 : 1;
  }
  out << (failed == 0 ? "all checks passed" : std::to_string(failed) + " check(s) failed") << '\n';
}

}  // namespace vmolora
