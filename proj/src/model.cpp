// SPDX-License-Identifier: Apache-2.0

#include "vmolora/model.hpp"

#include <algorithm>
#include <cmath>

#include "vmolora/ops.hpp"

namespace vmolora {

void DecoderConfig::validate() const {
  if (layers == 0 || d_model == 0 || heads == 0 || vocab == 0 || max_seq < 2 || scenes == 0) {
    throw ContractError("decoder config: all sizes must be positive (max_seq >= 2)");
  }
  if (d_model % heads != 0) {
    throw ContractError("decoder config: d_model " + std::to_string(d_model) +
                        " not divisible by heads " + std::to_string(heads));
  }
  if (!(embedding_std > 0.0) || !(scene_std > 0.0) || !std::isfinite(lora_scale)) {
    throw ContractError("decoder config: init spreads must be positive, lora_scale finite");
  }
}

namespace {

Matrix gaussian(std::size_t rows, std::size_t cols, double stddev, std::uint64_t seed,
                const std::string& name) {
  Rng rng(seed, "init/" + name);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = rng.normal(0.0, stddev);
  return m;
}

std::string block_name(std::size_t i, const char* leaf) {
  return "h." + std::to_string(i) + "." + leaf;
}

template <typename Model, typename Out>
void collect(Model& m, Out& out) {
  out.push_back({"wte", &m.token_embedding, false});
  out.push_back({"wpe", &m.position_embedding, false});
  out.push_back({"scene", &m.scene_embedding, false});
  for (std::size_t i = 0; i < m.blocks.size(); ++i) {
    auto& b = m.blocks[i];
    out.push_back({block_name(i, "ln1.gain"), &b.ln1_gain, false});
    out.push_back({block_name(i, "ln1.bias"), &b.ln1_bias, false});
    out.push_back({block_name(i, "attn.qkv.weight"), &b.qkv.weight, false});
    out.push_back({block_name(i, "attn.qkv.bias"), &b.qkv_bias, false});
    out.push_back({block_name(i, "attn.qkv.lora_a"), &b.qkv.lora.a, true});
    out.push_back({block_name(i, "attn.qkv.lora_b"), &b.qkv.lora.b, true});
    out.push_back({block_name(i, "attn.qkv.mora_m"), &b.qkv.mora.m, true});
    out.push_back({block_name(i, "attn.proj.weight"), &b.proj_weight, false});
    out.push_back({block_name(i, "attn.proj.bias"), &b.proj_bias, false});
    out.push_back({block_name(i, "ln2.gain"), &b.ln2_gain, false});
    out.push_back({block_name(i, "ln2.bias"), &b.ln2_bias, false});
    out.push_back({block_name(i, "mlp.fc.weight"), &b.fc_weight, false});
    out.push_back({block_name(i, "mlp.fc.bias"), &b.fc_bias, false});
    out.push_back({block_name(i, "mlp.out.weight"), &b.out_weight, false});
    out.push_back({block_name(i, "mlp.out.bias"), &b.out_bias, false});
  }
  out.push_back({"lnf.gain", &m.lnf_gain, false});
  out.push_back({"lnf.bias", &m.lnf_bias, false});
}

}  // namespace

std::vector<NamedParam> TinyDecoder::parameters() {
  std::vector<NamedParam> out;
  collect(*this, out);
  return out;
}

std::vector<ConstNamedParam> TinyDecoder::parameters() const {
  std::vector<ConstNamedParam> out;
  collect(*this, out);
  return out;
}

std::size_t TinyDecoder::adapter_parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.adapter ? p.value->size() : 0;
  return n;
}

std::size_t TinyDecoder::backbone_parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.adapter ? 0 : p.value->size();
  return n;
}

std::size_t backbone_param_count(const DecoderConfig& c) {
  const std::size_t dm = c.d_model;
  const std::size_t per_block = 2 * dm                // ln1
                                + 3 * dm * dm + 3 * dm  // fused qkv
                                + dm * dm + dm          // attention output
                                + 2 * dm                // ln2
                                + 4 * dm * dm + 4 * dm  // mlp in
                                + 4 * dm * dm + dm;     // mlp out
  return (c.vocab + c.max_seq + c.scenes) * dm + c.layers * per_block + 2 * dm;
}

TinyDecoder build_model(const DecoderConfig& config, const RankVector& lora_ranks,
                        const RankVector& mora_ranks, std::uint64_t seed) {
  config.validate();
  lora_ranks.require_length(config.layers, "LoRA");
  mora_ranks.require_length(config.layers, "MoRA");
  mora_ranks.require_even("MoRA");
  for (std::size_t i = 0; i < config.layers; ++i) {
    if (static_cast<std::size_t>(mora_ranks[i]) >= config.fused_dim()) {
      throw ContractError("MoRA rank " + std::to_string(mora_ranks[i]) + " at block " +
                          std::to_string(i) + " must be below fused width " +
                          std::to_string(config.fused_dim()));
    }
  }

  const std::size_t dm = config.d_model;
  const double resid_std = 0.02 / std::sqrt(2.0 * static_cast<double>(config.layers));

  TinyDecoder m;
  m.config = config;
  m.lora_ranks = lora_ranks;
  m.mora_ranks = mora_ranks;
  m.token_embedding = gaussian(config.vocab, dm, config.embedding_std, seed, "wte");
  m.position_embedding = gaussian(config.max_seq, dm, 0.01, seed, "wpe");
  m.scene_embedding = gaussian(config.scenes, dm, config.scene_std, seed, "scene");
  m.blocks.reserve(config.layers);
  for (std::size_t i = 0; i < config.layers; ++i) {
    DecoderBlock b;
    b.ln1_gain = Matrix(1, dm, 1.0);
    b.ln1_bias = Matrix(1, dm);
    Rng adapter_rng(seed, "init/" + block_name(i, "attn.qkv.lora_a"));
    b.qkv = MoLoraLayer::init(
        gaussian(config.fused_dim(), dm, 0.02, seed, block_name(i, "attn.qkv.weight")),
        static_cast<std::size_t>(lora_ranks[i]), static_cast<std::size_t>(mora_ranks[i]),
        config.lora_scale, i, adapter_rng);
    b.qkv_bias = Matrix(1, config.fused_dim());
    b.proj_weight = gaussian(dm, dm, resid_std, seed, block_name(i, "attn.proj.weight"));
    b.proj_bias = Matrix(1, dm);
    b.ln2_gain = Matrix(1, dm, 1.0);
    b.ln2_bias = Matrix(1, dm);
    b.fc_weight = gaussian(4 * dm, dm, 0.02, seed, block_name(i, "mlp.fc.weight"));
    b.fc_bias = Matrix(1, 4 * dm);
    b.out_weight = gaussian(dm, 4 * dm, resid_std, seed, block_name(i, "mlp.out.weight"));
    b.out_bias = Matrix(1, dm);
    m.blocks.push_back(std::move(b));
  }
  m.lnf_gain = Matrix(1, dm, 1.0);
  m.lnf_bias = Matrix(1, dm);
  return m;
}

namespace {

struct Binder {
  Tape& tape;
  TrainMode mode;

  Var backbone(const std::string& name, const Matrix& m) const {
    return tape.parameter(name, m, mode == TrainMode::Full);
  }
  Var adapter(const std::string& name, const Matrix& m) const {
    return tape.parameter(name, m, mode == TrainMode::FrozenBackbone);
  }
};

Var attention(Var qkv, std::size_t d_model, std::size_t heads) {
  const std::size_t dh = d_model / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Var q = ops::slice_cols(qkv, h * dh, dh);
    Var k = ops::slice_cols(qkv, d_model + h * dh, dh);
    Var v = ops::slice_cols(qkv, 2 * d_model + h * dh, dh);
    Var probs = ops::causal_softmax(ops::scale(ops::matmul_nt(q, k), inv_sqrt));
    outs.push_back(ops::matmul(probs, v));
  }
  return ops::concat_cols(outs);
}

}  // namespace

Var forward(const TinyDecoder& model, Tape& tape, int scene, std::span<const int> tokens,
            TrainMode mode, bool use_adapters) {
  const DecoderConfig& c = model.config;
  const std::size_t rows = tokens.size() + 1;
  if (rows > c.max_seq) {
    throw ContractError("sequence of " + std::to_string(rows) + " positions exceeds max_seq " +
                        std::to_string(c.max_seq));
  }
  if (scene < 0 || static_cast<std::size_t>(scene) >= c.scenes) {
    throw ContractError("unknown scene id " + std::to_string(scene));
  }
  for (int t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= c.vocab) {
      throw ContractError("unknown token id " + std::to_string(t));
    }
  }

  const Binder bind{tape, mode};
  Var wte = bind.backbone("wte", model.token_embedding);
  Var wpe = bind.backbone("wpe", model.position_embedding);
  Var scene_table = bind.backbone("scene", model.scene_embedding);

  const int scene_id[] = {scene};
  std::vector<Var> pieces{ops::embedding(scene_table, scene_id)};
  if (!tokens.empty()) pieces.push_back(ops::embedding(wte, tokens));
  std::vector<int> positions(rows);
  for (std::size_t i = 0; i < rows; ++i) positions[i] = static_cast<int>(i);
  Var x = ops::add(ops::concat_rows(pieces), ops::embedding(wpe, positions));

  for (std::size_t i = 0; i < model.blocks.size(); ++i) {
    const DecoderBlock& b = model.blocks[i];
    Var h = ops::layer_norm(x, bind.backbone(block_name(i, "ln1.gain"), b.ln1_gain),
                            bind.backbone(block_name(i, "ln1.bias"), b.ln1_bias));
    Var qkv = ops::add_row(
        ops::matmul_nt(h, bind.backbone(block_name(i, "attn.qkv.weight"), b.qkv.weight)),
        bind.backbone(block_name(i, "attn.qkv.bias"), b.qkv_bias));
    if (use_adapters) {
      Var lora = lora_delta(h, bind.adapter(block_name(i, "attn.qkv.lora_a"), b.qkv.lora.a),
                            bind.adapter(block_name(i, "attn.qkv.lora_b"), b.qkv.lora.b),
                            b.qkv.lora.scale);
      Var mora =
          mora_delta(h, bind.adapter(block_name(i, "attn.qkv.mora_m"), b.qkv.mora.m), b.qkv.mora.codec);
      qkv = ops::add(ops::add(qkv, lora), mora);
    }
    Var attn = attention(qkv, c.d_model, c.heads);
    Var proj = ops::add_row(
        ops::matmul_nt(attn, bind.backbone(block_name(i, "attn.proj.weight"), b.proj_weight)),
        bind.backbone(block_name(i, "attn.proj.bias"), b.proj_bias));
    x = ops::add(x, proj);

    Var h2 = ops::layer_norm(x, bind.backbone(block_name(i, "ln2.gain"), b.ln2_gain),
                             bind.backbone(block_name(i, "ln2.bias"), b.ln2_bias));
    Var fc = ops::gelu(ops::add_row(
        ops::matmul_nt(h2, bind.backbone(block_name(i, "mlp.fc.weight"), b.fc_weight)),
        bind.backbone(block_name(i, "mlp.fc.bias"), b.fc_bias)));
    Var out = ops::add_row(
        ops::matmul_nt(fc, bind.backbone(block_name(i, "mlp.out.weight"), b.out_weight)),
        bind.backbone(block_name(i, "mlp.out.bias"), b.out_bias));
    x = ops::add(x, out);
  }

  Var final_norm = ops::layer_norm(x, bind.backbone("lnf.gain", model.lnf_gain),
                                   bind.backbone("lnf.bias", model.lnf_bias));
  return ops::matmul_nt(final_norm, wte);
}

Matrix forward_logits(const TinyDecoder& model, int scene, std::span<const int> tokens,
                      bool use_adapters) {
  Tape tape(false);
  return forward(model, tape, scene, tokens, TrainMode::FrozenBackbone, use_adapters).value();
}

double predictive_entropy(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double v : logits) total += std::exp(v - mx);
  const double log_total = std::log(total);
  double h = 0.0;
  for (double v : logits) {
    const double logp = v - mx - log_total;
    const double p = std::exp(logp);
    if (p > 0.0) h -= p * logp;
  }
  return std::clamp(h, 0.0, std::log(static_cast<double>(logits.size())));
}

GenerationTrace generate_greedy(const TinyDecoder& model, int scene,
                                std::span<const int> prompt, std::size_t max_new, int stop_id) {
  if (prompt.empty()) throw ContractError("generate_greedy: empty prompt");
  if (prompt.size() + max_new > model.config.max_seq) {
    throw ContractError("generate_greedy: prompt of " + std::to_string(prompt.size()) +
                        " plus " + std::to_string(max_new) + " new tokens exceeds max_seq " +
                        std::to_string(model.config.max_seq));
  }
  GenerationTrace trace;
  std::vector<int> seq(prompt.begin(), prompt.end());
  for (std::size_t step = 0; step < max_new; ++step) {
    const Matrix logits = forward_logits(model, scene, seq);
    auto last = logits.row(logits.rows() - 1);
    const auto best = std::max_element(last.begin(), last.end()) - last.begin();
    trace.entropies.push_back(predictive_entropy(last));
    trace.tokens.push_back(static_cast<int>(best));
    if (best == stop_id) break;
    seq.push_back(static_cast<int>(best));
  }
  return trace;
}

}  // namespace vmolora
