// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vmolora/adapters.hpp"
#include "vmolora/tape.hpp"

namespace vmolora {

struct DecoderConfig {
  std::size_t layers = 12;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t vocab = 128;
  std::size_t max_seq = 128;
  /// Rows of the context-prefix table standing in for image grounding.
  std::size_t scenes = 64;
  double lora_scale = 1.0;
  /// Init spread of the token table (also the tied LM head).
  double embedding_std = 0.05;
  /// Init spread of the scene prefixes.
  double scene_std = 0.02;

  std::size_t fused_dim() const { return 3 * d_model; }
  void validate() const;
};

/// Which parameter set receives gradients in a recorded forward pass.
enum class TrainMode {
  /// Backbone frozen, adapters trainable.
  FrozenBackbone,
  /// Backbone trainable, adapters frozen.
  Full,
};

struct DecoderBlock {
  Matrix ln1_gain, ln1_bias;
  MoLoraLayer qkv;  // fused projection, d_model -> 3 * d_model
  Matrix qkv_bias;
  Matrix proj_weight, proj_bias;
  Matrix ln2_gain, ln2_bias;
  Matrix fc_weight, fc_bias;
  Matrix out_weight, out_bias;
};

struct NamedParam {
  std::string name;
  Matrix* value = nullptr;
  bool adapter = false;
};

struct ConstNamedParam {
  std::string name;
  const Matrix* value = nullptr;
  bool adapter = false;
};

/// GPT-style causal decoder with one Vector-MoLoRA site per block on the
/// fused QKV projection and an LM head tied to the token embedding.
///
/// Inputs are a scene id (mapped to a learned prefix row occupying position
/// 0) followed by tokens. Logit row i predicts tokens[i], so a forward pass
/// over n tokens yields n + 1 rows.
class TinyDecoder {
 public:
  DecoderConfig config;
  RankVector lora_ranks;
  RankVector mora_ranks;

  Matrix token_embedding;     // vocab x d_model
  Matrix position_embedding;  // max_seq x d_model
  Matrix scene_embedding;     // scenes x d_model
  std::vector<DecoderBlock> blocks;
  Matrix lnf_gain, lnf_bias;

  /// Every parameter in a fixed order (checkpoint and optimizer order).
  std::vector<NamedParam> parameters();
  std::vector<ConstNamedParam> parameters() const;

  std::size_t adapter_parameter_count() const;
  std::size_t backbone_parameter_count() const;
};

/// Deterministic for a fixed seed. Rejects rank vectors whose length is not
/// config.layers, odd MoRA ranks and MoRA ranks >= fused_dim.
TinyDecoder build_model(const DecoderConfig& config, const RankVector& lora_ranks,
                        const RankVector& mora_ranks, std::uint64_t seed);

/// Closed-form backbone size for a configuration (no allocation).
std::size_t backbone_param_count(const DecoderConfig& config);

/// Records a forward pass and returns logits ((tokens + 1) x vocab).
/// With `use_adapters` false the adapter branches are skipped entirely.
Var forward(const TinyDecoder& model, Tape& tape, int scene, std::span<const int> tokens,
            TrainMode mode, bool use_adapters = true);

/// Gradient-free convenience wrapper.
Matrix forward_logits(const TinyDecoder& model, int scene, std::span<const int> tokens,
                      bool use_adapters = true);

struct GenerationTrace {
  /// Emitted ids, including the stop token when it was produced.
  std::vector<int> tokens;
  /// Shannon entropy (nats) of each predictive distribution, one per token.
  std::vector<double> entropies;
  /// Detokenized answer without the stop token; filled by the caller.
  std::string text;
};

/// Entropy (nats) of softmax(logits), clamped to [0, ln V].
double predictive_entropy(std::span<const double> logits);

/// Argmax decoding until `stop_id` or `max_new` tokens.
GenerationTrace generate_greedy(const TinyDecoder& model, int scene,
                                std::span<const int> prompt, std::size_t max_new, int stop_id);

}  // namespace vmolora
