// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vmolora/data.hpp"
#include "vmolora/metrics.hpp"
#include "vmolora/model.hpp"
#include "vmolora/optim.hpp"
#include "vmolora/selective.hpp"

namespace vmolora {

struct TrainConfig {
  AdamConfig adam;
  std::size_t batch = 32;
  std::size_t epochs = 5;
  /// Keep the epoch with the best validation BLEU-4 (needs a validation set).
  bool select_best = false;
  /// Generation budget for answers during evaluation.
  std::size_t max_new = 8;
};

/// Teacher-forced sequence for one pair: inputs are question + answer,
/// targets ignore question positions and end with the stop token.
struct Example {
  int scene = 0;
  std::vector<int> inputs;
  std::vector<int> targets;
};

Example make_example(const QaPair& qa);

/// Records the answer-only cross-entropy of one pair. When `logits_out` is
/// given it receives the logits node.
Var example_loss(const TinyDecoder& model, Tape& tape, const Example& ex, TrainMode mode,
                 Var* logits_out = nullptr);

/// Mean answer-only loss without gradients.
double mean_loss(const TinyDecoder& model, std::span<const QaPair> samples);

struct TrainResult {
  /// Mean per-sample loss of each epoch.
  std::vector<double> epoch_loss;
  /// Validation BLEU-4 after each epoch (empty without selection).
  std::vector<double> val_bleu4;
  /// 1-based epoch whose parameters were kept; 0 when no epoch ran.
  std::size_t best_epoch = 0;
};

/// Mini-batch Adam over the parameters that `mode` makes trainable; the
/// gradient is averaged over the batch. Deterministic for a fixed seed.
TrainResult train(TinyDecoder& model, std::span<const QaPair> samples,
                  std::span<const QaPair> val, TrainMode mode, const TrainConfig& config,
                  std::uint64_t seed);

struct Evaluation {
  std::vector<ScoredSample> samples;
  MetricReport report;
};

/// Greedy generation over `samples` with per-sample scores and corpus means.
Evaluation evaluate(const TinyDecoder& model, std::span<const QaPair> samples,
                    const Vocab& vocab, std::size_t max_new);

struct RetentionMetrics {
  double rouge_l = 0.0;
  double meteor = 0.0;
  double token_accuracy = 0.0;
};

struct RetentionReport {
  /// "fft" or "adapter".
  std::string strategy;
  RetentionMetrics training_domain;
  RetentionMetrics pretrained_domain;
  std::uint64_t seed = 0;
};

struct ForgettingConfig {
  DecoderConfig model;
  RankVector lora_ranks;
  RankVector mora_ranks;
  TrainConfig train;
  std::size_t stage1_epochs = 5;
  std::size_t stage2_epochs = 5;
  std::size_t n_train = 320;
  std::size_t n_val = 64;
};

struct RetentionPair {
  RetentionReport fft;
  RetentionReport adapter;
};

/// Stage 1 trains the backbone on the pituitary domain with adapters frozen
/// at zero. Stage 2 branches on the nephrectomy domain into a full
/// fine-tune and an adapter-only run; both are scored on both domains.
std::vector<RetentionPair> forgetting_experiment(const ForgettingConfig& config,
                                                 std::span<const std::uint64_t> seeds);

}  // namespace vmolora
