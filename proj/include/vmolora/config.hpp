// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "vmolora/adapters.hpp"
#include "vmolora/model.hpp"
#include "vmolora/train.hpp"

namespace vmolora {

/// Everything a command needs. Rank schedules are stored resolved; the JSON
/// form accepts either an explicit list or {start, end, step, period}.
struct RunConfig {
  DecoderConfig model;
  RankVector lora_ranks;
  RankVector mora_ranks;
  TrainConfig train;
  /// "full" or "frozen-backbone" for the train command.
  std::string train_mode = "full";
  /// Domain used by train and riskcov.
  std::string domain = "pituitary";
  std::size_t n_train = 1280;
  std::size_t n_val = 64;
  std::size_t stage1_epochs = 5;
  std::size_t stage2_epochs = 5;
  /// Seeds for the forgetting experiment.
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::uint64_t seed = 1;
  std::string out = "out";
};

/// Desk-scale defaults: 12 blocks of width 64, ranks stepping down every two
/// blocks (LoRA 32 -> 12, MoRA 64 -> 24).
RunConfig default_run_config();

/// Overlays `j` on the defaults. Unknown keys, wrong types and invalid
/// values throw ContractError before anything is built.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

/// Checks every cross-field constraint (rank lengths, parity, bounds,
/// vocabulary capacity, positive sizes).
void validate(const RunConfig& config);

/// Canonical snapshot with explicit rank lists; parse_run_config accepts it.
nlohmann::ordered_json to_json(const RunConfig& config);

/// FNV-1a of the canonical snapshot, ignoring the output directory.
std::uint64_t config_hash(const RunConfig& config);

TrainMode parse_train_mode(const std::string& name);
ForgettingConfig forgetting_config(const RunConfig& config);

}  // namespace vmolora
