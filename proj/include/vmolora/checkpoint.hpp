// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "vmolora/config.hpp"
#include "vmolora/model.hpp"

namespace vmolora {

/// Container layout: 8-byte magic, little-endian u64 manifest length, JSON
/// manifest, then every parameter as little-endian float64 in manifest order.
inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const TinyDecoder& model, const RunConfig& config);

/// Rebuilds the model described by `config` and fills it from `path`.
/// Throws ContractError on a config-hash mismatch, a missing or misshaped
/// parameter, or a truncated file.
TinyDecoder load_checkpoint(const std::string& path, const RunConfig& config);

}  // namespace vmolora
