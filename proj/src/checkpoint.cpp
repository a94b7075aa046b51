// SPDX-License-Identifier: Apache-2.0

#include "vmolora/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace vmolora {

namespace {

constexpr std::array<char, 8> kMagic{'V', 'M', 'L', 'R', 'C', 'K', 'P', 'T'};

static_assert(sizeof(double) == 8);

void put_u64(std::ostream& out, std::uint64_t v) {
  std::array<char, 8> bytes{};
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(bytes.data(), 8);
}

std::uint64_t get_u64(std::istream& in) {
  std::array<unsigned char, 8> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), 8);
  if (!in) throw ContractError("checkpoint: truncated header");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | bytes[i];
  return v;
}

std::string hex(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[i] = digits[v & 0xf];
  return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const TinyDecoder& model, const RunConfig& config) {
  nlohmann::ordered_json manifest;
  manifest["format_version"] = kCheckpointVersion;
  // The output directory is where the file lives, not part of the run; leaving
  // it out keeps identical runs byte-identical wherever they are written.
  auto snapshot = to_json(config);
  snapshot.erase("out");
  manifest["config"] = std::move(snapshot);
  manifest["config_hash"] = hex(config_hash(config));
  auto params = nlohmann::ordered_json::array();
  std::uint64_t offset = 0;
  const auto named = model.parameters();
  for (const auto& p : named) {
    params.push_back({{"name", p.name},
                      {"shape", {p.value->rows(), p.value->cols()}},
                      {"offset", offset}});
    offset += 8 * p.value->data().size();
  }
  manifest["params"] = std::move(params);
  const std::string text = manifest.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ContractError("checkpoint: cannot write '" + path + "'");
  out.write(kMagic.data(), kMagic.size());
  put_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : named) {
    for (double v : p.value->data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw ContractError("checkpoint: write to '" + path + "' failed");
}

TinyDecoder load_checkpoint(const std::string& path, const RunConfig& config) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ContractError("checkpoint: cannot open '" + path + "'");
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw ContractError("checkpoint: '" + path + "' has no checkpoint magic");
  const std::uint64_t length = get_u64(in);
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) throw ContractError("checkpoint: truncated manifest");

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ContractError(std::string("checkpoint: unreadable manifest: ") + e.what());
  }
  if (manifest.value("format_version", -1) != kCheckpointVersion) {
    throw ContractError("checkpoint: unsupported format version");
  }
  const std::string expected = hex(config_hash(config));
  const std::string stored = manifest.value("config_hash", "");
  if (stored != expected) {
    throw ContractError("checkpoint: config hash mismatch (file " + stored + ", config " +
                        expected + "); the checkpoint was written under a different config");
  }

  TinyDecoder model = build_model(config.model, config.lora_ranks, config.mora_ranks, config.seed);
  std::map<std::string, Matrix*> by_name;
  for (auto& p : model.parameters()) by_name.emplace(p.name, p.value);

  const auto payload_start = in.tellg();
  for (const auto& entry : manifest.at("params")) {
    const auto name = entry.at("name").get<std::string>();
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw ContractError("checkpoint: unexpected or repeated parameter '" + name + "'");
    }
    Matrix& dst = *it->second;
    const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 2 || shape[0] != dst.rows() || shape[1] != dst.cols()) {
      throw ShapeError("checkpoint: parameter '" + name + "' has shape mismatch with " +
                       dst.shape_string());
    }
    in.seekg(payload_start + static_cast<std::streamoff>(entry.at("offset").get<std::uint64_t>()));
    for (double& v : dst.data()) v = std::bit_cast<double>(get_u64(in));
    by_name.erase(it);
  }
  if (!by_name.empty()) {
    throw ContractError("checkpoint: parameter '" + by_name.begin()->first + "' missing");
  }
  return model;
}

}  // namespace vmolora
