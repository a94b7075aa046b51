// SPDX-License-Identifier: Apache-2.0

#include "vmolora/config.hpp"

#include <cmath>
#include <fstream>
#include <initializer_list>
#include <string_view>

#include "vmolora/data.hpp"
#include "vmolora/rng.hpp"

namespace vmolora {

namespace {

using nlohmann::json;

void require_object(const json& j, const std::string& where) {
  if (!j.is_object()) throw ContractError("config: '" + where + "' must be an object");
}

void reject_unknown(const json& j, const std::string& where,
                    std::initializer_list<std::string_view> known) {
  for (const auto& [key, value] : j.items()) {
    bool found = false;
    for (auto k : known) found = found || key == k;
    if (!found) throw ContractError("config: unknown key '" + where + key + "'");
  }
}

template <class T>
void read(const json& j, const char* key, T& dst, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ContractError("config: '" + where + key + "' has the wrong type");
  }
}

void read_size(const json& j, const char* key, std::size_t& dst, const std::string& where) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ContractError("config: '" + where + key + "' must be a non-negative integer");
  }
  dst = v.get<std::size_t>();
}

RankVector read_ranks(const json& j, const std::string& where, std::size_t layers) {
  if (j.is_array()) {
    std::vector<int> ranks;
    for (const auto& v : j) {
      if (!v.is_number_integer()) throw ContractError("config: '" + where + "' entries must be integers");
      ranks.push_back(v.get<int>());
    }
    return RankVector(std::move(ranks));
  }
  require_object(j, where);
  reject_unknown(j, where + ".", {"start", "end", "step", "period"});
  for (const char* key : {"start", "end", "step", "period"}) {
    if (!j.contains(key) || !j.at(key).is_number_integer()) {
      throw ContractError("config: '" + where + "." + key + "' must be an integer");
    }
  }
  return stepped_schedule(j.at("start").get<int>(), j.at("end").get<int>(),
                          j.at("step").get<int>(), j.at("period").get<int>(),
                          static_cast<int>(layers));
}

}  // namespace

RunConfig default_run_config() {
  RunConfig c;
  c.train.batch = 16;
  c.train.select_best = true;
  c.lora_ranks = stepped_schedule(32, 12, 4, 2, static_cast<int>(c.model.layers));
  c.mora_ranks = stepped_schedule(64, 24, 8, 2, static_cast<int>(c.model.layers));
  return c;
}

RunConfig parse_run_config(const json& j) {
  require_object(j, "<root>");
  reject_unknown(j, "", {"model", "lora_ranks", "mora_ranks", "train", "data", "forget", "seed", "out"});
  RunConfig c = default_run_config();

  if (j.contains("model")) {
    const json& m = j.at("model");
    require_object(m, "model");
    reject_unknown(m, "model.", {"layers", "d_model", "heads", "vocab", "max_seq", "scenes",
                                 "lora_scale", "embedding_std", "scene_std"});
    read_size(m, "layers", c.model.layers, "model.");
    read_size(m, "d_model", c.model.d_model, "model.");
    read_size(m, "heads", c.model.heads, "model.");
    read_size(m, "vocab", c.model.vocab, "model.");
    read_size(m, "max_seq", c.model.max_seq, "model.");
    read_size(m, "scenes", c.model.scenes, "model.");
    read(m, "lora_scale", c.model.lora_scale, "model.");
    read(m, "embedding_std", c.model.embedding_std, "model.");
    read(m, "scene_std", c.model.scene_std, "model.");
  }
  const bool layers_changed = j.contains("model") && j.at("model").contains("layers");
  if (j.contains("lora_ranks")) {
    c.lora_ranks = read_ranks(j.at("lora_ranks"), "lora_ranks", c.model.layers);
  } else if (layers_changed) {
    throw ContractError("config: model.layers changed but lora_ranks not given");
  }
  if (j.contains("mora_ranks")) {
    c.mora_ranks = read_ranks(j.at("mora_ranks"), "mora_ranks", c.model.layers);
  } else if (layers_changed) {
    throw ContractError("config: model.layers changed but mora_ranks not given");
  }

  if (j.contains("train")) {
    const json& t = j.at("train");
    require_object(t, "train");
    reject_unknown(t, "train.", {"lr", "beta1", "beta2", "eps", "batch", "epochs", "select_best",
                                 "max_new", "mode"});
    read(t, "lr", c.train.adam.lr, "train.");
    read(t, "beta1", c.train.adam.beta1, "train.");
    read(t, "beta2", c.train.adam.beta2, "train.");
    read(t, "eps", c.train.adam.eps, "train.");
    read_size(t, "batch", c.train.batch, "train.");
    read_size(t, "epochs", c.train.epochs, "train.");
    read(t, "select_best", c.train.select_best, "train.");
    read_size(t, "max_new", c.train.max_new, "train.");
    read(t, "mode", c.train_mode, "train.");
  }
  if (j.contains("data")) {
    const json& d = j.at("data");
    require_object(d, "data");
    reject_unknown(d, "data.", {"domain", "n_train", "n_val"});
    read(d, "domain", c.domain, "data.");
    read_size(d, "n_train", c.n_train, "data.");
    read_size(d, "n_val", c.n_val, "data.");
  }
  if (j.contains("forget")) {
    const json& f = j.at("forget");
    require_object(f, "forget");
    reject_unknown(f, "forget.", {"stage1_epochs", "stage2_epochs", "seeds"});
    read_size(f, "stage1_epochs", c.stage1_epochs, "forget.");
    read_size(f, "stage2_epochs", c.stage2_epochs, "forget.");
    read(f, "seeds", c.seeds, "forget.");
  }
  read(j, "seed", c.seed, "");
  read(j, "out", c.out, "");
  validate(c);
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ContractError("config: cannot open '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ContractError("config: '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_run_config(j);
}

void validate(const RunConfig& c) {
  c.model.validate();
  c.lora_ranks.require_length(c.model.layers, "lora_ranks");
  c.mora_ranks.require_length(c.model.layers, "mora_ranks");
  c.mora_ranks.require_even("mora_ranks");
  const auto d = static_cast<int>(c.model.fused_dim());
  const auto k = static_cast<int>(c.model.d_model);
  if (c.lora_ranks[0] >= std::min(d, k)) {
    throw ContractError("config: LoRA rank " + std::to_string(c.lora_ranks[0]) +
                        " must be below min(d, k) = " + std::to_string(std::min(d, k)));
  }
  if (c.mora_ranks[0] >= d) {
    throw ContractError("config: MoRA rank " + std::to_string(c.mora_ranks[0]) +
                        " must be below fused_dim " + std::to_string(d));
  }
  if (!(c.train.adam.lr > 0.0) || !std::isfinite(c.train.adam.lr)) {
    throw ContractError("config: train.lr must be positive");
  }
  if (!(c.train.adam.beta1 >= 0.0 && c.train.adam.beta1 < 1.0) ||
      !(c.train.adam.beta2 >= 0.0 && c.train.adam.beta2 < 1.0) || !(c.train.adam.eps > 0.0)) {
    throw ContractError("config: Adam constants need 0 <= beta < 1 and eps > 0");
  }
  if (c.train.batch == 0) throw ContractError("config: train.batch must be positive");
  if (c.train.max_new == 0) throw ContractError("config: train.max_new must be positive");
  parse_train_mode(c.train_mode);
  standard_domain(c.domain, 0);
  if (c.n_train == 0 || c.n_val == 0) throw ContractError("config: data sizes must be >= 1");
  if (c.seeds.empty()) throw ContractError("config: forget.seeds must list at least one seed");
  if (c.model.scenes < 64) {
    throw ContractError("config: model.scenes must cover the 64 scenes of the two domains");
  }
  standard_vocab(c.model.vocab);
  if (c.out.empty()) throw ContractError("config: out must not be empty");
}

nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["model"] = {{"layers", c.model.layers},         {"d_model", c.model.d_model},
                {"heads", c.model.heads},           {"vocab", c.model.vocab},
                {"max_seq", c.model.max_seq},       {"scenes", c.model.scenes},
                {"lora_scale", c.model.lora_scale}, {"embedding_std", c.model.embedding_std},
                {"scene_std", c.model.scene_std}};
  j["lora_ranks"] = c.lora_ranks.ranks();
  j["mora_ranks"] = c.mora_ranks.ranks();
  j["train"] = {{"lr", c.train.adam.lr},
                {"beta1", c.train.adam.beta1},
                {"beta2", c.train.adam.beta2},
                {"eps", c.train.adam.eps},
                {"batch", c.train.batch},
                {"epochs", c.train.epochs},
                {"select_best", c.train.select_best},
                {"max_new", c.train.max_new},
                {"mode", c.train_mode}};
  j["data"] = {{"domain", c.domain}, {"n_train", c.n_train}, {"n_val", c.n_val}};
  j["forget"] = {{"stage1_epochs", c.stage1_epochs},
                 {"stage2_epochs", c.stage2_epochs},
                 {"seeds", c.seeds}};
  j["seed"] = c.seed;
  j["out"] = c.out;
  return j;
}

std::uint64_t config_hash(const RunConfig& c) {
  auto j = to_json(c);
  j.erase("out");
  return fnv1a64(j.dump());
}

TrainMode parse_train_mode(const std::string& name) {
  if (name == "full") return TrainMode::Full;
  if (name == "frozen-backbone") return TrainMode::FrozenBackbone;
  throw ContractError("config: unknown train mode '" + name + "' (expected full or frozen-backbone)");
}

ForgettingConfig forgetting_config(const RunConfig& c) {
  ForgettingConfig f;
  f.model = c.model;
  f.lora_ranks = c.lora_ranks;
  f.mora_ranks = c.mora_ranks;
  f.train = c.train;
  f.stage1_epochs = c.stage1_epochs;
  f.stage2_epochs = c.stage2_epochs;
  f.n_train = c.n_train;
  f.n_val = c.n_val;
  return f;
}

}  // namespace vmolora
