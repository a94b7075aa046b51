// SPDX-License-Identifier: Apache-2.0

#include "vmolora/data.hpp"

#include <algorithm>
#include <istream>
#include <iterator>
#include <map>
#include <nlohmann/json.hpp>
#include <ostream>
#include <set>

#include "vmolora/matrix.hpp"
#include "vmolora/metrics.hpp"
#include "vmolora/rng.hpp"

namespace vmolora {

Vocab::Vocab() {
  add("<pad>");
  add("<stop>");
  add("<unk>");
}

int Vocab::add(const std::string& word) {
  if (auto it = index_.find(word); it != index_.end()) return it->second;
  const int id = static_cast<int>(words_.size());
  words_.push_back(word);
  index_.emplace(word, id);
  return id;
}

int Vocab::id(const std::string& word) const {
  auto it = index_.find(word);
  return it == index_.end() ? kUnknown : it->second;
}

const std::string& Vocab::word(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) {
    throw ContractError("vocab: id " + std::to_string(id) + " out of range");
  }
  return words_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocab::encode(const std::string& text) const {
  std::vector<int> ids;
  for (const auto& w : split_words(text)) ids.push_back(id(w));
  return ids;
}

std::string Vocab::decode(std::span<const int> ids) const {
  std::string out;
  for (int t : ids) {
    if (t == kStop) break;
    if (t == kPad) continue;
    if (t < 0) throw ContractError("vocab: negative id " + std::to_string(t));
    if (!out.empty()) out += ' ';
    out += static_cast<std::size_t>(t) < words_.size() ? word(t) : word(kUnknown);
  }
  return out;
}

const std::string& SyntheticDomain::value(int scene, std::size_t attribute) const {
  if (scene < first_scene || scene >= first_scene + scene_count) {
    throw ContractError("domain " + name + ": scene " + std::to_string(scene) + " out of range");
  }
  const Attribute& attr = attributes.at(attribute);
  Rng rng(world_seed, name + "/scene" + std::to_string(scene) + "/" + attr.name);
  return attr.values[rng.index(attr.values.size())];
}

std::string SyntheticDomain::answer(int scene, std::size_t attribute) const {
  std::string text = attributes.at(attribute).answer_template;
  const auto pos = text.find("{}");
  text.replace(pos, 2, value(scene, attribute));
  return text;
}

std::vector<std::string> SyntheticDomain::answer_vocabulary() const {
  std::set<std::string> words;
  for (const auto& attr : attributes) {
    for (const auto& v : attr.values) {
      std::string text = attr.answer_template;
      text.replace(text.find("{}"), 2, v);
      for (auto& w : split_words(text)) words.insert(std::move(w));
    }
  }
  return {words.begin(), words.end()};
}

SyntheticDomain pituitary_domain(std::uint64_t world_seed) {
  SyntheticDomain d;
  d.name = "pituitary";
  d.first_scene = 0;
  d.scene_count = 32;
  d.world_seed = world_seed;
  d.attributes = {
      {"phase",
       {"what is the surgical phase ?", "which phase of surgery is this ?",
        "what phase is the operation in ?"},
       "the surgical phase is {}",
       {"nasal", "sellar", "closure"}},
      {"step",
       {"what is the current surgical step ?", "which step is being performed ?",
        "what step of the procedure is this ?"},
       "the current step is {}",
       {"septum", "sphenoidotomy", "dissection", "haemostasis", "resection", "suturing"}},
      {"instrument",
       {"which instrument is being used ?", "what tool is in use now ?",
        "what instrument is visible ?"},
       "the {} is in use",
       {"curette", "rongeur", "suction", "drill", "dissector", "forceps"}},
      {"position",
       {"where is the instrument located ?", "what is the instrument position ?",
        "where is the tool placed ?"},
       "instrument is at the {}",
       {"left", "right", "centre", "top", "bottom"}},
  };
  return d;
}

SyntheticDomain nephrectomy_domain(std::uint64_t world_seed) {
  SyntheticDomain d;
  d.name = "nephrectomy";
  d.first_scene = 32;
  d.scene_count = 32;
  d.world_seed = world_seed;
  d.attributes = {
      {"organ",
       {"what organ is being operated ?", "which organ is visible here ?",
        "what organ is shown in frame ?"},
       "{} being operated on",
       {"kidney", "ureter", "bowel", "fat", "vessel"}},
      {"tool",
       {"which tool grasps tissue ?", "what tool is grasping tissue ?",
        "which grasping tool is shown ?"},
       "a {} grasping tissue",
       {"clasper", "scissors", "hook", "stapler", "clipper", "needle"}},
      {"action",
       {"what action is performed ?", "which action is happening here ?",
        "what is the tool action ?"},
       "action performed was {}",
       {"cutting", "retraction", "cauterization", "clipping", "stapling"}},
      {"location",
       {"where is the tool located ?", "which region holds the tool ?",
        "what region is the tool in ?"},
       "located near {} region",
       {"upper", "lower", "anterior", "posterior", "lateral"}},
  };
  return d;
}

SyntheticDomain standard_domain(const std::string& name, std::uint64_t seed) {
  const std::uint64_t world = derive_seed(seed, "world/" + name);
  if (name == "pituitary") return pituitary_domain(world);
  if (name == "nephrectomy") return nephrectomy_domain(world);
  throw ContractError("unknown domain '" + name + "' (expected pituitary or nephrectomy)");
}

namespace {

double jaccard(const std::set<std::string>& a, const std::set<std::string>& b) {
  std::set<std::string> both;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(),
                        std::inserter(both, both.begin()));
  std::set<std::string> all = a;
  all.insert(b.begin(), b.end());
  return all.empty() ? 0.0 : static_cast<double>(both.size()) / static_cast<double>(all.size());
}

void add_domain_words(Vocab& vocab, const SyntheticDomain& d) {
  for (const auto& attr : d.attributes) {
    for (const auto& q : attr.questions) {
      for (const auto& w : split_words(q)) vocab.add(w);
    }
    for (const auto& v : attr.values) {
      std::string text = attr.answer_template;
      text.replace(text.find("{}"), 2, v);
      for (const auto& w : split_words(text)) vocab.add(w);
    }
  }
}

}  // namespace

double answer_vocab_overlap(const SyntheticDomain& a, const SyntheticDomain& b) {
  const auto va = a.answer_vocabulary();
  const auto vb = b.answer_vocabulary();
  return jaccard({va.begin(), va.end()}, {vb.begin(), vb.end()});
}

Vocab standard_vocab(std::size_t capacity) {
  const auto a = pituitary_domain(0);
  const auto b = nephrectomy_domain(0);
  const double overlap = answer_vocab_overlap(a, b);
  if (overlap >= 0.3) {
    throw ContractError("standard domains share " + std::to_string(overlap * 100.0) +
                        "% of answer vocabulary (limit 30%)");
  }
  Vocab vocab;
  add_domain_words(vocab, a);
  add_domain_words(vocab, b);
  if (vocab.size() > capacity) {
    throw ContractError("vocabulary of " + std::to_string(vocab.size()) +
                        " words overflows configured size " + std::to_string(capacity));
  }
  return vocab;
}

Corpus gen_corpus(const SyntheticDomain& domain, const Vocab& vocab, std::size_t n_train,
                  std::size_t n_val, std::uint64_t seed) {
  if (n_train < 1 || n_val < 1) throw ContractError("gen_corpus: n_train and n_val must be >= 1");

  struct Key {
    int scene;
    std::size_t attribute;
    std::size_t phrasing;
  };
  std::vector<Key> universe;
  for (int s = domain.first_scene; s < domain.first_scene + domain.scene_count; ++s) {
    for (std::size_t a = 0; a < domain.attributes.size(); ++a) {
      for (std::size_t p = 0; p < domain.attributes[a].questions.size(); ++p) {
        universe.push_back({s, a, p});
      }
    }
  }
  Rng split_rng(seed, domain.name + "/split");
  split_rng.shuffle(universe);

  std::map<std::pair<int, std::size_t>, std::size_t> remaining;
  for (const Key& k : universe) ++remaining[{k.scene, k.attribute}];

  std::vector<Key> val_keys;
  std::vector<Key> pool;
  for (const Key& k : universe) {
    auto& left = remaining[{k.scene, k.attribute}];
    if (val_keys.size() < n_val && left > 1) {
      val_keys.push_back(k);
      --left;
    } else {
      pool.push_back(k);
    }
  }
  if (val_keys.size() < n_val) {
    throw ContractError("gen_corpus: domain " + domain.name + " cannot hold out " +
                        std::to_string(n_val) + " validation pairs");
  }

  auto make = [&](const Key& k, const char* split) {
    QaPair qa;
    qa.domain = domain.name;
    qa.scene_id = k.scene;
    qa.question = domain.attributes[k.attribute].questions[k.phrasing];
    qa.answer = domain.answer(k.scene, k.attribute);
    qa.split = split;
    qa.question_ids = vocab.encode(qa.question);
    qa.answer_ids = vocab.encode(qa.answer);
    return qa;
  };

  Corpus corpus;
  corpus.train.reserve(n_train);
  Rng draw_rng(seed, domain.name + "/train-draws");
  std::vector<Key> pass = pool;
  while (corpus.train.size() < n_train) {
    draw_rng.shuffle(pass);
    for (const Key& k : pass) {
      if (corpus.train.size() == n_train) break;
      corpus.train.push_back(make(k, "train"));
    }
  }
  for (const Key& k : val_keys) corpus.val.push_back(make(k, "val"));
  return corpus;
}

double corpus_answer_overlap(const Corpus& a, const Corpus& b) {
  auto words = [](const Corpus& c) {
    std::set<std::string> out;
    for (const auto* part : {&c.train, &c.val}) {
      for (const auto& qa : *part) {
        for (auto& w : split_words(qa.answer)) out.insert(std::move(w));
      }
    }
    return out;
  };
  return jaccard(words(a), words(b));
}

void write_corpus_jsonl(std::ostream& out, const Corpus& corpus) {
  for (const auto* part : {&corpus.train, &corpus.val}) {
    for (const auto& qa : *part) {
      nlohmann::ordered_json j;
      j["domain"] = qa.domain;
      j["scene_id"] = qa.scene_id;
      j["question"] = qa.question;
      j["answer"] = qa.answer;
      j["split"] = qa.split;
      out << j.dump() << '\n';
    }
  }
}

Corpus read_corpus_jsonl(std::istream& in, const Vocab& vocab) {
  Corpus corpus;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      QaPair qa;
      qa.domain = j.at("domain").get<std::string>();
      qa.scene_id = j.at("scene_id").get<int>();
      qa.question = j.at("question").get<std::string>();
      qa.answer = j.at("answer").get<std::string>();
      qa.split = j.at("split").get<std::string>();
      qa.question_ids = vocab.encode(qa.question);
      qa.answer_ids = vocab.encode(qa.answer);
      if (qa.split == "train") {
        corpus.train.push_back(std::move(qa));
      } else if (qa.split == "val") {
        corpus.val.push_back(std::move(qa));
      } else {
        throw ContractError("unknown split '" + qa.split + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw ContractError("corpus line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return corpus;
}

}  // namespace vmolora
