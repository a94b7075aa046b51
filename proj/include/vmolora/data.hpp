// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace vmolora {

/// Word-level vocabulary with reserved ids for padding, stop and unknown.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kStop = 1;
  static constexpr int kUnknown = 2;

  Vocab();

  /// Adds `word` if new; returns its id.
  int add(const std::string& word);
  int id(const std::string& word) const;
  const std::string& word(int id) const;
  std::size_t size() const { return words_.size(); }

  std::vector<int> encode(const std::string& text) const;
  /// Joins words with single spaces, skipping pad and stopping at stop.
  /// Ids past the known words (unused model rows) render as <unk>.
  std::string decode(std::span<const int> ids) const;

 private:
  std::vector<std::string> words_;
  std::map<std::string, int> index_;
};

/// One question family: paraphrased questions sharing an answer template.
/// The template's "{}" is filled with the scene's value for this attribute.
struct Attribute {
  std::string name;
  std::vector<std::string> questions;
  std::string answer_template;
  std::vector<std::string> values;
};

/// Template grammar over scenes. Each scene has one fixed value per
/// attribute, drawn from a stream seeded by `world_seed`.
struct SyntheticDomain {
  std::string name;
  std::vector<Attribute> attributes;
  int first_scene = 0;
  int scene_count = 0;
  std::uint64_t world_seed = 0;

  const std::string& value(int scene, std::size_t attribute) const;
  std::string answer(int scene, std::size_t attribute) const;
  std::vector<std::string> answer_vocabulary() const;
};

/// The two standard domains: surgical-phase style questions on scenes
/// [0, 32) and nephrectomy style questions on scenes [32, 64).
SyntheticDomain pituitary_domain(std::uint64_t world_seed);
SyntheticDomain nephrectomy_domain(std::uint64_t world_seed);

/// "pituitary" or "nephrectomy" with its world drawn from stream
/// world/<name> of `seed`.
SyntheticDomain standard_domain(const std::string& name, std::uint64_t seed);

/// |answers(a) ∩ answers(b)| / |answers(a) ∪ answers(b)|.
double answer_vocab_overlap(const SyntheticDomain& a, const SyntheticDomain& b);

/// Domain-union vocabulary over the standard grammar. Throws when it would
/// exceed `capacity`.
Vocab standard_vocab(std::size_t capacity);

struct QaPair {
  std::string domain;
  int scene_id = 0;
  std::string question;
  std::string answer;
  std::string split;
  std::vector<int> question_ids;
  std::vector<int> answer_ids;
};

struct Corpus {
  std::vector<QaPair> train;
  std::vector<QaPair> val;
};

/// Deterministic split and sampling. Validation pairs are distinct
/// (scene, question) combinations never used for training, and each
/// held-out (scene, attribute) keeps at least one paraphrase in training.
/// Training draws cycle through the remaining pool in reshuffled passes.
Corpus gen_corpus(const SyntheticDomain& domain, const Vocab& vocab, std::size_t n_train,
                  std::size_t n_val, std::uint64_t seed);

/// Answer-word Jaccard overlap measured on generated corpora.
double corpus_answer_overlap(const Corpus& a, const Corpus& b);

/// One JSON object per line: {domain, scene_id, question, answer, split}.
void write_corpus_jsonl(std::ostream& out, const Corpus& corpus);
Corpus read_corpus_jsonl(std::istream& in, const Vocab& vocab);

}  // namespace vmolora
