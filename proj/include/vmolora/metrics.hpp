// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

namespace vmolora {

using Words = std::vector<std::string>;

/// Whitespace tokenization.
Words split_words(std::string_view text);

/// Sentence BLEU against a single reference: geometric mean of clipped
/// n-gram precisions for n = 1..max_n times min(1, exp(1 - r/c)). No
/// smoothing; any zero precision yields 0. Empty candidate scores 0.
double bleu(const Words& candidate, const Words& reference, int max_n);

/// Unigram-overlap F1.
double rouge_1(const Words& candidate, const Words& reference);
/// LCS-based F1.
double rouge_l(const Words& candidate, const Words& reference);

/// METEOR restricted to exact unigram matching (no stemming or synonyms):
/// F_mean = 10PR / (R + 9P), penalty = 0.5 * (chunks / m)^3.
double meteor_exact(const Words& candidate, const Words& reference);

/// Fraction of positions where candidate and reference agree, over the
/// longer of the two lengths.
double token_accuracy(const Words& candidate, const Words& reference);

/// Corpus scores as means of per-sample scores.
struct MetricReport {
  std::array<double, 4> bleu{};  // BLEU-1..BLEU-4
  double rouge1 = 0.0;
  double rougeL = 0.0;
  double meteor = 0.0;
  double token_accuracy = 0.0;
  std::size_t count = 0;
  /// BLEU-1 >= BLEU-2 >= ... on this corpus. Usually true, but a single
  /// reordered pair ("a b a" vs "b a b") can raise BLEU-2 above BLEU-1.
  bool bleu_monotone = true;
};

/// Scores aligned candidate/reference lists. Throws on length mismatch or an
/// empty list.
MetricReport score_corpus(const std::vector<Words>& candidates,
                          const std::vector<Words>& references);

}  // namespace vmolora
