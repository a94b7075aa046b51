// SPDX-License-Identifier: Apache-2.0

#include "vmolora/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "vmolora/matrix.hpp"

namespace vmolora {

Words split_words(std::string_view text) {
  Words out;
  std::istringstream in{std::string(text)};
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

namespace {

void require_reference(const Words& reference, const char* metric) {
  if (reference.empty()) throw ContractError(std::string(metric) + ": empty reference");
}

std::map<Words, int> ngram_counts(const Words& words, std::size_t n) {
  std::map<Words, int> counts;
  for (std::size_t i = 0; i + n <= words.size(); ++i) {
    ++counts[Words(words.begin() + static_cast<std::ptrdiff_t>(i),
                   words.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

std::size_t overlap(const Words& a, const Words& b) {
  std::map<std::string, int> ca;
  std::map<std::string, int> cb;
  for (const auto& w : a) ++ca[w];
  for (const auto& w : b) ++cb[w];
  std::size_t m = 0;
  for (const auto& [w, n] : ca) {
    if (auto it = cb.find(w); it != cb.end()) m += static_cast<std::size_t>(std::min(n, it->second));
  }
  return m;
}

double f1(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

}  // namespace

double bleu(const Words& candidate, const Words& reference, int max_n) {
  require_reference(reference, "bleu");
  if (max_n < 1 || max_n > 4) throw ContractError("bleu: max_n must be in 1..4");
  if (candidate.empty()) return 0.0;
  double log_sum = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    const auto nn = static_cast<std::size_t>(n);
    if (candidate.size() < nn) return 0.0;
    const auto cand = ngram_counts(candidate, nn);
    const auto ref = ngram_counts(reference, nn);
    std::size_t clipped = 0;
    for (const auto& [gram, count] : cand) {
      if (auto it = ref.find(gram); it != ref.end()) {
        clipped += static_cast<std::size_t>(std::min(count, it->second));
      }
    }
    if (clipped == 0) return 0.0;
    log_sum += std::log(static_cast<double>(clipped) /
                        static_cast<double>(candidate.size() - nn + 1));
  }
  const double c = static_cast<double>(candidate.size());
  const double r = static_cast<double>(reference.size());
  const double bp = std::min(1.0, std::exp(1.0 - r / c));
  return bp * std::exp(log_sum / max_n);
}

double rouge_1(const Words& candidate, const Words& reference) {
  require_reference(reference, "rouge_1");
  if (candidate.empty()) return 0.0;
  const double m = static_cast<double>(overlap(candidate, reference));
  return f1(m / static_cast<double>(candidate.size()), m / static_cast<double>(reference.size()));
}

double rouge_l(const Words& candidate, const Words& reference) {
  require_reference(reference, "rouge_l");
  if (candidate.empty()) return 0.0;
  const std::size_t n = candidate.size();
  const std::size_t m = reference.size();
  std::vector<std::size_t> prev(m + 1, 0);
  std::vector<std::size_t> cur(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      cur[j] = candidate[i - 1] == reference[j - 1] ? prev[j - 1] + 1
                                                    : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  const double lcs = static_cast<double>(prev[m]);
  return f1(lcs / static_cast<double>(n), lcs / static_cast<double>(m));
}

double meteor_exact(const Words& candidate, const Words& reference) {
  require_reference(reference, "meteor_exact");
  if (candidate.empty()) return 0.0;
  // Align left to right; a word continues the previous match's reference
  // run when it can, otherwise takes the earliest unused reference slot.
  std::vector<bool> used(reference.size(), false);
  std::vector<long> align(candidate.size(), -1);
  long prev = -2;
  for (std::size_t i = 0; i < candidate.size(); ++i) {
    long pick = -1;
    const long next = prev + 1;
    if (next >= 0 && static_cast<std::size_t>(next) < reference.size() &&
        !used[static_cast<std::size_t>(next)] &&
        reference[static_cast<std::size_t>(next)] == candidate[i]) {
      pick = next;
    } else {
      for (std::size_t j = 0; j < reference.size(); ++j) {
        if (!used[j] && reference[j] == candidate[i]) {
          pick = static_cast<long>(j);
          break;
        }
      }
    }
    if (pick >= 0) {
      used[static_cast<std::size_t>(pick)] = true;
      align[i] = pick;
      prev = pick;
    } else {
      prev = -2;
    }
  }
  std::size_t matches = 0;
  std::size_t chunks = 0;
  for (std::size_t i = 0; i < align.size(); ++i) {
    if (align[i] < 0) continue;
    ++matches;
    const bool continues = i > 0 && align[i - 1] >= 0 && align[i] == align[i - 1] + 1;
    if (!continues) ++chunks;
  }
  if (matches == 0) return 0.0;
  const double m = static_cast<double>(matches);
  const double p = m / static_cast<double>(candidate.size());
  const double r = m / static_cast<double>(reference.size());
  const double f_mean = 10.0 * p * r / (r + 9.0 * p);
  const double frag = static_cast<double>(chunks) / m;
  return f_mean * (1.0 - 0.5 * frag * frag * frag);
}

double token_accuracy(const Words& candidate, const Words& reference) {
  const std::size_t longest = std::max(candidate.size(), reference.size());
  if (longest == 0) return 1.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < std::min(candidate.size(), reference.size()); ++i) {
    hits += candidate[i] == reference[i] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(longest);
}

MetricReport score_corpus(const std::vector<Words>& candidates,
                          const std::vector<Words>& references) {
  if (candidates.size() != references.size()) {
    throw ContractError("score_corpus: " + std::to_string(candidates.size()) +
                        " candidates for " + std::to_string(references.size()) + " references");
  }
  if (candidates.empty()) throw ContractError("score_corpus: no samples");
  MetricReport rep;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto& c = candidates[i];
    const auto& r = references[i];
    for (int n = 1; n <= 4; ++n) rep.bleu[static_cast<std::size_t>(n - 1)] += bleu(c, r, n);
    rep.rouge1 += rouge_1(c, r);
    rep.rougeL += rouge_l(c, r);
    rep.meteor += meteor_exact(c, r);
    rep.token_accuracy += token_accuracy(c, r);
  }
  const double inv = 1.0 / static_cast<double>(candidates.size());
  for (double& b : rep.bleu) b *= inv;
  rep.rouge1 *= inv;
  rep.rougeL *= inv;
  rep.meteor *= inv;
  rep.token_accuracy *= inv;
  rep.count = candidates.size();
  for (std::size_t n = 1; n < rep.bleu.size(); ++n) {
    if (rep.bleu[n] > rep.bleu[n - 1] + 1e-12) rep.bleu_monotone = false;
  }
  return rep;
}

}  // namespace vmolora
