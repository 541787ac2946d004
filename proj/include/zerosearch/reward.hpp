#pragma once

// Answer scoring: bag-of-words F1 used as the training reward and exact match
// used for evaluation. Both operate on a normalized token form: lowercased,
// punctuation replaced by spaces, the articles a/an/the removed, whitespace
// collapsed.
//
//     f1 = 2 * IN / (PN + RN)
//
// where IN is the multiset overlap between prediction and gold tokens, PN the
// prediction length, RN the gold length. F1 rather than EM as the reward
// keeps long answer dumps unprofitable: appending tokens outside the gold set
// strictly lowers a positive score.

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "zerosearch/tags.hpp"

namespace zerosearch::reward {

struct NormalizeOptions {
  bool lowercase = true;
  bool strip_punctuation = true;
  bool remove_articles = true;
};

using NormalizedAnswer = std::vector<std::string>;

inline bool is_article(std::string_view w) {
  return w == "a" || w == "an" || w == "the";
}

inline NormalizedAnswer normalize_answer(std::string_view raw,
                                         const NormalizeOptions& opts = {}) {
  std::string cleaned;
  cleaned.reserve(raw.size());
  for (unsigned char c : raw) {
    if (opts.strip_punctuation && c < 128 && std::ispunct(c)) {
      cleaned.push_back(' ');
    } else if (opts.lowercase) {
      cleaned.push_back(static_cast<char>(std::tolower(c)));
    } else {
      cleaned.push_back(static_cast<char>(c));
    }
  }
  NormalizedAnswer tokens;
  std::size_t i = 0;
  while (i < cleaned.size()) {
    while (i < cleaned.size() && std::isspace(static_cast<unsigned char>(cleaned[i]))) ++i;
    std::size_t j = i;
    while (j < cleaned.size() && !std::isspace(static_cast<unsigned char>(cleaned[j]))) ++j;
    if (j > i) {
      std::string tok = cleaned.substr(i, j - i);
      if (!(opts.remove_articles && is_article(tok))) tokens.push_back(std::move(tok));
    }
    i = j;
  }
  return tokens;
}

struct RewardOutcome {
  double f1 = 0.0;
  bool em = false;
  // Token counts behind f1, taken from the best-scoring gold answer.
  int overlap_in = 0;
  int pred_len_pn = 0;
  int gold_len_rn = 0;
};

class NoGoldAnswers : public std::invalid_argument {
 public:
  NoGoldAnswers() : std::invalid_argument("no gold answers provided") {}
};

namespace detail {

inline int multiset_overlap(const NormalizedAnswer& a, const NormalizedAnswer& b) {
  std::map<std::string_view, int> counts;
  for (const auto& t : a) ++counts[t];
  int overlap = 0;
  for (const auto& t : b) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  return overlap;
}

}  // namespace detail

// F1 against a single gold token list. Both sides empty scores 1.
inline RewardOutcome f1_single(const NormalizedAnswer& pred, const NormalizedAnswer& gold) {
  RewardOutcome out;
  out.pred_len_pn = static_cast<int>(pred.size());
  out.gold_len_rn = static_cast<int>(gold.size());
  out.em = (pred == gold);
  if (pred.empty() && gold.empty()) {
    out.f1 = 1.0;
    return out;
  }
  out.overlap_in = detail::multiset_overlap(pred, gold);
  out.f1 = 2.0 * out.overlap_in /
           static_cast<double>(out.pred_len_pn + out.gold_len_rn);
  return out;
}

// Max F1 over the gold answers; em is true when the normalized prediction
// equals any normalized gold as an ordered sequence.
inline RewardOutcome f1_reward(std::string_view prediction,
                               const std::vector<std::string>& golds,
                               const NormalizeOptions& opts = {}) {
  if (golds.empty()) throw NoGoldAnswers();
  const NormalizedAnswer pred = normalize_answer(prediction, opts);
  RewardOutcome best;
  bool first = true;
  bool any_em = false;
  for (const std::string& g : golds) {
    RewardOutcome r = f1_single(pred, normalize_answer(g, opts));
    any_em = any_em || r.em;
    if (first || r.f1 > best.f1) {
      best = r;
      first = false;
    }
  }
  best.em = any_em;
  return best;
}

inline bool em_score(std::string_view prediction, const std::vector<std::string>& golds,
                     const NormalizeOptions& opts = {}) {
  if (golds.empty()) throw NoGoldAnswers();
  const NormalizedAnswer pred = normalize_answer(prediction, opts);
  for (const std::string& g : golds)
    if (pred == normalize_answer(g, opts)) return true;
  return false;
}

// Terminal reward for a trajectory. A transcript without an extractable
// answer scores zero; the training signal must be total.
inline RewardOutcome score_trajectory(const tags::Transcript& t,
                                      const std::vector<std::string>& golds,
                                      const NormalizeOptions& opts = {}) {
  const std::optional<std::string> answer = tags::extract_final_answer(t);
  if (!answer) return RewardOutcome{};
  return f1_reward(*answer, golds, opts);
}

// True when gold's normalized token sequence occurs contiguously inside the
// text. Used by the simulator quality guarantee and the heuristic judge.
inline bool contains_answer(std::string_view text, std::string_view gold,
                            const NormalizeOptions& opts = {}) {
  const NormalizedAnswer hay = normalize_answer(text, opts);
  const NormalizedAnswer needle = normalize_answer(gold, opts);
  if (needle.empty()) return false;
  if (needle.size() > hay.size()) return false;
  for (std::size_t i = 0; i + needle.size() <= hay.size(); ++i) {
    if (std::equal(needle.begin(), needle.end(), hay.begin() + i)) return true;
  }
  return false;
}

inline bool contains_any_answer(std::string_view text,
                                const std::vector<std::string>& golds,
                                const NormalizeOptions& opts = {}) {
  for (const std::string& g : golds)
    if (contains_answer(text, g, opts)) return true;
  return false;
}

}  // namespace zerosearch::reward
