#pragma once

// Simulated search engine. Serves a fixed number of documents per query with
// controllable quality: useful result sets contain a gold answer verbatim,
// noisy ones never do. Two backends share the interface — a deterministic
// corpus backend built from authored fact files, and a remote generative
// backend speaking the /search JSON protocol.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "zerosearch/curriculum.hpp"
#include "zerosearch/random.hpp"
#include "zerosearch/reward.hpp"

namespace zerosearch::sim {

using curriculum::QualityFlag;

struct Document {
  std::string text;
  int rank = 1;  // 1-based, contiguous within a result set
  QualityFlag quality_provenance = QualityFlag::Useful;
};

struct SimQuery {
  std::string query;
  std::string question;
  std::string ground_truth;
  QualityFlag quality = QualityFlag::Useful;
  int doc_count = 5;
};

struct CorpusEntry {
  std::string id;
  std::string question;
  std::vector<std::string> gold_answers;
  std::vector<std::string> useful_facts;      // each contains a gold answer
  std::vector<std::string> distractor_facts;  // none contains a gold answer
};

class EmptySlot : public std::invalid_argument {
 public:
  explicit EmptySlot(const std::string& slot)
      : std::invalid_argument("empty prompt slot: " + slot) {}
};

class BackendUnavailable : public std::runtime_error {
 public:
  explicit BackendUnavailable(const std::string& what) : std::runtime_error(what) {}
};

class CorpusFormatError : public std::runtime_error {
 public:
  explicit CorpusFormatError(const std::string& what) : std::runtime_error(what) {}
};

// --- simulation prompt ------------------------------------------------------

// Quality-controlled document generation prompt. The quality keyword appears
// three times; the question and its answer are included to widen what the
// generator can draw on.
inline std::string render_sim_prompt(const SimQuery& q) {
  auto blank = [](std::string_view s) {
    for (unsigned char c : s)
      if (!std::isspace(c)) return false;
    return true;
  };
  if (blank(q.query)) throw EmptySlot("query");
  if (blank(q.question)) throw EmptySlot("question");
  if (blank(q.ground_truth)) throw EmptySlot("ground_truth");

  const bool noisy = q.quality == QualityFlag::Noisy;
  const std::string lower = noisy ? "noisy" : "useful";
  const std::string upper = noisy ? "Noisy" : "Useful";
  const std::string count = q.doc_count == 5 ? "five" : std::to_string(q.doc_count);

  std::string out;
  out += "You are the Google search engine.\n";
  out += "Given a query, you need to generate " + count + " " + lower +
         " documents for the query.\n";
  out += "The user is trying to answer the question: " + q.question +
         " whose answer is " + q.ground_truth + ".\n";
  out += "Each document should contain about 30 words, and these documents should contain " +
         lower + " information.\n";
  out += "Query: " + q.query + "\n";
  out += upper + " Output:\n";
  return out;
}

// --- backend interface ------------------------------------------------------

class SimulatorBackend {
 public:
  virtual ~SimulatorBackend() = default;
  virtual std::vector<Document> search(const SimQuery& q) = 0;
  virtual bool supports_concurrent_calls() const { return true; }
};

// --- corpus backend ---------------------------------------------------------

// Neutral vocabulary used to pad documents toward the ~30 word target and to
// synthesize distractor-only documents. Kept free of typical answer tokens;
// composition additionally filters against the entry's golds.
inline const std::vector<std::string>& neutral_filler_words() {
  static const std::vector<std::string> words = {
      "archive",   "catalog",   "entry",    "index",     "notes",
      "pending",   "review",    "summary",  "listing",   "reference",
      "source",    "material",  "context",  "general",   "overview",
      "related",   "misc",      "compiled", "digest",    "collection",
      "various",   "assorted",  "record",   "document",  "page",
      "section",   "volume",    "issue",    "edition",   "series",
      "excerpt",   "abstract",  "remark",   "update",    "revision",
      "draft",     "appendix",  "footnote", "margin",    "ledger"};
  return words;
}

class CorpusBackend : public SimulatorBackend {
 public:
  explicit CorpusBackend(std::vector<CorpusEntry> entries, std::uint64_t seed = 0,
                         int target_doc_words = 30)
      : seed_(seed), target_doc_words_(target_doc_words) {
    for (CorpusEntry& e : entries) {
      validate_entry(e);
      by_question_.emplace(e.question, std::move(e));
    }
  }

  static CorpusBackend from_jsonl(const std::string& path, std::uint64_t seed = 0) {
    std::ifstream in(path);
    if (!in) throw CorpusFormatError("cannot open corpus file: " + path);
    std::vector<CorpusEntry> entries;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw CorpusFormatError(path + ":" + std::to_string(lineno) + ": " + e.what());
      }
      CorpusEntry e;
      e.id = j.value("id", "line" + std::to_string(lineno));
      e.question = j.at("question").get<std::string>();
      e.gold_answers = j.at("gold_answers").get<std::vector<std::string>>();
      e.useful_facts = j.at("useful_facts").get<std::vector<std::string>>();
      e.distractor_facts = j.at("distractor_facts").get<std::vector<std::string>>();
      entries.push_back(std::move(e));
    }
    return CorpusBackend(std::move(entries), seed);
  }

  std::vector<Document> search(const SimQuery& q) override {
    if (q.doc_count < 1) throw std::invalid_argument("doc_count must be positive");
    const auto it = by_question_.find(q.question);
    Rng rng(request_seed(q));
    std::vector<std::string> golds;
    std::vector<std::string> bodies;

    if (it == by_question_.end()) {
      ++miss_count_;
      if (!q.ground_truth.empty()) golds.push_back(q.ground_truth);
      for (int i = 0; i < q.doc_count; ++i) bodies.push_back("");
    } else {
      const CorpusEntry& e = it->second;
      golds = e.gold_answers;
      bodies = pick_bodies(e, q, rng);
    }

    std::vector<Document> docs;
    docs.reserve(bodies.size());
    for (std::size_t i = 0; i < bodies.size(); ++i) {
      Document d;
      d.rank = static_cast<int>(i) + 1;
      d.quality_provenance = q.quality;
      d.text = fit_to_length(bodies[i], golds,
                             /*keep_gold=*/q.quality == QualityFlag::Useful,
                             Rng(mix(request_seed(q), static_cast<std::uint64_t>(i))));
      docs.push_back(std::move(d));
    }
    return docs;
  }

  // Questions that had no corpus entry; result sets for them are synthesized
  // from filler and carry no quality guarantee.
  std::uint64_t miss_count() const { return miss_count_.load(); }

  std::vector<std::string> questions() const {
    std::vector<std::string> qs;
    qs.reserve(by_question_.size());
    for (const auto& [question, entry] : by_question_) qs.push_back(question);
    std::sort(qs.begin(), qs.end());
    return qs;
  }

  const CorpusEntry* find(const std::string& question) const {
    auto it = by_question_.find(question);
    return it == by_question_.end() ? nullptr : &it->second;
  }

 private:
  static void validate_entry(const CorpusEntry& e) {
    if (e.question.empty()) throw CorpusFormatError("entry with empty question");
    if (e.gold_answers.empty())
      throw CorpusFormatError(e.id + ": entry has no gold answers");
    if (e.useful_facts.empty())
      throw CorpusFormatError(e.id + ": entry has no useful facts");
    for (const std::string& f : e.useful_facts) {
      if (!reward::contains_any_answer(f, e.gold_answers))
        throw CorpusFormatError(e.id + ": useful fact lacks a gold answer: " + f);
    }
    for (const std::string& f : e.distractor_facts) {
      if (reward::contains_any_answer(f, e.gold_answers))
        throw CorpusFormatError(e.id + ": distractor fact contains a gold answer: " + f);
    }
  }

  std::uint64_t request_seed(const SimQuery& q) const {
    std::uint64_t s = mix(seed_, q.query);
    s = mix(s, q.question);
    s = mix(s, q.ground_truth);
    s = mix(s, quality_name(q.quality));
    s = mix(s, static_cast<std::uint64_t>(q.doc_count));
    return s;
  }

  // Selects fact texts for one result set. Useful sets carry two or three
  // gold-bearing facts (never fewer than one); noisy sets only distractors.
  // Shortfalls become empty bodies, later padded from the filler vocabulary.
  std::vector<std::string> pick_bodies(const CorpusEntry& e, const SimQuery& q,
                                       Rng& rng) const {
    const std::size_t k = static_cast<std::size_t>(q.doc_count);
    std::vector<std::string> chosen;

    auto sample = [&rng](std::vector<std::string> pool, std::size_t n) {
      shuffle(pool, rng);
      if (pool.size() > n) pool.resize(n);
      return pool;
    };

    if (q.quality == QualityFlag::Useful) {
      const std::size_t want = std::min({e.useful_facts.size(), k, std::size_t{3}});
      chosen = sample(e.useful_facts, std::max<std::size_t>(want, 1));
      for (const std::string& d : sample(e.distractor_facts, k - chosen.size()))
        chosen.push_back(d);
    } else {
      chosen = sample(e.distractor_facts, k);
    }
    while (chosen.size() < k) chosen.push_back("");
    shuffle(chosen, rng);
    return chosen;
  }

  static void shuffle(std::vector<std::string>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i)
      std::swap(v[i - 1], v[rng.index(i)]);
  }

  // Pads toward the word target with gold-free filler; truncates long facts
  // unless that would cut the gold answer out of a useful document.
  std::string fit_to_length(const std::string& body, const std::vector<std::string>& golds,
                            bool keep_gold, Rng rng) const {
    std::vector<std::string> words;
    {
      std::istringstream in(body);
      std::string w;
      while (in >> w) words.push_back(w);
    }
    const std::size_t target = static_cast<std::size_t>(target_doc_words_);
    if (words.size() > target) {
      std::vector<std::string> cut(words.begin(), words.begin() + target);
      const std::string cut_text = join(cut);
      if (!keep_gold || reward::contains_any_answer(cut_text, golds)) words = std::move(cut);
    }
    if (words.size() < target) {
      std::vector<std::string> filler;
      for (const std::string& w : neutral_filler_words()) {
        bool clashes = false;
        for (const std::string& g : golds)
          if (reward::contains_answer(g, w)) clashes = true;
        if (!clashes) filler.push_back(w);
      }
      shuffle(filler, rng);
      for (std::size_t i = 0; words.size() < target && i < filler.size(); ++i)
        words.push_back(filler[i]);
    }
    return join(words);
  }

  static std::string join(const std::vector<std::string>& words) {
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
      if (i) out += ' ';
      out += words[i];
    }
    return out;
  }

  std::unordered_map<std::string, CorpusEntry> by_question_;
  std::uint64_t seed_;
  int target_doc_words_;
  std::atomic<std::uint64_t> miss_count_{0};
};

// --- wire format ------------------------------------------------------------

inline void to_json(nlohmann::json& j, const Document& d) {
  j = nlohmann::json{{"rank", d.rank}, {"text", d.text}};
}

inline void to_json(nlohmann::json& j, const SimQuery& q) {
  j = nlohmann::json{{"query", q.query},
                     {"question", q.question},
                     {"ground_truth", q.ground_truth},
                     {"quality", quality_name(q.quality)},
                     {"doc_count", q.doc_count}};
}

inline SimQuery sim_query_from_json(const nlohmann::json& j) {
  SimQuery q;
  q.query = j.at("query").get<std::string>();
  q.question = j.value("question", "");
  q.ground_truth = j.value("ground_truth", "");
  q.quality = curriculum::quality_from_name(j.value("quality", "useful"));
  q.doc_count = j.value("doc_count", 5);
  return q;
}

}  // namespace zerosearch::sim
