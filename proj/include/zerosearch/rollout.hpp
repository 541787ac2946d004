#pragma once

// Multi-turn trajectory orchestration. Drives a policy backend through the
// tag protocol, intercepts search segments, samples document quality from the
// curriculum, injects information segments, and emits mask-annotated
// trajectories ready for masked policy-gradient training.

#include <cstdint>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "zerosearch/curriculum.hpp"
#include "zerosearch/random.hpp"
#include "zerosearch/reward.hpp"
#include "zerosearch/search_sim.hpp"
#include "zerosearch/tags.hpp"

namespace zerosearch::rollout {

using curriculum::QualityFlag;

// Task template preceding the question. The policy reasons inside think tags,
// queries through search tags, reads injected results inside information
// tags, and commits to an answer tag.
inline const std::string& training_template() {
  static const std::string text =
      "Answer the given question. You must conduct reasoning inside <think> and "
      "</think> first every time you get new information. After reasoning, if you "
      "find you lack some knowledge, you can call a search engine by <search> query "
      "</search>, and it will return the top searched results between <information> "
      "and </information>. You can search as many times as you want. If you find no "
      "further external knowledge needed, you can directly provide the answer inside "
      "<answer> and </answer> without detailed illustrations. For example, <answer> "
      "Beijing </answer>. Question:";
  return text;
}

inline std::string build_prelude(const std::string& question) {
  return training_template() + " " + question + "\n";
}

// Question slot of a prelude built by build_prelude, empty if absent.
inline std::string question_from_context(std::string_view context) {
  const std::string_view marker = "Question:";
  const std::size_t at = context.find(marker);
  if (at == std::string_view::npos) return "";
  std::size_t begin = at + marker.size();
  while (begin < context.size() && context[begin] == ' ') ++begin;
  std::size_t end = context.find('\n', begin);
  if (end == std::string_view::npos) end = context.size();
  return std::string(context.substr(begin, end - begin));
}

struct GenerationResult {
  std::string text;
  std::vector<std::string> tokens;  // opaque units under the backend's tokenization
  std::vector<double> logprobs;     // aligned with tokens
};

inline std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::istringstream in{std::string(text)};
  std::string w;
  while (in >> w) words.push_back(w);
  return words;
}

class PolicyBackend {
 public:
  virtual ~PolicyBackend() = default;

  // Generates a continuation of `context`. Generation halts at the first
  // emitted stop marker (the marker is included in the returned text) or at
  // the backend's token budget. tokens and logprobs are aligned.
  virtual GenerationResult generate(const std::string& context,
                                    const std::vector<std::string>& stop_markers) = 0;

  // Token accounting for injected text placed into this policy's context.
  virtual std::vector<std::string> tokenize(const std::string& text) const {
    return split_words(text);
  }

  virtual bool supports_concurrent_calls() const { return false; }
};

struct TokenRecord {
  std::string text;
  tags::Origin origin = tags::Origin::PolicyGenerated;
  double logprob = 0.0;
};

// Contiguous run of tokens from one policy generation or one injection.
struct ChunkRecord {
  bool injected = false;
  std::size_t token_begin = 0;
  std::size_t token_count = 0;
};

struct MaskedTrajectory {
  std::string question_id;
  std::string question;
  std::vector<std::string> golds;
  tags::Transcript transcript;
  std::vector<TokenRecord> tokens;
  std::vector<std::uint8_t> mask;  // 1 = policy-generated, 0 = injected
  std::vector<ChunkRecord> chunks;
  reward::RewardOutcome reward;
  std::vector<QualityFlag> noise_flags;  // one per search call
  int turns = 0;
  int step_index = 0;
  bool malformed = false;  // grammar violation or backend failure; scored as-is
  bool truncated = false;  // hit the turn limit
};

struct RolloutConfig {
  int max_turns = 4;
  int doc_count = 5;
  curriculum::CurriculumSchedule schedule;
  std::uint64_t seed = 0;
  int samples_per_prompt = 5;

  void validate() const {
    if (max_turns < 1) throw std::invalid_argument("max_turns must be >= 1");
    if (doc_count < 1) throw std::invalid_argument("doc_count must be >= 1");
    if (samples_per_prompt < 1)
      throw std::invalid_argument("samples_per_prompt must be >= 1");
    schedule.validate();
  }
};

inline const std::vector<std::string>& stop_markers() {
  static const std::vector<std::string> markers = {
      tags::close_tag(tags::TagKind::Search), tags::close_tag(tags::TagKind::Answer)};
  return markers;
}

// Injected information body: one "Doc {rank}: {text}" line per document; a
// sentinel line when the backend returned nothing.
inline std::string format_documents(const std::vector<sim::Document>& docs) {
  if (docs.empty()) return "No results found.";
  std::string out;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    if (i) out += '\n';
    out += "Doc " + std::to_string(docs[i].rank) + ": " + docs[i].text;
  }
  return out;
}

// One trajectory. The transcript is grammar-valid unless flagged malformed;
// rewards are computed on whatever answer is extractable, so malformed and
// truncated trajectories score zero rather than raising. BackendUnavailable
// from the simulator propagates to the caller.
inline MaskedTrajectory roll_one(const std::string& question,
                                 const std::vector<std::string>& golds,
                                 PolicyBackend& policy, sim::SimulatorBackend& simulator,
                                 const RolloutConfig& cfg, int step,
                                 int sample_index = 0) {
  cfg.validate();
  if (step < 0 || step > cfg.schedule.total_steps)
    throw std::out_of_range("rollout step outside the curriculum schedule");

  Rng rng(mix(mix(mix(mix(cfg.seed, question), static_cast<std::uint64_t>(sample_index)),
               static_cast<std::uint64_t>(step)),
              "rollout"));

  MaskedTrajectory traj;
  traj.question = question;
  traj.golds = golds;
  traj.step_index = step;
  traj.transcript.prelude = build_prelude(question);

  std::string context = traj.transcript.prelude;
  int turn = 0;
  bool answered = false;

  auto push_tokens = [&traj](const std::vector<std::string>& toks,
                             const std::vector<double>& lps, tags::Origin origin,
                             bool injected) {
    ChunkRecord rec;
    rec.injected = injected;
    rec.token_begin = traj.tokens.size();
    rec.token_count = toks.size();
    for (std::size_t i = 0; i < toks.size(); ++i) {
      TokenRecord t;
      t.text = toks[i];
      t.origin = origin;
      t.logprob = i < lps.size() ? lps[i] : 0.0;
      traj.tokens.push_back(std::move(t));
      traj.mask.push_back(origin == tags::Origin::PolicyGenerated ? 1 : 0);
    }
    traj.chunks.push_back(rec);
  };

  while (!answered) {
    if (turn >= cfg.max_turns) {
      traj.truncated = true;
      break;
    }

    GenerationResult gen = policy.generate(context, stop_markers());
    tags::ChunkParse chunk = tags::parse_policy_chunk(gen.text);

    if (chunk.outcome == tags::ChunkOutcome::Malformed) {
      traj.malformed = true;
      // Salvage a well-formed terminal answer if the chunk begins with one,
      // so the reward reflects whatever the policy committed to.
      std::vector<tags::Segment> salvage;
      tags::ParseResult lenient =
          tags::parse_lenient(gen.text, tags::ParseOptions{.allow_prelude = false});
      const auto& segs = lenient.transcript.segments;
      if (segs.size() == 1 && segs[0].kind == tags::TagKind::Answer)
        salvage = segs;
      else if (segs.size() == 2 && segs[0].kind == tags::TagKind::Think &&
               segs[1].kind == tags::TagKind::Answer)
        salvage = segs;
      push_tokens(gen.tokens, gen.logprobs, tags::Origin::PolicyGenerated, false);
      for (tags::Segment s : salvage) {
        s.turn_index = turn;
        traj.transcript.segments.push_back(std::move(s));
      }
      break;
    }

    for (tags::Segment s : chunk.segments) {
      s.turn_index = turn;
      s.origin = tags::Origin::PolicyGenerated;
      traj.transcript.segments.push_back(std::move(s));
    }
    push_tokens(gen.tokens, gen.logprobs, tags::Origin::PolicyGenerated, false);
    // Context continues from the canonical rendering, which equals gen.text
    // for well-formed emissions.
    context = tags::render_transcript(traj.transcript);

    if (chunk.outcome == tags::ChunkOutcome::Answer) {
      answered = true;
      break;
    }

    // Search turn: consult the curriculum, query the simulator, inject.
    const std::string& query = traj.transcript.segments.back().text;
    const QualityFlag quality = curriculum::sample_quality(cfg.schedule, step, rng);
    traj.noise_flags.push_back(quality);

    sim::SimQuery sq;
    sq.query = query;
    sq.question = question;
    sq.ground_truth = golds.empty() ? "" : golds.front();
    sq.quality = quality;
    sq.doc_count = cfg.doc_count;
    const std::vector<sim::Document> docs = simulator.search(sq);

    tags::Segment info;
    info.kind = tags::TagKind::Information;
    info.text = format_documents(docs);
    info.origin = tags::Origin::Injected;
    info.turn_index = turn;
    traj.transcript.segments.push_back(info);

    const std::string wrapped = tags::open_tag(tags::TagKind::Information) + info.text +
                                tags::close_tag(tags::TagKind::Information);
    push_tokens(policy.tokenize(wrapped), {}, tags::Origin::Injected, true);
    context = tags::render_transcript(traj.transcript);
    ++turn;
  }

  traj.turns = tags::count_turns(traj.transcript);
  traj.reward = golds.empty() ? reward::RewardOutcome{}
                              : reward::score_trajectory(traj.transcript, golds);
  return traj;
}

// cfg.samples_per_prompt independent trajectories with per-sample random
// streams derived from (seed, question, sample index). A backend failure
// aborts only its own sample, which joins the batch as a malformed
// zero-reward trajectory.
inline std::vector<MaskedTrajectory> roll_group(const std::string& question,
                                                const std::vector<std::string>& golds,
                                                PolicyBackend& policy,
                                                sim::SimulatorBackend& simulator,
                                                const RolloutConfig& cfg, int step) {
  cfg.validate();
  std::vector<MaskedTrajectory> group;
  group.reserve(static_cast<std::size_t>(cfg.samples_per_prompt));
  for (int s = 0; s < cfg.samples_per_prompt; ++s) {
    try {
      group.push_back(roll_one(question, golds, policy, simulator, cfg, step, s));
    } catch (const sim::BackendUnavailable&) {
      MaskedTrajectory failed;
      failed.question = question;
      failed.golds = golds;
      failed.step_index = step;
      failed.malformed = true;
      failed.transcript.prelude = build_prelude(question);
      group.push_back(std::move(failed));
    }
  }
  return group;
}

struct RolloutMetrics {
  double mean_reward = 0.0;
  double mean_turns = 0.0;
  double malformed_rate = 0.0;
  double noisy_fraction = 0.0;
};

class EmptyBatch : public std::invalid_argument {
 public:
  EmptyBatch() : std::invalid_argument("empty trajectory batch") {}
};

inline RolloutMetrics track_metrics(const std::vector<MaskedTrajectory>& batch) {
  if (batch.empty()) throw EmptyBatch();
  RolloutMetrics m;
  std::size_t flags = 0, noisy = 0;
  for (const MaskedTrajectory& t : batch) {
    m.mean_reward += t.reward.f1;
    m.mean_turns += t.turns;
    m.malformed_rate += t.malformed ? 1.0 : 0.0;
    for (QualityFlag f : t.noise_flags) {
      ++flags;
      if (f == QualityFlag::Noisy) ++noisy;
    }
  }
  const double n = static_cast<double>(batch.size());
  m.mean_reward /= n;
  m.mean_turns /= n;
  m.malformed_rate /= n;
  m.noisy_fraction = flags == 0 ? 0.0 : static_cast<double>(noisy) / static_cast<double>(flags);
  return m;
}

// --- trajectory log ----------------------------------------------------------
// JSON lines, one trajectory per line. The mask serializes as a 0/1 string
// aligned with the token array; noise flags as lowercase strings.

inline void to_json(nlohmann::json& j, const MaskedTrajectory& t) {
  std::string mask;
  mask.reserve(t.mask.size());
  for (std::uint8_t b : t.mask) mask.push_back(b ? '1' : '0');
  std::vector<std::string> flags;
  for (QualityFlag f : t.noise_flags) flags.emplace_back(curriculum::quality_name(f));
  std::vector<std::string> token_texts;
  token_texts.reserve(t.tokens.size());
  for (const TokenRecord& tok : t.tokens) token_texts.push_back(tok.text);

  j = nlohmann::json{{"question_id", t.question_id},
                     {"question", t.question},
                     {"golds", t.golds},
                     {"transcript", t.transcript},
                     {"tokens", token_texts},
                     {"mask", mask},
                     {"noise_flags", flags},
                     {"turns", t.turns},
                     {"step", t.step_index},
                     {"malformed", t.malformed},
                     {"truncated", t.truncated},
                     {"reward",
                      {{"f1", t.reward.f1},
                       {"em", t.reward.em},
                       {"in", t.reward.overlap_in},
                       {"pn", t.reward.pred_len_pn},
                       {"rn", t.reward.gold_len_rn}}}};
}

inline void from_json(const nlohmann::json& j, MaskedTrajectory& t) {
  t.question_id = j.value("question_id", "");
  t.question = j.value("question", "");
  t.golds = j.value("golds", std::vector<std::string>{});
  t.transcript = j.at("transcript").get<tags::Transcript>();
  const std::string mask = j.at("mask").get<std::string>();
  t.mask.clear();
  for (char c : mask) t.mask.push_back(c == '1' ? 1 : 0);
  const auto token_texts = j.value("tokens", std::vector<std::string>{});
  t.tokens.clear();
  for (std::size_t i = 0; i < token_texts.size(); ++i) {
    TokenRecord tok;
    tok.text = token_texts[i];
    tok.origin = (i < t.mask.size() && t.mask[i]) ? tags::Origin::PolicyGenerated
                                                  : tags::Origin::Injected;
    t.tokens.push_back(std::move(tok));
  }
  t.noise_flags.clear();
  for (const std::string& f : j.value("noise_flags", std::vector<std::string>{}))
    t.noise_flags.push_back(curriculum::quality_from_name(f));
  t.turns = j.value("turns", 0);
  t.step_index = j.value("step", 0);
  t.malformed = j.value("malformed", false);
  t.truncated = j.value("truncated", false);
  if (j.contains("reward")) {
    const auto& r = j.at("reward");
    t.reward.f1 = r.value("f1", 0.0);
    t.reward.em = r.value("em", false);
    t.reward.overlap_in = r.value("in", 0);
    t.reward.pred_len_pn = r.value("pn", 0);
    t.reward.gold_len_rn = r.value("rn", 0);
  }
}

// --- scripted backend ---------------------------------------------------------

// Replays a fixed list of emissions, then falls back to a deterministic
// two-turn heuristic: search the question verbatim, answer with the head of
// the first returned document. Useful for fixtures and CLI dry runs.
class ScriptedPolicy : public PolicyBackend {
 public:
  ScriptedPolicy() = default;
  explicit ScriptedPolicy(std::vector<std::string> emissions)
      : emissions_(std::move(emissions)) {}

  GenerationResult generate(const std::string& context,
                            const std::vector<std::string>&) override {
    std::string text;
    if (next_ < emissions_.size()) {
      text = emissions_[next_++];
    } else {
      text = heuristic_emission(context);
    }
    GenerationResult out;
    out.text = text;
    out.tokens = tokenize(text);
    out.logprobs.assign(out.tokens.size(), 0.0);
    return out;
  }

  void reset() { next_ = 0; }

 private:
  static std::string heuristic_emission(const std::string& context) {
    const std::string info_open = tags::open_tag(tags::TagKind::Information);
    const std::string info_close = tags::close_tag(tags::TagKind::Information);
    const std::size_t last_info = context.rfind(info_open);
    if (last_info == std::string::npos) {
      const std::string q = question_from_context(context);
      return "<think>I should look this up.</think><search>" +
             (q.empty() ? std::string("unknown question") : q) + "</search>";
    }
    const std::size_t body_begin = last_info + info_open.size();
    const std::size_t body_end = context.find(info_close, body_begin);
    std::string body = context.substr(
        body_begin, body_end == std::string::npos ? std::string::npos
                                                  : body_end - body_begin);
    std::string first_line = body.substr(0, body.find('\n'));
    const std::string prefix = "Doc 1: ";
    if (first_line.rfind(prefix, 0) == 0) first_line = first_line.substr(prefix.size());
    std::vector<std::string> words = split_words(first_line);
    if (words.size() > 6) words.resize(6);
    std::string answer;
    for (std::size_t i = 0; i < words.size(); ++i) {
      if (i) answer += ' ';
      answer += words[i];
    }
    if (answer.empty()) answer = "unknown";
    return "<think>The documents above suggest an answer.</think><answer>" + answer +
           "</answer>";
  }

  std::vector<std::string> emissions_;
  std::size_t next_ = 0;
};

}  // namespace zerosearch::rollout
