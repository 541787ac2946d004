#pragma once

// Interaction-tag grammar for multi-turn search transcripts.
//
// A transcript is a prelude (task template plus question) followed by tagged
// segments obeying
//
//     (think, search, information)*  think?  answer
//
// Every search is immediately followed by exactly one information segment,
// and the transcript ends with a single answer. Information segments are
// injected by the engine; all other segments come from the policy.
//
// Two parsing modes: parse_transcript throws on the first violation (golden
// files, tests); parse_lenient never throws and returns a best-effort prefix
// plus diagnostics (live policy output is frequently malformed early in
// training and must score zero reward instead of crashing the rollout).

#include <cctype>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace zerosearch::tags {

enum class TagKind { Think, Search, Information, Answer };
enum class Origin { PolicyGenerated, Injected };

inline std::string_view tag_name(TagKind k) {
  switch (k) {
    case TagKind::Think: return "think";
    case TagKind::Search: return "search";
    case TagKind::Information: return "information";
    case TagKind::Answer: return "answer";
  }
  return "";
}

inline std::string open_tag(TagKind k) { return "<" + std::string(tag_name(k)) + ">"; }
inline std::string close_tag(TagKind k) { return "</" + std::string(tag_name(k)) + ">"; }

struct Segment {
  TagKind kind = TagKind::Think;
  std::string text;  // tag body, tags excluded
  Origin origin = Origin::PolicyGenerated;
  int turn_index = 0;

  // Source annotation filled by the parser: [span_begin, span_end) slices the
  // raw input to the full tag-wrapped region. Not part of structural equality.
  std::size_t span_begin = 0;
  std::size_t span_end = 0;

  friend bool operator==(const Segment& a, const Segment& b) {
    return a.kind == b.kind && a.text == b.text && a.origin == b.origin &&
           a.turn_index == b.turn_index;
  }
};

struct Transcript {
  std::string prelude;
  std::vector<Segment> segments;

  friend bool operator==(const Transcript& a, const Transcript& b) {
    return a.prelude == b.prelude && a.segments == b.segments;
  }
};

enum class ErrorCode {
  UnclosedTag,       // opening tag with no matching closer
  UnexpectedTag,     // tag violates the grammar at this position
  UnexpectedEnd,     // input ends mid-turn (e.g. search with no information)
  UnexpectedText,    // bytes between tags outside any body
  EmptySearchQuery,  // search body empty or whitespace
  NestedTag,         // opening tag inside another tag's body
  InvariantViolation,
  NoAnswer,
};

inline std::string_view error_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::UnclosedTag: return "UnclosedTag";
    case ErrorCode::UnexpectedTag: return "UnexpectedTag";
    case ErrorCode::UnexpectedEnd: return "UnexpectedEnd";
    case ErrorCode::UnexpectedText: return "UnexpectedText";
    case ErrorCode::EmptySearchQuery: return "EmptySearchQuery";
    case ErrorCode::NestedTag: return "NestedTag";
    case ErrorCode::InvariantViolation: return "InvariantViolation";
    case ErrorCode::NoAnswer: return "NoAnswer";
  }
  return "?";
}

struct Diagnostic {
  ErrorCode code;
  std::optional<TagKind> kind;
  std::size_t offset = 0;  // byte offset in the raw input
  std::string message;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(Diagnostic d)
      : std::runtime_error(std::string(error_name(d.code)) + " at offset " +
                           std::to_string(d.offset) + ": " + d.message),
        diagnostic(std::move(d)) {}
  Diagnostic diagnostic;
};

struct ParseOptions {
  // When true, everything before the first recognized tag is the prelude.
  // When false, the input must start directly with a tag.
  bool allow_prelude = true;
};

struct ParseResult {
  Transcript transcript;
  std::vector<Diagnostic> diagnostics;
  bool valid() const { return diagnostics.empty(); }
};

namespace detail {

constexpr TagKind kAllKinds[] = {TagKind::Think, TagKind::Search,
                                 TagKind::Information, TagKind::Answer};

inline std::optional<TagKind> opening_tag_at(std::string_view raw, std::size_t pos) {
  for (TagKind k : kAllKinds) {
    const std::string t = open_tag(k);
    if (raw.compare(pos, t.size(), t) == 0) return k;
  }
  return std::nullopt;
}

// Position of the first opening tag at or after pos, npos if none.
inline std::size_t find_next_open(std::string_view raw, std::size_t pos) {
  while (true) {
    pos = raw.find('<', pos);
    if (pos == std::string_view::npos) return std::string_view::npos;
    if (opening_tag_at(raw, pos)) return pos;
    ++pos;
  }
}

inline bool is_blank(std::string_view s) {
  for (unsigned char c : s)
    if (!std::isspace(c)) return false;
  return true;
}

// Grammar automaton over segment kinds. States name what was last consumed.
enum class State { Start, AfterThink, AfterSearch, AfterInfo, Done };

inline bool admissible(State s, TagKind k) {
  switch (s) {
    case State::Start:
    case State::AfterInfo:
      return k == TagKind::Think || k == TagKind::Answer;
    case State::AfterThink:
      return k == TagKind::Search || k == TagKind::Answer;
    case State::AfterSearch:
      return k == TagKind::Information;
    case State::Done:
      return false;
  }
  return false;
}

inline State advance(State s, TagKind k) {
  switch (k) {
    case TagKind::Think: return State::AfterThink;
    case TagKind::Search: return State::AfterSearch;
    case TagKind::Information: return State::AfterInfo;
    case TagKind::Answer: return State::Done;
  }
  return s;
}

}  // namespace detail

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

// Best-effort parse. The returned transcript is always a grammar prefix:
// every search is paired with an information segment and at most one answer
// appears, in final position. Structural problems stop segment collection;
// stray inter-tag text is skipped. Each problem lands in diagnostics.
inline ParseResult parse_lenient(std::string_view raw, ParseOptions opts = {}) {
  using namespace detail;
  ParseResult out;
  std::size_t pos = 0;
  State state = State::Start;
  int turn = 0;
  bool stopped = false;

  // Prelude: everything before the first recognized opening tag.
  std::size_t first = find_next_open(raw, 0);
  if (first == std::string_view::npos) first = raw.size();
  if (first > 0) {
    if (opts.allow_prelude) {
      out.transcript.prelude = std::string(raw.substr(0, first));
    } else {
      out.diagnostics.push_back({ErrorCode::UnexpectedText, std::nullopt, 0,
                                 "input does not start with a tag"});
    }
  }
  pos = first;

  while (pos < raw.size() && !stopped) {
    auto kind = opening_tag_at(raw, pos);
    if (!kind) {
      // Inter-tag bytes. Skip to the next recognized tag.
      std::size_t next = find_next_open(raw, pos);
      if (next == std::string_view::npos) next = raw.size();
      out.diagnostics.push_back({ErrorCode::UnexpectedText, std::nullopt, pos,
                                 "text between tags: \"" +
                                     std::string(raw.substr(pos, next - pos)) + "\""});
      pos = next;
      continue;
    }

    if (!admissible(state, *kind)) {
      out.diagnostics.push_back({ErrorCode::UnexpectedTag, *kind, pos,
                                 "<" + std::string(tag_name(*kind)) +
                                     "> not allowed here"});
      stopped = true;
      break;
    }

    const std::string opener = open_tag(*kind);
    const std::string closer = close_tag(*kind);
    const std::size_t body_begin = pos + opener.size();
    const std::size_t close_at = raw.find(closer, body_begin);
    if (close_at == std::string_view::npos) {
      out.diagnostics.push_back({ErrorCode::UnclosedTag, *kind, pos,
                                 "missing " + closer});
      stopped = true;
      break;
    }
    // No opening tag may appear inside the body.
    const std::size_t nested = find_next_open(raw, body_begin);
    if (nested < close_at) {
      out.diagnostics.push_back({ErrorCode::NestedTag, opening_tag_at(raw, nested),
                                 nested, "tag nested inside " + opener});
      stopped = true;
      break;
    }

    std::string body(raw.substr(body_begin, close_at - body_begin));
    if (*kind == TagKind::Search && is_blank(body)) {
      out.diagnostics.push_back({ErrorCode::EmptySearchQuery, *kind, pos,
                                 "search body is empty"});
      stopped = true;
      break;
    }

    Segment seg;
    seg.kind = *kind;
    seg.text = std::move(body);
    seg.origin = (*kind == TagKind::Information) ? Origin::Injected
                                                 : Origin::PolicyGenerated;
    seg.turn_index = turn;
    seg.span_begin = pos;
    seg.span_end = close_at + closer.size();
    out.transcript.segments.push_back(std::move(seg));

    if (*kind == TagKind::Information) ++turn;  // a (think,search,info) triple closed
    state = advance(state, *kind);
    pos = close_at + closer.size();
  }

  if (out.diagnostics.empty() && state != State::Done) {
    if (state == State::AfterSearch) {
      // Drop the dangling search so the returned prefix keeps the
      // search/information pairing intact.
      std::size_t at = out.transcript.segments.back().span_begin;
      out.transcript.segments.pop_back();
      out.diagnostics.push_back({ErrorCode::UnexpectedEnd, TagKind::Search, at,
                                 "search not followed by information"});
    } else {
      out.diagnostics.push_back({ErrorCode::UnexpectedEnd, std::nullopt, raw.size(),
                                 "transcript does not end with an answer"});
    }
  } else if (stopped) {
    // Same pairing guarantee on the salvaged prefix.
    if (!out.transcript.segments.empty() &&
        out.transcript.segments.back().kind == TagKind::Search) {
      out.transcript.segments.pop_back();
    }
  }

  return out;
}

// Strict parse: throws ParseError carrying the first diagnostic.
inline Transcript parse_transcript(std::string_view raw, ParseOptions opts = {}) {
  ParseResult r = parse_lenient(raw, opts);
  if (!r.diagnostics.empty()) throw ParseError(r.diagnostics.front());
  return std::move(r.transcript);
}

namespace detail {

// Validates segment list shape for rendering. `complete` additionally
// requires the terminal answer.
inline void check_renderable(const Transcript& t, bool complete) {
  State state = State::Start;
  int expected_turn = 0;
  bool seen_answer = false;
  for (const Segment& seg : t.segments) {
    if (seen_answer)
      throw ParseError({ErrorCode::InvariantViolation, seg.kind, 0,
                        "segment after the final answer"});
    if (!admissible(state, seg.kind))
      throw ParseError({ErrorCode::InvariantViolation, seg.kind, 0,
                        "<" + std::string(tag_name(seg.kind)) +
                            "> breaks the turn grammar"});
    const bool injected_ok =
        (seg.origin == Origin::Injected) == (seg.kind == TagKind::Information);
    if (!injected_ok)
      throw ParseError({ErrorCode::InvariantViolation, seg.kind, 0,
                        "origin does not match segment kind"});
    if (seg.kind == TagKind::Search && is_blank(seg.text))
      throw ParseError({ErrorCode::InvariantViolation, seg.kind, 0,
                        "search body is empty"});
    if (seg.turn_index != expected_turn)
      throw ParseError({ErrorCode::InvariantViolation, seg.kind, 0,
                        "turn_index out of sequence"});
    // Body must not contain any opening tag or its own closing tag, or the
    // rendered string would parse differently.
    for (TagKind k : kAllKinds) {
      if (seg.text.find(open_tag(k)) != std::string::npos)
        throw ParseError({ErrorCode::InvariantViolation, seg.kind, 0,
                          "tag literal inside segment text"});
    }
    if (seg.text.find(close_tag(seg.kind)) != std::string::npos)
      throw ParseError({ErrorCode::InvariantViolation, seg.kind, 0,
                        "closing tag literal inside segment text"});
    if (seg.kind == TagKind::Information) ++expected_turn;
    if (seg.kind == TagKind::Answer) seen_answer = true;
    state = advance(state, seg.kind);
  }
  if (complete && !t.segments.empty() && !seen_answer)
    throw ParseError({ErrorCode::InvariantViolation, std::nullopt, 0,
                      "transcript does not end with an answer"});
}

}  // namespace detail

// Deterministic inverse of parse_transcript. Accepts complete transcripts and
// grammar prefixes (the engine renders partial transcripts as generation
// context); an empty segment list renders to the prelude alone.
inline std::string render_transcript(const Transcript& t) {
  detail::check_renderable(t, /*complete=*/false);
  std::string out = t.prelude;
  for (const Segment& seg : t.segments) {
    out += open_tag(seg.kind);
    out += seg.text;
    out += close_tag(seg.kind);
  }
  return out;
}

// As render_transcript but enforces the full grammar including the terminal
// answer. Use for golden files and logs.
inline std::string render_complete(const Transcript& t) {
  detail::check_renderable(t, /*complete=*/true);
  return render_transcript(t);
}

// Text of the answer segment, whitespace-trimmed; nullopt when absent.
inline std::optional<std::string> extract_final_answer(const Transcript& t) {
  for (auto it = t.segments.rbegin(); it != t.segments.rend(); ++it)
    if (it->kind == TagKind::Answer) return trim(it->text);
  return std::nullopt;
}

// Search segment texts in emission order.
inline std::vector<std::string> extract_queries(const Transcript& t) {
  std::vector<std::string> out;
  for (const Segment& seg : t.segments)
    if (seg.kind == TagKind::Search) out.push_back(seg.text);
  return out;
}

// Number of turns: one per (think,search,information) triple plus the final
// (think?, answer) turn.
inline int count_turns(const Transcript& t) {
  if (t.segments.empty()) return 0;
  return t.segments.back().turn_index + 1;
}

// --- policy chunk parsing -------------------------------------------------
//
// During rollout the policy emits half-turns terminated by </search> or
// </answer>. A chunk is only one of: think+search, think+answer, or a bare
// answer. Anything else aborts the trajectory.

enum class ChunkOutcome { Search, Answer, Malformed };

struct ChunkParse {
  ChunkOutcome outcome = ChunkOutcome::Malformed;
  std::vector<Segment> segments;  // turn_index left at 0; caller assigns
  std::vector<Diagnostic> diagnostics;
};

inline ChunkParse parse_policy_chunk(std::string_view raw) {
  ChunkParse out;
  ParseResult r = parse_lenient(raw, ParseOptions{.allow_prelude = false});

  // parse_lenient drops a trailing search to keep pairing; for chunks the
  // trailing search IS the payload, so recover it from the raw text.
  std::vector<Segment> segs = std::move(r.transcript.segments);
  for (const Diagnostic& d : r.diagnostics) {
    if (d.code == ErrorCode::UnexpectedEnd && d.kind == TagKind::Search) {
      ParseResult again = parse_lenient(std::string(raw) + open_tag(TagKind::Information) +
                                            "x" + close_tag(TagKind::Information) +
                                            open_tag(TagKind::Answer) + "x" +
                                            close_tag(TagKind::Answer),
                                        ParseOptions{.allow_prelude = false});
      if (again.diagnostics.empty() && again.transcript.segments.size() >= 2) {
        segs = std::move(again.transcript.segments);
        segs.pop_back();  // synthetic answer
        segs.pop_back();  // synthetic information
      }
    } else {
      out.diagnostics.push_back(d);
    }
  }
  if (!out.diagnostics.empty()) return out;

  const auto kinds_are = [&](std::initializer_list<TagKind> ks) {
    if (segs.size() != ks.size()) return false;
    std::size_t i = 0;
    for (TagKind k : ks)
      if (segs[i++].kind != k) return false;
    return true;
  };

  if (kinds_are({TagKind::Think, TagKind::Search}))
    out.outcome = ChunkOutcome::Search;
  else if (kinds_are({TagKind::Think, TagKind::Answer}) || kinds_are({TagKind::Answer}))
    out.outcome = ChunkOutcome::Answer;
  else {
    out.outcome = ChunkOutcome::Malformed;
    out.diagnostics.push_back({ErrorCode::UnexpectedTag, std::nullopt, 0,
                               "chunk is not think+search, think+answer, or answer"});
    return out;
  }
  out.segments = std::move(segs);
  return out;
}

// --- serialization ----------------------------------------------------------
// One JSON object per transcript: {prelude, segments:[{kind,text,origin,turn}]}.

inline std::string_view origin_name(Origin o) {
  return o == Origin::Injected ? "injected" : "policy_generated";
}

inline void to_json(nlohmann::json& j, const Segment& s) {
  j = nlohmann::json{{"kind", tag_name(s.kind)},
                     {"text", s.text},
                     {"origin", origin_name(s.origin)},
                     {"turn", s.turn_index}};
}

inline void from_json(const nlohmann::json& j, Segment& s) {
  const std::string kind = j.at("kind").get<std::string>();
  bool found = false;
  for (TagKind k : detail::kAllKinds)
    if (kind == tag_name(k)) {
      s.kind = k;
      found = true;
    }
  if (!found) throw ParseError({ErrorCode::InvariantViolation, std::nullopt, 0,
                                "unknown segment kind: " + kind});
  s.text = j.at("text").get<std::string>();
  s.origin = j.at("origin").get<std::string>() == "injected" ? Origin::Injected
                                                             : Origin::PolicyGenerated;
  s.turn_index = j.at("turn").get<int>();
}

inline void to_json(nlohmann::json& j, const Transcript& t) {
  j = nlohmann::json{{"prelude", t.prelude}, {"segments", t.segments}};
}

inline void from_json(const nlohmann::json& j, Transcript& t) {
  t.prelude = j.at("prelude").get<std::string>();
  t.segments = j.at("segments").get<std::vector<Segment>>();
}

}  // namespace zerosearch::tags
