#pragma once

// Session events and their JSONL form. One JSON object per line:
//   {"seq":3,"t":1700000000123,"kind":"batch-served","data":{...}}
// t is epoch milliseconds; seq counts from 0 within a session.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "npal/corpus.hpp"
#include "npal/error.hpp"
#include "npal/metrics.hpp"

namespace npal {

using Json = nlohmann::json;

enum class EventKind {
  SessionCreated,
  FeedbackViewed,
  FeedbackStopped,
  BatchServed,
  AnnotationSubmitted,
  RuleListSubmitted,
  EvalRequested,
};

inline constexpr std::pair<EventKind, std::string_view> kEventNames[] = {
    {EventKind::SessionCreated, "session-created"},
    {EventKind::FeedbackViewed, "feedback-viewed"},
    {EventKind::FeedbackStopped, "feedback-stopped"},
    {EventKind::BatchServed, "batch-served"},
    {EventKind::AnnotationSubmitted, "annotation-submitted"},
    {EventKind::RuleListSubmitted, "rule-list-submitted"},
    {EventKind::EvalRequested, "eval-requested"},
};

inline std::string_view to_string(EventKind k) {
  for (const auto& [kind, name] : kEventNames)
    if (kind == k) return name;
  return "?";
}

inline EventKind event_kind_from_string(std::string_view s) {
  for (const auto& [kind, name] : kEventNames)
    if (name == s) return kind;
  throw InvalidArgument("unknown event kind '" + std::string(s) + "'");
}

struct Event {
  std::uint64_t seq = 0;
  std::int64_t time_ms = 0;
  EventKind kind = EventKind::SessionCreated;
  Json data = Json::object();
};

inline Json to_json(const Event& e) {
  return Json{{"seq", e.seq}, {"t", e.time_ms}, {"kind", std::string(to_string(e.kind))}, {"data", e.data}};
}

inline Event event_from_json(const Json& j) {
  Event e;
  try {
    e.seq = j.at("seq").get<std::uint64_t>();
    e.time_ms = j.at("t").get<std::int64_t>();
    e.kind = event_kind_from_string(j.at("kind").get<std::string>());
    if (j.contains("data")) e.data = j.at("data");
  } catch (const Json::exception& ex) {
    throw InvalidArgument(std::string("malformed event: ") + ex.what());
  }
  return e;
}

inline std::string event_line(const Event& e) { return to_json(e).dump() + "\n"; }

// Parses a whole log. Blank lines are skipped; anything else that is not an
// event is a ParseError with its line number. Timestamps must not go back.
inline std::vector<Event> parse_event_log(std::string_view text) {
  std::vector<Event> out;
  const auto lines = detail::split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto line = detail::trim(lines[i]);
    if (line.empty()) continue;
    try {
      out.push_back(event_from_json(Json::parse(line)));
    } catch (const Json::exception& ex) {
      throw ParseError(i + 1, ex.what());
    } catch (const InvalidArgument& ex) {
      throw ParseError(i + 1, ex.what());
    }
    if (out.size() > 1 && out.back().time_ms < out[out.size() - 2].time_ms)
      throw ParseError(i + 1, "timestamp goes backwards");
  }
  return out;
}

// JSON shapes shared by the log and the HTTP protocol.

inline Json tokens_json(const Sentence& s) {
  Json arr = Json::array();
  for (const auto& t : s.tokens) arr.push_back({{"w", t.word}, {"p", t.pos}});
  return arr;
}

inline Json sentence_json(const Sentence& s) { return {{"id", s.id}, {"tokens", tokens_json(s)}}; }

inline Sentence sentence_from_json(const Json& j) {
  Sentence s;
  s.id = j.at("id").get<std::int64_t>();
  for (const auto& t : j.at("tokens")) {
    Token tok{t.at("w").get<std::string>(), t.at("p").get<std::string>()};
    validate_token(tok);
    s.tokens.push_back(std::move(tok));
  }
  return s;
}

inline Json labeling_json(const Labeling& l) {
  Json arr = Json::array();
  for (ChunkTag t : l.tags) arr.push_back(to_string(t));
  return arr;
}

inline Labeling labeling_from_json(const Json& j) {
  if (!j.is_array()) throw InvalidArgument("labeling must be an array of tags");
  Labeling l;
  for (const auto& t : j) {
    if (!t.is_string()) throw InvalidArgument("tag must be a string");
    const auto tag = tag_from_string(t.get<std::string>());
    if (!tag) throw InvalidArgument("unknown chunk tag '" + t.get<std::string>() + "'");
    l.tags.push_back(*tag);
  }
  return l;
}

inline Json spans_json(const SpanSet& spans) {
  Json arr = Json::array();
  for (const auto& s : spans) arr.push_back(Json::array({s.start, s.end}));
  return arr;
}

inline Json report_json(const Report& r) {
  return {{"precision", r.precision}, {"recall", r.recall},          {"f", r.fmeasure},
          {"correct", r.counts.correct}, {"proposed", r.counts.proposed}, {"reference", r.counts.reference}};
}

}  // namespace npal
