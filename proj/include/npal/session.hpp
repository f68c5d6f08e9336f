#pragma once

// Annotation and rule-writing sessions, event-sourced. Every state change is
// exactly one event appended to the session log, and the state is a fold of
// apply() over that log. Restart, audit and replay all go through the same
// fold.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "npal/al.hpp"
#include "npal/cost.hpp"
#include "npal/dsl.hpp"
#include "npal/events.hpp"
#include "npal/log.hpp"
#include "npal/metrics.hpp"
#include "npal/rng.hpp"

namespace npal {

enum class Phase { Feedback, Active, FinalEval, Done };

inline std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::Feedback: return "feedback";
    case Phase::Active: return "active";
    case Phase::FinalEval: return "final-eval";
    case Phase::Done: return "done";
  }
  return "?";
}

struct SessionConfig {
  Method mode = Method::Annotation;
  std::string corpus = "default";
  std::uint64_t seed = 1;
  std::size_t gold_size = 100;  // leading training sentences shown as gold
  std::size_t batch_size = 50;
  std::size_t iterations = 10;
  std::size_t committee = 3;
  SplitMethod split = SplitMethod::Bagging;
  Measure measure = Measure::FComplement;
  double threshold = 2.0;
  std::size_t max_rules = 500;
  std::size_t feedback_limit = 50;
  std::size_t final_size = 100;

  void validate() const {
    if (gold_size < 1) throw InvalidArgument("gold_size must be >= 1");
    if (iterations < 1) throw InvalidArgument("iterations must be >= 1");
    if (final_size < 1) throw InvalidArgument("final_size must be >= 1");
    if (feedback_limit < 1) throw InvalidArgument("feedback_limit must be >= 1");
    if (!(threshold >= 1.0)) throw InvalidArgument("threshold must be >= 1");
    al_config().validate();
  }

  ALConfig al_config() const {
    ALConfig c;
    c.init_size = gold_size;
    c.batch_size = batch_size;
    c.committee = committee;
    c.split = split;
    c.measure = measure;
    c.iterations = iterations;
    c.seed = seed;
    c.tbl.score_threshold = threshold;
    c.tbl.max_rules = max_rules;
    return c;
  }
};

inline Json to_json(const SessionConfig& c) {
  return {{"mode", std::string(to_string(c.mode))},
          {"corpus", c.corpus},
          {"seed", c.seed},
          {"gold_size", c.gold_size},
          {"batch_size", c.batch_size},
          {"iterations", c.iterations},
          {"committee", c.committee},
          {"split", std::string(to_string(c.split))},
          {"measure", std::string(to_string(c.measure))},
          {"threshold", c.threshold},
          {"max_rules", c.max_rules},
          {"feedback_limit", c.feedback_limit},
          {"final_size", c.final_size}};
}

// Missing keys keep their defaults; unknown keys and wrong types are errors.
inline SessionConfig session_config_from_json(const Json& j) {
  if (!j.is_object()) throw InvalidArgument("config must be a JSON object");
  SessionConfig c;
  const auto count = [](const Json& v, const std::string& key) -> std::size_t {
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
      throw InvalidArgument("'" + key + "' must be a nonnegative integer");
    return v.get<std::size_t>();
  };
  const auto text = [](const Json& v, const std::string& key) {
    if (!v.is_string()) throw InvalidArgument("'" + key + "' must be a string");
    return v.get<std::string>();
  };
  for (const auto& [key, v] : j.items()) {
    if (key == "mode") c.mode = parse_method(text(v, key));
    else if (key == "corpus") c.corpus = text(v, key);
    else if (key == "seed") c.seed = count(v, key);
    else if (key == "gold_size") c.gold_size = count(v, key);
    else if (key == "batch_size") c.batch_size = count(v, key);
    else if (key == "iterations") c.iterations = count(v, key);
    else if (key == "committee") c.committee = count(v, key);
    else if (key == "split") c.split = parse_split_method(text(v, key));
    else if (key == "measure") c.measure = parse_measure(text(v, key));
    else if (key == "threshold") {
      if (!v.is_number()) throw InvalidArgument("'threshold' must be a number");
      c.threshold = v.get<double>();
    } else if (key == "max_rules") c.max_rules = count(v, key);
    else if (key == "feedback_limit") c.feedback_limit = count(v, key);
    else if (key == "final_size") c.final_size = count(v, key);
    else throw InvalidArgument("unknown config key '" + key + "'");
  }
  c.validate();
  return c;
}

struct CorpusData {
  std::vector<LabeledSentence> train;  // gold set first, then the pool
  std::vector<LabeledSentence> test;   // final evaluation draws from here
};

using CorpusLookup = std::function<std::shared_ptr<const CorpusData>(const std::string&)>;

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::int64_t system_clock_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

namespace detail {

inline const Json& field(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw InvalidArgument(std::string("missing field '") + key + "'");
  return j.at(key);
}

inline std::vector<Labeling> labelings_from_json(const Json& j) {
  if (!j.is_array()) throw InvalidArgument("labelings must be an array");
  std::vector<Labeling> out;
  for (const auto& l : j) out.push_back(labeling_from_json(l));
  return out;
}

// Checks lengths against the sentences and rewrites stray B tags.
inline std::size_t check_labelings(std::vector<Labeling>& labelings, std::span<const Sentence> sentences) {
  if (labelings.size() != sentences.size())
    throw InvalidArgument("expected " + std::to_string(sentences.size()) + " labelings, got " +
                          std::to_string(labelings.size()));
  std::size_t fixed = 0;
  for (std::size_t i = 0; i < labelings.size(); ++i) {
    if (labelings[i].size() != sentences[i].size())
      throw InvalidArgument("labeling " + std::to_string(i) + " has " + std::to_string(labelings[i].size()) +
                            " tags for " + std::to_string(sentences[i].size()) + " tokens");
    fixed += normalize_iob1(labelings[i]);
  }
  return fixed;
}

inline Json program_json(const RuleListProgram& prog, const ProgramEvaluation& ev) {
  Json diags = Json::array();
  for (const auto& d : prog.diagnostics) diags.push_back({{"line", d.line}, {"message", d.message}});
  Json after = Json::array();
  for (const auto& r : ev.after_rule) after.push_back(report_json(r));
  Json lines = Json::array();
  for (const auto& r : prog.rules) lines.push_back(r.line);
  return {{"diagnostics", diags},   {"rules", prog.rules.size()}, {"rule_lines", lines},
          {"initial", report_json(ev.initial)}, {"after_rule", after}, {"deltas", ev.deltas},
          {"report", report_json(ev.final)}};
}

}  // namespace detail

class Session {
 public:
  using Persist = std::function<void(const Event&)>;

  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  static void check_corpus(const SessionConfig& cfg, const CorpusData& corpus) {
    if (corpus.train.size() <= cfg.gold_size)
      throw InvalidArgument("corpus '" + cfg.corpus + "' has no pool beyond its " + std::to_string(cfg.gold_size) +
                            " gold sentences");
    if (corpus.test.size() < cfg.final_size)
      throw InvalidArgument("corpus '" + cfg.corpus + "' has fewer than " + std::to_string(cfg.final_size) +
                            " test sentences");
  }

  static std::unique_ptr<Session> create(std::string id, const SessionConfig& cfg,
                                         std::shared_ptr<const CorpusData> corpus, std::int64_t now,
                                         Persist persist = {}) {
    cfg.validate();
    check_corpus(cfg, *corpus);
    std::unique_ptr<Session> s(new Session(std::move(corpus), std::move(persist)));
    s->commit(EventKind::SessionCreated,
              {{"id", std::move(id)}, {"config", to_json(cfg)}, {"rng", std::string(Rng::kName)}}, now);
    return s;
  }

  // Rebuilds a session from its log. With `verify`, each logged batch is
  // recomputed and must match.
  static std::unique_ptr<Session> replay(std::span<const Event> log, const CorpusLookup& corpora, bool verify = false,
                                         Persist persist = {}) {
    if (log.empty() || log.front().kind != EventKind::SessionCreated)
      throw Error("session log must start with session-created");
    const auto cfg = session_config_from_json(log.front().data.at("config"));
    if (log.front().data.value("rng", std::string()) != Rng::kName)
      throw Error("session log was written with a different random generator");
    auto corpus = corpora(cfg.corpus);
    if (!corpus) throw NotFound("unknown corpus '" + cfg.corpus + "'");
    std::unique_ptr<Session> s(new Session(std::move(corpus), {}));
    for (std::size_t i = 0; i < log.size(); ++i) {
      const auto& e = log[i];
      if (e.seq != i) throw Error("session log: event " + std::to_string(i) + " has seq " + std::to_string(e.seq));
      if (verify && e.kind == EventKind::BatchServed) {
        const auto expected = s->learner_->propose();
        if (e.data.at("ids").get<std::vector<SentenceId>>() != expected)
          throw Error("replay diverged at batch " + e.data.at("batch").dump());
      }
      try {
        s->apply(e);
      } catch (const Json::exception& ex) {
        throw Error("session log: bad event " + std::to_string(i) + ": " + ex.what());
      }
      s->events_.push_back(e);
    }
    s->persist_ = std::move(persist);
    return s;
  }

  const std::string& id() const { return id_; }
  const SessionConfig& config() const { return config_; }
  Phase phase() const { return phase_; }
  const std::vector<Event>& events() const { return events_; }
  std::size_t iteration() const { return learner_ ? learner_->iteration() : 0; }
  const std::optional<Report>& final_report() const { return final_report_; }

  // Starts computing the next batch in the background, so selection overlaps
  // with whatever the human is doing.
  void prefetch() {
    if (!learner_ || pending_ || prefetch_.valid()) return;
    if (phase_ != Phase::Feedback && phase_ != Phase::Active) return;
    if (learner_->done()) return;
    prefetch_ = std::async(std::launch::async, [l = *learner_] { return l.propose(); }).share();
  }

  Json info() const {
    Json j = {{"id", id_},
              {"mode", std::string(to_string(config_.mode))},
              {"phase", std::string(to_string(phase_))},
              {"config", to_json(config_)},
              {"events", events_.size()}};
    if (config_.mode == Method::Annotation) {
      j["iteration"] = iteration();
      j["feedback_index"] = feedback_index_;
      j["training_sentences"] = learner_->training().size();
      j["pool"] = learner_->pool().size();
      j["pending_batch"] = pending_ ? Json(pending_->batch) : Json(nullptr);
    } else {
      j["rule_submissions"] = rule_submissions_;
    }
    if (final_report_) j["final"] = report_json(*final_report_);
    return j;
  }

  // --- feedback phase ---------------------------------------------------

  Json feedback_current() const {
    require_phase(Phase::Feedback);
    return {{"index", feedback_index_}, {"sentence", sentence_json(gold_[feedback_index_].sentence)}};
  }

  // Body: {"labeling": [...]} for the current sentence, or {"stop": true}.
  Json submit_feedback(const Json& body, std::int64_t now) {
    require_phase(Phase::Feedback);
    if (body.is_object() && body.value("stop", false)) {
      commit(EventKind::FeedbackStopped, {{"index", feedback_index_}}, now);
      return {{"phase", std::string(to_string(phase_))}};
    }
    const auto& gold = gold_[feedback_index_];
    std::vector<Labeling> ls{labeling_from_json(detail::field(body, "labeling"))};
    detail::check_labelings(ls, std::span<const Sentence>(&gold.sentence, 1));
    const auto mine = iob_to_spans(ls[0]);
    const auto ref = iob_to_spans(gold.labeling);
    SpanSet missing, extra;
    std::set_difference(ref.begin(), ref.end(), mine.begin(), mine.end(), std::back_inserter(missing));
    std::set_difference(mine.begin(), mine.end(), ref.begin(), ref.end(), std::back_inserter(extra));
    const std::size_t index = feedback_index_;
    commit(EventKind::FeedbackViewed, {{"index", index}, {"labeling", labeling_json(ls[0])}}, now);
    Json out = {{"index", index},
                {"gold", labeling_json(gold.labeling)},
                {"missing", spans_json(missing)},
                {"extra", spans_json(extra)},
                {"report", report_json(make_report(pr_counts(ref, mine)))},
                {"phase", std::string(to_string(phase_))}};
    out["next"] = phase_ == Phase::Feedback ? sentence_json(gold_[feedback_index_].sentence) : Json(nullptr);
    return out;
  }

  // --- active phase, annotation mode ------------------------------------

  Json next_batch(std::int64_t now) {
    require_mode(Method::Annotation);
    require_phase(Phase::Active);
    if (pending_) throw StateError("batch " + std::to_string(pending_->batch) + " is still pending");
    std::vector<SentenceId> ids;
    if (prefetch_.valid()) {
      ids = prefetch_.get();
      prefetch_ = {};
    } else {
      ids = learner_->propose();
    }
    const std::size_t batch = next_batch_;
    commit(EventKind::BatchServed, {{"batch", batch}, {"ids", ids}, {"iteration", iteration() + 1}}, now);
    Json sentences = Json::array();
    for (const auto& s : pending_sentences()) sentences.push_back(sentence_json(s));
    return {{"batch", batch}, {"size", ids.size()}, {"iteration", iteration() + 1}, {"sentences", sentences}};
  }

  // Body: {"batch": n, "labelings": [[...], ...]} in the order served.
  // Submissions are final.
  Json submit_annotations(const Json& body, std::int64_t now) {
    require_mode(Method::Annotation);
    require_phase(Phase::Active);
    if (!pending_) throw StateError("no batch pending");
    const auto& b = detail::field(body, "batch");
    if (!b.is_number_integer() || b.get<std::int64_t>() != static_cast<std::int64_t>(pending_->batch))
      throw InvalidArgument("batch id " + b.dump() + " does not match pending batch " +
                            std::to_string(pending_->batch));
    auto labelings = detail::labelings_from_json(detail::field(body, "labelings"));
    const auto sentences = pending_sentences();
    const std::size_t fixed = detail::check_labelings(labelings, sentences);
    if (fixed) log::warn("session " + id_ + ": rewrote " + std::to_string(fixed) + " invalid B tag(s) to I");
    Json arr = Json::array();
    for (const auto& l : labelings) arr.push_back(labeling_json(l));
    const std::int64_t t = stamp(now);
    const double seconds = static_cast<double>(t - pending_->served_ms) / 1000.0;
    commit(EventKind::AnnotationSubmitted,
           {{"batch", pending_->batch}, {"ids", pending_->ids}, {"labelings", arr}, {"seconds", seconds}}, t);
    return {{"iteration", iteration()},
            {"training_sentences", learner_->training().size()},
            {"words", learner_->history().iterations.back().words},
            {"pool", learner_->pool().size()},
            {"seconds", seconds},
            {"normalized", fixed},
            {"phase", std::string(to_string(phase_))}};
  }

  // --- rule-writing mode ------------------------------------------------

  // Body: {"text": "..."}. Logged verbatim even when it has errors.
  Json submit_rules(const Json& body, std::int64_t now) {
    require_mode(Method::RuleWriting);
    require_phase(Phase::Active);
    const auto& t = detail::field(body, "text");
    if (!t.is_string()) throw InvalidArgument("'text' must be a string");
    const std::string text = t.get<std::string>();
    const auto prog = parse_rule_file(text);
    const auto ev = evaluate_program(prog, gold_);
    commit(EventKind::RuleListSubmitted, {{"text", text}}, now);
    Json out = detail::program_json(prog, ev);
    out["submission"] = rule_submissions_;
    return out;
  }

  // --- final evaluation -------------------------------------------------

  Json final_sample() const {
    require_phase(final_phase());
    Json sentences = Json::array();
    for (const auto& ls : final_gold()) sentences.push_back(sentence_json(ls.sentence));
    return {{"offset", final_offset_}, {"size", config_.final_size}, {"sentences", sentences}};
  }

  // Annotation mode: body {"labelings": [...]} for the final sample.
  // Rule-writing mode: scores the last submitted rule list on it.
  Json submit_final(const Json& body, std::int64_t now) {
    require_phase(final_phase());
    Json data = {{"offset", final_offset_}};
    if (config_.mode == Method::Annotation) {
      auto labelings = detail::labelings_from_json(detail::field(body, "labelings"));
      std::vector<Sentence> sentences;
      for (const auto& ls : final_gold()) sentences.push_back(ls.sentence);
      detail::check_labelings(labelings, sentences);
      Json arr = Json::array();
      for (const auto& l : labelings) arr.push_back(labeling_json(l));
      data["labelings"] = arr;
    }
    commit(EventKind::EvalRequested, data, now);
    return {{"report", report_json(*final_report_)}, {"phase", std::string(to_string(phase_))}};
  }

  Json reference() const {
    Json arr = Json::array();
    for (const auto& ls : gold_) {
      Json s = sentence_json(ls.sentence);
      s["labeling"] = labeling_json(ls.labeling);
      arr.push_back(std::move(s));
    }
    return {{"sentences", arr}};
  }

  Json events_json() const {
    Json arr = Json::array();
    for (const auto& e : events_) arr.push_back(to_json(e));
    return {{"events", arr}};
  }

  std::string events_jsonl() const {
    std::string out;
    for (const auto& e : events_) out += event_line(e);
    return out;
  }

  // Everything the server knows about the session, in canonical form.
  Json state_json() const {
    Json j = info();
    j["next_batch"] = next_batch_;
    j["pending"] = pending_ ? Json{{"batch", pending_->batch}, {"ids", pending_->ids}, {"served", pending_->served_ms}}
                            : Json(nullptr);
    j["rules_text"] = rules_text_;
    j["final_offset"] = final_offset_;
    if (learner_) {
      Json training = Json::array();
      for (const auto& ls : learner_->training()) training.push_back({ls.sentence.id, labeling_json(ls.labeling)});
      Json pool = Json::array();
      for (const auto& s : learner_->pool()) pool.push_back(s.id);
      j["training"] = training;
      j["pool_ids"] = pool;
    }
    j["log"] = events_json()["events"];
    return j;
  }

  std::uint64_t state_hash() const { return fnv1a(state_json().dump()); }

 private:
  struct Pending {
    std::size_t batch = 0;
    std::vector<SentenceId> ids;
    std::int64_t served_ms = 0;
  };

  Session(std::shared_ptr<const CorpusData> corpus, Persist persist)
      : corpus_(std::move(corpus)), persist_(std::move(persist)) {}

  void require_phase(Phase p) const {
    if (phase_ != p)
      throw StateError("session is in phase " + std::string(to_string(phase_)) + ", not " +
                       std::string(to_string(p)));
  }

  void require_mode(Method m) const {
    if (config_.mode != m) throw StateError("not available in " + std::string(to_string(config_.mode)) + " sessions");
  }

  Phase final_phase() const { return config_.mode == Method::Annotation ? Phase::FinalEval : Phase::Active; }

  std::span<const LabeledSentence> final_gold() const {
    return std::span<const LabeledSentence>(corpus_->test).subspan(final_offset_, config_.final_size);
  }

  std::vector<Sentence> pending_sentences() const {
    std::vector<Sentence> out;
    for (SentenceId id : pending_->ids) {
      const auto& pool = learner_->pool();
      const auto it = std::find_if(pool.begin(), pool.end(), [id](const Sentence& s) { return s.id == id; });
      out.push_back(*it);
    }
    return out;
  }

  std::int64_t stamp(std::int64_t now) const {
    return events_.empty() ? now : std::max(now, events_.back().time_ms);
  }

  void commit(EventKind kind, Json data, std::int64_t now) {
    Event e{events_.size(), stamp(now), kind, std::move(data)};
    if (persist_) persist_(e);
    apply(e);
    events_.push_back(std::move(e));
  }

  void apply(const Event& e) {
    switch (e.kind) {
      case EventKind::SessionCreated: {
        id_ = e.data.at("id").get<std::string>();
        config_ = session_config_from_json(e.data.at("config"));
        check_corpus(config_, *corpus_);
        gold_.assign(corpus_->train.begin(), corpus_->train.begin() + static_cast<std::ptrdiff_t>(config_.gold_size));
        Rng rng(config_.seed);
        final_offset_ = rng.fork(0xF1AA1).below(corpus_->test.size() - config_.final_size + 1);
        if (config_.mode == Method::Annotation) {
          std::vector<Sentence> all;
          for (const auto& ls : corpus_->train) all.push_back(ls.sentence);
          learner_.emplace(std::move(all), config_.al_config(), Selection::Active);
          std::vector<Labeling> labels;
          for (const auto& ls : gold_) labels.push_back(ls.labeling);
          learner_->seed_with(std::move(labels));
          phase_ = Phase::Feedback;
        } else {
          phase_ = Phase::Active;
        }
        break;
      }
      case EventKind::FeedbackViewed:
        ++feedback_index_;
        if (feedback_index_ >= std::min(config_.feedback_limit, gold_.size())) phase_ = Phase::Active;
        break;
      case EventKind::FeedbackStopped:
        phase_ = Phase::Active;
        break;
      case EventKind::BatchServed:
        pending_ = Pending{e.data.at("batch").get<std::size_t>(), e.data.at("ids").get<std::vector<SentenceId>>(),
                           e.time_ms};
        next_batch_ = pending_->batch + 1;
        break;
      case EventKind::AnnotationSubmitted: {
        prefetch_ = {};
        learner_->accept(e.data.at("ids").get<std::vector<SentenceId>>(),
                         Annotation{detail::labelings_from_json(e.data.at("labelings")),
                                    e.data.at("seconds").get<double>()});
        pending_.reset();
        if (learner_->done()) phase_ = Phase::FinalEval;
        break;
      }
      case EventKind::RuleListSubmitted:
        rules_text_ = e.data.at("text").get<std::string>();
        ++rule_submissions_;
        break;
      case EventKind::EvalRequested: {
        const auto gold = final_gold();
        if (config_.mode == Method::Annotation) {
          std::vector<Labeling> ref;
          for (const auto& ls : gold) ref.push_back(ls.labeling);
          final_report_ = evaluate_corpus(ref, detail::labelings_from_json(e.data.at("labelings")));
        } else {
          final_report_ = evaluate_program(parse_rule_file(rules_text_), gold).final;
        }
        phase_ = Phase::Done;
        break;
      }
    }
  }

  std::shared_ptr<const CorpusData> corpus_;
  Persist persist_;
  std::string id_;
  SessionConfig config_;
  Phase phase_ = Phase::Feedback;
  std::vector<LabeledSentence> gold_;
  std::size_t feedback_index_ = 0;
  std::optional<ActiveLearner> learner_;
  std::size_t next_batch_ = 0;
  std::optional<Pending> pending_;
  std::shared_future<std::vector<SentenceId>> prefetch_;
  std::string rules_text_;
  std::size_t rule_submissions_ = 0;
  std::size_t final_offset_ = 0;
  std::optional<Report> final_report_;
  std::vector<Event> events_;
};

struct ServiceOptions {
  std::optional<std::filesystem::path> log_dir;  // one <id>.jsonl per session
  std::function<std::int64_t()> clock = system_clock_ms;
  bool verify_replay = false;
  bool prefetch = true;
};

// Hosts many sessions. Requests to one session are serialized; different
// sessions proceed in parallel.
class SessionService {
 public:
  explicit SessionService(std::map<std::string, CorpusData> corpora, ServiceOptions opts = {})
      : opts_(std::move(opts)) {
    for (auto& [name, data] : corpora) corpora_.emplace(name, std::make_shared<const CorpusData>(std::move(data)));
    if (opts_.log_dir) restore();
  }

  std::vector<std::string> corpus_names() const {
    std::vector<std::string> out;
    for (const auto& [name, c] : corpora_) out.push_back(name);
    return out;
  }

  // Body: {"mode": ..., "config": {...}}. Returns the new session id.
  std::string create_session(const Json& body) {
    if (!body.is_object()) throw InvalidArgument("request body must be a JSON object");
    Json cfg = body.value("config", Json::object());
    if (!cfg.is_object()) throw InvalidArgument("config must be a JSON object");
    if (body.contains("mode")) cfg["mode"] = body.at("mode");
    const auto config = session_config_from_json(cfg);
    const auto corpus = find_corpus(config.corpus);
    if (!corpus) throw NotFound("unknown corpus '" + config.corpus + "'");
    std::lock_guard lock(map_mutex_);
    char buf[32];
    std::snprintf(buf, sizeof buf, "s%04zu", ++last_id_);
    const std::string id = buf;
    auto slot = std::make_shared<Slot>();
    slot->session = Session::create(id, config, corpus, opts_.clock(), persister(id));
    if (opts_.prefetch) slot->session->prefetch();
    sessions_.emplace(id, std::move(slot));
    return id;
  }

  std::vector<std::string> session_ids() const {
    std::lock_guard lock(map_mutex_);
    std::vector<std::string> out;
    for (const auto& [id, s] : sessions_) out.push_back(id);
    return out;
  }

  // Runs fn(Session&, now) with the session locked.
  template <typename Fn>
  auto with_session(const std::string& id, Fn&& fn) {
    std::shared_ptr<Slot> slot;
    {
      std::lock_guard lock(map_mutex_);
      const auto it = sessions_.find(id);
      if (it == sessions_.end()) throw NotFound("unknown session '" + id + "'");
      slot = it->second;
    }
    std::lock_guard lock(slot->mutex);
    struct Refill {
      Session& s;
      bool on;
      ~Refill() {
        if (on) s.prefetch();
      }
    } refill{*slot->session, opts_.prefetch};
    return fn(*slot->session, opts_.clock());
  }

  std::int64_t now() const { return opts_.clock(); }

 private:
  struct Slot {
    std::mutex mutex;
    std::unique_ptr<Session> session;
  };

  std::shared_ptr<const CorpusData> find_corpus(const std::string& name) const {
    const auto it = corpora_.find(name);
    return it == corpora_.end() ? nullptr : it->second;
  }

  Session::Persist persister(const std::string& id) const {
    if (!opts_.log_dir) return {};
    const auto path = *opts_.log_dir / (id + ".jsonl");
    return [path](const Event& e) {
      std::ofstream out(path, std::ios::app | std::ios::binary);
      out << event_line(e);
      out.flush();
      if (!out) throw Error("cannot append to " + path.string());
    };
  }

  void restore() {
    std::filesystem::create_directories(*opts_.log_dir);
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(*opts_.log_dir))
      if (entry.is_regular_file() && entry.path().extension() == ".jsonl") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    const CorpusLookup lookup = [this](const std::string& name) { return find_corpus(name); };
    for (const auto& path : files) {
      std::ifstream in(path, std::ios::binary);
      std::stringstream ss;
      ss << in.rdbuf();
      const auto events = parse_event_log(ss.str());
      const std::string id = path.stem().string();
      auto slot = std::make_shared<Slot>();
      slot->session = Session::replay(events, lookup, opts_.verify_replay, persister(id));
      if (slot->session->id() != id) throw Error(path.string() + ": log belongs to session " + slot->session->id());
      if (opts_.prefetch) slot->session->prefetch();
      if (id.size() > 1 && id[0] == 's') {
        try {
          last_id_ = std::max<std::size_t>(last_id_, std::stoul(id.substr(1)));
        } catch (const std::exception&) {
        }
      }
      sessions_.emplace(id, std::move(slot));
    }
  }

  ServiceOptions opts_;
  std::map<std::string, std::shared_ptr<const CorpusData>> corpora_;
  mutable std::mutex map_mutex_;
  std::map<std::string, std::shared_ptr<Slot>> sessions_;
  std::size_t last_id_ = 0;
};

}  // namespace npal
