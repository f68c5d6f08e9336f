#pragma once

// Transformation-based chunker: a POS -> tag initial annotator followed by an
// ordered list of learned rewrite rules. Learning is the usual greedy loop:
// instantiate every template at every current error, score each candidate by
// errors fixed minus errors introduced over the whole training set, keep the
// best, re-annotate, repeat.

#include <algorithm>
#include <array>
#include <cstdint>
#include <limits>
#include <map>
#include <queue>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "npal/corpus.hpp"
#include "npal/error.hpp"

namespace npal {

enum class Feature : std::uint8_t { Word = 0, Pos = 1, Chunk = 2 };

inline constexpr int kMaxOffset = 3;

constexpr std::string_view feature_name(Feature f) {
  switch (f) {
    case Feature::Word: return "word";
    case Feature::Pos: return "pos";
    case Feature::Chunk: return "chunk";
  }
  return "?";
}

struct Atom {
  Feature feature = Feature::Pos;
  int offset = 0;
  auto operator<=>(const Atom&) const = default;
};

// A set of atoms, kept sorted so two templates with the same atoms compare equal.
struct Template {
  std::vector<Atom> atoms;

  Template() = default;
  Template(std::initializer_list<Atom> a) : atoms(a) { std::sort(atoms.begin(), atoms.end()); }
  bool operator==(const Template&) const = default;

  // Rules from this template read chunk tags to the left, which may already
  // have been rewritten earlier in the same sweep.
  bool reads_rewritten_tags() const {
    return std::any_of(atoms.begin(), atoms.end(),
                       [](const Atom& a) { return a.feature == Feature::Chunk && a.offset < 0; });
  }
};

inline const std::vector<Template>& default_templates() {
  using F = Feature;
  static const std::vector<Template> templates = {
      // chunk-tag context
      {{F::Chunk, -1}},
      {{F::Chunk, -2}, {F::Chunk, -1}},
      {{F::Chunk, 1}},
      {{F::Chunk, 1}, {F::Chunk, 2}},
      {{F::Chunk, -1}, {F::Chunk, 1}},
      // POS context
      {{F::Pos, 0}},
      {{F::Pos, -1}},
      {{F::Pos, 1}},
      {{F::Pos, -1}, {F::Pos, 0}},
      {{F::Pos, 0}, {F::Pos, 1}},
      {{F::Pos, -2}, {F::Pos, -1}},
      {{F::Pos, 1}, {F::Pos, 2}},
      {{F::Pos, -1}, {F::Pos, 1}},
      // word context
      {{F::Word, 0}},
      {{F::Word, -1}},
      {{F::Word, 1}},
      {{F::Word, -1}, {F::Word, 0}},
      {{F::Word, 0}, {F::Word, 1}},
      // word x POS
      {{F::Word, 0}, {F::Pos, -1}},
      {{F::Word, 0}, {F::Pos, 1}},
      // POS x chunk-tag
      {{F::Pos, 0}, {F::Chunk, -1}},
      {{F::Pos, 0}, {F::Chunk, 1}},
  };
  return templates;
}

// One test of a rule condition. An empty value denotes the sentence boundary,
// which no real word or tag can equal.
struct Condition {
  Feature feature = Feature::Pos;
  int offset = 0;
  std::string value;

  auto operator<=>(const Condition&) const = default;
};

struct TransformRule {
  std::vector<Condition> conditions;  // sorted by (feature, offset)
  ChunkTag from = ChunkTag::I;
  ChunkTag to = ChunkTag::O;

  bool operator==(const TransformRule&) const = default;
};

// Canonical one-line form, e.g. "I>O pos@-1=VBZ pos@0=NN".
inline std::string serialize_rule(const TransformRule& r) {
  std::string out;
  out += to_char(r.from);
  out += '>';
  out += to_char(r.to);
  for (const auto& c : r.conditions) {
    out += ' ';
    out += feature_name(c.feature);
    out += '@';
    out += std::to_string(c.offset);
    out += '=';
    out += c.value;
  }
  return out;
}

inline TransformRule parse_rule(std::string_view line) {
  const auto fields = detail::split_ws(line);
  if (fields.empty()) throw ParseError(0, "empty rule");
  const std::string_view action = fields[0];
  if (action.size() != 3 || action[1] != '>') throw ParseError(0, "bad rule action '" + std::string(action) + "'");
  const auto from = tag_from_string(action.substr(0, 1));
  const auto to = tag_from_string(action.substr(2, 1));
  if (!from || !to) throw ParseError(0, "bad rule action '" + std::string(action) + "'");
  if (*from == *to) throw ParseError(0, "rule action does not change the tag");
  TransformRule r{{}, *from, *to};
  for (std::size_t k = 1; k < fields.size(); ++k) {
    const std::string_view f = fields[k];
    const std::size_t at = f.find('@');
    const std::size_t eq = f.find('=');
    if (at == std::string_view::npos || eq == std::string_view::npos || eq < at)
      throw ParseError(0, "bad rule test '" + std::string(f) + "'");
    const std::string_view name = f.substr(0, at);
    Condition c;
    if (name == "word")
      c.feature = Feature::Word;
    else if (name == "pos")
      c.feature = Feature::Pos;
    else if (name == "chunk")
      c.feature = Feature::Chunk;
    else
      throw ParseError(0, "unknown feature '" + std::string(name) + "'");
    try {
      std::size_t used = 0;
      const std::string off(f.substr(at + 1, eq - at - 1));
      c.offset = std::stoi(off, &used);
      if (used != off.size()) throw std::invalid_argument(off);
    } catch (const std::exception&) {
      throw ParseError(0, "bad offset in '" + std::string(f) + "'");
    }
    if (c.offset < -kMaxOffset || c.offset > kMaxOffset) throw ParseError(0, "offset out of window");
    c.value = std::string(f.substr(eq + 1));
    if (c.feature == Feature::Chunk && !c.value.empty() && !tag_from_string(c.value))
      throw ParseError(0, "bad chunk tag value '" + c.value + "'");
    r.conditions.push_back(std::move(c));
  }
  std::sort(r.conditions.begin(), r.conditions.end());
  for (std::size_t k = 1; k < r.conditions.size(); ++k) {
    if (r.conditions[k].feature == r.conditions[k - 1].feature && r.conditions[k].offset == r.conditions[k - 1].offset)
      throw ParseError(0, "duplicate test in rule");
  }
  return r;
}

struct InitialAnnotator {
  std::map<std::string, ChunkTag> pos_to_tag;
  ChunkTag default_tag = ChunkTag::O;

  ChunkTag operator()(const std::string& pos) const {
    const auto it = pos_to_tag.find(pos);
    return it == pos_to_tag.end() ? default_tag : it->second;
  }
  bool operator==(const InitialAnnotator&) const = default;
};

struct Chunker {
  InitialAnnotator initial;
  std::vector<TransformRule> rules;

  bool operator==(const Chunker&) const = default;
};

// Each POS maps to its most frequent tag (B counts as I; ties go to I).
inline InitialAnnotator train_initial(std::span<const LabeledSentence> training) {
  if (training.empty()) throw InvalidArgument("train_initial: empty training set");
  std::map<std::string, std::pair<std::size_t, std::size_t>> counts;  // (inside, outside)
  for (const auto& ls : training) {
    for (std::size_t i = 0; i < ls.sentence.size(); ++i) {
      auto& c = counts[ls.sentence.tokens[i].pos];
      (ls.labeling.tags[i] == ChunkTag::O ? c.second : c.first)++;
    }
  }
  InitialAnnotator a;
  for (const auto& [pos, c] : counts) a.pos_to_tag[pos] = c.first >= c.second ? ChunkTag::I : ChunkTag::O;
  return a;
}

// ---------------------------------------------------------------------------
// Text form: "default TAG", one "POS TAG" line per entry, blank line, rules.

inline std::string serialize_chunker(const Chunker& c) {
  std::string out = "default ";
  out += to_char(c.initial.default_tag);
  out += '\n';
  for (const auto& [pos, tag] : c.initial.pos_to_tag) {
    out += pos;
    out += ' ';
    out += to_char(tag);
    out += '\n';
  }
  out += '\n';
  for (const auto& r : c.rules) {
    out += serialize_rule(r);
    out += '\n';
  }
  return out;
}

inline Chunker deserialize_chunker(std::string_view text) {
  const auto lines = detail::split_lines(text);
  std::size_t top = 0;  // leading '#' lines are metadata
  while (top < lines.size() && detail::trim(lines[top]).starts_with('#')) ++top;
  if (top == lines.size()) throw ParseError(top + 1, "empty chunker file");
  Chunker c;
  const auto header = detail::split_ws(lines[top]);
  if (header.size() != 2 || header[0] != "default") throw ParseError(top + 1, "expected 'default TAG'");
  const auto def = tag_from_string(header[1]);
  if (!def || *def == ChunkTag::B) throw ParseError(top + 1, "bad default tag");
  c.initial.default_tag = *def;
  std::size_t ln = top + 1;
  for (; ln < lines.size() && !detail::trim(lines[ln]).empty(); ++ln) {
    const auto f = detail::split_ws(lines[ln]);
    const auto tag = f.size() == 2 ? tag_from_string(f[1]) : std::nullopt;
    if (!tag || *tag == ChunkTag::B) throw ParseError(ln + 1, "expected 'POS TAG' with TAG in {I,O}");
    if (!c.initial.pos_to_tag.emplace(std::string(f[0]), *tag).second)
      throw ParseError(ln + 1, "duplicate POS entry");
  }
  for (++ln; ln < lines.size(); ++ln) {
    if (detail::trim(lines[ln]).empty()) continue;
    try {
      c.rules.push_back(parse_rule(lines[ln]));
    } catch (const ParseError& e) {
      throw ParseError(ln + 1, e.what());
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// Encoded representation shared by application and learning.

namespace detail {

inline constexpr std::uint32_t kBoundaryId = std::numeric_limits<std::uint32_t>::max();
inline constexpr std::uint32_t kUnknownId = kBoundaryId - 1;

struct EncodedSentence {
  std::vector<std::uint32_t> word;
  std::vector<std::uint32_t> pos;
  std::size_t size() const { return word.size(); }
};

struct EncodedCondition {
  Feature feature;
  int offset;
  std::uint32_t value;
};

struct EncodedRule {
  std::vector<EncodedCondition> conditions;
  ChunkTag from;
  ChunkTag to;
};

inline std::uint32_t feature_at(const EncodedSentence& s, std::span<const ChunkTag> tags, Feature f, long i) {
  if (i < 0 || i >= static_cast<long>(s.size())) return kBoundaryId;
  switch (f) {
    case Feature::Word: return s.word[i];
    case Feature::Pos: return s.pos[i];
    case Feature::Chunk: return static_cast<std::uint32_t>(tags[i]);
  }
  return kBoundaryId;
}

inline bool fires(const EncodedRule& r, const EncodedSentence& s, std::span<const ChunkTag> tags, long i) {
  if (tags[i] != r.from) return false;
  for (const auto& c : r.conditions)
    if (feature_at(s, tags, c.feature, i + c.offset) != c.value) return false;
  return true;
}

// In-place left-to-right sweep: tests at already-visited positions see the
// rewritten tags, tests to the right see the tags from before the sweep.
inline std::size_t sweep(const EncodedRule& r, const EncodedSentence& s, std::span<ChunkTag> tags) {
  std::size_t changed = 0;
  for (long i = 0; i < static_cast<long>(s.size()); ++i) {
    if (fires(r, s, tags, i)) {
      tags[i] = r.to;
      ++changed;
    }
  }
  return changed;
}

class SymbolTable {
 public:
  std::uint32_t intern(const std::string& s) {
    const auto [it, inserted] = ids_.try_emplace(s, static_cast<std::uint32_t>(names_.size()));
    if (inserted) names_.push_back(s);
    return it->second;
  }
  std::uint32_t find(const std::string& s) const {
    const auto it = ids_.find(s);
    return it == ids_.end() ? kUnknownId : it->second;
  }
  const std::string& name(std::uint32_t id) const { return names_[id]; }

 private:
  std::unordered_map<std::string, std::uint32_t> ids_;
  std::vector<std::string> names_;
};

}  // namespace detail

// A chunker with its rule values interned, for applying to many sentences.
class CompiledChunker {
 public:
  explicit CompiledChunker(Chunker chunker) : chunker_(std::move(chunker)) {
    for (const auto& r : chunker_.rules) {
      detail::EncodedRule er{{}, r.from, r.to};
      for (const auto& c : r.conditions) {
        std::uint32_t v = detail::kBoundaryId;
        if (!c.value.empty()) {
          switch (c.feature) {
            case Feature::Word: v = words_.intern(c.value); break;
            case Feature::Pos: v = pos_.intern(c.value); break;
            case Feature::Chunk: v = static_cast<std::uint32_t>(*tag_from_string(c.value)); break;
          }
        }
        er.conditions.push_back({c.feature, c.offset, v});
      }
      rules_.push_back(std::move(er));
    }
  }

  const Chunker& chunker() const { return chunker_; }

  // Tags after the initial annotation and every rule, before IOB1 repair.
  std::vector<ChunkTag> raw_tags(const Sentence& s) const {
    detail::EncodedSentence enc;
    enc.word.reserve(s.size());
    enc.pos.reserve(s.size());
    std::vector<ChunkTag> tags;
    tags.reserve(s.size());
    for (const auto& t : s.tokens) {
      enc.word.push_back(words_.find(t.word));
      enc.pos.push_back(pos_.find(t.pos));
      tags.push_back(chunker_.initial(t.pos));
    }
    for (const auto& r : rules_) detail::sweep(r, enc, tags);
    return tags;
  }

  Labeling apply(const Sentence& s) const {
    Labeling out{raw_tags(s)};
    normalize_iob1(out);
    return out;
  }

 private:
  Chunker chunker_;
  detail::SymbolTable words_;
  detail::SymbolTable pos_;
  std::vector<detail::EncodedRule> rules_;
};

inline Labeling apply_chunker(const Chunker& chunker, const Sentence& sentence) {
  return CompiledChunker(chunker).apply(sentence);
}

// ---------------------------------------------------------------------------
// Learning.

struct TblConfig {
  std::vector<Template> templates = default_templates();
  double score_threshold = 2.0;
  std::size_t max_rules = 500;
};

struct LearnStep {
  TransformRule rule;
  long score = 0;
  std::size_t errors_before = 0;
  std::size_t errors_after = 0;
};

struct TrainingTrace {
  std::size_t initial_errors = 0;
  std::vector<LearnStep> steps;
};

namespace detail {

struct CandidateKey {
  std::uint8_t templ = 0;
  std::uint8_t from = 0;
  std::uint8_t to = 0;  // unused (0) in condition-only keys
  std::array<std::uint32_t, 3> values{};

  bool operator==(const CandidateKey&) const = default;
};

struct CandidateKeyHash {
  std::size_t operator()(const CandidateKey& k) const noexcept {
    std::uint64_t h = (std::uint64_t{k.templ} << 16) | (std::uint64_t{k.from} << 8) | k.to;
    for (std::uint32_t v : k.values) {
      h ^= v + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2);
      h *= 0xFF51AFD7ED558CCDULL;
    }
    return static_cast<std::size_t>(h ^ (h >> 29));
  }
};

class Learner {
 public:
  Learner(std::span<const LabeledSentence> training, const TblConfig& config) : config_(config) {
    if (config_.templates.size() > 255) throw InvalidArgument("too many templates");
    for (const auto& t : config_.templates) {
      if (t.atoms.empty() || t.atoms.size() > 3) throw InvalidArgument("templates need 1 to 3 atoms");
      for (const auto& a : t.atoms)
        if (a.offset < -kMaxOffset || a.offset > kMaxOffset) throw InvalidArgument("template offset out of window");
    }
    chunker_.initial = train_initial(training);
    for (const auto& ls : training) {
      if (ls.sentence.size() != ls.labeling.size()) throw InvalidArgument("labeling length mismatch");
      EncodedSentence enc;
      std::vector<ChunkTag> cur;
      for (const auto& t : ls.sentence.tokens) {
        enc.word.push_back(words_.intern(t.word));
        enc.pos.push_back(pos_.intern(t.pos));
        cur.push_back(chunker_.initial(t.pos));
      }
      sentences_.push_back(std::move(enc));
      current_.push_back(std::move(cur));
      gold_.push_back(ls.labeling.tags);
    }
  }

  Chunker run(TrainingTrace* trace) {
    std::size_t errors = count_errors();
    if (trace) trace->initial_errors = errors;
    while (chunker_.rules.size() < config_.max_rules) {
      auto best = best_candidate();
      if (!best) break;
      const auto& [rule, score] = *best;
      for (std::size_t s = 0; s < sentences_.size(); ++s) sweep(rule, sentences_[s], current_[s]);
      const std::size_t after = count_errors();
      if (after + static_cast<std::size_t>(score) != errors)
        throw Error("internal: rule score disagrees with re-annotation");
      chunker_.rules.push_back(decode(rule));
      if (trace) trace->steps.push_back({chunker_.rules.back(), score, errors, after});
      errors = after;
    }
    return chunker_;
  }

 private:
  struct Scored {
    CandidateKey key;
    long score;
    bool exact;
    std::string text;
  };

  std::size_t count_errors() const {
    std::size_t e = 0;
    for (std::size_t s = 0; s < current_.size(); ++s)
      for (std::size_t i = 0; i < current_[s].size(); ++i) e += current_[s][i] != gold_[s][i];
    return e;
  }

  CandidateKey key_at(std::size_t templ, std::size_t s, long i) const {
    CandidateKey k;
    k.templ = static_cast<std::uint8_t>(templ);
    const auto& atoms = config_.templates[templ].atoms;
    for (std::size_t a = 0; a < atoms.size(); ++a)
      k.values[a] = feature_at(sentences_[s], current_[s], atoms[a].feature, i + atoms[a].offset);
    return k;
  }

  EncodedRule to_rule(const CandidateKey& k) const {
    EncodedRule r{{}, static_cast<ChunkTag>(k.from), static_cast<ChunkTag>(k.to)};
    const auto& atoms = config_.templates[k.templ].atoms;
    for (std::size_t a = 0; a < atoms.size(); ++a) r.conditions.push_back({atoms[a].feature, atoms[a].offset, k.values[a]});
    return r;
  }

  TransformRule decode(const EncodedRule& r) const {
    TransformRule out{{}, r.from, r.to};
    for (const auto& c : r.conditions) {
      Condition cond{c.feature, c.offset, {}};
      if (c.value != kBoundaryId) {
        switch (c.feature) {
          case Feature::Word: cond.value = words_.name(c.value); break;
          case Feature::Pos: cond.value = pos_.name(c.value); break;
          case Feature::Chunk: cond.value = to_string(static_cast<ChunkTag>(c.value)); break;
        }
      }
      out.conditions.push_back(std::move(cond));
    }
    std::sort(out.conditions.begin(), out.conditions.end());
    return out;
  }

  // Error delta of applying `r` with the real sweep semantics.
  long exact_score(const EncodedRule& r) const {
    long delta = 0;
    std::vector<ChunkTag> tags;
    for (std::size_t s = 0; s < sentences_.size(); ++s) {
      tags = current_[s];
      for (long i = 0; i < static_cast<long>(tags.size()); ++i) {
        if (!fires(r, sentences_[s], tags, i)) continue;
        const ChunkTag g = gold_[s][i];
        delta += (r.to == g) - (tags[i] == g);
        tags[i] = r.to;
      }
    }
    return delta;
  }

  std::optional<std::pair<EncodedRule, long>> best_candidate() const {
    const std::size_t nt = config_.templates.size();
    std::unordered_map<CandidateKey, long, CandidateKeyHash> good;
    for (std::size_t s = 0; s < sentences_.size(); ++s) {
      for (long i = 0; i < static_cast<long>(current_[s].size()); ++i) {
        const ChunkTag cur = current_[s][i], g = gold_[s][i];
        if (cur == g) continue;
        for (std::size_t t = 0; t < nt; ++t) {
          CandidateKey k = key_at(t, s, i);
          k.from = static_cast<std::uint8_t>(cur);
          k.to = static_cast<std::uint8_t>(g);
          ++good[k];
        }
      }
    }

    // Every position where a candidate fires and the tag is already right
    // costs one error. Only conditions of viable candidates are tracked.
    std::unordered_map<CandidateKey, long, CandidateKeyHash> bad;
    for (const auto& [k, g] : good) {
      if (static_cast<double>(g) < config_.score_threshold) continue;
      CandidateKey c = k;
      c.to = 0;
      bad.emplace(c, 0);
    }
    if (bad.empty()) return std::nullopt;
    for (std::size_t s = 0; s < sentences_.size(); ++s) {
      for (long i = 0; i < static_cast<long>(current_[s].size()); ++i) {
        const ChunkTag cur = current_[s][i];
        if (cur != gold_[s][i]) continue;
        for (std::size_t t = 0; t < nt; ++t) {
          CandidateKey k = key_at(t, s, i);
          k.from = static_cast<std::uint8_t>(cur);
          if (auto it = bad.find(k); it != bad.end()) ++it->second;
        }
      }
    }

    // Order: score descending, then canonical text ascending. Scores of rules
    // reading left-side chunk tags are estimates from the pre-sweep tags and
    // are re-scored exactly before they can win.
    auto worse = [](const Scored& a, const Scored& b) {
      if (a.score != b.score) return a.score < b.score;
      return a.text > b.text;
    };
    std::priority_queue<Scored, std::vector<Scored>, decltype(worse)> heap(worse);
    for (const auto& [k, g] : good) {
      if (static_cast<double>(g) < config_.score_threshold) continue;
      CandidateKey c = k;
      c.to = 0;
      const long score = g - bad.at(c);
      if (static_cast<double>(score) < config_.score_threshold) continue;
      const bool exact = !config_.templates[k.templ].reads_rewritten_tags();
      heap.push({k, score, exact, serialize_rule(decode(to_rule(k)))});
    }
    while (!heap.empty()) {
      Scored top = heap.top();
      heap.pop();
      if (!top.exact) {
        top.score = exact_score(to_rule(top.key));
        top.exact = true;
        heap.push(std::move(top));
        continue;
      }
      if (static_cast<double>(top.score) < config_.score_threshold || top.score <= 0) return std::nullopt;
      return std::make_pair(to_rule(top.key), top.score);
    }
    return std::nullopt;
  }

  TblConfig config_;
  Chunker chunker_;
  SymbolTable words_;
  SymbolTable pos_;
  std::vector<EncodedSentence> sentences_;
  std::vector<std::vector<ChunkTag>> current_;
  std::vector<std::vector<ChunkTag>> gold_;
};

}  // namespace detail

inline Chunker learn_rules(std::span<const LabeledSentence> training, const TblConfig& config = {},
                           TrainingTrace* trace = nullptr) {
  if (training.empty()) throw InvalidArgument("learn_rules: empty training set");
  return detail::Learner(training, config).run(trace);
}

}  // namespace npal
