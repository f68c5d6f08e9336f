#pragma once

// Hand-written bracketing rules.
//
// A rule is a whitespace-separated sequence of token patterns and bracket
// symbols. "{ }" marks where chunks go after the rule fires, "[ ]" marks
// chunk boundaries that must already exist for it to fire, and "[? ]?" marks
// boundaries that may exist. Everything between the outermost bracket
// symbols is rewritten: chunks inside it are dropped and the "{ }" chunks
// are installed. Tokens outside every bracket are context only.
//
//   { _DT ADJ* NOUN+ }                     insert a chunk
//   [ { ANYWORD* NOUN+ } { ADJ* TIMEDAY } ] split one
//   { about_ [ _$ NUM+ ] }                 widen one
//
// Token patterns are word_tag with regex fragments on either side (an empty
// side matches anything) and an optional ::? ::* ::+ repetition suffix.
// Uppercase names are macros from a MacroTable and take bare ? * + suffixes.

#include <algorithm>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "npal/corpus.hpp"
#include "npal/error.hpp"
#include "npal/metrics.hpp"
#include "npal/regex.hpp"

namespace npal {

enum class Repetition { One, Optional, Star, Plus };

inline char repetition_char(Repetition r) {
  switch (r) {
    case Repetition::Optional: return '?';
    case Repetition::Star: return '*';
    case Repetition::Plus: return '+';
    case Repetition::One: break;
  }
  return '\0';
}

struct TokenPattern {
  std::optional<Regex> word;  // empty: any word
  std::optional<Regex> tag;   // empty: any tag
  bool negated = false;
  Repetition repetition = Repetition::One;
  std::string macro;  // set when the pattern came from a macro reference

  bool matches(const Token& t) const {
    const bool hit = (!word || word->full_match(t.word)) && (!tag || tag->full_match(t.pos));
    return hit != negated;
  }
};

enum class ElementKind { OpenNew, CloseNew, OpenOld, CloseOld, OpenMaybe, CloseMaybe, Pattern };

struct Element {
  ElementKind kind = ElementKind::Pattern;
  TokenPattern pattern;  // only for Pattern
};

struct DslRule {
  std::vector<Element> elements;
  std::string source;
  std::size_t line = 0;

  std::size_t pattern_count() const {
    return static_cast<std::size_t>(std::count_if(elements.begin(), elements.end(),
                                                  [](const Element& e) { return e.kind == ElementKind::Pattern; }));
  }
};

namespace detail {

inline bool is_macro_name(std::string_view s) {
  if (s.empty() || s[0] < 'A' || s[0] > 'Z') return false;
  return std::all_of(s.begin(), s.end(), [](char c) { return (c >= 'A' && c <= 'Z') || c == '_'; });
}

inline bool is_repetition(char c) { return c == '?' || c == '*' || c == '+'; }

inline Repetition repetition_from(char c) {
  return c == '?' ? Repetition::Optional : c == '*' ? Repetition::Star : Repetition::Plus;
}

// Index of the first underscore not inside a group or class and not escaped.
inline std::optional<std::size_t> top_level_underscore(std::string_view s) {
  int depth = 0;
  bool in_class = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    if (c == '\\') {
      ++i;
      continue;
    }
    if (in_class) {
      if (c == ']') in_class = false;
      continue;
    }
    if (c == '[') {
      in_class = true;
      // A ']' right after '[' or '[^' is a member, not the end.
      if (i + 1 < s.size() && s[i + 1] == '^') ++i;
      if (i + 1 < s.size() && s[i + 1] == ']') ++i;
    } else if (c == '(') {
      ++depth;
    } else if (c == ')') {
      --depth;
    } else if (c == '_' && depth == 0) {
      return i;
    }
  }
  return std::nullopt;
}

inline std::optional<Regex> fragment(std::string_view s) {
  if (s.empty()) return std::nullopt;
  return Regex(std::string(s));
}

// "word_tag" without any repetition suffix. A tag side written with a second
// leading underscore ("(That|that)__DT") is read as the tag "DT".
inline TokenPattern parse_word_tag(std::string_view text) {
  const auto us = top_level_underscore(text);
  if (!us) throw InvalidArgument("token pattern '" + std::string(text) + "' has no word_tag separator");
  std::string_view word = text.substr(0, *us);
  std::string_view tag = text.substr(*us + 1);
  if (!tag.empty() && tag[0] == '_') tag.remove_prefix(1);
  TokenPattern p;
  try {
    p.word = fragment(word);
    p.tag = fragment(tag);
  } catch (const RegexError& e) {
    throw InvalidArgument(std::string("in token pattern '") + std::string(text) + "': " + e.what());
  }
  return p;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Macros.

class MacroTable {
 public:
  static const MacroTable& defaults() {
    static const MacroTable table = [] {
      MacroTable t;
      t.define("ADJ", "_JJ[RS]?");
      t.define("NOUN", "_NNP?S?");
      t.define("NUM", "_CD");
      t.define("ANYTHING", "_");
      t.define("ANYWORD", "_");
      t.define("TIME_W", "\\w+day_");
      t.define("TIMEDAY", "\\w+day_");
      t.define("VERB", "_VB[DGNPZ]?");
      t.define("NOT_ADJ", "!_JJ[RS]?");
      t.define("ANOUN", "_(NNP?S?|CD|VBG|VBN)");
      return t;
    }();
    return table;
  }

  // Definition text is a token pattern, optionally prefixed with '!' to
  // negate it. No repetition suffix and no references to other macros.
  void define(const std::string& name, std::string_view definition) {
    if (!detail::is_macro_name(name)) throw InvalidArgument("bad macro name '" + name + "'");
    definition = detail::trim(definition);
    bool negated = false;
    if (!definition.empty() && definition[0] == '!') {
      negated = true;
      definition.remove_prefix(1);
    }
    if (definition.find("::") != std::string_view::npos)
      throw InvalidArgument("macro '" + name + "' may not carry a repetition suffix");
    TokenPattern p = detail::parse_word_tag(definition);
    p.negated = negated;
    p.macro = name;
    table_[name] = {std::string(negated ? "!" : "") + std::string(definition), std::move(p)};
  }

  const TokenPattern* find(const std::string& name) const {
    const auto it = table_.find(name);
    return it == table_.end() ? nullptr : &it->second.pattern;
  }

  // Later definitions win.
  MacroTable merged(const MacroTable& overrides) const {
    MacroTable out = *this;
    for (const auto& [k, v] : overrides.table_) out.table_[k] = v;
    return out;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : table_) out.push_back(k);
    return out;
  }

  std::string serialize() const {
    std::string out;
    for (const auto& [k, v] : table_) out += k + " = " + v.text + "\n";
    return out;
  }

 private:
  struct Entry {
    std::string text;
    TokenPattern pattern;
  };
  std::map<std::string, Entry> table_;
};

// "NAME = pattern" per line; '#' starts a comment line.
inline MacroTable parse_macro_file(std::string_view text) {
  MacroTable t;
  std::vector<std::string> seen;
  const auto lines = detail::split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string_view line = detail::trim(lines[i]);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError(i + 1, "expected NAME = pattern");
    const std::string name(detail::trim(line.substr(0, eq)));
    if (std::find(seen.begin(), seen.end(), name) != seen.end())
      throw ParseError(i + 1, "macro '" + name + "' defined twice");
    try {
      t.define(name, line.substr(eq + 1));
    } catch (const InvalidArgument& e) {
      throw ParseError(i + 1, e.what());
    }
    seen.push_back(name);
  }
  return t;
}

// ---------------------------------------------------------------------------
// Rule parsing.

namespace detail {

inline Element lex_element(std::string_view tok, const MacroTable& macros) {
  if (tok == "{") return {ElementKind::OpenNew, {}};
  if (tok == "}") return {ElementKind::CloseNew, {}};
  if (tok == "[") return {ElementKind::OpenOld, {}};
  if (tok == "]") return {ElementKind::CloseOld, {}};
  if (tok == "[?") return {ElementKind::OpenMaybe, {}};
  if (tok == "]?") return {ElementKind::CloseMaybe, {}};

  // Macro reference, possibly with a bare suffix.
  std::string_view base = tok;
  std::optional<char> suffix;
  if (base.size() > 1 && is_repetition(base.back())) {
    suffix = base.back();
    base.remove_suffix(1);
  }
  if (is_macro_name(base)) {
    if (const TokenPattern* m = macros.find(std::string(base))) {
      Element e{ElementKind::Pattern, *m};
      e.pattern.repetition = suffix ? repetition_from(*suffix) : Repetition::One;
      return e;
    }
    if (base.find('_') == std::string_view::npos) throw InvalidArgument("unknown macro '" + std::string(base) + "'");
  }

  // word_tag pattern with an optional ::X suffix.
  base = tok;
  Repetition rep = Repetition::One;
  if (const auto colons = base.rfind("::"); colons != std::string_view::npos) {
    const std::string_view after = base.substr(colons + 2);
    if (after.size() == 1 && is_repetition(after[0])) {
      rep = repetition_from(after[0]);
      base = base.substr(0, colons);
    } else if (after.find('_') == std::string_view::npos) {
      throw InvalidArgument("bad repetition suffix in '" + std::string(tok) + "'");
    }
  }
  Element e{ElementKind::Pattern, parse_word_tag(base)};
  e.pattern.repetition = rep;
  return e;
}

inline void check_brackets(const std::vector<Element>& elements) {
  struct Pair {
    ElementKind open, close;
    const char* name;
  };
  static constexpr Pair kPairs[] = {{ElementKind::OpenNew, ElementKind::CloseNew, "{"},
                                    {ElementKind::OpenOld, ElementKind::CloseOld, "["},
                                    {ElementKind::OpenMaybe, ElementKind::CloseMaybe, "[?"}};
  for (const auto& p : kPairs) {
    bool open = false;
    for (const auto& e : elements) {
      if (e.kind == p.open) {
        if (open) throw InvalidArgument(std::string("nested '") + p.name + "'");
        open = true;
      } else if (e.kind == p.close) {
        if (!open) throw InvalidArgument(std::string("unbalanced closing bracket for '") + p.name + "'");
        open = false;
      }
    }
    if (open) throw InvalidArgument(std::string("unbalanced '") + p.name + "'");
  }
}

}  // namespace detail

// One rule from a single (already joined) line. Throws ParseError.
inline DslRule parse_dsl_rule(std::string_view text, const MacroTable& macros = MacroTable::defaults(),
                              std::size_t line = 0) {
  DslRule rule;
  rule.source = std::string(detail::trim(text));
  rule.line = line;
  try {
    for (const auto tok : detail::split_ws(text)) rule.elements.push_back(detail::lex_element(tok, macros));
    if (rule.pattern_count() == 0) throw InvalidArgument("empty rule");
    detail::check_brackets(rule.elements);
    if (rule.pattern_count() == rule.elements.size()) throw InvalidArgument("rule has no bracket symbols");
  } catch (const InvalidArgument& e) {
    throw ParseError(line, e.what());
  }
  return rule;
}

inline std::string serialize_pattern(const TokenPattern& p) {
  std::string out;
  if (!p.macro.empty()) {
    out = p.macro;
    if (p.repetition != Repetition::One) out += repetition_char(p.repetition);
    return out;
  }
  if (p.negated) out += '!';
  if (p.word) out += p.word->pattern();
  out += '_';
  if (p.tag) {
    if (!p.tag->pattern().empty() && p.tag->pattern()[0] == '_') out += '_';
    out += p.tag->pattern();
  }
  if (p.repetition != Repetition::One) {
    out += "::";
    out += repetition_char(p.repetition);
  }
  return out;
}

inline std::string serialize_rule(const DslRule& r) {
  std::string out;
  for (const auto& e : r.elements) {
    if (!out.empty()) out += ' ';
    switch (e.kind) {
      case ElementKind::OpenNew: out += '{'; break;
      case ElementKind::CloseNew: out += '}'; break;
      case ElementKind::OpenOld: out += '['; break;
      case ElementKind::CloseOld: out += ']'; break;
      case ElementKind::OpenMaybe: out += "[?"; break;
      case ElementKind::CloseMaybe: out += "]?"; break;
      case ElementKind::Pattern: out += serialize_pattern(e.pattern); break;
    }
  }
  return out;
}

struct Diagnostic {
  std::size_t line = 0;
  std::string message;
};

struct RuleListProgram {
  std::vector<DslRule> rules;
  MacroTable macros;
  std::vector<Diagnostic> diagnostics;
};

// Lines starting with '#' are comments. A line whose last non-blank character
// is a backslash continues on the next line. Rules that fail to parse are
// reported and left out.
inline RuleListProgram parse_rule_file(std::string_view text, const MacroTable& macros = MacroTable::defaults()) {
  RuleListProgram prog;
  prog.macros = macros;
  const auto lines = detail::split_lines(text);
  std::string pending;
  std::size_t start_line = 0;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::string_view line = lines[i];
    const std::string_view trimmed = detail::trim(line);
    if (pending.empty() && (trimmed.empty() || trimmed[0] == '#')) continue;
    if (pending.empty()) start_line = i + 1;
    const bool continues = !trimmed.empty() && trimmed.back() == '\\';
    std::string_view body = continues ? trimmed.substr(0, trimmed.size() - 1) : trimmed;
    pending += ' ';
    pending += body;
    if (continues && i + 1 < lines.size()) continue;
    try {
      prog.rules.push_back(parse_dsl_rule(pending, macros, start_line));
    } catch (const ParseError& e) {
      prog.diagnostics.push_back({start_line, e.what()});
    }
    pending.clear();
  }
  return prog;
}

// ---------------------------------------------------------------------------
// Application.

namespace detail {

class RuleMatcher {
 public:
  RuleMatcher(const DslRule& rule, const Sentence& s, const SpanSet& spans)
      : rule_(rule), s_(s), spans_(spans), gaps_(rule.elements.size(), 0) {}

  // Tries a match starting at token p; on success returns the end token and
  // leaves the marker gaps in gaps().
  std::optional<std::size_t> match_at(std::size_t p) {
    end_ = 0;
    if (search(0, p)) return end_;
    return std::nullopt;
  }

  const std::vector<std::size_t>& gaps() const { return gaps_; }

  // Rewrite region: from the first to the last bracket symbol.
  std::pair<std::size_t, std::size_t> region() const {
    std::size_t lo = SIZE_MAX, hi = 0;
    for (std::size_t i = 0; i < rule_.elements.size(); ++i) {
      if (rule_.elements[i].kind == ElementKind::Pattern) continue;
      lo = std::min(lo, gaps_[i]);
      hi = std::max(hi, gaps_[i]);
    }
    return {lo, hi};
  }

 private:
  bool search(std::size_t e, std::size_t pos) {
    if (e == rule_.elements.size()) {
      end_ = pos;
      return region_ok();
    }
    const Element& el = rule_.elements[e];
    if (el.kind != ElementKind::Pattern) {
      gaps_[e] = pos;
      if (el.kind == ElementKind::CloseNew && gaps_[open_of(e)] == pos) return false;
      if (el.kind == ElementKind::CloseOld && !old_pair_ok(open_of(e), e)) return false;
      return search(e + 1, pos);
    }
    const TokenPattern& p = el.pattern;
    std::size_t run = 0;
    const std::size_t cap = p.repetition == Repetition::One || p.repetition == Repetition::Optional ? 1 : s_.size();
    while (run < cap && pos + run < s_.size() && p.matches(s_.tokens[pos + run])) ++run;
    const std::size_t lo = p.repetition == Repetition::One || p.repetition == Repetition::Plus ? 1 : 0;
    for (std::size_t k = run + 1; k-- > lo;)
      if (search(e + 1, pos + k)) return true;
    return false;
  }

  std::size_t open_of(std::size_t close) const {
    const ElementKind want = rule_.elements[close].kind == ElementKind::CloseNew   ? ElementKind::OpenNew
                             : rule_.elements[close].kind == ElementKind::CloseOld ? ElementKind::OpenOld
                                                                                   : ElementKind::OpenMaybe;
    for (std::size_t i = close; i-- > 0;)
      if (rule_.elements[i].kind == want) return i;
    return close;
  }

  // The stretch between "[" and "]" must be tiled by existing chunks whose
  // inner boundaries all sit at "[?" or "]?" markers of the same stretch.
  bool old_pair_ok(std::size_t open, std::size_t close) const {
    const std::size_t a = gaps_[open], b = gaps_[close];
    if (a == b) return false;
    std::size_t cur = a;
    while (cur < b) {
      const auto it = std::lower_bound(spans_.begin(), spans_.end(), ChunkSpan{cur, 0});
      if (it == spans_.end() || it->start != cur || it->end > b) return false;
      cur = it->end;
      if (cur < b) {
        bool allowed = false;
        for (std::size_t i = open + 1; i < close; ++i) {
          const ElementKind k = rule_.elements[i].kind;
          if ((k == ElementKind::OpenMaybe || k == ElementKind::CloseMaybe) && gaps_[i] == cur) allowed = true;
        }
        if (!allowed) return false;
      }
    }
    return true;
  }

  bool region_ok() const {
    const auto [lo, hi] = region();
    for (const auto& sp : spans_) {
      const bool overlaps = sp.start < hi && lo < sp.end;
      const bool inside = sp.start >= lo && sp.end <= hi;
      if (overlaps && !inside) return false;
    }
    return true;
  }

  const DslRule& rule_;
  const Sentence& s_;
  const SpanSet& spans_;
  std::vector<std::size_t> gaps_;
  std::size_t end_ = 0;
};

}  // namespace detail

// Leftmost match first; after a match the scan resumes past the tokens it
// consumed, so a rule fires at most once on any stretch within one pass.
inline BracketedSentence apply_rule(const DslRule& rule, BracketedSentence b) {
  const std::size_t n = b.sentence.size();
  std::size_t p = 0;
  while (p <= n) {
    detail::RuleMatcher m(rule, b.sentence, b.spans);
    const auto end = m.match_at(p);
    if (!end) {
      ++p;
      continue;
    }
    const auto [lo, hi] = m.region();
    SpanSet next;
    for (const auto& sp : b.spans)
      if (!(sp.start >= lo && sp.end <= hi)) next.push_back(sp);
    for (std::size_t i = 0; i < rule.elements.size(); ++i)
      if (rule.elements[i].kind == ElementKind::OpenNew) {
        std::size_t j = i + 1;
        while (rule.elements[j].kind != ElementKind::CloseNew) ++j;
        next.push_back({m.gaps()[i], m.gaps()[j]});
      }
    std::sort(next.begin(), next.end());
    b.spans = std::move(next);
    p = std::max(*end, p + 1);
  }
  return b;
}

inline std::vector<BracketedSentence> apply_program(const RuleListProgram& prog,
                                                    std::vector<BracketedSentence> corpus) {
  for (const auto& rule : prog.rules)
    for (auto& b : corpus) b = apply_rule(rule, std::move(b));
  return corpus;
}

struct ProgramEvaluation {
  Report initial;                 // no chunks at all
  std::vector<Report> after_rule;  // after rules 1..k
  std::vector<double> deltas;      // F change contributed by each rule
  Report final;
};

// Scores the program against gold, starting from unbracketed text.
inline ProgramEvaluation evaluate_program(const RuleListProgram& prog, std::span<const LabeledSentence> gold) {
  if (gold.empty()) throw InvalidArgument("evaluate_program: empty gold corpus");
  std::vector<SpanSet> gold_spans;
  std::vector<BracketedSentence> current;
  for (const auto& ls : gold) {
    gold_spans.push_back(iob_to_spans(ls.labeling));
    current.push_back({ls.sentence, {}});
  }
  const auto score = [&] {
    PRCounts c;
    for (std::size_t i = 0; i < gold_spans.size(); ++i) c += pr_counts(gold_spans[i], current[i].spans);
    return make_report(c);
  };
  ProgramEvaluation ev;
  ev.initial = score();
  double prev = ev.initial.fmeasure;
  for (const auto& rule : prog.rules) {
    for (auto& b : current) b = apply_rule(rule, std::move(b));
    ev.after_rule.push_back(score());
    ev.deltas.push_back(ev.after_rule.back().fmeasure - prev);
    prev = ev.after_rule.back().fmeasure;
  }
  ev.final = ev.after_rule.empty() ? ev.initial : ev.after_rule.back();
  return ev;
}

}  // namespace npal
