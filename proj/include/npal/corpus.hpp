#pragma once

// Core data model: tokens, sentences, IOB1 chunk labelings and chunk spans,
// plus the two text formats used everywhere else (CoNLL-style columns and
// bracketed lines).

#include <algorithm>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "npal/error.hpp"
#include "npal/log.hpp"

namespace npal {

enum class ChunkTag : std::uint8_t { I = 0, O = 1, B = 2 };

inline constexpr std::size_t kNumChunkTags = 3;

constexpr char to_char(ChunkTag tag) {
  switch (tag) {
    case ChunkTag::I: return 'I';
    case ChunkTag::O: return 'O';
    case ChunkTag::B: return 'B';
  }
  return '?';
}

inline std::string to_string(ChunkTag tag) { return std::string(1, to_char(tag)); }

constexpr std::optional<ChunkTag> tag_from_string(std::string_view s) {
  if (s == "I") return ChunkTag::I;
  if (s == "O") return ChunkTag::O;
  if (s == "B") return ChunkTag::B;
  return std::nullopt;
}

struct Token {
  std::string word;
  std::string pos;

  bool operator==(const Token&) const = default;
};

struct Sentence {
  std::int64_t id = 0;
  std::vector<Token> tokens;

  std::size_t size() const { return tokens.size(); }
  bool operator==(const Sentence&) const = default;
};

struct Labeling {
  std::vector<ChunkTag> tags;

  std::size_t size() const { return tags.size(); }
  bool operator==(const Labeling&) const = default;
};

// Half-open token interval [start, end) covering one base NP.
struct ChunkSpan {
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t length() const { return end - start; }
  auto operator<=>(const ChunkSpan&) const = default;
};

// Sorted, disjoint spans of one sentence.
using SpanSet = std::vector<ChunkSpan>;

struct LabeledSentence {
  Sentence sentence;
  Labeling labeling;

  bool operator==(const LabeledSentence&) const = default;
};

struct BracketedSentence {
  Sentence sentence;
  SpanSet spans;

  bool operator==(const BracketedSentence&) const = default;
};

namespace detail {

inline bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

inline bool has_space(std::string_view s) { return std::any_of(s.begin(), s.end(), is_space); }

inline std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && is_space(s[i])) ++i;
    std::size_t j = i;
    while (j < s.size() && !is_space(s[j])) ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

// Splits text into lines on '\n'; a trailing '\r' is dropped from each line.
inline std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t nl = text.find('\n', start);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(start, nl - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = nl + 1;
  }
  return lines;
}

}  // namespace detail

// Throws InvalidArgument when a token cannot be represented in both text
// formats: empty fields, whitespace anywhere, or an underscore in the POS.
inline void validate_token(const Token& t) {
  if (t.word.empty()) throw InvalidArgument("empty word");
  if (t.pos.empty()) throw InvalidArgument("empty POS tag for word '" + t.word + "'");
  if (detail::has_space(t.word)) throw InvalidArgument("word contains whitespace: '" + t.word + "'");
  if (detail::has_space(t.pos) || t.pos.find('_') != std::string::npos)
    throw InvalidArgument("invalid POS tag '" + t.pos + "'");
}

// IOB1: B may only follow I or B.
inline bool is_valid_iob1(std::span<const ChunkTag> tags) {
  for (std::size_t i = 0; i < tags.size(); ++i) {
    if (tags[i] == ChunkTag::B && (i == 0 || tags[i - 1] == ChunkTag::O)) return false;
  }
  return true;
}

inline bool is_valid_iob1(const Labeling& l) { return is_valid_iob1(std::span<const ChunkTag>(l.tags)); }

// Rewrites every invalid B (sentence-initial or after O) to I. Returns the
// number of tags changed.
inline std::size_t normalize_iob1(std::span<ChunkTag> tags) {
  std::size_t fixed = 0;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    if (tags[i] == ChunkTag::B && (i == 0 || tags[i - 1] == ChunkTag::O)) {
      tags[i] = ChunkTag::I;
      ++fixed;
    }
  }
  return fixed;
}

inline std::size_t normalize_iob1(Labeling& l) { return normalize_iob1(std::span<ChunkTag>(l.tags)); }

inline SpanSet iob_to_spans(std::span<const ChunkTag> tags) {
  if (!is_valid_iob1(tags)) throw InvalidArgument("invalid IOB1 tag sequence");
  constexpr std::size_t kClosed = static_cast<std::size_t>(-1);
  SpanSet spans;
  std::size_t open = kClosed;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    switch (tags[i]) {
      case ChunkTag::O:
        if (open != kClosed) spans.push_back({open, i});
        open = kClosed;
        break;
      case ChunkTag::B:
        spans.push_back({open, i});
        open = i;
        break;
      case ChunkTag::I:
        if (open == kClosed) open = i;
        break;
    }
  }
  if (open != kClosed) spans.push_back({open, tags.size()});
  return spans;
}

inline SpanSet iob_to_spans(const Labeling& l) { return iob_to_spans(std::span<const ChunkTag>(l.tags)); }

// Returns the spans sorted; throws InvalidArgument on empty, out-of-range,
// overlapping or nested spans.
inline SpanSet validate_spans(SpanSet spans, std::size_t n) {
  std::sort(spans.begin(), spans.end());
  for (std::size_t i = 0; i < spans.size(); ++i) {
    const auto& s = spans[i];
    if (s.start >= s.end) throw InvalidArgument("empty or inverted span");
    if (s.end > n) throw InvalidArgument("span exceeds sentence length");
    if (i > 0 && spans[i - 1].end > s.start) throw InvalidArgument("overlapping or nested spans");
  }
  return spans;
}

inline Labeling spans_to_iob(const SpanSet& spans, std::size_t n) {
  const SpanSet sorted = validate_spans(spans, n);
  Labeling out{std::vector<ChunkTag>(n, ChunkTag::O)};
  std::optional<std::size_t> prev_end;
  for (const auto& s : sorted) {
    for (std::size_t i = s.start; i < s.end; ++i) out.tags[i] = ChunkTag::I;
    if (prev_end && *prev_end == s.start) out.tags[s.start] = ChunkTag::B;
    prev_end = s.end;
  }
  return out;
}

template <typename Range>
std::size_t word_count(const Range& sentences) {
  std::size_t n = 0;
  for (const auto& s : sentences) {
    if constexpr (requires { s.sentence; })
      n += s.sentence.size();
    else
      n += s.size();
  }
  return n;
}

// ---------------------------------------------------------------------------
// CoNLL-style columns: "WORD POS TAG" per line, blank line between sentences.

// Sentence ids are assigned consecutively starting at `first_id`. Invalid B
// tags are rewritten to I with a warning.
inline std::vector<LabeledSentence> parse_conll(std::string_view text, std::int64_t first_id = 0) {
  std::vector<LabeledSentence> out;
  LabeledSentence current;
  std::size_t block_start = 0;

  auto flush = [&] {
    if (current.sentence.tokens.empty()) return;
    current.sentence.id = first_id + static_cast<std::int64_t>(out.size());
    if (std::size_t fixed = normalize_iob1(current.labeling)) {
      log::warn("sentence at line " + std::to_string(block_start) + ": rewrote " + std::to_string(fixed) +
                " invalid B tag(s) to I");
    }
    out.push_back(std::move(current));
    current = {};
  };

  const auto lines = detail::split_lines(text);
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    const std::string_view line = lines[ln];
    if (detail::trim(line).empty()) {
      flush();
      continue;
    }
    const auto fields = detail::split_ws(line);
    if (fields.size() != 3)
      throw ParseError(ln + 1, "expected 3 fields, found " + std::to_string(fields.size()));
    const auto tag = tag_from_string(fields[2]);
    if (!tag) throw ParseError(ln + 1, "unknown chunk tag '" + std::string(fields[2]) + "'");
    Token tok{std::string(fields[0]), std::string(fields[1])};
    if (tok.pos.find('_') != std::string::npos)
      throw ParseError(ln + 1, "POS tag contains an underscore: '" + tok.pos + "'");
    if (current.sentence.tokens.empty()) block_start = ln + 1;
    current.sentence.tokens.push_back(std::move(tok));
    current.labeling.tags.push_back(*tag);
  }
  flush();
  return out;
}

inline std::string emit_conll(std::span<const LabeledSentence> corpus) {
  std::string out;
  for (const auto& ls : corpus) {
    if (ls.sentence.size() != ls.labeling.size()) throw InvalidArgument("labeling length mismatch");
    if (!is_valid_iob1(ls.labeling)) throw InvalidArgument("invalid IOB1 labeling");
    for (std::size_t i = 0; i < ls.sentence.size(); ++i) {
      const auto& t = ls.sentence.tokens[i];
      out += t.word;
      out += ' ';
      out += t.pos;
      out += ' ';
      out += to_char(ls.labeling.tags[i]);
      out += '\n';
    }
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bracketed lines: "about_IN ( $_$ 5_CD )".

inline std::string bracket_render(const Sentence& sentence, const SpanSet& spans) {
  const SpanSet sorted = validate_spans(spans, sentence.size());
  std::string out;
  std::size_t next = 0;
  auto emit = [&out](std::string_view piece) {
    if (!out.empty()) out += ' ';
    out += piece;
  };
  for (std::size_t i = 0; i < sentence.size(); ++i) {
    if (next < sorted.size() && sorted[next].start == i) emit("(");
    emit(sentence.tokens[i].word + "_" + sentence.tokens[i].pos);
    if (next < sorted.size() && sorted[next].end == i + 1) {
      emit(")");
      ++next;
    }
  }
  return out;
}

inline std::string bracket_render(const BracketedSentence& b) { return bracket_render(b.sentence, b.spans); }

// Inverse of bracket_render. The word/POS separator is the last underscore.
inline BracketedSentence bracket_parse(std::string_view line, std::int64_t id = 0) {
  BracketedSentence out;
  out.sentence.id = id;
  constexpr std::size_t kClosed = static_cast<std::size_t>(-1);
  std::size_t open = kClosed;
  for (std::string_view piece : detail::split_ws(line)) {
    const std::size_t at = out.sentence.size();
    if (piece == "(") {
      if (open != kClosed) throw ParseError(0, "nested '(' before token " + std::to_string(at));
      open = at;
    } else if (piece == ")") {
      if (open == kClosed) throw ParseError(0, "unbalanced ')' before token " + std::to_string(at));
      if (open == at) throw ParseError(0, "empty bracket pair before token " + std::to_string(at));
      out.spans.push_back({open, at});
      open = kClosed;
    } else {
      const std::size_t us = piece.rfind('_');
      if (us == std::string_view::npos || us == 0 || us + 1 == piece.size())
        throw ParseError(0, "token '" + std::string(piece) + "' is not of the form word_POS");
      out.sentence.tokens.push_back({std::string(piece.substr(0, us)), std::string(piece.substr(us + 1))});
    }
  }
  if (open != kClosed) throw ParseError(0, "unbalanced '('");
  if (out.sentence.tokens.empty()) throw ParseError(0, "no tokens");
  return out;
}

inline BracketedSentence to_bracketed(const LabeledSentence& ls) {
  return {ls.sentence, iob_to_spans(ls.labeling)};
}

inline LabeledSentence to_labeled(const BracketedSentence& b) {
  return {b.sentence, spans_to_iob(b.spans, b.sentence.size())};
}

}  // namespace npal
