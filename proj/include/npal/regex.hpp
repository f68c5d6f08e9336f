#pragma once

// A small regular-expression dialect for word and tag fragments in bracketing
// rules. Patterns always match the whole string.
//
//   literal characters, '.' (any character)
//   ( a | b )     grouping and alternation
//   [a-z] [^...]  character classes
//   ? * +         repetition of the preceding atom
//   \w \S         word character, non-space
//   \x            any other escaped punctuation is that literal character
//
// '^' and '$' outside classes are plain literals, since tags such as "$" and
// words such as "^" occur in the data. Anything else (counted repetition,
// backreferences, \d and friends) is rejected at compile time.
//
// Matching computes the set of reachable end positions per node, so it runs
// in polynomial time regardless of the pattern.

#include <algorithm>
#include <array>
#include <cctype>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "npal/error.hpp"

namespace npal {

class RegexError : public Error {
 public:
  RegexError(std::string_view pattern, std::size_t pos, const std::string& what)
      : Error("regex '" + std::string(pattern) + "' at offset " + std::to_string(pos) + ": " + what) {}
};

namespace detail {

struct RxNode {
  enum Kind { Chars, Seq, Alt, Repeat } kind = Chars;
  std::array<bool, 256> set{};  // Chars
  std::vector<RxNode> kids;     // Seq, Alt, Repeat (one kid)
  std::size_t min = 1;          // Repeat
  bool unbounded = false;       // Repeat
};

inline bool is_word_char(unsigned char c) { return std::isalnum(c) || c == '_'; }

class RxParser {
 public:
  explicit RxParser(std::string_view p) : p_(p) {}

  RxNode parse() {
    RxNode n = alternation();
    if (i_ < p_.size()) fail(p_[i_] == ')' ? "unbalanced ')'" : "unexpected character");
    return n;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const { throw RegexError(p_, i_, what); }

  RxNode alternation() {
    RxNode alt;
    alt.kind = RxNode::Alt;
    alt.kids.push_back(sequence());
    while (i_ < p_.size() && p_[i_] == '|') {
      ++i_;
      alt.kids.push_back(sequence());
    }
    if (alt.kids.size() == 1) return std::move(alt.kids[0]);
    return alt;
  }

  RxNode sequence() {
    RxNode seq;
    seq.kind = RxNode::Seq;
    while (i_ < p_.size() && p_[i_] != '|' && p_[i_] != ')') {
      RxNode atom = this->atom();
      if (i_ < p_.size() && (p_[i_] == '?' || p_[i_] == '*' || p_[i_] == '+')) {
        RxNode rep;
        rep.kind = RxNode::Repeat;
        rep.min = p_[i_] == '+' ? 1 : 0;
        rep.unbounded = p_[i_] != '?';
        rep.kids.push_back(std::move(atom));
        ++i_;
        if (i_ < p_.size() && (p_[i_] == '?' || p_[i_] == '*' || p_[i_] == '+')) fail("stacked repetition");
        seq.kids.push_back(std::move(rep));
      } else {
        seq.kids.push_back(std::move(atom));
      }
    }
    return seq;
  }

  static RxNode chars() {
    RxNode n;
    n.kind = RxNode::Chars;
    return n;
  }

  // Adds the class denoted by an escape to `set`; returns false for a plain
  // escaped literal.
  bool escape_class(char e, std::array<bool, 256>& set) {
    if (e == 'w') {
      for (int c = 0; c < 256; ++c) set[c] = set[c] || is_word_char(static_cast<unsigned char>(c));
      return true;
    }
    if (e == 'S') {
      for (int c = 0; c < 256; ++c) set[c] = set[c] || !std::isspace(c);
      return true;
    }
    if (std::isalnum(static_cast<unsigned char>(e))) fail(std::string("unsupported escape \\") + e);
    return false;
  }

  RxNode atom() {
    const char c = p_[i_];
    switch (c) {
      case '(': {
        ++i_;
        RxNode inner = alternation();
        if (i_ >= p_.size() || p_[i_] != ')') fail("unbalanced '('");
        ++i_;
        return inner;
      }
      case '[':
        return char_class();
      case '.': {
        ++i_;
        RxNode n = chars();
        n.set.fill(true);
        return n;
      }
      case '\\': {
        if (i_ + 1 >= p_.size()) fail("trailing backslash");
        const char e = p_[i_ + 1];
        RxNode n = chars();
        if (!escape_class(e, n.set)) n.set[static_cast<unsigned char>(e)] = true;
        i_ += 2;
        return n;
      }
      case '?':
      case '*':
      case '+':
        fail("repetition without operand");
      case '{':
      case '}':
        fail("counted repetition is not supported");
      case ']':
        fail("unbalanced ']'");
      default: {
        ++i_;
        RxNode n = chars();
        n.set[static_cast<unsigned char>(c)] = true;
        return n;
      }
    }
  }

  RxNode char_class() {
    ++i_;  // '['
    RxNode n = chars();
    bool negate = false;
    if (i_ < p_.size() && p_[i_] == '^') {
      negate = true;
      ++i_;
    }
    bool first = true;
    for (;;) {
      if (i_ >= p_.size()) fail("unterminated character class");
      char c = p_[i_];
      if (c == ']' && !first) {
        ++i_;
        break;
      }
      first = false;
      if (c == '\\') {
        if (i_ + 1 >= p_.size()) fail("trailing backslash");
        const char e = p_[i_ + 1];
        i_ += 2;
        if (escape_class(e, n.set)) continue;
        c = e;
      } else {
        ++i_;
      }
      if (i_ + 1 < p_.size() && p_[i_] == '-' && p_[i_ + 1] != ']') {
        char hi = p_[i_ + 1];
        i_ += 2;
        if (hi == '\\') {
          if (i_ >= p_.size()) fail("trailing backslash");
          hi = p_[i_++];
        }
        if (static_cast<unsigned char>(hi) < static_cast<unsigned char>(c)) fail("reversed range");
        for (int k = static_cast<unsigned char>(c); k <= static_cast<unsigned char>(hi); ++k) n.set[k] = true;
      } else {
        n.set[static_cast<unsigned char>(c)] = true;
      }
    }
    if (negate)
      for (auto& b : n.set) b = !b;
    return n;
  }

  std::string_view p_;
  std::size_t i_ = 0;
};

// Positions are kept as a bitmap over [0, n].
using PosSet = std::vector<bool>;

inline PosSet rx_step(const RxNode& node, const PosSet& from, std::string_view s) {
  const std::size_t n = s.size();
  PosSet out(n + 1, false);
  switch (node.kind) {
    case RxNode::Chars:
      for (std::size_t i = 0; i < n; ++i)
        if (from[i] && node.set[static_cast<unsigned char>(s[i])]) out[i + 1] = true;
      return out;
    case RxNode::Seq: {
      PosSet cur = from;
      for (const auto& k : node.kids) cur = rx_step(k, cur, s);
      return cur;
    }
    case RxNode::Alt:
      for (const auto& k : node.kids) {
        const PosSet r = rx_step(k, from, s);
        for (std::size_t i = 0; i <= n; ++i) out[i] = out[i] || r[i];
      }
      return out;
    case RxNode::Repeat: {
      PosSet cur = from;
      if (node.min == 1) cur = rx_step(node.kids[0], from, s);
      out = node.min == 0 ? from : cur;
      if (!node.unbounded) {
        if (node.min == 0) {
          const PosSet once = rx_step(node.kids[0], from, s);
          for (std::size_t i = 0; i <= n; ++i) out[i] = out[i] || once[i];
        }
        return out;
      }
      // Closure: keep stepping until no new positions appear.
      PosSet frontier = out;
      for (;;) {
        const PosSet next = rx_step(node.kids[0], frontier, s);
        bool grew = false;
        for (std::size_t i = 0; i <= n; ++i) {
          frontier[i] = next[i] && !out[i];
          if (frontier[i]) {
            out[i] = true;
            grew = true;
          }
        }
        if (!grew) return out;
      }
    }
  }
  return out;
}

}  // namespace detail

class Regex {
 public:
  explicit Regex(std::string pattern) : pattern_(std::move(pattern)) {
    root_ = std::make_shared<detail::RxNode>(detail::RxParser(pattern_).parse());
  }

  const std::string& pattern() const { return pattern_; }

  bool full_match(std::string_view s) const {
    detail::PosSet start(s.size() + 1, false);
    start[0] = true;
    return detail::rx_step(*root_, start, s)[s.size()];
  }

 private:
  std::string pattern_;
  std::shared_ptr<const detail::RxNode> root_;
};

}  // namespace npal
