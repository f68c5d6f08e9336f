#pragma once

// Synthetic chunked corpus from a small English-like grammar. Most sentences
// are plain subject-verb-object clauses; a handful of rarer constructions
// (possessives, double objects, adjectival -ing forms, quantity phrases,
// trailing time expressions) need their own rules, and a fraction of
// ambiguous words carry the wrong part of speech.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "npal/corpus.hpp"
#include "npal/rng.hpp"

namespace npal {

struct SynthConfig {
  std::size_t sentences = 2000;
  std::uint64_t seed = 1;
  double rare_rate = 1.0;   // scales the probability of the rare constructions
  double pos_noise = 0.08;  // chance an ambiguous word gets its alternate tag
};

namespace detail {

class SynthGenerator {
 public:
  explicit SynthGenerator(const SynthConfig& cfg) : cfg_(cfg), rng_(cfg.seed) {}

  LabeledSentence sentence(std::int64_t id) {
    toks_.clear();
    spans_.clear();
    if (rare(0.04)) {
      word("yesterday", "NN", "NN");
      word(",", ",");
    }
    subject();
    verb_group();
    const double r = rng_.uniform();
    if (r < 0.05 * cfg_.rare_rate) {
      // double object: two adjacent noun phrases
      np_basic();
      np_basic();
    } else if (r < 0.10 * cfg_.rare_rate) {
      word(pick(kSay), "VBD");
      word("that", "IN", "DT");
      subject();
      verb_group();
      np();
    } else if (r < 0.80) {
      np();
    } else if (r < 0.88) {
      word(pick(kAdj), "JJ");
    }
    if (rare(0.05)) np_time();
    for (int k = 0; k < 2 && rng_.chance(0.35); ++k) {
      word(pick(kPrep), "IN");
      np();
    }
    if (rng_.chance(0.12)) {
      word(",", ",");
      word(pick(kConj), "CC");
      subject();
      verb_group();
      np();
    }
    word(".", ".");

    LabeledSentence ls;
    ls.sentence.id = id;
    for (const auto& t : toks_) ls.sentence.tokens.push_back(t);
    ls.labeling = spans_to_iob(spans_, toks_.size());
    return ls;
  }

 private:
  using List = std::span<const char* const>;

  static constexpr const char* kDet[] = {"the", "a", "the", "this", "every", "an", "the", "some"};
  static constexpr const char* kNoun[] = {"company", "market", "price", "share", "report", "plan",
                                          "group", "year", "rate", "deal", "bank", "record",
                                          "profit", "stock", "fund", "unit", "loss", "change",
                                          "board", "offer", "sale", "issue", "firm", "bid"};
  static constexpr const char* kNouns[] = {"companies", "markets", "prices", "shares", "plans", "investors",
                                           "analysts", "sales", "profits", "rates", "bonds", "funds",
                                           "costs", "workers", "banks", "earnings"};
  static constexpr const char* kAdj[] = {"new", "big", "strong", "weak", "federal", "major",
                                         "other", "early", "high", "low", "recent", "foreign"};
  static constexpr const char* kProper[] = {"Smith", "Mr.", "Jones", "Corp.", "Tokyo", "Boston",
                                            "Texas", "Inc.", "Ford", "Congress", "IBM", "Brown"};
  static constexpr const char* kPron[] = {"it", "he", "they", "we", "she"};
  static constexpr const char* kPoss[] = {"its", "his", "their", "our"};
  static constexpr const char* kVbz[] = {"says", "makes", "expects", "sees", "plans", "holds", "reports", "takes"};
  static constexpr const char* kVbd[] = {"said", "made", "expected", "saw", "held", "reported", "took", "raised"};
  static constexpr const char* kVb[] = {"make", "buy", "sell", "raise", "hold", "report", "take", "cut"};
  static constexpr const char* kMd[] = {"will", "could", "would", "may"};
  static constexpr const char* kSay[] = {"said", "reported", "noted", "added"};
  static constexpr const char* kPrep[] = {"in", "of", "for", "on", "from", "at", "with", "by"};
  static constexpr const char* kConj[] = {"and", "but"};
  static constexpr const char* kVbgAdj[] = {"growing", "operating", "rising", "leading", "existing"};
  static constexpr const char* kNum[] = {"5", "10", "two", "three", "100", "1.5", "20"};
  static constexpr const char* kScale[] = {"million", "billion"};
  static constexpr const char* kTimeMod[] = {"last", "next", "this"};
  static constexpr const char* kDay[] = {"Friday", "Monday", "week", "month", "year", "Tuesday"};
  static constexpr const char* kQuant[] = {"about", "only", "nearly"};

  bool rare(double p) { return rng_.chance(p * cfg_.rare_rate); }

  // Skewed toward the front of the list.
  const char* pick(List l) {
    const std::size_t a = rng_.below(l.size());
    const std::size_t b = rng_.below(l.size());
    return l[std::min(a, b)];
  }

  void word(const std::string& w, const std::string& pos, const std::string& alt = {}) {
    std::string tag = pos;
    if (!alt.empty() && rng_.chance(cfg_.pos_noise)) tag = alt;
    toks_.push_back({w, tag});
  }

  std::size_t mark() const { return toks_.size(); }
  void close(std::size_t start) { spans_.push_back({start, toks_.size()}); }

  void noun() {
    const char* n = pick(kNoun);
    const std::string s = n;
    const bool ambiguous = s == "report" || s == "plan" || s == "record" || s == "change" || s == "offer";
    word(n, "NN", ambiguous ? "VB" : "");
  }

  void np_basic() {
    const std::size_t s = mark();
    const double r = rng_.uniform();
    if (r < 0.45) {
      word(pick(kDet), "DT");
      if (rng_.chance(0.4)) word(pick(kAdj), "JJ");
      if (rng_.chance(0.15)) noun();
      noun();
    } else if (r < 0.60) {
      if (rng_.chance(0.5)) word(pick(kAdj), "JJ");
      const std::string n = pick(kNouns);
      word(n, "NNS", n == "plans" ? "VBZ" : "");
    } else if (r < 0.70) {
      word(pick(kPoss), "PRP$");
      if (rng_.chance(0.3)) word(pick(kAdj), "JJ");
      noun();
    } else if (r < 0.82) {
      word(pick(kProper), "NNP");
      if (rng_.chance(0.5)) word(pick(kProper), "NNP");
    } else {
      word(pick(kDet), "DT");
      noun();
    }
    close(s);
  }

  void np_possessive() {
    std::size_t s = mark();
    word(pick(kDet), "DT");
    noun();
    word("'s", "POS");
    close(s);
    s = mark();
    if (rng_.chance(0.4)) word(pick(kAdj), "JJ");
    noun();
    close(s);
  }

  void np_vbg() {
    const std::size_t s = mark();
    word("the", "DT");
    word(pick(kVbgAdj), "VBG", "NN");
    noun();
    close(s);
  }

  void np_quantity() {
    const std::size_t s = mark();
    if (rng_.chance(0.5)) word(pick(kQuant), "IN", "RB");
    word("$", "$");
    word(pick(kNum), "CD");
    if (rng_.chance(0.6)) word(pick(kScale), "CD");
    close(s);
  }

  void np_time() {
    const std::size_t s = mark();
    word(pick(kTimeMod), "JJ", "DT");
    word(pick(kDay), "NN", "NNP");
    close(s);
  }

  void np() {
    const double r = rng_.uniform() / cfg_.rare_rate;
    if (r < 0.04)
      np_possessive();
    else if (r < 0.07)
      np_vbg();
    else if (r < 0.11)
      np_quantity();
    else
      np_basic();
  }

  void subject() {
    if (rng_.chance(0.25)) {
      const std::size_t s = mark();
      word(pick(kPron), "PRP");
      close(s);
    } else {
      np();
    }
  }

  void verb_group() {
    const double r = rng_.uniform();
    if (r < 0.4) {
      const std::string v = pick(kVbz);
      word(v, "VBZ", v == "plans" || v == "reports" ? "NNS" : "");
    } else if (r < 0.75) {
      word(pick(kVbd), "VBD");
    } else {
      word(pick(kMd), "MD");
      const std::string v = pick(kVb);
      word(v, "VB", v == "report" ? "NN" : "");
    }
  }

  SynthConfig cfg_;
  Rng rng_;
  std::vector<Token> toks_;
  SpanSet spans_;
};

}  // namespace detail

inline std::vector<LabeledSentence> generate_corpus(const SynthConfig& cfg, std::int64_t first_id = 0) {
  detail::SynthGenerator gen(cfg);
  std::vector<LabeledSentence> out;
  out.reserve(cfg.sentences);
  for (std::size_t i = 0; i < cfg.sentences; ++i) out.push_back(gen.sentence(first_id + static_cast<std::int64_t>(i)));
  return out;
}

}  // namespace npal
