#pragma once

// Random generators shared by the property tests.

#include <string>
#include <vector>

#include "npal/corpus.hpp"
#include "npal/rng.hpp"

namespace npal::testing {

inline std::vector<ChunkTag> random_iob1(Rng& rng, std::size_t n) {
  std::vector<ChunkTag> tags(n);
  for (std::size_t i = 0; i < n; ++i) {
    const bool b_ok = i > 0 && tags[i - 1] != ChunkTag::O;
    const auto r = rng.below(b_ok ? 3 : 2);
    tags[i] = static_cast<ChunkTag>(r);
  }
  return tags;
}

inline SpanSet random_spans(Rng& rng, std::size_t n) {
  return iob_to_spans(random_iob1(rng, n));
}

inline Sentence random_sentence(Rng& rng, std::size_t n, std::int64_t id = 0) {
  static const std::vector<std::string> pos = {"DT", "NN", "NNS", "JJ", "VBD", "IN", "CD", "$", "PRP", "."};
  static const std::vector<std::string> words = {"the", "a", "man", "dogs", "big", "ran", "of", "5", "$", "he", "."};
  Sentence s;
  s.id = id;
  for (std::size_t i = 0; i < n; ++i)
    s.tokens.push_back({words[rng.below(words.size())], pos[rng.below(pos.size())]});
  return s;
}

}  // namespace npal::testing

namespace npal::testing {

// Brute-force chunk extraction straight from the IOB1 definition: [i, j) is a
// chunk iff it opens at i, every later token inside is I, and j closes it.
inline std::vector<std::pair<std::size_t, std::size_t>> brute_chunks(const std::vector<ChunkTag>& t) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  const std::size_t n = t.size();
  for (std::size_t i = 0; i < n; ++i) {
    const bool opens = t[i] == ChunkTag::B || (t[i] == ChunkTag::I && (i == 0 || t[i - 1] == ChunkTag::O));
    if (!opens) continue;
    for (std::size_t j = i + 1; j <= n; ++j) {
      bool inner = true;
      for (std::size_t k = i + 1; k < j; ++k) inner = inner && t[k] == ChunkTag::I;
      const bool closes = j == n || t[j] != ChunkTag::I;
      if (inner && closes) out.emplace_back(i, j);
    }
  }
  return out;
}

struct BruteScore {
  double p, r, f;
};

// Quadratic matcher plus the F formula written out longhand.
inline BruteScore brute_score(const std::vector<ChunkTag>& ref, const std::vector<ChunkTag>& prop) {
  const auto rs = brute_chunks(ref), ps = brute_chunks(prop);
  double correct = 0;
  for (const auto& a : ps)
    for (const auto& b : rs)
      if (a == b) correct += 1;
  if (ps.empty() && rs.empty()) return {1, 1, 1};
  const double p = ps.empty() ? 0 : correct / ps.size();
  const double r = rs.empty() ? 0 : correct / rs.size();
  const double f = correct == 0 ? 0 : 2 * p * r / (p + r);
  return {p, r, f};
}

}  // namespace npal::testing
