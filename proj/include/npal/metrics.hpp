#pragma once

#include <cstddef>
#include <sstream>
#include <string>
#include <vector>

#include "npal/corpus.hpp"
#include "npal/error.hpp"

namespace npal {

struct PRCounts {
  std::size_t correct = 0;
  std::size_t proposed = 0;
  std::size_t reference = 0;

  PRCounts& operator+=(const PRCounts& o) {
    correct += o.correct;
    proposed += o.proposed;
    reference += o.reference;
    return *this;
  }
  bool operator==(const PRCounts&) const = default;
};

// Weighting between precision and recall; 1 weighs them equally.
class Beta {
 public:
  constexpr Beta() = default;
  explicit Beta(double value) : value_(value) {
    if (!(value >= 0.0)) throw InvalidArgument("beta must be nonnegative");
  }
  constexpr double value() const { return value_; }

 private:
  double value_ = 1.0;
};

// Exact-span matching. Both inputs must be sorted (as SpanSet always is);
// duplicate spans are counted once.
inline PRCounts pr_counts(const SpanSet& reference, const SpanSet& proposed) {
  PRCounts c;
  auto count_unique = [](const SpanSet& s) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i == 0 || s[i] != s[i - 1]) ++n;
    return n;
  };
  c.reference = count_unique(reference);
  c.proposed = count_unique(proposed);
  std::size_t i = 0, j = 0;
  while (i < reference.size() && j < proposed.size()) {
    if (reference[i] < proposed[j]) {
      ++i;
    } else if (proposed[j] < reference[i]) {
      ++j;
    } else {
      ++c.correct;
      const ChunkSpan matched = reference[i];
      while (i < reference.size() && reference[i] == matched) ++i;
      while (j < proposed.size() && proposed[j] == matched) ++j;
    }
  }
  return c;
}

// Zero-denominator conventions: nothing proposed and nothing to find scores a
// perfect 1; otherwise an empty side scores 0.
inline double precision(const PRCounts& c) {
  if (c.proposed == 0) return c.reference == 0 ? 1.0 : 0.0;
  return static_cast<double>(c.correct) / static_cast<double>(c.proposed);
}

inline double recall(const PRCounts& c) {
  if (c.reference == 0) return c.proposed == 0 ? 1.0 : 0.0;
  return static_cast<double>(c.correct) / static_cast<double>(c.reference);
}

inline double f_beta(double p, double r, Beta beta = {}) {
  const double b2 = beta.value() * beta.value();
  const double denom = b2 * p + r;
  if (denom <= 0.0) return 0.0;
  return (b2 + 1.0) * p * r / denom;
}

inline double f_beta(const PRCounts& c, Beta beta = {}) {
  if (c.proposed == 0 && c.reference == 0) return 1.0;
  if (c.correct == 0) return 0.0;
  return f_beta(precision(c), recall(c), beta);
}

struct Report {
  double precision = 0.0;
  double recall = 0.0;
  double fmeasure = 0.0;
  PRCounts counts;
};

inline Report make_report(const PRCounts& c, Beta beta = {}) {
  return {precision(c), recall(c), f_beta(c, beta), c};
}

// Flat "key value" block, one pair per line.
inline std::string to_key_value(const Report& r) {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed;
  os << "precision " << r.precision << '\n'
     << "recall " << r.recall << '\n'
     << "fmeasure " << r.fmeasure << '\n'
     << "correct " << r.counts.correct << '\n'
     << "proposed " << r.counts.proposed << '\n'
     << "reference " << r.counts.reference << '\n';
  return os.str();
}

// Micro-averaged: counts are pooled over sentences before computing P/R/F.
inline Report evaluate_corpus(const std::vector<Labeling>& reference, const std::vector<Labeling>& proposed,
                              Beta beta = {}) {
  if (reference.size() != proposed.size())
    throw InvalidArgument("evaluate_corpus: " + std::to_string(reference.size()) + " reference vs " +
                          std::to_string(proposed.size()) + " proposed labelings");
  if (reference.empty()) throw InvalidArgument("evaluate_corpus: empty corpus");
  PRCounts total;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    if (reference[i].size() != proposed[i].size())
      throw InvalidArgument("evaluate_corpus: length mismatch in sentence " + std::to_string(i));
    total += pr_counts(iob_to_spans(reference[i]), iob_to_spans(proposed[i]));
  }
  return make_report(total, beta);
}

}  // namespace npal
