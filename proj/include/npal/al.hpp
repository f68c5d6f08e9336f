#pragma once

// Query-by-committee active learning with batch selection.
//
//   1. take the first t sentences of the corpus, annotate them: T
//   2. split T into m non-identical subsets (bagging or n-fold)
//   3. train one chunker per subset
//   4. label every pool sentence with every member, score disagreement
//   5. annotate the x highest-scoring sentences, move them from pool to T
//   6. repeat from 2
//
// After every iteration one chunker is trained on all of T and scored on the
// test set; those scores make up the learning curve.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <future>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <vector>

#include "npal/corpus.hpp"
#include "npal/error.hpp"
#include "npal/log.hpp"
#include "npal/metrics.hpp"
#include "npal/rng.hpp"
#include "npal/tbl.hpp"

namespace npal {

using SentenceId = std::int64_t;

enum class SplitMethod { Bagging, NFold };
enum class Measure { VoteEntropy, FComplement };
enum class Selection { Active, Sequential };

inline std::string_view to_string(SplitMethod s) { return s == SplitMethod::Bagging ? "bagging" : "nfold"; }
inline std::string_view to_string(Measure m) { return m == Measure::VoteEntropy ? "vote-entropy" : "f-complement"; }
inline std::string_view to_string(Selection s) { return s == Selection::Active ? "active" : "sequential"; }

inline SplitMethod parse_split_method(std::string_view s) {
  if (s == "bagging") return SplitMethod::Bagging;
  if (s == "nfold" || s == "n-fold") return SplitMethod::NFold;
  throw InvalidArgument("unknown split method '" + std::string(s) + "'");
}

inline Measure parse_measure(std::string_view s) {
  if (s == "vote-entropy") return Measure::VoteEntropy;
  if (s == "f-complement") return Measure::FComplement;
  throw InvalidArgument("unknown disagreement measure '" + std::string(s) + "'");
}

struct ALConfig {
  std::size_t init_size = 100;   // t
  std::size_t batch_size = 50;   // x
  std::size_t committee = 3;     // m
  SplitMethod split = SplitMethod::Bagging;
  Measure measure = Measure::FComplement;
  std::optional<std::size_t> iterations;  // unbounded when empty
  std::uint64_t seed = 1;
  TblConfig tbl;

  void validate() const {
    if (init_size < 1) throw InvalidArgument("init size must be >= 1");
    if (batch_size < 1) throw InvalidArgument("batch size must be >= 1");
    if (committee < 2) throw InvalidArgument("committee size must be >= 2");
  }
};

// ---------------------------------------------------------------------------
// Committee construction.

struct CommitteeSplit {
  std::vector<std::vector<SentenceId>> subsets;
};

// Each member gets ceil(2|T|/3) draws with replacement from T; duplicates are
// kept. Members are redrawn until no two are the same multiset.
inline CommitteeSplit bagging_split(std::span<const SentenceId> training, std::size_t m, Rng& rng) {
  if (training.size() < 2) throw InvalidArgument("bagging needs at least 2 training sentences");
  if (m < 2) throw InvalidArgument("committee size must be >= 2");
  const std::size_t draws = (2 * training.size() + 2) / 3;
  CommitteeSplit split;
  std::set<std::vector<SentenceId>> seen;
  constexpr int kMaxAttempts = 1000;
  for (std::size_t k = 0; k < m; ++k) {
    for (int attempt = 0;; ++attempt) {
      if (attempt == kMaxAttempts) throw InvalidArgument("cannot draw non-identical bagging subsets");
      std::vector<SentenceId> subset;
      subset.reserve(draws);
      for (std::size_t d = 0; d < draws; ++d) subset.push_back(training[rng.below(training.size())]);
      auto key = subset;
      std::sort(key.begin(), key.end());
      if (seen.insert(std::move(key)).second) {
        split.subsets.push_back(std::move(subset));
        break;
      }
    }
  }
  return split;
}

// Round-robin folds over ascending ids; member i trains on every fold but i.
inline CommitteeSplit nfold_split(std::span<const SentenceId> training, std::size_t m) {
  if (m < 2) throw InvalidArgument("committee size must be >= 2");
  if (training.size() < m) throw InvalidArgument("n-fold split needs at least m training sentences");
  std::vector<SentenceId> ids(training.begin(), training.end());
  std::sort(ids.begin(), ids.end());
  CommitteeSplit split;
  split.subsets.resize(m);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    for (std::size_t k = 0; k < m; ++k)
      if (i % m != k) split.subsets[k].push_back(ids[i]);
  }
  return split;
}

// ---------------------------------------------------------------------------
// Disagreement.

// Mean over words of the normalized vote entropy
//   -1/log k * sum_c V(c)/k * log(V(c)/k)
// where V(c) is how many of the k members voted tag c. In [0, 1].
inline double vote_entropy_sentence(std::span<const Labeling> labelings, double log_base = std::exp(1.0)) {
  const std::size_t k = labelings.size();
  if (k < 2) throw InvalidArgument("vote entropy needs at least 2 labelings");
  const std::size_t n = labelings[0].size();
  for (const auto& l : labelings)
    if (l.size() != n) throw InvalidArgument("vote entropy: labelings differ in length");
  if (n == 0) return 0.0;
  const auto log_b = [log_base](double x) { return std::log(x) / std::log(log_base); };
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::array<std::size_t, kNumChunkTags> votes{};
    for (const auto& l : labelings) ++votes[static_cast<std::size_t>(l.tags[i])];
    double h = 0.0;
    for (std::size_t v : votes) {
      if (v == 0) continue;
      const double p = static_cast<double>(v) / static_cast<double>(k);
      h -= p * log_b(p);
    }
    total += h / log_b(static_cast<double>(k));
  }
  return total / static_cast<double>(n);
}

// Sum over unordered member pairs of (1 - F1). Not normalized by committee
// size, so the range is [0, m(m-1)/2].
inline double f_complement_sentence(std::span<const Labeling> labelings) {
  if (labelings.size() < 2) throw InvalidArgument("f-complement needs at least 2 labelings");
  std::vector<SpanSet> spans;
  spans.reserve(labelings.size());
  for (const auto& l : labelings) spans.push_back(iob_to_spans(l));
  double d = 0.0;
  for (std::size_t i = 0; i < spans.size(); ++i)
    for (std::size_t j = i + 1; j < spans.size(); ++j) d += 1.0 - f_beta(pr_counts(spans[j], spans[i]));
  return d;
}

inline double disagreement(Measure m, std::span<const Labeling> labelings) {
  return m == Measure::VoteEntropy ? vote_entropy_sentence(labelings) : f_complement_sentence(labelings);
}

struct PoolScore {
  SentenceId id = 0;
  double score = 0.0;
  bool operator==(const PoolScore&) const = default;
};

namespace detail {

// Runs fn(i) for i in [0, n) on up to hardware_concurrency workers.
template <typename Fn>
void parallel_for(std::size_t n, Fn fn) {
  const std::size_t workers = std::min<std::size_t>(std::max(1u, std::thread::hardware_concurrency()), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::future<void>> jobs;
  for (std::size_t w = 0; w < workers; ++w) {
    jobs.push_back(std::async(std::launch::async, [&, w] {
      for (std::size_t i = w; i < n; i += workers) fn(i);
    }));
  }
  for (auto& j : jobs) j.get();
}

}  // namespace detail

// One score per pool sentence, in pool order.
inline std::vector<PoolScore> score_pool(std::span<const Chunker> committee, std::span<const Sentence> pool,
                                         Measure measure) {
  if (committee.size() < 2) throw InvalidArgument("score_pool needs at least 2 committee members");
  std::vector<CompiledChunker> members;
  members.reserve(committee.size());
  for (const auto& c : committee) members.emplace_back(c);
  std::vector<PoolScore> out(pool.size());
  detail::parallel_for(pool.size(), [&](std::size_t i) {
    std::vector<Labeling> labelings;
    labelings.reserve(members.size());
    for (const auto& m : members) labelings.push_back(m.apply(pool[i]));
    out[i] = {pool[i].id, disagreement(measure, labelings)};
  });
  return out;
}

// Top x by score, ties to the smaller id; returned in ascending id order.
inline std::vector<SentenceId> select_batch(std::vector<PoolScore> scores, std::size_t x) {
  if (x > scores.size()) {
    log::warn("batch size " + std::to_string(x) + " exceeds pool size " + std::to_string(scores.size()) +
              "; selecting the whole pool");
    x = scores.size();
  }
  std::sort(scores.begin(), scores.end(), [](const PoolScore& a, const PoolScore& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });
  std::vector<SentenceId> ids;
  ids.reserve(x);
  for (std::size_t i = 0; i < x; ++i) ids.push_back(scores[i].id);
  std::sort(ids.begin(), ids.end());
  return ids;
}

// ---------------------------------------------------------------------------
// Annotators.

struct Annotation {
  std::vector<Labeling> labelings;  // one per requested sentence, same order
  double seconds = 0.0;             // human time spent, when known
};

class Annotator {
 public:
  virtual ~Annotator() = default;
  virtual Annotation annotate(std::span<const Sentence> sentences) = 0;
};

// Answers from a gold corpus, as in simulation.
class OracleAnnotator : public Annotator {
 public:
  explicit OracleAnnotator(std::span<const LabeledSentence> gold) {
    for (const auto& ls : gold) gold_.emplace(ls.sentence.id, ls.labeling);
  }

  Annotation annotate(std::span<const Sentence> sentences) override {
    Annotation a;
    for (const auto& s : sentences) {
      const auto it = gold_.find(s.id);
      if (it == gold_.end()) throw Error("oracle has no annotation for sentence " + std::to_string(s.id));
      a.labelings.push_back(it->second);
    }
    return a;
  }

 private:
  std::unordered_map<SentenceId, Labeling> gold_;
};

// ---------------------------------------------------------------------------
// History.

struct IterationRecord {
  std::size_t iteration = 0;
  std::vector<SentenceId> selected;
  std::size_t sentences = 0;  // |T|
  std::size_t words = 0;      // cumulative annotated words
  std::optional<Report> test;
  double elapsed_seconds = 0.0;  // annotation time of this iteration's batch
};

struct ALHistory {
  Selection selection = Selection::Active;
  Measure measure = Measure::FComplement;
  SplitMethod split = SplitMethod::Bagging;
  std::uint64_t seed = 0;
  // The test curve is produced by one chunker trained on all of T, not by the
  // committee.
  std::string test_model = "full-training-set chunker";
  std::vector<IterationRecord> iterations;
};

inline std::string history_csv(const ALHistory& h) {
  std::ostringstream os;
  os << "# selection=" << to_string(h.selection) << " measure=" << to_string(h.measure)
     << " split=" << to_string(h.split) << " seed=" << h.seed << " rng=" << Rng::kName
     << " test_model=" << h.test_model << '\n';
  os << "iteration,sentences,words,test_precision,test_recall,test_f,elapsed_seconds\n";
  os.setf(std::ios::fixed);
  os.precision(6);
  for (const auto& r : h.iterations) {
    os << r.iteration << ',' << r.sentences << ',' << r.words << ',';
    if (r.test)
      os << r.test->precision << ',' << r.test->recall << ',' << r.test->fmeasure;
    else
      os << ",,";
    os << ',' << r.elapsed_seconds << '\n';
  }
  return os.str();
}

// Cumulative annotated words at the first iteration whose test F reaches f.
inline std::optional<std::size_t> words_to_reach(const ALHistory& h, double f) {
  for (const auto& r : h.iterations)
    if (r.test && r.test->fmeasure >= f) return r.words;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// The loop, as a resumable object. Nothing is mutated until an annotation has
// been obtained, so a failing annotator leaves the learner as it was.

class ActiveLearner {
 public:
  ActiveLearner(std::vector<Sentence> corpus, ALConfig config, Selection selection,
                std::vector<LabeledSentence> test = {})
      : config_(std::move(config)), selection_(selection), test_(std::move(test)) {
    config_.validate();
    if (corpus.size() <= config_.init_size)
      throw InvalidArgument("corpus must be larger than the initial seed set");
    std::set<SentenceId> ids;
    for (const auto& s : corpus) {
      if (s.tokens.empty()) throw InvalidArgument("empty sentence " + std::to_string(s.id));
      if (!ids.insert(s.id).second) throw InvalidArgument("duplicate sentence id " + std::to_string(s.id));
    }
    pool_ = std::move(corpus);
    history_.selection = selection_;
    history_.measure = config_.measure;
    history_.split = config_.split;
    history_.seed = config_.seed;
  }

  const ALConfig& config() const { return config_; }
  const ALHistory& history() const { return history_; }
  const std::vector<LabeledSentence>& training() const { return training_; }
  const std::vector<Sentence>& pool() const { return pool_; }
  bool seeded() const { return !history_.iterations.empty(); }

  // Iterations completed after the seed.
  std::size_t iteration() const { return seeded() ? history_.iterations.size() - 1 : 0; }

  bool done() const {
    if (!seeded()) return false;
    if (pool_.empty()) return true;
    return config_.iterations && iteration() >= *config_.iterations;
  }

  // The first t sentences, which must be annotated before anything else.
  std::vector<Sentence> seed_sentences() const {
    return {pool_.begin(), pool_.begin() + static_cast<std::ptrdiff_t>(config_.init_size)};
  }

  void seed(Annotator& annotator) {
    if (seeded()) throw StateError("learner already seeded");
    const auto sentences = seed_sentences();
    auto a = annotator.annotate(sentences);
    accept_sentences(sentences, std::move(a));
  }

  void seed_with(std::vector<Labeling> labelings) {
    if (seeded()) throw StateError("learner already seeded");
    const auto sentences = seed_sentences();
    accept_sentences(sentences, Annotation{std::move(labelings), 0.0});
  }

  // Next batch of pool ids (ascending). Does not modify the learner.
  std::vector<SentenceId> propose() const {
    if (!seeded()) throw StateError("learner not seeded");
    if (pool_.empty()) return {};
    if (selection_ == Selection::Sequential) {
      std::vector<SentenceId> ids;
      for (std::size_t i = 0; i < std::min(config_.batch_size, pool_.size()); ++i) ids.push_back(pool_[i].id);
      return ids;
    }
    Rng rng = iteration_rng();
    const auto committee = train_committee(rng);
    return select_batch(score_pool(committee, pool_, config_.measure), config_.batch_size);
  }

  // Moves the given pool sentences into T with their labelings.
  void accept(const std::vector<SentenceId>& ids, Annotation annotation) {
    if (!seeded()) throw StateError("learner not seeded");
    std::vector<Sentence> sentences;
    for (SentenceId id : ids) {
      const auto it = std::find_if(pool_.begin(), pool_.end(), [id](const Sentence& s) { return s.id == id; });
      if (it == pool_.end()) throw InvalidArgument("sentence " + std::to_string(id) + " is not in the pool");
      sentences.push_back(*it);
    }
    accept_sentences(sentences, std::move(annotation));
  }

  // One full iteration. Returns false when there was nothing to do.
  bool step(Annotator& annotator) {
    if (!seeded()) {
      seed(annotator);
      return true;
    }
    if (done()) return false;
    const auto ids = propose();
    std::vector<Sentence> sentences;
    for (SentenceId id : ids) sentences.push_back(find_in_pool(id));
    accept(ids, annotator.annotate(sentences));
    return true;
  }

  // Trains one chunker on all of T.
  Chunker train_full() const { return learn_rules(training_, config_.tbl); }

 private:
  const Sentence& find_in_pool(SentenceId id) const {
    const auto it = std::find_if(pool_.begin(), pool_.end(), [id](const Sentence& s) { return s.id == id; });
    if (it == pool_.end()) throw InvalidArgument("sentence " + std::to_string(id) + " is not in the pool");
    return *it;
  }

  // A fresh stream per iteration, so that proposing twice gives the same batch.
  Rng iteration_rng() const {
    Rng base(config_.seed);
    return base.fork(iteration());
  }

  std::vector<Chunker> train_committee(Rng& rng) const {
    std::vector<SentenceId> ids;
    std::unordered_map<SentenceId, const LabeledSentence*> by_id;
    for (const auto& ls : training_) {
      ids.push_back(ls.sentence.id);
      by_id.emplace(ls.sentence.id, &ls);
    }
    const CommitteeSplit split = config_.split == SplitMethod::Bagging ? bagging_split(ids, config_.committee, rng)
                                                                       : nfold_split(ids, config_.committee);
    std::vector<Chunker> committee(split.subsets.size());
    detail::parallel_for(split.subsets.size(), [&](std::size_t k) {
      std::vector<LabeledSentence> subset;
      subset.reserve(split.subsets[k].size());
      for (SentenceId id : split.subsets[k]) subset.push_back(*by_id.at(id));
      committee[k] = learn_rules(subset, config_.tbl);
    });
    return committee;
  }

  void accept_sentences(const std::vector<Sentence>& sentences, Annotation a) {
    if (a.labelings.size() != sentences.size())
      throw InvalidArgument("annotator returned " + std::to_string(a.labelings.size()) + " labelings for " +
                            std::to_string(sentences.size()) + " sentences");
    std::vector<LabeledSentence> added;
    for (std::size_t i = 0; i < sentences.size(); ++i) {
      Labeling l = std::move(a.labelings[i]);
      if (l.size() != sentences[i].size())
        throw InvalidArgument("labeling length mismatch for sentence " + std::to_string(sentences[i].id));
      if (std::size_t fixed = normalize_iob1(l))
        log::warn("sentence " + std::to_string(sentences[i].id) + ": rewrote " + std::to_string(fixed) +
                  " invalid B tag(s) to I");
      added.push_back({sentences[i], std::move(l)});
    }
    // Commit.
    std::set<SentenceId> taken;
    IterationRecord rec;
    rec.iteration = history_.iterations.size();
    for (auto& ls : added) {
      taken.insert(ls.sentence.id);
      rec.selected.push_back(ls.sentence.id);
      words_ += ls.sentence.size();
      training_.push_back(std::move(ls));
    }
    std::erase_if(pool_, [&](const Sentence& s) { return taken.count(s.id) > 0; });
    rec.sentences = training_.size();
    rec.words = words_;
    rec.elapsed_seconds = a.seconds;
    if (!test_.empty()) rec.test = evaluate(train_full());
    history_.iterations.push_back(std::move(rec));
  }

  Report evaluate(const Chunker& c) const {
    const CompiledChunker compiled(c);
    std::vector<Labeling> gold, pred;
    for (const auto& ls : test_) {
      gold.push_back(ls.labeling);
      pred.push_back(compiled.apply(ls.sentence));
    }
    return evaluate_corpus(gold, pred);
  }

  ALConfig config_;
  Selection selection_;
  std::vector<LabeledSentence> test_;
  std::vector<Sentence> pool_;
  std::vector<LabeledSentence> training_;
  std::size_t words_ = 0;
  ALHistory history_;
};

inline ALHistory run_loop(std::vector<Sentence> corpus, const ALConfig& config, Selection selection,
                          Annotator& annotator, std::vector<LabeledSentence> test) {
  ActiveLearner learner(std::move(corpus), config, selection, std::move(test));
  while (learner.step(annotator)) {
  }
  return learner.history();
}

inline ALHistory run_active_learning(std::vector<Sentence> corpus, const ALConfig& config, Annotator& annotator,
                                     std::vector<LabeledSentence> test) {
  return run_loop(std::move(corpus), config, Selection::Active, annotator, std::move(test));
}

inline ALHistory run_sequential(std::vector<Sentence> corpus, const ALConfig& config, Annotator& annotator,
                                std::vector<LabeledSentence> test) {
  return run_loop(std::move(corpus), config, Selection::Sequential, annotator, std::move(test));
}

}  // namespace npal
