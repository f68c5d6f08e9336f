#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "npal/al.hpp"
#include "npal/synth.hpp"
#include "test_util.hpp"

namespace npal {
namespace {

using T = ChunkTag;

Labeling L(std::initializer_list<T> tags) { return Labeling{tags}; }

// Entropy written out in base 2 over explicit vote counts.
double entropy_oracle(const std::vector<std::vector<T>>& labelings) {
  const double k = static_cast<double>(labelings.size());
  const std::size_t n = labelings[0].size();
  double sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::map<T, int> votes;
    for (const auto& l : labelings) votes[l[i]]++;
    double h = 0;
    for (const auto& [tag, v] : votes) h -= (v / k) * std::log2(v / k);
    sum += h / std::log2(k);
  }
  return sum / static_cast<double>(n);
}

TEST(VoteEntropy, HandValues) {
  const std::vector<Labeling> agree = {L({T::I, T::O}), L({T::I, T::O}), L({T::I, T::O})};
  EXPECT_EQ(vote_entropy_sentence(agree), 0.0);

  const std::vector<Labeling> three_way = {L({T::I}), L({T::O}), L({T::B})};
  EXPECT_NEAR(vote_entropy_sentence(three_way), 1.0, 1e-12);

  const std::vector<Labeling> two_one = {L({T::I}), L({T::I}), L({T::O})};
  const double expected = -(2.0 / 3 * std::log(2.0 / 3) + 1.0 / 3 * std::log(1.0 / 3)) / std::log(3.0);
  EXPECT_NEAR(vote_entropy_sentence(two_one), expected, 1e-12);
  EXPECT_NEAR(vote_entropy_sentence(two_one), 0.579380, 1e-6);
}

TEST(VoteEntropy, BaseDoesNotMatter) {
  const std::vector<Labeling> ls = {L({T::I, T::I, T::O}), L({T::I, T::O, T::O}), L({T::O, T::B, T::O}),
                                    L({T::I, T::I, T::I})};
  EXPECT_NEAR(vote_entropy_sentence(ls, 2.0), vote_entropy_sentence(ls), 1e-12);
  EXPECT_NEAR(vote_entropy_sentence(ls, 10.0), vote_entropy_sentence(ls), 1e-12);
}

TEST(VoteEntropy, MatchesOracleAndBounds) {
  Rng rng(7);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t k = 2 + rng.below(5), n = 1 + rng.below(12);
    std::vector<std::vector<T>> raw;
    std::vector<Labeling> ls;
    for (std::size_t j = 0; j < k; ++j) {
      raw.push_back(testing::random_iob1(rng, n));
      ls.push_back(Labeling{raw.back()});
    }
    const double d = vote_entropy_sentence(ls);
    EXPECT_NEAR(d, entropy_oracle(raw), 1e-12);
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, 1.0 + 1e-12);
  }
}

TEST(VoteEntropy, Errors) {
  const std::vector<Labeling> mismatch = {L({T::I}), L({T::I, T::O})};
  EXPECT_THROW(vote_entropy_sentence(mismatch), InvalidArgument);
  const std::vector<Labeling> one = {L({T::I})};
  EXPECT_THROW(vote_entropy_sentence(one), InvalidArgument);
}

TEST(FComplement, PairwiseOracle) {
  Rng rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t k = 2 + rng.below(4), n = 1 + rng.below(10);
    std::vector<std::vector<T>> raw;
    std::vector<Labeling> ls;
    for (std::size_t j = 0; j < k; ++j) {
      raw.push_back(testing::random_iob1(rng, n));
      ls.push_back(Labeling{raw.back()});
    }
    double expected = 0;
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = a + 1; b < k; ++b) expected += 1 - testing::brute_score(raw[a], raw[b]).f;
    const double d = f_complement_sentence(ls);
    EXPECT_NEAR(d, expected, 1e-12);
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, k * (k - 1) / 2.0 + 1e-12);
  }
}

TEST(FComplement, IdenticalIsZero) {
  const std::vector<Labeling> ls = {L({T::I, T::B, T::O}), L({T::I, T::B, T::O}), L({T::I, T::B, T::O})};
  EXPECT_EQ(f_complement_sentence(ls), 0.0);
}

TEST(Splits, NFoldRoundRobin) {
  const std::vector<SentenceId> ids = {6, 2, 4, 1, 5, 3};
  const auto split = nfold_split(ids, 3);
  ASSERT_EQ(split.subsets.size(), 3u);
  EXPECT_EQ(split.subsets[0], (std::vector<SentenceId>{2, 3, 5, 6}));
  EXPECT_EQ(split.subsets[1], (std::vector<SentenceId>{1, 3, 4, 6}));
  EXPECT_EQ(split.subsets[2], (std::vector<SentenceId>{1, 2, 4, 5}));
  EXPECT_THROW(nfold_split(std::vector<SentenceId>{1, 2}, 3), InvalidArgument);
}

TEST(Splits, NFoldEveryIdLeftOutOnce) {
  std::vector<SentenceId> ids(17);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<SentenceId>(i * 3);
  const auto split = nfold_split(ids, 4);
  for (SentenceId id : ids) {
    int missing = 0;
    for (const auto& s : split.subsets) missing += std::count(s.begin(), s.end(), id) == 0;
    EXPECT_EQ(missing, 1);
  }
}

TEST(Splits, Bagging) {
  std::vector<SentenceId> ids;
  for (SentenceId i = 0; i < 10; ++i) ids.push_back(i + 100);
  Rng rng(3);
  const auto split = bagging_split(ids, 4, rng);
  ASSERT_EQ(split.subsets.size(), 4u);
  std::set<std::vector<SentenceId>> distinct;
  for (auto s : split.subsets) {
    EXPECT_EQ(s.size(), 7u);  // ceil(20/3)
    for (SentenceId id : s) EXPECT_TRUE(id >= 100 && id < 110);
    std::sort(s.begin(), s.end());
    distinct.insert(s);
  }
  EXPECT_EQ(distinct.size(), 4u);

  Rng again(3);
  EXPECT_EQ(bagging_split(ids, 4, again).subsets, split.subsets);
  EXPECT_THROW(bagging_split(std::vector<SentenceId>{1}, 3, rng), InvalidArgument);
}

TEST(Splits, BaggingTinySetStillDistinct) {
  // Two sentences, two draws each: only {1,1}, {1,2}, {2,2} exist.
  Rng rng(1);
  const auto split = bagging_split(std::vector<SentenceId>{1, 2}, 3, rng);
  std::set<std::vector<SentenceId>> distinct;
  for (auto s : split.subsets) {
    std::sort(s.begin(), s.end());
    distinct.insert(s);
  }
  EXPECT_EQ(distinct.size(), 3u);
  EXPECT_THROW(bagging_split(std::vector<SentenceId>{1, 2}, 4, rng), InvalidArgument);
}

TEST(SelectBatch, TiesAndOrder) {
  const std::vector<PoolScore> scores = {{9, 0.5}, {3, 0.9}, {7, 0.5}, {1, 0.1}, {5, 0.5}};
  EXPECT_EQ(select_batch(scores, 1), (std::vector<SentenceId>{3}));
  EXPECT_EQ(select_batch(scores, 3), (std::vector<SentenceId>{3, 5, 7}));
  EXPECT_EQ(select_batch(scores, 4), (std::vector<SentenceId>{3, 5, 7, 9}));
}

TEST(SelectBatch, OversizedBatchWarns) {
  log::CaptureScope cap;
  const std::vector<PoolScore> scores = {{2, 0.0}, {1, 1.0}};
  EXPECT_EQ(select_batch(scores, 5), (std::vector<SentenceId>{1, 2}));
  ASSERT_EQ(cap.messages().size(), 1u);
}

TEST(SelectBatch, PropertyTopX) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<PoolScore> scores;
    const std::size_t n = 1 + rng.below(30);
    for (std::size_t i = 0; i < n; ++i) scores.push_back({static_cast<SentenceId>(i * 2 + 1), double(rng.below(4))});
    const std::size_t x = 1 + rng.below(n);
    const auto sel = select_batch(scores, x);
    ASSERT_EQ(sel.size(), x);
    EXPECT_TRUE(std::is_sorted(sel.begin(), sel.end()));
    std::set<SentenceId> chosen(sel.begin(), sel.end());
    // Nothing left out beats anything chosen.
    for (const auto& out : scores) {
      if (chosen.count(out.id)) continue;
      for (const auto& in : scores) {
        if (!chosen.count(in.id)) continue;
        EXPECT_TRUE(in.score > out.score || (in.score == out.score && in.id < out.id));
      }
    }
  }
}

std::vector<Sentence> strip(const std::vector<LabeledSentence>& c) {
  std::vector<Sentence> out;
  for (const auto& ls : c) out.push_back(ls.sentence);
  return out;
}

ALConfig small_config() {
  ALConfig cfg;
  cfg.init_size = 20;
  cfg.batch_size = 10;
  cfg.committee = 3;
  cfg.iterations = 3;
  cfg.seed = 42;
  return cfg;
}

TEST(ActiveLearner, ConfigValidation) {
  ALConfig cfg = small_config();
  cfg.committee = 1;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg = small_config();
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg = small_config();
  cfg.init_size = 0;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  const auto corpus = generate_corpus({.sentences = 20, .seed = 1});
  EXPECT_THROW(ActiveLearner(strip(corpus), small_config(), Selection::Active), InvalidArgument);
}

TEST(ActiveLearner, DeterministicHistoriesAndInvariants) {
  const auto corpus = generate_corpus({.sentences = 120, .seed = 9});
  const auto test = generate_corpus({.sentences = 40, .seed = 10}, 10000);
  for (auto measure : {Measure::FComplement, Measure::VoteEntropy}) {
    for (auto split : {SplitMethod::Bagging, SplitMethod::NFold}) {
      ALConfig cfg = small_config();
      cfg.measure = measure;
      cfg.split = split;
      OracleAnnotator oracle(corpus);
      const auto h1 = run_active_learning(strip(corpus), cfg, oracle, test);
      const auto h2 = run_active_learning(strip(corpus), cfg, oracle, test);
      EXPECT_EQ(history_csv(h1), history_csv(h2));
      ASSERT_EQ(h1.iterations.size(), 4u);
      EXPECT_EQ(h1.iterations[0].sentences, 20u);
      std::set<SentenceId> all;
      std::size_t words = 0;
      for (std::size_t i = 0; i < h1.iterations.size(); ++i) {
        const auto& r = h1.iterations[i];
        EXPECT_EQ(r.iteration, i);
        EXPECT_EQ(r.selected.size(), i == 0 ? 20u : 10u);
        for (SentenceId id : r.selected) {
          EXPECT_TRUE(all.insert(id).second) << "sentence selected twice";
          words += corpus[static_cast<std::size_t>(id)].sentence.size();
        }
        EXPECT_EQ(r.words, words);
        ASSERT_TRUE(r.test.has_value());
      }
    }
  }
}

TEST(ActiveLearner, PoolAndTrainingPartitionCorpus) {
  const auto corpus = generate_corpus({.sentences = 60, .seed = 4});
  ActiveLearner learner(strip(corpus), small_config(), Selection::Active);
  OracleAnnotator oracle(corpus);
  while (learner.step(oracle)) {
    std::set<SentenceId> seen;
    for (const auto& s : learner.pool()) EXPECT_TRUE(seen.insert(s.id).second);
    for (const auto& ls : learner.training()) EXPECT_TRUE(seen.insert(ls.sentence.id).second);
    EXPECT_EQ(seen.size(), corpus.size());
  }
  EXPECT_TRUE(learner.done());
}

TEST(ActiveLearner, SequentialTakesCorpusOrder) {
  const auto corpus = generate_corpus({.sentences = 50, .seed = 4});
  OracleAnnotator oracle(corpus);
  const auto h = run_sequential(strip(corpus), small_config(), oracle, {});
  ASSERT_EQ(h.iterations.size(), 4u);
  EXPECT_EQ(h.iterations[1].selected.front(), 20);
  EXPECT_EQ(h.iterations[3].selected.back(), 49);
  EXPECT_FALSE(h.iterations[1].test.has_value());
}

TEST(ActiveLearner, StopsWhenPoolExhausted) {
  const auto corpus = generate_corpus({.sentences = 35, .seed = 2});
  ALConfig cfg = small_config();
  cfg.iterations.reset();
  OracleAnnotator oracle(corpus);
  log::CaptureScope cap;
  const auto h = run_active_learning(strip(corpus), cfg, oracle, {});
  ASSERT_EQ(h.iterations.size(), 3u);  // seed 20, then 10, then the last 5
  EXPECT_EQ(h.iterations.back().selected.size(), 5u);
  EXPECT_EQ(h.iterations.back().sentences, 35u);
}

class FailingAnnotator : public Annotator {
 public:
  explicit FailingAnnotator(std::span<const LabeledSentence> gold) : oracle_(gold) {}
  bool fail = false;
  Annotation annotate(std::span<const Sentence> s) override {
    if (fail) throw Error("annotator unavailable");
    return oracle_.annotate(s);
  }

 private:
  OracleAnnotator oracle_;
};

TEST(ActiveLearner, FailedAnnotationLeavesStateIntact) {
  const auto corpus = generate_corpus({.sentences = 60, .seed = 8});
  ActiveLearner learner(strip(corpus), small_config(), Selection::Active);
  FailingAnnotator ann(corpus);
  ASSERT_TRUE(learner.step(ann));
  const auto proposed = learner.propose();
  const auto before = history_csv(learner.history());
  ann.fail = true;
  EXPECT_THROW(learner.step(ann), Error);
  EXPECT_EQ(history_csv(learner.history()), before);
  EXPECT_EQ(learner.pool().size(), 40u);
  EXPECT_EQ(learner.propose(), proposed);
  ann.fail = false;
  ASSERT_TRUE(learner.step(ann));
  EXPECT_EQ(learner.history().iterations.back().selected, proposed);
}

TEST(ActiveLearner, AcceptNormalizesAndValidates) {
  const auto corpus = generate_corpus({.sentences = 30, .seed = 8});
  ActiveLearner learner(strip(corpus), small_config(), Selection::Sequential);
  OracleAnnotator oracle(corpus);
  learner.seed(oracle);
  EXPECT_THROW(learner.seed(oracle), StateError);
  const auto ids = learner.propose();
  EXPECT_THROW(learner.accept(ids, Annotation{}), InvalidArgument);
  EXPECT_THROW(learner.accept({999}, Annotation{{Labeling{}}, 0}), InvalidArgument);

  std::vector<Labeling> ls;
  for (SentenceId id : ids) {
    Labeling l = corpus[static_cast<std::size_t>(id)].labeling;
    l.tags[0] = T::B;
    ls.push_back(l);
  }
  log::CaptureScope cap;
  learner.accept(ids, Annotation{ls, 12.5});
  EXPECT_EQ(cap.messages().size(), ids.size());
  for (const auto& t : learner.training()) EXPECT_TRUE(is_valid_iob1(t.labeling));
  EXPECT_EQ(learner.history().iterations.back().elapsed_seconds, 12.5);
}

TEST(History, CsvShape) {
  const auto corpus = generate_corpus({.sentences = 40, .seed = 3});
  const auto test = generate_corpus({.sentences = 10, .seed = 4}, 500);
  OracleAnnotator oracle(corpus);
  ALConfig cfg = small_config();
  cfg.iterations = 1;
  const auto csv = history_csv(run_active_learning(strip(corpus), cfg, oracle, test));
  const auto lines = detail::split_lines(csv);
  ASSERT_GE(lines.size(), 4u);
  EXPECT_EQ(lines[0].substr(0, 2), "# ");
  EXPECT_NE(lines[0].find("rng=mt19937_64/rejection-v1"), std::string_view::npos);
  EXPECT_EQ(lines[1], "iteration,sentences,words,test_precision,test_recall,test_f,elapsed_seconds");
  EXPECT_EQ(lines[2].substr(0, 5), "0,20,");
}

TEST(Synth, DeterministicAndValid) {
  const auto a = generate_corpus({.sentences = 300, .seed = 5});
  const auto b = generate_corpus({.sentences = 300, .seed = 5});
  EXPECT_EQ(emit_conll(a), emit_conll(b));
  std::size_t with_b = 0;
  for (const auto& ls : a) {
    EXPECT_TRUE(is_valid_iob1(ls.labeling));
    EXPECT_EQ(ls.labeling.size(), ls.sentence.size());
    with_b += std::count(ls.labeling.tags.begin(), ls.labeling.tags.end(), T::B) > 0;
  }
  EXPECT_GT(with_b, 0u);
  EXPECT_LT(with_b, a.size() / 4);
  EXPECT_EQ(parse_conll(emit_conll(a)).size(), a.size());
}

TEST(History, WordsToReach) {
  ALHistory h;
  const auto rec = [](std::size_t words, std::optional<double> f) {
    IterationRecord r;
    r.words = words;
    if (f) {
      Report rep;
      rep.fmeasure = *f;
      r.test = rep;
    }
    return r;
  };
  h.iterations = {rec(100, 0.5), rec(200, std::nullopt), rec(300, 0.7), rec(400, 0.9)};
  EXPECT_EQ(words_to_reach(h, 0.5), 100u);
  EXPECT_EQ(words_to_reach(h, 0.6), 300u);
  EXPECT_EQ(words_to_reach(h, 0.9), 400u);
  EXPECT_FALSE(words_to_reach(h, 0.95));
  EXPECT_FALSE(words_to_reach(ALHistory{}, 0.0));
}

}  // namespace
}  // namespace npal
