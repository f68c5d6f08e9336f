#pragma once

// Shared helpers for the session, HTTP and acceptance tests.

#include <atomic>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>

#include "npal/session.hpp"
#include "npal/synth.hpp"

namespace npal::testing {

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline CorpusData small_corpus(std::uint64_t seed = 5, std::size_t train = 300, std::size_t test = 60) {
  CorpusData c;
  c.train = generate_corpus({train, seed});
  c.test = generate_corpus({test, seed + 1000}, 100000);
  return c;
}

// Small enough to run several full sessions per test.
inline Json small_config(const std::string& mode = "annotation") {
  return {{"mode", mode},
          {"config",
           {{"corpus", "synth"},
            {"seed", 7},
            {"gold_size", 30},
            {"batch_size", 10},
            {"iterations", 3},
            {"feedback_limit", 5},
            {"final_size", 20}}}};
}

struct FakeClock {
  std::shared_ptr<std::atomic<std::int64_t>> t = std::make_shared<std::atomic<std::int64_t>>(1'700'000'000'000);
  std::function<std::int64_t()> fn() const {
    return [t = t] { return t->load(); };
  }
  void advance_s(double s) { *t += static_cast<std::int64_t>(s * 1000); }
};

inline std::unordered_map<SentenceId, Labeling> gold_index(const CorpusData& c) {
  std::unordered_map<SentenceId, Labeling> out;
  for (const auto& ls : c.train) out.emplace(ls.sentence.id, ls.labeling);
  for (const auto& ls : c.test) out.emplace(ls.sentence.id, ls.labeling);
  return out;
}

inline Json oracle_labelings(const Json& sentences, const std::unordered_map<SentenceId, Labeling>& gold) {
  Json arr = Json::array();
  for (const auto& s : sentences) arr.push_back(labeling_json(gold.at(s.at("id").get<SentenceId>())));
  return arr;
}

}  // namespace npal::testing
