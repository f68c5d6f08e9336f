// npal: command-line entry points.
//
//   npal train        learn a chunker from CoNLL data
//   npal al-sim       simulate active learning and sequential annotation
//   npal rules-eval   score a hand-written rule list
//   npal cost-report  labor time and dollars from a session log
//   npal synth        write a synthetic chunked corpus
//   npal serve        run the session service over HTTP
//
// Exit status: 0 ok, 1 runtime error, 2 usage or I/O error.

#include <atomic>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "httplib.h"
#include "npal/al.hpp"
#include "npal/cost.hpp"
#include "npal/dsl.hpp"
#include "npal/http_api.hpp"
#include "npal/session.hpp"
#include "npal/synth.hpp"
#include "npal/tbl.hpp"

namespace {

using namespace npal;

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// "-" is stdout.
void write_file(const std::string& path, const std::string& content) {
  if (path == "-") {
    std::cout << content;
    std::cout.flush();
    return;
  }
  std::ofstream out(path, std::ios::binary);
  out << content;
  if (!out) throw IoError("cannot write '" + path + "'");
}

std::vector<LabeledSentence> load_conll(const std::string& path, std::int64_t first_id = 0) {
  try {
    return parse_conll(read_file(path), first_id);
  } catch (const ParseError& e) {
    throw Error(path + ": " + e.what());
  }
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string with_suffix(const std::string& path, const std::string& suffix) {
  const auto slash = path.find_last_of('/');
  const auto dot = path.find_last_of('.');
  if (dot == std::string::npos || (slash != std::string::npos && dot < slash)) return path + "-" + suffix;
  return path.substr(0, dot) + "-" + suffix + path.substr(dot);
}

Report score(const CompiledChunker& c, std::span<const LabeledSentence> data) {
  std::vector<Labeling> gold, pred;
  for (const auto& ls : data) {
    gold.push_back(ls.labeling);
    pred.push_back(c.apply(ls.sentence));
  }
  return evaluate_corpus(gold, pred);
}

// --- train ---------------------------------------------------------------

struct TrainOpts {
  std::string train, test, out = "-";
  double threshold = 2.0;
  std::size_t max_rules = 500;
};

int run_train(const TrainOpts& o) {
  const auto train = load_conll(o.train);
  const auto test = o.test.empty() ? std::vector<LabeledSentence>{} : load_conll(o.test, 1'000'000);
  if (train.empty()) throw InvalidArgument("training file has no sentences");
  TblConfig cfg;
  cfg.score_threshold = o.threshold;
  cfg.max_rules = o.max_rules;
  const Chunker chunker = learn_rules(train, cfg);
  std::ostringstream meta;
  meta << "# npal train train=" << o.train << " threshold=" << o.threshold << " max_rules=" << o.max_rules
       << " templates=" << cfg.templates.size() << '\n';
  write_file(o.out, meta.str() + serialize_chunker(chunker));

  const CompiledChunker initial(Chunker{chunker.initial, {}});
  const CompiledChunker full(chunker);
  std::ostringstream rep;
  rep << "# npal train train=" << o.train << " test=" << (o.test.empty() ? "none" : o.test)
      << " threshold=" << o.threshold << " max_rules=" << o.max_rules << '\n';
  rep << "rules " << chunker.rules.size() << '\n';
  rep << "train_initial_f " << fmt(score(initial, train).fmeasure) << '\n';
  const Report tr = score(full, train);
  rep << "train_precision " << fmt(tr.precision) << "\ntrain_recall " << fmt(tr.recall) << "\ntrain_f "
      << fmt(tr.fmeasure) << '\n';
  if (!test.empty()) {
    rep << "test_initial_f " << fmt(score(initial, test).fmeasure) << '\n';
    const Report te = score(full, test);
    rep << "test_precision " << fmt(te.precision) << "\ntest_recall " << fmt(te.recall) << "\ntest_f "
        << fmt(te.fmeasure) << '\n';
  }
  // The report goes to stdout unless the chunker took it.
  if (o.out == "-")
    std::cerr << rep.str();
  else
    std::cout << rep.str();
  return 0;
}

// --- al-sim --------------------------------------------------------------

struct AlSimOpts {
  std::string train, test, out = "-", selection = "both";
  std::size_t synth = 0, synth_test = 0;
  std::uint64_t seed = 1;
  std::string measure = "f-complement", split = "bagging";
  std::size_t batch_size = 50, init_size = 100, committee = 3, iterations = 10, max_rules = 500;
  double threshold = 2.0;
};

int run_al_sim(const AlSimOpts& o) {
  if (o.train.empty() == (o.synth == 0)) throw CLI::ValidationError("give exactly one of --train and --synth");
  if (!o.test.empty() && o.synth_test) throw CLI::ValidationError("give at most one of --test and --synth-test");
  const auto train = o.synth ? generate_corpus({.sentences = o.synth, .seed = o.seed}) : load_conll(o.train);
  const auto test = o.synth_test ? generate_corpus({.sentences = o.synth_test, .seed = o.seed + 1000}, 1'000'000)
                    : o.test.empty() ? std::vector<LabeledSentence>{}
                                     : load_conll(o.test, 1'000'000);
  ALConfig cfg;
  cfg.init_size = o.init_size;
  cfg.batch_size = o.batch_size;
  cfg.committee = o.committee;
  cfg.split = parse_split_method(o.split);
  cfg.measure = parse_measure(o.measure);
  cfg.iterations = o.iterations;
  cfg.seed = o.seed;
  cfg.tbl.score_threshold = o.threshold;
  cfg.tbl.max_rules = o.max_rules;
  cfg.validate();

  std::ostringstream meta;
  meta << "# npal al-sim train=" << (o.synth ? "synth:" + std::to_string(o.synth) : o.train)
       << " test=" << (o.synth_test ? "synth:" + std::to_string(o.synth_test) : o.test.empty() ? "none" : o.test)
       << " init_size=" << cfg.init_size << " batch_size=" << cfg.batch_size << " committee=" << cfg.committee
       << " iterations=" << o.iterations << " threshold=" << o.threshold << " max_rules=" << o.max_rules << '\n';

  std::vector<Selection> runs;
  if (o.selection == "active" || o.selection == "both") runs.push_back(Selection::Active);
  if (o.selection == "sequential" || o.selection == "both") runs.push_back(Selection::Sequential);
  std::vector<Sentence> pool;
  for (const auto& ls : train) pool.push_back(ls.sentence);
  std::map<Selection, ALHistory> hist;
  for (Selection sel : runs) {
    OracleAnnotator oracle(train);
    hist[sel] = run_loop(pool, cfg, sel, oracle, test);
    const std::string csv = meta.str() + history_csv(hist[sel]);
    if (runs.size() == 1 || o.out == "-")
      write_file(o.out, csv);
    else
      write_file(with_suffix(o.out, std::string(to_string(sel))), csv);
  }
  if (runs.size() == 2 && !test.empty()) {
    const auto& seq = hist[Selection::Sequential].iterations.back();
    const auto words = words_to_reach(hist[Selection::Active], seq.test->fmeasure);
    std::cerr << "sequential final f " << fmt(seq.test->fmeasure) << " at " << seq.words << " words; active ";
    if (words)
      std::cerr << "reached it at " << *words << " words (ratio " << fmt(double(*words) / double(seq.words)) << ")\n";
    else
      std::cerr << "did not reach it\n";
  }
  return 0;
}

// --- rules-eval ----------------------------------------------------------

struct RulesOpts {
  std::string rules, gold, macros, out = "-";
};

int run_rules_eval(const RulesOpts& o) {
  const MacroTable macros = o.macros.empty() ? MacroTable::defaults() : [&] {
    try {
      return MacroTable::defaults().merged(parse_macro_file(read_file(o.macros)));
    } catch (const ParseError& e) {
      throw Error(o.macros + ": " + e.what());
    }
  }();
  const auto prog = parse_rule_file(read_file(o.rules), macros);
  const auto gold = load_conll(o.gold);
  for (const auto& d : prog.diagnostics) std::cerr << o.rules << ": " << d.message << '\n';
  const auto ev = evaluate_program(prog, gold);
  std::ostringstream os;
  os << "# npal rules-eval rules=" << o.rules << " gold=" << o.gold
     << " macros=" << (o.macros.empty() ? "built-in" : o.macros) << '\n';
  os << "# rules=" << prog.rules.size() << " diagnostics=" << prog.diagnostics.size() << '\n';
  os << to_key_value(ev.final);
  os << "rule,line,precision,recall,f,delta\n";
  for (std::size_t i = 0; i < prog.rules.size(); ++i)
    os << i + 1 << ',' << prog.rules[i].line << ',' << fmt(ev.after_rule[i].precision) << ','
       << fmt(ev.after_rule[i].recall) << ',' << fmt(ev.after_rule[i].fmeasure) << ',' << fmt(ev.deltas[i]) << '\n';
  write_file(o.out, os.str());
  return 0;
}

// --- cost-report ---------------------------------------------------------

struct CostOpts {
  std::string events, params, curve, gold, train, test, out = "-";
};

int run_cost_report(const CostOpts& o) {
  const auto events = [&] {
    try {
      return parse_event_log(read_file(o.events));
    } catch (const ParseError& e) {
      throw Error(o.events + ": " + e.what());
    }
  }();
  std::optional<SessionConfig> session;
  if (!events.empty() && events.front().kind == EventKind::SessionCreated)
    session = session_config_from_json(events.front().data.at("config"));

  CostParams params = CostParams::defaults(session ? session->mode : Method::Annotation);
  if (!o.params.empty()) {
    try {
      params = parse_cost_params(read_file(o.params));
    } catch (const ParseError& e) {
      throw Error(o.params + ": " + e.what());
    }
  }
  const auto intervals = labor_intervals(events);
  const double hours = labor_hours(events);
  std::ostringstream os;
  os << "# npal cost-report events=" << o.events << " params=" << (o.params.empty() ? "defaults" : o.params)
     << '\n';
  os << "# cost = idc + s0 * ac_tb + hours * (lc + mc); s0 * ac_tb is taken as a product (sentences times dollars "
        "per sentence)\n";
  os << "method " << to_string(params.method) << '\n'
     << "events " << events.size() << '\n'
     << "labor_intervals " << intervals.size() << '\n'
     << "labor_minutes " << fmt(hours * 60) << '\n'
     << "labor_hours " << fmt(hours) << '\n'
     << "idc " << fmt(params.idc) << '\n'
     << "s0 " << fmt(params.s0) << '\n'
     << "ac_tb " << fmt(params.ac_tb) << '\n'
     << "lc " << fmt(params.lc) << '\n'
     << "mc " << fmt(params.mc) << '\n'
     << "cost " << fmt(monetary_cost(params, hours)) << '\n';
  write_file(o.out, os.str());

  if (o.curve.empty()) return 0;
  std::vector<CurvePoint> curve;
  if (!o.gold.empty()) {
    // Rule-writing log: each submitted list, scored on the gold file.
    const auto gold = load_conll(o.gold);
    struct Checkpoint {
      std::int64_t time_ms;
      std::string text;
    };
    std::vector<Checkpoint> cps;
    for (const auto& e : events)
      if (e.kind == EventKind::RuleListSubmitted) cps.push_back({e.time_ms, e.data.at("text").get<std::string>()});
    curve = learning_curve<Checkpoint>(
        events, cps, [&](const Checkpoint& c) { return evaluate_program(parse_rule_file(c.text), gold).final; });
  } else if (!o.train.empty() && !o.test.empty()) {
    // Annotation log: retrain on the annotated set after every batch.
    if (!session) throw InvalidArgument("annotation curve needs a log that starts with session-created");
    const auto train = load_conll(o.train);
    const auto test = load_conll(o.test, 1'000'000);
    if (train.size() < session->gold_size) throw InvalidArgument("training file is smaller than the gold set");
    std::map<SentenceId, const Sentence*> by_id;
    for (const auto& ls : train) by_id[ls.sentence.id] = &ls.sentence;
    struct Checkpoint {
      std::int64_t time_ms;
      std::vector<LabeledSentence> training;
    };
    std::vector<Checkpoint> cps;
    std::vector<LabeledSentence> t(train.begin(), train.begin() + static_cast<std::ptrdiff_t>(session->gold_size));
    for (const auto& e : events) {
      if (e.kind != EventKind::AnnotationSubmitted) continue;
      const auto ids = e.data.at("ids").get<std::vector<SentenceId>>();
      const auto& labs = e.data.at("labelings");
      for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto it = by_id.find(ids[i]);
        if (it == by_id.end()) throw InvalidArgument("log mentions sentence " + std::to_string(ids[i]) +
                                                     ", which is not in " + o.train);
        t.push_back({*it->second, labeling_from_json(labs.at(i))});
      }
      cps.push_back({e.time_ms, t});
    }
    TblConfig tbl = session->al_config().tbl;
    curve = learning_curve<Checkpoint>(events, cps, [&](const Checkpoint& c) {
      return score(CompiledChunker(learn_rules(c.training, tbl)), test);
    });
  } else {
    throw CLI::ValidationError("--curve needs --gold (rule-writing logs) or --train and --test (annotation logs)");
  }
  write_file(o.curve, "# npal cost-report curve events=" + o.events + "\n" + curve_csv(curve));
  return 0;
}

// --- synth ---------------------------------------------------------------

struct SynthOpts {
  std::size_t sentences = 2000;
  std::uint64_t seed = 1;
  std::int64_t first_id = 0;
  double pos_noise = 0.08, rare_rate = 1.0;
  std::string out = "-";
};

int run_synth(const SynthOpts& o) {
  const auto corpus =
      generate_corpus({.sentences = o.sentences, .seed = o.seed, .rare_rate = o.rare_rate, .pos_noise = o.pos_noise},
                      o.first_id);
  // CoNLL has no comment syntax, so provenance goes to stderr.
  std::cerr << "# npal synth sentences=" << o.sentences << " seed=" << o.seed << " pos_noise=" << o.pos_noise
            << " rare_rate=" << o.rare_rate << " rng=" << Rng::kName << '\n';
  write_file(o.out, emit_conll(corpus));
  return 0;
}

// --- serve ---------------------------------------------------------------

struct ServeOpts {
  std::string train, test, name = "default", host = "127.0.0.1", log_dir;
  std::size_t synth = 0, synth_test = 0;
  std::uint64_t seed = 1;
  int port = 8080;
  bool verify = false;
};

httplib::Server* g_server = nullptr;

int run_serve(const ServeOpts& o) {
  if (o.train.empty() == (o.synth == 0)) throw CLI::ValidationError("give exactly one of --train and --synth");
  CorpusData data;
  data.train = o.synth ? generate_corpus({.sentences = o.synth, .seed = o.seed}) : load_conll(o.train);
  data.test = o.synth ? generate_corpus({.sentences = o.synth_test ? o.synth_test : 500, .seed = o.seed + 1000},
                                        1'000'000)
                      : load_conll(o.test, 1'000'000);
  ServiceOptions opts;
  if (!o.log_dir.empty()) opts.log_dir = o.log_dir;
  opts.verify_replay = o.verify;
  SessionService service({{o.name, std::move(data)}}, opts);
  Router router(service);
  httplib::Server server;
  mount(router, server);
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_server) g_server->stop();
  });
  std::cerr << "npal serve: corpus '" << o.name << "', " << service.session_ids().size()
            << " session(s) restored, listening on " << o.host << ':' << o.port << '\n';
  if (!server.listen(o.host, o.port)) throw IoError("cannot listen on " + o.host + ":" + std::to_string(o.port));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Noun-phrase chunking: rule learning, active learning, rule writing and cost accounting"};
  app.require_subcommand(1);
  // Sections name subcommands: "[al-sim]" then "seed = 3". Flags given on the
  // command line win over the file.
  app.set_config("--config", "", "Read options from an INI/TOML file");
  app.fallthrough();

  TrainOpts train;
  auto* t = app.add_subcommand("train", "Learn a chunker from CoNLL data");
  t->add_option("--train", train.train, "Training corpus (word POS tag per line)")->required();
  t->add_option("--test", train.test, "Held-out corpus to score");
  t->add_option("--out", train.out, "Chunker file, '-' for stdout");
  t->add_option("--threshold", train.threshold, "Minimum rule score")->capture_default_str();
  t->add_option("--max-rules", train.max_rules, "Rule limit")->capture_default_str();

  AlSimOpts al;
  auto* a = app.add_subcommand("al-sim", "Simulate active learning against sequential annotation");
  a->add_option("--train", al.train, "Pool corpus (CoNLL); the first --init-size sentences seed the learner");
  a->add_option("--synth", al.synth, "Use a synthetic pool of this many sentences instead");
  a->add_option("--test", al.test, "Test corpus (CoNLL) for the learning curve");
  a->add_option("--synth-test", al.synth_test, "Use a synthetic test set of this many sentences");
  a->add_option("--selection", al.selection, "active, sequential or both")
      ->check(CLI::IsMember({"active", "sequential", "both"}))
      ->capture_default_str();
  a->add_option("--seed", al.seed)->capture_default_str();
  a->add_option("--measure", al.measure)->check(CLI::IsMember({"f-complement", "vote-entropy"}))->capture_default_str();
  a->add_option("--split", al.split)->check(CLI::IsMember({"bagging", "nfold"}))->capture_default_str();
  a->add_option("--batch-size", al.batch_size)->capture_default_str();
  a->add_option("--init-size", al.init_size)->capture_default_str();
  a->add_option("--committee", al.committee)->capture_default_str();
  a->add_option("--iterations", al.iterations)->capture_default_str();
  a->add_option("--threshold", al.threshold)->capture_default_str();
  a->add_option("--max-rules", al.max_rules)->capture_default_str();
  a->add_option("--out", al.out, "History CSV; with both selections, -active/-sequential is added to the name");

  RulesOpts rules;
  auto* r = app.add_subcommand("rules-eval", "Score a rule list against gold data");
  r->add_option("--rules", rules.rules, "Rule list file")->required();
  r->add_option("--gold", rules.gold, "Gold corpus (CoNLL)")->required();
  r->add_option("--macros", rules.macros, "Extra macro definitions (NAME = pattern)");
  r->add_option("--out", rules.out);

  CostOpts cost;
  auto* c = app.add_subcommand("cost-report", "Labor time and monetary cost of a session log");
  c->add_option("--events", cost.events, "Session log (JSON lines)")->required();
  c->add_option("--params", cost.params, "Cost parameters (key = value); defaults follow the session mode");
  c->add_option("--curve", cost.curve, "Also write a learning curve CSV here");
  c->add_option("--gold", cost.gold, "Gold corpus for rule-writing curves");
  c->add_option("--train", cost.train, "Session training corpus, for annotation curves");
  c->add_option("--test", cost.test, "Test corpus, for annotation curves");
  c->add_option("--out", cost.out);

  SynthOpts synth;
  auto* s = app.add_subcommand("synth", "Write a synthetic chunked corpus in CoNLL form");
  s->add_option("--sentences", synth.sentences)->capture_default_str();
  s->add_option("--seed", synth.seed)->capture_default_str();
  s->add_option("--first-id", synth.first_id)->capture_default_str();
  s->add_option("--pos-noise", synth.pos_noise)->check(CLI::Range(0.0, 1.0))->capture_default_str();
  s->add_option("--rare-rate", synth.rare_rate)->check(CLI::NonNegativeNumber)->capture_default_str();
  s->add_option("--out", synth.out);

  ServeOpts serve;
  auto* v = app.add_subcommand("serve", "Host annotation and rule-writing sessions over HTTP");
  v->add_option("--train", serve.train, "Training corpus (CoNLL); its first sentences are the gold set");
  v->add_option("--test", serve.test, "Test corpus (CoNLL) for final evaluation");
  v->add_option("--synth", serve.synth, "Serve a synthetic corpus of this many sentences instead");
  v->add_option("--synth-test", serve.synth_test, "Size of the synthetic test set");
  v->add_option("--seed", serve.seed, "Seed for synthetic corpora")->capture_default_str();
  v->add_option("--name", serve.name, "Corpus name sessions refer to")->capture_default_str();
  v->add_option("--host", serve.host)->capture_default_str();
  v->add_option("--port", serve.port)->capture_default_str();
  v->add_option("--log-dir", serve.log_dir, "Directory of session logs; restored at startup");
  v->add_flag("--verify-replay", serve.verify, "Recompute every logged batch on restore");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (t->parsed()) return run_train(train);
    if (a->parsed()) return run_al_sim(al);
    if (r->parsed()) return run_rules_eval(rules);
    if (c->parsed()) return run_cost_report(cost);
    if (s->parsed()) return run_synth(synth);
    if (v->parsed()) {
      if (serve.train.empty() != serve.test.empty()) throw CLI::ValidationError("--train and --test go together");
      return run_serve(serve);
    }
  } catch (const CLI::Error& e) {
    std::cerr << "npal: " << e.what() << '\n';
    return 2;
  } catch (const IoError& e) {
    std::cerr << "npal: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "npal: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
