#pragma once

// Cost accounting: human labor time from session logs, and dollars.
//
//   cost = IDC + S0 * AC_TB + T * (LC + MC)
//
// IDC is infrastructure development, S0 the number of gold sentences bought
// up front at AC_TB each, T the labor hours, LC the labor rate and MC the
// machine rate while the human works.

#include <algorithm>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "npal/error.hpp"
#include "npal/events.hpp"
#include "npal/log.hpp"
#include "npal/metrics.hpp"

namespace npal {

enum class Method { Annotation, RuleWriting };

inline std::string_view to_string(Method m) { return m == Method::Annotation ? "annotation" : "rule-writing"; }

inline Method parse_method(std::string_view s) {
  if (s == "annotation") return Method::Annotation;
  if (s == "rule-writing") return Method::RuleWriting;
  throw InvalidArgument("unknown method '" + std::string(s) + "'");
}

struct CostParams {
  Method method = Method::Annotation;
  double idc = 0.0;    // dollars
  double s0 = 0.0;     // sentences
  double ac_tb = 0.0;  // dollars per gold sentence; unknown in practice
  double lc = 12.00;   // dollars per hour
  double mc = 0.24;    // dollars per hour

  static CostParams defaults(Method m) {
    CostParams p;
    p.method = m;
    p.mc = m == Method::Annotation ? 0.24 : 0.12;
    return p;
  }

  void validate() const {
    for (double v : {idc, s0, ac_tb, lc, mc})
      if (!(v >= 0.0)) throw InvalidArgument("cost parameters must be nonnegative");
  }
};

inline double monetary_cost(const CostParams& p, double hours) {
  if (!(hours >= 0.0)) throw InvalidArgument("labor time must be nonnegative");
  p.validate();
  return p.idc + p.s0 * p.ac_tb + hours * (p.lc + p.mc);
}

// "key = value" lines, '#' comments. The method key, if present, selects the
// defaults the other keys override, wherever it appears in the file.
inline CostParams parse_cost_params(std::string_view text) {
  std::map<std::string, std::pair<std::string, std::size_t>> kv;
  const auto lines = detail::split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto line = detail::trim(lines[i]);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError(i + 1, "expected key = value");
    const std::string key(detail::trim(line.substr(0, eq)));
    if (kv.count(key)) throw ParseError(i + 1, "duplicate key '" + key + "'");
    kv[key] = {std::string(detail::trim(line.substr(eq + 1))), i + 1};
  }
  CostParams p;
  if (const auto it = kv.find("method"); it != kv.end()) {
    try {
      p = CostParams::defaults(parse_method(it->second.first));
    } catch (const InvalidArgument& e) {
      throw ParseError(it->second.second, e.what());
    }
    kv.erase(it);
  }
  const std::map<std::string, double CostParams::*> fields = {
      {"idc", &CostParams::idc}, {"s0", &CostParams::s0}, {"ac_tb", &CostParams::ac_tb},
      {"lc", &CostParams::lc},   {"mc", &CostParams::mc},
  };
  for (const auto& [key, vl] : kv) {
    const auto f = fields.find(key);
    if (f == fields.end()) throw ParseError(vl.second, "unknown key '" + key + "'");
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(vl.first, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != vl.first.size()) throw ParseError(vl.second, "not a number: '" + vl.first + "'");
    if (!(v >= 0.0)) throw ParseError(vl.second, "'" + key + "' must be nonnegative");
    p.*(f->second) = v;
  }
  return p;
}

inline std::string serialize_cost_params(const CostParams& p) {
  std::ostringstream os;
  os << "method = " << to_string(p.method) << '\n'
     << "idc = " << p.idc << '\n'
     << "s0 = " << p.s0 << '\n'
     << "ac_tb = " << p.ac_tb << '\n'
     << "lc = " << p.lc << '\n'
     << "mc = " << p.mc << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Labor time.

struct LaborInterval {
  std::int64_t start_ms = 0;
  std::int64_t end_ms = 0;
  double seconds() const { return static_cast<double>(end_ms - start_ms) / 1000.0; }
};

// Time the human was actually working:
//  - from each batch-served to the annotation-submitted with the same batch
//    id (machine time between batches is not counted);
//  - from session start to the first rule-list-submitted, then between
//    consecutive rule-list submissions.
// A submission with no open batch, or a batch never submitted, is warned
// about and skipped.
inline std::vector<LaborInterval> labor_intervals(std::span<const Event> events) {
  std::vector<LaborInterval> out;
  std::map<std::int64_t, std::int64_t> open;  // batch id -> served at
  std::optional<std::int64_t> session_start;
  std::optional<std::int64_t> last_rules;
  for (const auto& e : events) {
    switch (e.kind) {
      case EventKind::SessionCreated:
        session_start = e.time_ms;
        break;
      case EventKind::BatchServed: {
        const auto id = e.data.value("batch", std::int64_t{-1});
        if (open.count(id)) log::warn("batch " + std::to_string(id) + " served twice; keeping the first");
        else open[id] = e.time_ms;
        break;
      }
      case EventKind::AnnotationSubmitted: {
        const auto id = e.data.value("batch", std::int64_t{-1});
        const auto it = open.find(id);
        if (it == open.end()) {
          log::warn("annotation for batch " + std::to_string(id) + " with no matching batch-served; skipped");
          break;
        }
        out.push_back({it->second, e.time_ms});
        open.erase(it);
        break;
      }
      case EventKind::RuleListSubmitted: {
        const auto from = last_rules ? last_rules : session_start;
        if (from)
          out.push_back({*from, e.time_ms});
        else
          log::warn("rule list submitted before any session start; interval skipped");
        last_rules = e.time_ms;
        break;
      }
      default:
        break;
    }
  }
  for (const auto& [id, t] : open) log::warn("batch " + std::to_string(id) + " never submitted; skipped");
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.start_ms < b.start_ms; });
  return out;
}

inline double labor_hours(std::span<const Event> events) {
  double s = 0;
  for (const auto& i : labor_intervals(events)) s += i.seconds();
  return s / 3600.0;
}

// Labor minutes accumulated up to (and including) time t.
inline double labor_minutes_at(std::span<const LaborInterval> intervals, std::int64_t t) {
  double ms = 0;
  for (const auto& i : intervals)
    if (i.start_ms < t) ms += static_cast<double>(std::min(i.end_ms, t) - i.start_ms);
  return ms / 60000.0;
}

struct CurvePoint {
  double minutes = 0;
  Report report;
};

// Scores each checkpoint and places it on the labor-time axis. A checkpoint
// is anything with a `time_ms` member; `evaluate` maps it to a Report.
template <typename Checkpoint, typename Evaluator>
std::vector<CurvePoint> learning_curve(std::span<const Event> events, std::span<const Checkpoint> checkpoints,
                                       Evaluator&& evaluate) {
  const auto intervals = labor_intervals(events);
  std::vector<CurvePoint> out;
  out.reserve(checkpoints.size());
  for (const auto& c : checkpoints) out.push_back({labor_minutes_at(intervals, c.time_ms), evaluate(c)});
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.minutes < b.minutes; });
  return out;
}

inline std::string curve_csv(std::span<const CurvePoint> curve) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(6);
  os << "minutes,precision,recall,f\n";
  for (const auto& p : curve)
    os << p.minutes << ',' << p.report.precision << ',' << p.report.recall << ',' << p.report.fmeasure << '\n';
  return os.str();
}

}  // namespace npal
