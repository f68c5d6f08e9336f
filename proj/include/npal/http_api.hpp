#pragma once

// HTTP/JSON front of the session service. The router is transport-free so it
// can be driven directly; mount() binds it to cpp-httplib.

#include <string>
#include <string_view>
#include <vector>

#include "npal/session.hpp"

namespace npal {

inline constexpr std::string_view kSchemaVersion = "session-v1";

struct HttpResponse {
  int status = 200;
  Json body = Json::object();
};

class Router {
 public:
  explicit Router(SessionService& service) : service_(service) {}

  HttpResponse handle(std::string_view method, std::string_view path, std::string_view body_text) {
    try {
      return route(method, path, body_text);
    } catch (const NotFound& e) {
      return error(404, e.what());
    } catch (const StateError& e) {
      return error(409, e.what());
    } catch (const InvalidArgument& e) {
      return error(400, e.what());
    } catch (const ParseError& e) {
      return error(400, e.what());
    } catch (const Json::exception& e) {
      return error(400, e.what());
    } catch (const std::exception& e) {
      return error(500, e.what());
    }
  }

 private:
  static HttpResponse error(int status, std::string msg) { return {status, {{"error", std::move(msg)}}}; }

  static Json parse_body(std::string_view text) {
    if (detail::trim(text).empty()) return Json::object();
    try {
      return Json::parse(text);
    } catch (const Json::parse_error& e) {
      throw InvalidArgument(std::string("request body is not JSON: ") + e.what());
    }
  }

  static std::vector<std::string_view> segments(std::string_view path) {
    if (const auto q = path.find('?'); q != std::string_view::npos) path = path.substr(0, q);
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < path.size()) {
      while (i < path.size() && path[i] == '/') ++i;
      const std::size_t j = path.find('/', i);
      const std::size_t end = j == std::string_view::npos ? path.size() : j;
      if (end > i) out.push_back(path.substr(i, end - i));
      i = end;
    }
    return out;
  }

  HttpResponse route(std::string_view method, std::string_view path, std::string_view body_text) {
    const auto seg = segments(path);
    const bool get = method == "GET", post = method == "POST";
    if (seg.empty() || seg[0] != "sessions") throw NotFound("no such endpoint: " + std::string(path));

    if (seg.size() == 1) {
      if (post) {
        const auto id = service_.create_session(parse_body(body_text));
        return {201, {{"id", id}, {"schema", std::string(kSchemaVersion)}}};
      }
      if (get) return {200, {{"sessions", service_.session_ids()}}};
      return error(405, "method not allowed");
    }

    const std::string id(seg[1]);
    if (seg.size() == 2) {
      if (!get) return error(405, "method not allowed");
      return ok(id, [](Session& s, std::int64_t) { return s.info(); });
    }
    if (seg.size() != 3) throw NotFound("no such endpoint: " + std::string(path));
    const std::string_view what = seg[2];
    const Json body = post ? parse_body(body_text) : Json::object();

    if (what == "feedback") {
      if (get) return ok(id, [](Session& s, std::int64_t) { return s.feedback_current(); });
      if (post) return ok(id, [&](Session& s, std::int64_t now) { return s.submit_feedback(body, now); });
    } else if (what == "batch") {
      if (get) return ok(id, [](Session& s, std::int64_t now) { return s.next_batch(now); });
    } else if (what == "annotations") {
      if (post) return ok(id, [&](Session& s, std::int64_t now) { return s.submit_annotations(body, now); });
    } else if (what == "rules") {
      if (post) return ok(id, [&](Session& s, std::int64_t now) { return s.submit_rules(body, now); });
    } else if (what == "final") {
      if (get) return ok(id, [](Session& s, std::int64_t) { return s.final_sample(); });
      if (post) return ok(id, [&](Session& s, std::int64_t now) { return s.submit_final(body, now); });
    } else if (what == "reference") {
      if (get) return ok(id, [](Session& s, std::int64_t) { return s.reference(); });
    } else if (what == "events") {
      if (get) return ok(id, [](Session& s, std::int64_t) { return s.events_json(); });
    } else {
      throw NotFound("no such endpoint: " + std::string(path));
    }
    return error(405, "method not allowed");
  }

  template <typename Fn>
  HttpResponse ok(const std::string& id, Fn&& fn) {
    return {200, service_.with_session(id, std::forward<Fn>(fn))};
  }

  SessionService& service_;
};

}  // namespace npal

#ifdef CPPHTTPLIB_HTTPLIB_H
namespace npal {

// Routes every GET and POST on `server` through the router, which must
// outlive it.
inline void mount(Router& router, httplib::Server& server) {
  const auto dispatch = [&router](const httplib::Request& req, httplib::Response& res) {
    const auto r = router.handle(req.method, req.path, req.body);
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  server.Get(".*", dispatch);
  server.Post(".*", dispatch);
}

}  // namespace npal
#endif
