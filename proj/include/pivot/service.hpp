#pragma once

// Live-session service: session manager with an append-only event log,
// record store with annotation intake, and the HTTP routes over them.
// The message schema is documented in docs/api.md.

#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "pivot/corpus.hpp"
#include "pivot/engine.hpp"
#include "pivot/evaluation.hpp"
#include "pivot/harness.hpp"
#include "pivot/record.hpp"

namespace pivot {

enum class View { User, Evaluator, Observer };

inline std::string_view to_string(View v) {
  switch (v) {
    case View::User: return "user";
    case View::Evaluator: return "evaluator";
    case View::Observer: return "observer";
  }
  return "user";
}
inline View parse_view(std::string_view s) {
  return detail::parse_enum(s, std::array{View::User, View::Evaluator, View::Observer}, "view");
}

// The user sees the topic, their persona and the chat; never the question,
// the gold answer, the belief or the trace.
inline json user_view(const Session& s, bool closed) {
  json persona = json::array();
  for (const auto& p : s.setup().persona.sentences) persona.push_back(p.text);
  json lines = json::array();
  for (const auto& u : s.transcript.utterances)
    lines.push_back(json{{"line", u.line}, {"role", to_string(u.role)}, {"text", u.text}});
  return json{{"id", s.id},
              {"view", "user"},
              {"topic", s.setup().topic.text()},
              {"persona", persona},
              {"transcript", lines},
              {"next_line", s.transcript.next_line()},
              {"closed", closed}};
}

// Third-party readers: topic, question and chat, but not the persona.
inline json observer_view(const Session& s, bool closed) {
  json lines = json::array();
  for (const auto& u : s.transcript.utterances)
    lines.push_back(json{{"line", u.line}, {"role", to_string(u.role)}, {"text", u.text}});
  return json{{"id", s.id},
              {"view", "observer"},
              {"system", s.policy.system_label()},
              {"topic", s.setup().topic.text()},
              {"question", s.setup().question().text},
              {"transcript", lines},
              {"next_line", s.transcript.next_line()},
              {"closed", closed}};
}

inline json evaluator_view(const Session& s, bool closed) {
  json j = s;
  j["view"] = "evaluator";
  j["closed"] = closed;
  j["system"] = s.policy.system_label();
  return j;
}

inline json session_view(const Session& s, bool closed, View v) {
  switch (v) {
    case View::User: return user_view(s, closed);
    case View::Observer: return observer_view(s, closed);
    case View::Evaluator: return evaluator_view(s, closed);
  }
  return user_view(s, closed);
}

struct ServiceOptions {
  std::filesystem::path state_dir;  // events.jsonl and corpus.jsonl; empty keeps state in memory
  std::string evaluator_token;      // empty disables evaluator access
  std::map<std::string, SystemPolicy> policies;
  std::uint64_t seed = 0;
};

class SessionService {
 public:
  SessionService(const Engine& engine, ServiceOptions options)
      : engine_(&engine), options_(std::move(options)) {
    if (!options_.state_dir.empty()) {
      std::filesystem::create_directories(options_.state_dir);
      recover();
    }
  }

  ~SessionService() { shutdown(); }

  // Wakes every blocked event stream.
  void shutdown() {
    stopping_ = true;
    std::lock_guard lock(mu_);
    for (auto& [_, e] : sessions_) e->cv.notify_all();
  }

  void check_evaluator(const std::string& token) const {
    if (options_.evaluator_token.empty() || token != options_.evaluator_token)
      throw Unauthorized("evaluator token required");
  }

  // Request: {"setup": TaskSetup, "policy": name | SystemPolicy, "seed"?: n}.
  json create_session(const json& req) {
    if (!req.contains("setup")) throw SchemaViolation("request needs a setup");
    if (!req.contains("policy")) throw SchemaViolation("request needs a policy");
    auto setup = req.at("setup").get<TaskSetup>();
    const auto& q = setup.question();
    if (q.source_index >= setup.persona.sentences.size())
      throw InvalidValue("question source index outside the persona set");
    SystemPolicy policy;
    if (req.at("policy").is_string()) {
      auto it = options_.policies.find(req.at("policy").get<std::string>());
      if (it == options_.policies.end())
        throw ConfigError("unknown policy '" + req.at("policy").get<std::string>() + "'");
      policy = it->second;
    } else {
      policy = req.at("policy").get<SystemPolicy>();
    }
    std::uint64_t n = 0;
    {
      std::lock_guard lock(mu_);
      n = ++counter_;
    }
    const std::string id = "s" + std::to_string(n);
    const std::uint64_t seed = req.value("seed", mix_seed(options_.seed, n));
    if (setup.id.empty()) setup.id = id;
    auto entry = std::make_shared<Entry>();
    entry->session = engine_->open_session(std::move(setup), std::move(policy), seed, id);
    for (const auto& u : entry->session.transcript.utterances) entry->events.push_back(utterance_event(u));
    {
      std::lock_guard lock(mu_);
      sessions_[id] = entry;
    }
    log_session(*entry);
    json out = user_view(entry->session, false);
    out["opener"] = entry->session.transcript.utterances.front().text;
    return out;
  }

  json get_session(const std::string& id, View view, const std::string& token = {}) const {
    if (view == View::Evaluator) check_evaluator(token);
    auto e = find(id);
    std::lock_guard lock(e->mu);
    return session_view(e->session, e->closed, view);
  }

  // Request: {"text": "...", "expected_line"?: n}. The reply carries the
  // system line, and the turn trace when `with_trace` (evaluator only).
  json post_message(const std::string& id, const json& req, bool with_trace = false,
                    const std::string& token = {}) {
    if (with_trace) check_evaluator(token);
    if (!req.contains("text") || !req.at("text").is_string())
      throw SchemaViolation("message needs a text field");
    auto e = find(id);
    Session work;
    {
      std::lock_guard lock(e->mu);
      if (e->closed) throw SessionClosed("session " + id + " is closed");
      if (e->busy) throw TurnOrderError("a turn is already in progress");
      const Session& s = e->session;
      if (s.transcript.next_role() != Role::User) throw TurnOrderError("it is not the user's turn");
      if (req.contains("expected_line") &&
          req.at("expected_line").get<int>() != s.transcript.next_line())
        throw TurnOrderError("expected line " + std::to_string(s.transcript.next_line()) +
                             ", got " + std::to_string(req.at("expected_line").get<int>()));
      e->busy = true;
      work = s;
    }
    const std::string text = trim(req.at("text").get<std::string>());
    // The turn runs on a copy; a failed turn leaves the session untouched.
    json out;
    const std::size_t before = work.transcript.utterances.size();
    try {
      if (text.empty()) throw SchemaViolation("message text is empty");
      if (work.system_budget_left()) {
        auto trace = engine_->system_turn(work, text);
        out["reply"] = json{{"line", trace.line}, {"text", trace.chosen().text}};
        if (with_trace) out["trace"] = trace;
      } else {
        engine_->append_user(work, text);
        out["reply"] = nullptr;
      }
    } catch (...) {
      std::lock_guard lock(e->mu);
      e->busy = false;
      throw;
    }
    std::optional<ChatRecord> record;
    if (work.finished()) record = make_record(work);
    {
      std::lock_guard lock(e->mu);
      e->session = std::move(work);
      e->busy = false;
      const auto& us = e->session.transcript.utterances;
      for (std::size_t i = before; i < us.size(); ++i) push_event(*e, utterance_event(us[i]));
      if (record) {
        e->closed = true;
        push_event(*e, json{{"type", "closed"}, {"record_id", record->id}});
      }
      log_session(*e);
      out["line"] = us.back().line;
      out["next_line"] = e->session.transcript.next_line();
      out["closed"] = e->closed;
    }
    if (record) {
      store_record(*record);
      out["record_id"] = record->id;
    }
    return out;
  }

  // Events after `since`, waiting up to `wait` for new ones. Returns an empty
  // list on timeout; `done` is set once the session is closed and drained.
  std::vector<json> events_since(const std::string& id, std::size_t since,
                                 std::chrono::milliseconds wait, bool& done) const {
    auto e = find(id);
    std::unique_lock lock(e->mu);
    e->cv.wait_for(lock, wait, [&] { return e->events.size() > since || e->closed || stopping_; });
    std::vector<json> out;
    for (std::size_t i = since; i < e->events.size(); ++i) {
      json ev = e->events[i];
      ev["seq"] = i;
      out.push_back(std::move(ev));
    }
    done = stopping_ || (e->closed && since + out.size() >= e->events.size());
    return out;
  }

  // Request: {"perspective": "abruptness"|"predictability", "annotation": {...},
  //           "mode"?: "full"|"reduced", "model_non_abrupt"?: {"line": bool}}.
  json submit_annotation(const std::string& record_id, const json& req) {
    std::lock_guard lock(store_mu_);
    auto it = records_.find(record_id);
    if (it == records_.end()) throw NotFound("no record " + record_id);
    ChatRecord updated = it->second;
    if (updated.failed()) throw PreconditionError("failed records cannot be annotated");
    AnnotationBundle bundle = updated.annotations.value_or(AnnotationBundle{});
    if (req.contains("mode")) {
      const auto mode = parse_annotation_mode(req.at("mode").get<std::string>());
      if (mode != bundle.mode && (!bundle.abruptness.empty() || !bundle.predictability.empty()))
        throw SchemaViolation("annotation mode cannot change once annotations exist");
      bundle.mode = mode;
    }
    const std::string perspective = req.value("perspective", "");
    try {
      if (perspective == "abruptness")
        bundle.abruptness.push_back(req.at("annotation").get<AbruptnessAnnotation>());
      else if (perspective == "predictability")
        bundle.predictability.push_back(req.at("annotation").get<PredictabilityAnnotation>());
      else if (!req.contains("model_non_abrupt"))
        throw SchemaViolation("perspective must be abruptness or predictability");
      if (req.contains("model_non_abrupt"))
        for (const auto& [k, v] : req.at("model_non_abrupt").items())
          bundle.model_non_abrupt[std::stoi(k)] = v.get<bool>();
    } catch (const json::exception& ex) {
      throw SchemaViolation(std::string("malformed annotation: ") + ex.what());
    }
    validate(bundle, updated.transcript);
    updated.annotations = bundle;
    write_record(updated);
    return annotation_state(updated);
  }

  json annotation_state(const ChatRecord& r) const {
    json out{{"record_id", r.id}};
    const auto& b = r.annotations.value_or(AnnotationBundle{});
    out["mode"] = to_string(b.mode);
    out["abruptness"] = b.abruptness.size();
    out["predictability"] = b.predictability.size();
    out["required"] = b.required();
    try {
      if (b.abruptness_complete()) out["non_abrupt"] = chat_non_abrupt(b, r.transcript);
      if (b.predictability_complete()) {
        const auto acq = acquisition_outcome(b);
        out["acquired"] = acq.acquired;
        if (acq.answer) out["answer"] = to_string(*acq.answer);
      }
      if (auto f = record_flags(r)) out["flags"] = *f;
    } catch (const IncompleteAnnotation& ex) {
      out["pending"] = ex.what();
    }
    return out;
  }

  json list_records() const {
    std::lock_guard lock(store_mu_);
    json out = json::array();
    for (const auto& id : order_) {
      const auto& r = records_.at(id);
      json item{{"id", r.id}, {"system", r.system}, {"status", to_string(r.status)}};
      if (auto f = record_flags(r)) item["flags"] = *f;
      out.push_back(std::move(item));
    }
    return out;
  }

  ChatRecord record(const std::string& id) const {
    std::lock_guard lock(store_mu_);
    auto it = records_.find(id);
    if (it == records_.end()) throw NotFound("no record " + id);
    return it->second;
  }

  std::vector<ChatRecord> records() const {
    std::lock_guard lock(store_mu_);
    std::vector<ChatRecord> out;
    for (const auto& id : order_) out.push_back(records_.at(id));
    return out;
  }

  json metrics() const {
    const auto rs = records();
    return json{{"metrics", compute_metrics(rs)}, {"stats", compute_stats(rs)}};
  }

  // Adds records produced elsewhere (e.g. simulate) to the store.
  void import_records(const std::vector<ChatRecord>& rs) {
    std::lock_guard lock(store_mu_);
    for (const auto& r : rs) write_record(r);
  }

  std::size_t session_count() const {
    std::lock_guard lock(mu_);
    return sessions_.size();
  }

 private:
  struct Entry {
    mutable std::mutex mu;
    mutable std::condition_variable cv;
    Session session;
    std::vector<json> events;
    bool closed = false;
    bool busy = false;
  };

  static json utterance_event(const Utterance& u) {
    return json{{"type", "utterance"}, {"line", u.line}, {"role", to_string(u.role)}, {"text", u.text}};
  }

  void push_event(Entry& e, json ev) {
    e.events.push_back(std::move(ev));
    e.cv.notify_all();
  }

  std::shared_ptr<Entry> find(const std::string& id) const {
    std::lock_guard lock(mu_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw NotFound("no session " + id);
    return it->second;
  }

  void append_log(const json& entry) {
    if (options_.state_dir.empty()) return;
    std::lock_guard lock(log_mu_);
    std::ofstream out(options_.state_dir / "events.jsonl", std::ios::app | std::ios::binary);
    out << entry.dump() << '\n';
    out.flush();
  }

  void log_session(const Entry& e) {
    append_log(json{{"type", "session"}, {"closed", e.closed}, {"session", e.session}});
  }

  void store_record(const ChatRecord& r) {
    std::lock_guard lock(store_mu_);
    write_record(r);
  }

  // Caller holds store_mu_.
  void write_record(const ChatRecord& r) {
    if (!records_.count(r.id)) order_.push_back(r.id);
    records_[r.id] = r;
    append_log(json{{"type", "record"}, {"record", r}});
    if (!options_.state_dir.empty()) {
      std::vector<ChatRecord> all;
      for (const auto& id : order_) all.push_back(records_.at(id));
      save_corpus(options_.state_dir / "corpus.jsonl", all);
    }
  }

  // Replays the event log: last snapshot per session, last version per record.
  void recover() {
    const auto path = options_.state_dir / "events.jsonl";
    if (!std::filesystem::exists(path)) return;
    std::ifstream in(path, std::ios::binary);
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (trim(line).empty()) continue;
      json j;
      try {
        j = json::parse(line);
      } catch (const json::exception&) {
        if (in.peek() == std::char_traits<char>::eof()) break;  // torn final write
        throw ParseError("event log line " + std::to_string(n) + " is malformed");
      }
      const auto type = j.value("type", "");
      if (type == "session") {
        auto e = std::make_shared<Entry>();
        e->session = j.at("session").get<Session>();
        e->closed = j.value("closed", false);
        for (const auto& u : e->session.transcript.utterances) e->events.push_back(utterance_event(u));
        if (e->closed) e->events.push_back(json{{"type", "closed"}, {"record_id", e->session.id}});
        const auto& id = e->session.id;
        if (id.size() > 1 && id[0] == 's')
          try {
            counter_ = std::max<std::uint64_t>(counter_, std::stoull(id.substr(1)));
          } catch (const std::exception&) {
          }
        sessions_[id] = std::move(e);
      } else if (type == "record") {
        auto r = j.at("record").get<ChatRecord>();
        if (!records_.count(r.id)) order_.push_back(r.id);
        records_[r.id] = std::move(r);
      }
    }
  }

  const Engine* engine_;
  ServiceOptions options_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
  std::uint64_t counter_ = 0;
  mutable std::mutex store_mu_;
  std::map<std::string, ChatRecord> records_;
  std::vector<std::string> order_;
  std::mutex log_mu_;
  std::atomic<bool> stopping_{false};
};

// ---------------------------------------------------------------------------
// HTTP

inline int http_status(const Error& e) {
  static const std::map<std::string, int, std::less<>> codes{
      {"NotFound", 404},         {"TurnOrderError", 409},   {"SessionClosed", 409},
      {"DuplicateAnnotation", 409}, {"Unauthorized", 401},  {"ConfigError", 400},
      {"InvalidValue", 400},     {"SchemaViolation", 400},  {"ParseError", 400},
      {"PreconditionError", 400}, {"IndexError", 400},      {"InvalidThreshold", 400},
      {"TurnFailed", 502},       {"TransportError", 502},   {"BudgetExhausted", 429},
      {"LineBudgetExhausted", 409}, {"ProtocolError", 409}};
  auto it = codes.find(e.kind());
  return it == codes.end() ? 500 : it->second;
}

inline constexpr std::string_view kEvaluatorTokenHeader = "X-Evaluator-Token";

inline void mount_routes(httplib::Server& server, SessionService& svc) {
  auto reply = [](httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  };
  auto guarded = [reply](auto fn) {
    return [fn, reply](const httplib::Request& req, httplib::Response& res) {
      try {
        fn(req, res);
      } catch (const Error& e) {
        reply(res, http_status(e), json{{"error", e.kind()}, {"message", e.what()}});
      } catch (const json::exception& e) {
        reply(res, 400, json{{"error", "SchemaViolation"}, {"message", e.what()}});
      } catch (const std::exception& e) {
        reply(res, 500, json{{"error", "Internal"}, {"message", e.what()}});
      }
    };
  };
  auto body_json = [](const httplib::Request& req) {
    try {
      return json::parse(req.body.empty() ? "{}" : req.body);
    } catch (const json::exception& e) {
      throw SchemaViolation(std::string("request body is not JSON: ") + e.what());
    }
  };
  auto token = [](const httplib::Request& req) {
    return req.get_header_value(std::string(kEvaluatorTokenHeader));
  };

  server.Post("/api/sessions", guarded([&svc, reply, body_json](const auto& req, auto& res) {
                reply(res, 201, svc.create_session(body_json(req)));
              }));
  server.Get(R"(/api/sessions/([^/]+))", guarded([&svc, reply, token](const auto& req, auto& res) {
               const auto view = parse_view(req.has_param("view") ? req.get_param_value("view") : "user");
               reply(res, 200, svc.get_session(req.matches[1], view, token(req)));
             }));
  server.Post(R"(/api/sessions/([^/]+)/messages)",
              guarded([&svc, reply, body_json, token](const auto& req, auto& res) {
                const bool trace = req.has_param("view") && req.get_param_value("view") == "evaluator";
                reply(res, 200, svc.post_message(req.matches[1], body_json(req), trace, token(req)));
              }));
  server.Get(R"(/api/sessions/([^/]+)/events)", guarded([&svc](const auto& req, auto& res) {
               const std::string id = req.matches[1];
               svc.get_session(id, View::User);  // 404 before streaming
               std::size_t since = 0;
               if (req.has_param("since")) since = std::stoul(req.get_param_value("since"));
               else if (req.has_header("Last-Event-ID"))
                 since = std::stoul(req.get_header_value("Last-Event-ID")) + 1;
               res.set_header("Cache-Control", "no-cache");
               res.set_chunked_content_provider(
                   "text/event-stream",
                   [&svc, id, since](std::size_t, httplib::DataSink& sink) mutable {
                     bool done = false;
                     const auto events = svc.events_since(id, since, std::chrono::seconds(15), done);
                     std::string chunk = events.empty() && !done ? ": keep-alive\n\n" : "";
                     for (const auto& ev : events) {
                       chunk += "id: " + std::to_string(ev.at("seq").get<std::size_t>()) + "\n";
                       chunk += "event: " + ev.at("type").get<std::string>() + "\n";
                       chunk += "data: " + ev.dump() + "\n\n";
                     }
                     since += events.size();
                     if (!chunk.empty() && !sink.write(chunk.data(), chunk.size())) return false;
                     if (done) sink.done();
                     return true;
                   });
             }));
  server.Post(R"(/api/records/([^/]+)/annotations)",
              guarded([&svc, reply, body_json, token](const auto& req, auto& res) {
                svc.check_evaluator(token(req));
                reply(res, 200, svc.submit_annotation(req.matches[1], body_json(req)));
              }));
  server.Get("/api/records", guarded([&svc, reply](const auto&, auto& res) {
               reply(res, 200, svc.list_records());
             }));
  server.Get(R"(/api/records/([^/]+))", guarded([&svc, reply, token](const auto& req, auto& res) {
               svc.check_evaluator(token(req));
               reply(res, 200, json(svc.record(req.matches[1])));
             }));
  server.Get("/api/corpus", guarded([&svc, token](const auto& req, auto& res) {
               svc.check_evaluator(token(req));
               std::ostringstream os;
               write_corpus(os, svc.records());
               res.set_content(os.str(), "application/x-ndjson");
             }));
  server.Get("/api/metrics", guarded([&svc, reply](const auto&, auto& res) {
               reply(res, 200, svc.metrics());
             }));
}

}  // namespace pivot
