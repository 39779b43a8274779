#include "learnflow/service.hpp"

#include <httplib.h>

#include <atomic>
#include <condition_variable>
#include <fstream>
#include <map>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "learnflow/error.hpp"
#include "learnflow/event_log.hpp"
#include "learnflow/flow_document.hpp"
#include "learnflow/session.hpp"
#include "learnflow/validate.hpp"

namespace learnflow {

namespace {

using json = nlohmann::json;

std::string random_hex(std::size_t bytes) {
  static thread_local std::random_device rd;
  static const char* digits = "0123456789abcdef";
  std::string out;
  out.reserve(bytes * 2);
  for (std::size_t i = 0; i < bytes; i += 4) {
    auto v = rd();
    for (int k = 0; k < 4 && i + k < bytes; ++k) {
      unsigned byte = (v >> (8 * k)) & 0xffU;
      out += digits[byte >> 4];
      out += digits[byte & 0xf];
    }
  }
  return out;
}

json to_plain(const nlohmann::ordered_json& j) { return json::parse(j.dump()); }

json status_json(const Status& s) {
  json j{{"state", to_string(s.state)}};
  if (!s.who.empty()) j["who"] = s.who;
  if (!s.step_id.empty()) j["step_id"] = s.step_id;
  return j;
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, const Error& e) {
  json body{{"code", e.code()}, {"message", e.what()}};
  if (!e.details().is_null()) body["details"] = e.details();
  send_json(res, http_status_for(e.code()), body);
}

json parse_body(const httplib::Request& req) {
  try {
    return json::parse(req.body);
  } catch (const json::exception& e) {
    throw Error("MalformedRequest", std::string("request body is not JSON: ") + e.what());
  }
}

std::string bearer(const httplib::Request& req) {
  const auto h = req.get_header_value("Authorization");
  const std::string prefix = "Bearer ";
  if (h.size() <= prefix.size() || h.compare(0, prefix.size(), prefix) != 0) return "";
  return h.substr(prefix.size());
}

std::string request_id(const httplib::Request& req) {
  for (const char* name : {"request_id", "Request-Id", "X-Request-Id"}) {
    if (req.has_header(name)) return req.get_header_value(name);
  }
  return "";
}

}  // namespace

int http_status_for(std::string_view code) {
  static const std::map<std::string, int, std::less<>> table{
      {"MalformedRequest", 400},
      {"MissingParameter", 400},
      {"Unauthorized", 401},
      {"Forbidden", 403},
      {"NotFound", 404},
      {"UnknownFlow", 404},
      {"UnknownSession", 404},
      {"DuplicateFlow", 409},
      {"NotYourTurn", 409},
      {"Inapplicable", 409},
      {"SessionEnded", 409},
      {"NoPendingInvocation", 409},
      {"AgentMismatch", 409},
      {"MalformedDocument", 422},
      {"UnknownStepKind", 422},
      {"DuplicateStepId", 422},
      {"MissingField", 422},
      {"InvalidFlow", 422},
      {"IllegalToggle", 422},
      {"WordLimitExceeded", 422},
  };
  auto it = table.find(code);
  return it == table.end() ? 500 : it->second;
}

struct Service::Impl {
  struct Live {
    std::mutex mu;
    std::condition_variable cv;
    SessionState state;
    std::unique_ptr<EventLog> log;
    std::unique_ptr<Provider> provider;
    std::string inflight;        // invocation id being generated
    std::string provider_error;  // last failed generation, cleared on success
    std::string fault;           // engine error that stopped the session
  };

  struct StoredFlow {
    std::shared_ptr<const FlowDefinition> flow;
    json document;
  };

  struct Grant {
    std::string session_id;
    std::string slot;
  };

  struct CachedResponse {
    int status = 200;
    std::string body;
  };

  ServiceConfig config;
  httplib::Server server;
  std::thread listener;
  std::atomic<bool> stopping{false};

  std::mutex mu;  // flows, sessions, tokens, idempotency cache
  std::map<std::string, StoredFlow> flows;
  std::map<std::string, std::shared_ptr<Live>> sessions;
  std::map<std::string, Grant> tokens;
  std::map<std::string, CachedResponse> replies;

  std::mutex workers_mu;
  std::condition_variable workers_cv;
  int workers = 0;

  explicit Impl(ServiceConfig c) : config(std::move(c)) {
    load_flows();
    routes();
  }

  EngineContext context() const {
    EngineContext ctx;
    ctx.materials = config.materials.get();
    return ctx;
  }

  // ---- flows ------------------------------------------------------------

  std::filesystem::path flows_dir() const { return config.data_dir / "flows"; }

  void load_flows() {
    std::error_code ec;
    if (!std::filesystem::is_directory(flows_dir(), ec)) return;
    for (const auto& entry : std::filesystem::directory_iterator(flows_dir())) {
      if (entry.path().extension() != ".json") continue;
      try {
        std::ifstream in(entry.path());
        std::stringstream ss;
        ss << in.rdbuf();
        auto flow = std::make_shared<const FlowDefinition>(parse_flow(std::string_view(ss.str())));
        flows[flow->id] = {flow, to_plain(to_document(*flow))};
      } catch (const std::exception&) {
        // a damaged file must not keep the server from starting
      }
    }
  }

  void store_flow_file(const FlowDefinition& flow) {
    std::error_code ec;
    std::filesystem::create_directories(flows_dir(), ec);
    std::ofstream out(flows_dir() / (flow.id + ".json"));
    out << serialize_flow(flow) << "\n";
    if (!out) throw Error("StorageFailure", "cannot store flow '" + flow.id + "'");
  }

  void post_flow(const httplib::Request& req, httplib::Response& res) {
    FlowDefinition flow = parse_flow(std::string_view(req.body));
    auto report = validate_flow(flow);
    json body{{"id", flow.id}, {"report", report.to_json()}};
    if (!report.ok) {
      send_json(res, 422,
                {{"code", "InvalidFlow"}, {"message", "flow does not validate"}, {"details", body}});
      return;
    }
    std::lock_guard lk(mu);
    if (flows.count(flow.id)) {
      throw Error("DuplicateFlow", "flow '" + flow.id + "' already exists", json{{"id", flow.id}});
    }
    store_flow_file(flow);
    auto shared = std::make_shared<const FlowDefinition>(std::move(flow));
    flows[shared->id] = {shared, to_plain(to_document(*shared))};
    send_json(res, 201, body);
  }

  void get_flow(const httplib::Request& req, httplib::Response& res) {
    std::lock_guard lk(mu);
    auto it = flows.find(req.matches[1]);
    if (it == flows.end()) throw Error("NotFound", "no flow '" + std::string(req.matches[1]) + "'");
    send_json(res, 200, it->second.document);
  }

  // ---- sessions ---------------------------------------------------------

  void post_session(const httplib::Request& req, httplib::Response& res) {
    auto body = parse_body(req);
    if (!body.is_object() || !body.contains("flow_id") || !body["flow_id"].is_string()) {
      throw Error("MalformedRequest", "body needs a string 'flow_id'");
    }
    const std::string flow_id = body["flow_id"];
    std::map<std::string, Source> overrides;
    if (auto it = body.find("roster_overrides"); it != body.end() && !it->is_null()) {
      if (!it->is_object()) throw Error("MalformedRequest", "'roster_overrides' must be an object");
      for (const auto& [slot, v] : it->items()) {
        auto src = v.is_string() ? source_from_string(v.get<std::string>()) : std::nullopt;
        if (!src) throw Error("IllegalToggle", "source for '" + slot + "' must be human or ai");
        overrides[slot] = *src;
      }
    }

    std::shared_ptr<const FlowDefinition> flow;
    {
      std::lock_guard lk(mu);
      auto it = flows.find(flow_id);
      if (it == flows.end()) throw Error("UnknownFlow", "no flow '" + flow_id + "'");
      flow = it->second.flow;
    }

    auto live = std::make_shared<Live>();
    std::string session_id;
    {
      std::lock_guard lk(mu);
      do {
        session_id = "s-" + random_hex(8);
      } while (sessions.count(session_id));
    }
    live->state = start_session(flow, overrides, session_id, context());
    live->log = std::make_unique<EventLog>(config.data_dir, session_id);
    if (config.provider_factory) live->provider = config.provider_factory(session_id);

    json toks = json::object();
    {
      std::lock_guard lk(mu);
      // Learners played by the ai skip their alternative turns, but plain
      // user_input steps still wait on them.
      std::set<std::string> asked;
      for (const auto& step : flow->steps) {
        if (const auto* u = step.as<UserInputStep>()) asked.insert(u->from);
      }
      for (const auto& slot : flow->roster) {
        if (slot.role == Role::ai_agent) continue;
        if (slot.role == Role::learner && effective_source(live->state, slot.slot_id) == Source::ai &&
            !asked.count(slot.slot_id)) {
          continue;
        }
        std::string token = random_hex(16);
        tokens[token] = {session_id, slot.slot_id};
        toks[slot.slot_id] = token;
      }
      sessions[session_id] = live;
    }

    std::lock_guard lk(live->mu);
    for (const auto& e : live->state.transcript) live->log->append(e);
    pump(live);
    send_json(res, 201,
              {{"session_id", session_id}, {"tokens", toks}, {"status", status_json(live->state.status)}});
  }

  /// Session plus the caller's slot; 404 before 401 so probing ids leaks nothing extra.
  std::pair<std::shared_ptr<Live>, std::string> authorize(const httplib::Request& req) {
    const std::string session_id = req.matches[1];
    std::lock_guard lk(mu);
    auto s = sessions.find(session_id);
    if (s == sessions.end()) throw Error("UnknownSession", "no session '" + session_id + "'");
    auto t = tokens.find(bearer(req));
    if (t == tokens.end() || t->second.session_id != session_id) {
      throw Error("Unauthorized", "missing or invalid participant token");
    }
    return {s->second, t->second.slot};
  }

  // Caller holds live->mu.
  void persist(Live& live, const std::vector<Event>& events) {
    for (const auto& e : events) live.log->append(e);
    if (!events.empty()) live.cv.notify_all();
  }

  // Runs the engine until it blocks; starts the agent call if one is due.
  // Caller holds live->mu.
  void pump(const std::shared_ptr<Live>& live) {
    if (!live->fault.empty()) return;
    try {
      std::optional<EngineAction> act = pending_action(live->state);
      while (!act) {
        auto a = next_action(live->state, context());
        if (auto* d = std::get_if<Deliver>(&a)) {
          persist(*live, {d->event});
          continue;
        }
        act = std::move(a);
      }
      if (auto* inv = std::get_if<InvokeAgent>(&*act)) {
        if (live->inflight != inv->invocation_id) start_worker(live, *inv);
      }
    } catch (const Error& e) {
      live->fault = e.code() + ": " + e.what();
    }
    live->cv.notify_all();
  }

  void start_worker(const std::shared_ptr<Live>& live, InvokeAgent inv) {
    if (!live->provider) {
      live->provider_error = "no provider configured";
      return;
    }
    live->inflight = inv.invocation_id;
    {
      std::lock_guard lk(workers_mu);
      ++workers;
    }
    std::thread([this, live, inv = std::move(inv)] {
      std::string text;
      std::string failure;
      try {
        text = live->provider->generate(inv.prompt_bundle, inv.invocation_id);
      } catch (const Error& e) {
        failure = e.code() + ": " + e.what();
      } catch (const std::exception& e) {
        failure = e.what();
      }
      {
        std::lock_guard lk(live->mu);
        if (live->inflight == inv.invocation_id) live->inflight.clear();
        const auto& pending = live->state.pending_invocation;
        const bool current = pending && pending->invocation_id == inv.invocation_id &&
                             live->state.status.state == SessionStatus::awaiting_agent;
        if (!stopping && current) {
          if (!failure.empty()) {
            live->provider_error = failure;
            live->cv.notify_all();
          } else {
            live->provider_error.clear();
            try {
              persist(*live, apply_agent_response(live->state, inv.agent_id, text, context()));
            } catch (const Error& e) {
              live->fault = e.code() + ": " + e.what();
            }
            pump(live);
          }
        }
      }
      std::lock_guard lk(workers_mu);
      --workers;
      workers_cv.notify_all();
    }).detach();
  }

  json visible_events(const Live& live, const std::string& slot, std::uint64_t since) const {
    json out = json::array();
    for (const auto& e : live.state.transcript) {
      if (e.seq > since && e.visible_to(slot)) out.push_back(to_plain(to_json(e, live.state.session_id)));
    }
    return out;
  }

  static std::uint64_t query_u64(const httplib::Request& req, const char* name, std::uint64_t dflt) {
    if (!req.has_param(name)) return dflt;
    const auto v = req.get_param_value(name);
    try {
      std::size_t used = 0;
      auto n = std::stoull(v, &used);
      if (used != v.size()) throw std::invalid_argument(name);
      return n;
    } catch (const std::exception&) {
      throw Error("MalformedRequest", std::string("query parameter '") + name + "' must be a non-negative integer");
    }
  }

  void get_events(const httplib::Request& req, httplib::Response& res) {
    auto [live, slot] = authorize(req);
    const auto since = query_u64(req, "since", 0);
    const auto wait = std::min<std::uint64_t>(query_u64(req, "wait", 0), config.max_wait.count());
    std::unique_lock lk(live->mu);
    auto has_new = [&, &live = live, &slot = slot] {
      for (auto it = live->state.transcript.rbegin(); it != live->state.transcript.rend(); ++it) {
        if (it->seq <= since) break;
        if (it->visible_to(slot)) return true;
      }
      return stopping.load() || live->state.status.terminal();
    };
    if (wait > 0) live->cv.wait_for(lk, std::chrono::seconds(wait), has_new);
    send_json(res, 200,
              {{"events", visible_events(*live, slot, since)},
               {"last_seq", live->state.next_seq - 1},
               {"status", status_json(live->state.status)}});
  }

  void get_stream(const httplib::Request& req, httplib::Response& res) {
    auto [live, slot] = authorize(req);
    std::uint64_t since = query_u64(req, "since", 0);
    if (req.has_header("Last-Event-ID")) {
      try {
        since = std::stoull(req.get_header_value("Last-Event-ID"));
      } catch (const std::exception&) {
      }
    }
    auto cursor = std::make_shared<std::uint64_t>(since);
    res.set_header("Cache-Control", "no-cache");
    res.set_chunked_content_provider(
        "text/event-stream",
        [this, live = live, slot = slot, cursor](std::size_t, httplib::DataSink& sink) {
          std::string chunk;
          bool done = false;
          {
            std::unique_lock lk(live->mu);
            auto ready = [&] {
              return stopping.load() || live->state.next_seq - 1 > *cursor ||
                     live->state.status.terminal();
            };
            live->cv.wait_for(lk, config.heartbeat, ready);
            for (const auto& e : live->state.transcript) {
              if (e.seq <= *cursor) continue;
              if (e.visible_to(slot)) {
                chunk += "id: " + std::to_string(e.seq) + "\ndata: " +
                         to_json(e, live->state.session_id).dump() + "\n\n";
              }
              *cursor = e.seq;
            }
            done = stopping.load() || live->state.status.terminal();
          }
          if (chunk.empty() && !done) chunk = ": keep-alive\n\n";
          if (!chunk.empty() && !sink.write(chunk.data(), chunk.size())) return false;
          if (done) sink.done();
          return true;
        });
  }

  void post_input(const httplib::Request& req, httplib::Response& res) {
    auto [live, slot] = authorize(req);
    auto body = parse_body(req);
    if (!body.is_object() || !body.contains("content") || !body["content"].is_string()) {
      throw Error("MalformedRequest", "body needs a string 'content'");
    }
    std::lock_guard lk(live->mu);
    auto events = submit_input(live->state, slot, body["content"].get<std::string>(), context());
    persist(*live, events);
    pump(live);
    send_json(res, 200, {{"seq", events.back().seq}, {"status", status_json(live->state.status)}});
  }

  void post_control(const httplib::Request& req, httplib::Response& res) {
    auto [live, slot] = authorize(req);
    auto body = parse_body(req);
    if (!body.is_object() || !body.contains("action") || !body["action"].is_string()) {
      throw Error("MalformedRequest", "body needs a string 'action'");
    }
    std::lock_guard lk(live->mu);
    if (slot != live->state.flow->instructor_id()) {
      throw Error("Forbidden", "only the instructor may use controls");
    }
    const std::string action = body["action"];
    std::vector<Event> events;
    if (action == "advance") {
      events = control_advance(live->state, context());
    } else if (action == "skip_step") {
      events = control_skip(live->state, context());
    } else if (action == "override_response") {
      if (!body.contains("text") || !body["text"].is_string()) {
        throw Error("MalformedRequest", "override_response needs a string 'text'");
      }
      events = control_override(live->state, body["text"].get<std::string>(), context());
    } else if (action == "end") {
      events = control_end(live->state, context());
    } else {
      throw Error("MalformedRequest", "unknown action '" + action + "'");
    }
    live->provider_error.clear();
    persist(*live, events);
    pump(live);
    send_json(res, 200, {{"seq", events.back().seq}, {"status", status_json(live->state.status)}});
  }

  void get_state(const httplib::Request& req, httplib::Response& res) {
    auto [live, slot] = authorize(req);
    std::lock_guard lk(live->mu);
    const auto& s = live->state;
    const bool instructor = slot == s.flow->instructor_id();
    json j{{"session_id", s.session_id},
           {"flow_id", s.flow->id},
           {"viewer", slot},
           {"status", status_json(s.status)},
           {"your_turn", s.status.state == SessionStatus::awaiting_input && s.status.who == slot}};
    if (auto act = pending_action(s); act && std::holds_alternative<AwaitInput>(*act)) {
      const auto& a = std::get<AwaitInput>(*act);
      if (a.max_words) j["max_words"] = *a.max_words;
    }
    if (!s.loop_frames.empty()) {
      const auto& f = s.loop_frames.front();
      j["loop"] = {{"range", {f.first, f.last}}, {"iteration", f.iteration + 1}, {"count", f.count}};
    }
    json tallies = json::object();
    for (const auto& [k, t] : s.tallies) {
      if (instructor || k == slot) tallies[k] = {{"correct", t.correct}, {"total_graded", t.total_graded}};
    }
    j["tallies"] = tallies;
    std::uint64_t last_visible = 0;
    for (const auto& e : s.transcript) {
      if (e.visible_to(slot)) last_visible = e.seq;
    }
    j["last_seq"] = last_visible;
    if (instructor) {
      if (!live->provider_error.empty()) j["provider_error"] = live->provider_error;
      if (!live->fault.empty()) j["fault"] = live->fault;
      j["cursor"] = s.cursor < s.flow->steps.size() ? json(s.flow->steps[s.cursor].id) : json(nullptr);
    }
    send_json(res, 200, j);
  }

  // ---- plumbing ---------------------------------------------------------

  using Handler = void (Impl::*)(const httplib::Request&, httplib::Response&);

  /// Error mapping plus request_id replay for state-changing calls.
  httplib::Server::Handler wrap(Handler h, bool idempotent) {
    return [this, h, idempotent](const httplib::Request& req, httplib::Response& res) {
      std::string key;
      if (idempotent) {
        if (auto rid = request_id(req); !rid.empty()) {
          key = req.method + " " + req.path + " " + bearer(req) + " " + rid;
          std::lock_guard lk(mu);
          if (auto it = replies.find(key); it != replies.end()) {
            res.status = it->second.status;
            res.set_content(it->second.body, "application/json");
            return;
          }
        }
      }
      try {
        (this->*h)(req, res);
      } catch (const Error& e) {
        send_error(res, e);
      } catch (const json::exception& e) {
        send_error(res, Error("MalformedRequest", e.what()));
      } catch (const std::exception& e) {
        send_error(res, Error("InternalError", e.what()));
      }
      if (!key.empty()) {
        std::lock_guard lk(mu);
        replies[key] = {res.status, res.body};
      }
    };
  }

  void routes() {
    server.new_task_queue = [] { return new httplib::ThreadPool(32); };
    server.Post("/v1/flows", wrap(&Impl::post_flow, true));
    server.Get(R"(/v1/flows/([^/]+))", wrap(&Impl::get_flow, false));
    server.Post("/v1/sessions", wrap(&Impl::post_session, true));
    server.Get(R"(/v1/sessions/([^/]+)/events)", wrap(&Impl::get_events, false));
    server.Get(R"(/v1/sessions/([^/]+)/stream)", wrap(&Impl::get_stream, false));
    server.Post(R"(/v1/sessions/([^/]+)/input)", wrap(&Impl::post_input, true));
    server.Post(R"(/v1/sessions/([^/]+)/control)", wrap(&Impl::post_control, true));
    server.Get(R"(/v1/sessions/([^/]+)/state)", wrap(&Impl::get_state, false));
  }

  void shutdown() {
    if (stopping.exchange(true)) return;
    {
      std::lock_guard lk(mu);
      for (auto& [_, live] : sessions) {
        std::lock_guard l2(live->mu);
        live->cv.notify_all();
      }
    }
    server.stop();
    if (listener.joinable()) listener.join();
    std::unique_lock lk(workers_mu);
    workers_cv.wait(lk, [&] { return workers == 0; });
  }
};

Service::Service(ServiceConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}

Service::~Service() { stop(); }

int Service::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound <= 0) throw Error("BindFailure", "cannot listen on " + host + ":" + std::to_string(port));
  impl_->listener = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void Service::wait() {
  if (impl_->listener.joinable()) impl_->listener.join();
}

void Service::stop() {
  if (impl_) impl_->shutdown();
}

}  // namespace learnflow
