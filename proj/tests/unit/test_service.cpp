#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <thread>

#include <httplib.h>

#include "learnflow/error.hpp"
#include "learnflow/event_log.hpp"
#include "learnflow/exemplars.hpp"
#include "learnflow/flow_document.hpp"
#include "learnflow/service.hpp"
#include "fuzz.hpp"
#include "scenarios.hpp"

using namespace learnflow;
using namespace learnflow::testing;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

/// Answers every invocation with the same text.
class FixedProvider : public Provider {
 public:
  explicit FixedProvider(std::string text) : text_(std::move(text)) {}
  std::string generate(const PromptBundle&, std::string_view) override { return text_; }

 private:
  std::string text_;
};

class FailingProvider : public Provider {
 public:
  std::string generate(const PromptBundle&, std::string_view) override {
    throw Error("Timeout", "provider unreachable", json{{"attempts", 3}});
  }
};

struct Reply {
  int status = 0;
  json body;
};

struct Fixture {
  fs::path dir;
  std::function<std::unique_ptr<Provider>()> next_provider = [] {
    return std::make_unique<StubProvider>(quiz_script());
  };
  std::unique_ptr<Service> service;
  int port = 0;

  Fixture() {
    static std::atomic<int> n{0};
    dir = fs::temp_directory_path() / ("learnflow-svc-" + std::to_string(::getpid()) + "-" + std::to_string(n++));
    fs::remove_all(dir);
    ServiceConfig c;
    c.data_dir = dir;
    c.provider_factory = [this](const std::string&) { return next_provider(); };
    c.heartbeat = std::chrono::milliseconds(200);
    c.max_wait = std::chrono::seconds(5);
    service = std::make_unique<Service>(c);
    port = service->start("127.0.0.1", 0);
  }
  ~Fixture() {
    service->stop();
    service.reset();
    fs::remove_all(dir);
  }

  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_read_timeout(10, 0);
    return c;
  }

  static httplib::Headers headers(const std::string& token, const std::string& request_id = "") {
    httplib::Headers h;
    if (!token.empty()) h.emplace("Authorization", "Bearer " + token);
    if (!request_id.empty()) h.emplace("Request-Id", request_id);
    return h;
  }

  static Reply wrap(const httplib::Result& r) {
    REQUIRE(r);
    Reply out{r->status, json()};
    if (!r->body.empty()) out.body = json::parse(r->body, nullptr, false);
    return out;
  }

  Reply post(const std::string& path, const std::string& body, const std::string& token = "",
             const std::string& request_id = "") const {
    auto c = client();
    return wrap(c.Post(path, headers(token, request_id), body, "application/json"));
  }
  Reply post(const std::string& path, const json& body, const std::string& token = "",
             const std::string& request_id = "") const {
    return post(path, body.dump(), token, request_id);
  }
  Reply get(const std::string& path, const std::string& token = "") const {
    auto c = client();
    return wrap(c.Get(path, headers(token)));
  }

  void add_flow(const FlowDefinition& f) {
    auto r = post("/v1/flows", serialize_flow(f));
    REQUIRE(r.status == 201);
  }

  struct Session {
    std::string id;
    std::map<std::string, std::string> tokens;
  };
  Session start(const std::string& flow_id, const json& overrides = json::object()) {
    auto r = post("/v1/sessions", json{{"flow_id", flow_id}, {"roster_overrides", overrides}});
    REQUIRE(r.status == 201);
    Session s{r.body["session_id"], {}};
    for (const auto& [slot, tok] : r.body["tokens"].items()) s.tokens[slot] = tok;
    return s;
  }

  /// Polls the state as `slot` until `pred` holds (or 10 s pass).
  json wait_state(const Session& s, const std::string& slot, const std::function<bool(const json&)>& pred) {
    json st;
    for (int i = 0; i < 1000; ++i) {
      st = get("/v1/sessions/" + s.id + "/state", s.tokens.at(slot)).body;
      if (pred(st)) return st;
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    FAIL("state condition not reached: " << st.dump());
    return st;
  }
};

bool blocked_on_human(const json& st) {
  const auto state = st["status"]["state"].get<std::string>();
  return state == "awaiting_input" || state == "completed" || state == "ended_by_instructor" ||
         st.contains("provider_error") || st.contains("fault");
}

bool terminal(const json& st) {
  const auto state = st["status"]["state"].get<std::string>();
  return state == "completed" || state == "ended_by_instructor";
}

std::vector<json> sse_events(const std::string& body) {
  std::vector<json> out;
  std::size_t pos = 0;
  while ((pos = body.find("data: ", pos)) != std::string::npos) {
    auto end = body.find('\n', pos);
    out.push_back(json::parse(body.substr(pos + 6, end - pos - 6)));
    pos = end;
  }
  return out;
}

}  // namespace

TEST_CASE("flow endpoints") {
  Fixture fx;
  auto quiz = exemplar_flow("quiz-drill");

  auto created = fx.post("/v1/flows", serialize_flow(quiz));
  CHECK(created.status == 201);
  CHECK(created.body["id"] == "quiz-drill");
  CHECK(created.body["report"]["ok"] == true);

  auto fetched = fx.get("/v1/flows/quiz-drill");
  CHECK(fetched.status == 200);
  CHECK(parse_flow(fetched.body) == quiz);

  auto dup = fx.post("/v1/flows", serialize_flow(quiz));
  CHECK(dup.status == 409);
  CHECK(dup.body["code"] == "DuplicateFlow");

  CHECK(fx.get("/v1/flows/nope").status == 404);
  CHECK(fx.get("/v1/flows/nope").body["code"] == "NotFound");

  auto bad = quiz;
  bad.id = "reversed";
  for (auto& s : bad.steps) {
    if (auto* r = std::get_if<RepetitionStep>(&s.body)) std::swap(r->first, r->last);
  }
  auto invalid = fx.post("/v1/flows", serialize_flow(bad));
  CHECK(invalid.status == 422);
  CHECK(invalid.body["code"] == "InvalidFlow");
  CHECK(invalid.body["details"]["id"] == "reversed");
  CHECK(invalid.body["details"]["report"]["ok"] == false);
  CHECK(fx.get("/v1/flows/reversed").status == 404);

  auto malformed = fx.post("/v1/flows", std::string("{\"id\": "));
  CHECK(malformed.status == 422);
  CHECK(malformed.body["code"] == "MalformedDocument");

  auto doc = json::parse(serialize_flow(quiz));
  doc["id"] = "extra-key";
  doc["colour"] = "blue";
  CHECK(fx.post("/v1/flows", doc).status == 422);
}

TEST_CASE("flows survive a restart") {
  fs::path dir;
  {
    Fixture fx;
    fx.add_flow(exemplar_flow("debate"));
    dir = fx.dir;
    fx.service->stop();
    ServiceConfig c;
    c.data_dir = dir;
    Service again(c);
    const int port = again.start("127.0.0.1", 0);
    httplib::Client cli("127.0.0.1", port);
    auto r = cli.Get("/v1/flows/debate");
    REQUIRE(r);
    CHECK(r->status == 200);
    again.stop();
  }
}

TEST_CASE("session creation") {
  Fixture fx;
  fx.add_flow(exemplar_flow("quiz-drill"));
  fx.add_flow(exemplar_flow("team-debate-3v3"));

  auto unknown = fx.post("/v1/sessions", json{{"flow_id", "missing"}});
  CHECK(unknown.status == 404);
  CHECK(unknown.body["code"] == "UnknownFlow");
  CHECK(fx.post("/v1/sessions", json{{"flow", "quiz-drill"}}).status == 400);
  CHECK(fx.post("/v1/sessions", std::string("not json")).status == 400);

  auto toggle = fx.post("/v1/sessions", json{{"flow_id", "quiz-drill"}, {"roster_overrides", {{"instructor", "ai"}}}});
  CHECK(toggle.status == 422);
  CHECK(toggle.body["code"] == "IllegalToggle");
  CHECK(fx.post("/v1/sessions", json{{"flow_id", "team-debate-3v3"}, {"roster_overrides", {{"b1", "robot"}}}}).status ==
        422);

  auto ok = fx.post("/v1/sessions", json{{"flow_id", "quiz-drill"}});
  CHECK(ok.status == 201);
  CHECK(ok.body["tokens"].size() == 2);
  CHECK(ok.body["tokens"].contains("instructor"));
  CHECK(ok.body["tokens"].contains("learner-1"));

  auto team = fx.post("/v1/sessions", json{{"flow_id", "team-debate-3v3"},
                                           {"roster_overrides", {{"b1", "ai"}, {"b2", "ai"}, {"b3", "ai"}}}});
  REQUIRE(team.status == 201);
  std::set<std::string> holders;
  for (const auto& [slot, _] : team.body["tokens"].items()) holders.insert(slot);
  CHECK(holders == std::set<std::string>{"instructor", "a1", "a2", "a3"});
  CHECK(team.body["status"]["state"] == "awaiting_input");
  CHECK(team.body["status"]["who"] == "a1");

  // The log starts with session_started.
  auto log = read_log(EventLog::path_for(fx.dir, ok.body["session_id"].get<std::string>()));
  CHECK(log.events.front().seq == 1);
  CHECK(system_payload(log.events.front())["type"] == "session_started");
}

TEST_CASE("tokens and roles") {
  Fixture fx;
  fx.add_flow(exemplar_flow("quiz-drill"));
  auto a = fx.start("quiz-drill");
  auto b = fx.start("quiz-drill");
  const auto base = "/v1/sessions/" + a.id;

  CHECK(fx.get("/v1/sessions/s-missing/events").status == 404);
  CHECK(fx.get("/v1/sessions/s-missing/events", a.tokens["instructor"]).body["code"] == "UnknownSession");
  CHECK(fx.get(base + "/events").status == 401);
  CHECK(fx.get(base + "/events", "wrong").status == 401);
  CHECK(fx.get(base + "/events", b.tokens["instructor"]).status == 401);
  CHECK(fx.get(base + "/state").status == 401);
  CHECK(fx.get(base + "/events", a.tokens["learner-1"]).status == 200);
  CHECK(fx.post(base + "/input", json{{"content", "x"}}).status == 401);
  CHECK(fx.post(base + "/control", json{{"action", "end"}}).status == 401);

  auto forbidden = fx.post(base + "/control", json{{"action", "end"}}, a.tokens["learner-1"]);
  CHECK(forbidden.status == 403);
  CHECK(forbidden.body["code"] == "Forbidden");

  CHECK(fx.post(base + "/control", json{{"action", "dance"}}, a.tokens["instructor"]).status == 400);
  CHECK(fx.post(base + "/control", json{{"action", "override_response"}}, a.tokens["instructor"]).status == 400);
  CHECK(fx.get(base + "/events?since=abc", a.tokens["instructor"]).status == 400);

  auto learner_state = fx.get(base + "/state", a.tokens["learner-1"]).body;
  CHECK_FALSE(learner_state.contains("cursor"));
  auto instructor_state = fx.get(base + "/state", a.tokens["instructor"]).body;
  CHECK(instructor_state.contains("cursor"));
  CHECK(instructor_state["viewer"] == "instructor");

  auto ended = fx.post(base + "/control", json{{"action", "end"}}, a.tokens["instructor"]);
  CHECK(ended.status == 200);
  CHECK(ended.body["status"]["state"] == "ended_by_instructor");
  auto again = fx.post(base + "/control", json{{"action", "end"}}, a.tokens["instructor"]);
  CHECK(again.status == 409);
  CHECK(again.body["code"] == "SessionEnded");
  CHECK(fx.post(base + "/input", json{{"content", "x"}}, a.tokens["learner-1"]).status == 409);
}

TEST_CASE("input errors: wrong turn and word limit") {
  Fixture fx;
  fx.add_flow(exemplar_flow("team-debate-3v3"));
  fx.next_provider = [] { return std::make_unique<StubProvider>(team_debate_script()); };
  auto s = fx.start("team-debate-3v3", {{"b1", "ai"}, {"b2", "ai"}, {"b3", "ai"}});
  const auto input = "/v1/sessions/" + s.id + "/input";

  auto st = fx.get("/v1/sessions/" + s.id + "/state", s.tokens["a1"]).body;
  CHECK(st["your_turn"] == true);
  CHECK(st["max_words"] == 120);
  CHECK(fx.get("/v1/sessions/" + s.id + "/state", s.tokens["a2"]).body["your_turn"] == false);

  auto wrong = fx.post(input, json{{"content", "me first"}}, s.tokens["a2"]);
  CHECK(wrong.status == 409);
  CHECK(wrong.body["code"] == "NotYourTurn");

  auto long_turn = fx.post(input, json{{"content", words(121)}}, s.tokens["a1"]);
  CHECK(long_turn.status == 422);
  CHECK(long_turn.body["code"] == "WordLimitExceeded");
  CHECK(long_turn.body["details"] == json({{"limit", 120}, {"actual", 121}}));

  CHECK(fx.post(input, json{{"text", "x"}}, s.tokens["a1"]).status == 400);

  auto ok = fx.post(input, json{{"content", words(120)}}, s.tokens["a1"]);
  CHECK(ok.status == 200);
  CHECK(ok.body["seq"].is_number());

  // Team B's answer arrives from the provider; then it is a2's turn.
  fx.wait_state(s, "a2", [](const json& j) { return j["your_turn"] == true; });
}

TEST_CASE("request ids make writes idempotent") {
  Fixture fx;
  fx.add_flow(exemplar_flow("team-debate-3v3"));
  fx.next_provider = [] { return std::make_unique<StubProvider>(team_debate_script()); };
  auto s = fx.start("team-debate-3v3", {{"b1", "ai"}, {"b2", "ai"}, {"b3", "ai"}});
  const auto input = "/v1/sessions/" + s.id + "/input";
  auto first = fx.post(input, json{{"content", "Opening."}}, s.tokens["a1"], "req-1");
  auto second = fx.post(input, json{{"content", "Opening."}}, s.tokens["a1"], "req-1");
  CHECK(first.status == 200);
  CHECK(second.status == 200);
  CHECK(first.body == second.body);
  auto fresh = fx.post(input, json{{"content", "Opening."}}, s.tokens["a1"], "req-2");
  CHECK(fresh.status == 409);

  auto events = fx.get("/v1/sessions/" + s.id + "/events", s.tokens["instructor"]).body["events"];
  int inputs = 0;
  for (const auto& e : events) inputs += e["kind"] == "user_input";
  CHECK(inputs == 1);

  // Same request id for flows: the replayed 201 rather than a 409.
  auto doc = serialize_flow(exemplar_flow("debate"));
  CHECK(fx.post("/v1/flows", doc, "", "flow-1").status == 201);
  CHECK(fx.post("/v1/flows", doc, "", "flow-1").status == 201);
  CHECK(fx.post("/v1/flows", doc).status == 409);
}

TEST_CASE("provider failure is surfaced and the instructor can override") {
  Fixture fx;
  fx.add_flow(exemplar_flow("quiz-drill"));
  fx.next_provider = [] { return std::make_unique<FailingProvider>(); };
  auto s = fx.start("quiz-drill");
  auto st = fx.wait_state(s, "instructor", [](const json& j) { return j.contains("provider_error"); });
  CHECK(st["status"]["state"] == "awaiting_agent");
  CHECK(st["provider_error"].get<std::string>().rfind("Timeout", 0) == 0);
  CHECK_FALSE(fx.get("/v1/sessions/" + s.id + "/state", s.tokens["learner-1"]).body.contains("provider_error"));

  const auto control = "/v1/sessions/" + s.id + "/control";
  auto advance = fx.post(control, json{{"action", "advance"}}, s.tokens["instructor"]);
  CHECK(advance.status == 409);
  CHECK(advance.body["code"] == "Inapplicable");

  auto over = fx.post(control, json{{"action", "override_response"}, {"text", "Which factor is density-dependent?"}},
                      s.tokens["instructor"]);
  CHECK(over.status == 200);
  CHECK(over.body["status"]["state"] == "awaiting_input");
  auto events = fx.get("/v1/sessions/" + s.id + "/events", s.tokens["learner-1"]).body["events"];
  CHECK(events.back()["content"] == "Which factor is density-dependent?");
  CHECK(events.back()["step_id"] == "5");
}

TEST_CASE("SSE and long-poll deliver the same quiz events") {
  Fixture fx;
  fx.add_flow(exemplar_flow("quiz-drill"));
  auto s = fx.start("quiz-drill");

  // Live SSE readers for both participants.
  std::map<std::string, std::string> streams;
  std::vector<std::thread> readers;
  for (const std::string slot : {"instructor", "learner-1"}) {
    streams[slot];
    readers.emplace_back([&, slot] {
      auto c = fx.client();
      c.set_read_timeout(30, 0);
      std::string& out = streams[slot];
      c.Get("/v1/sessions/" + s.id + "/stream", Fixture::headers(s.tokens[slot]),
            [&](const char* data, std::size_t n) {
              out.append(data, n);
              return true;
            });
    });
  }

  // The learner plays through long-poll.
  std::vector<json> polled;
  std::uint64_t since = 0;
  auto answers = quiz_answers();
  std::size_t next_answer = 0;
  for (int guard = 0; guard < 500; ++guard) {
    auto r = fx.get("/v1/sessions/" + s.id + "/events?since=" + std::to_string(since) + "&wait=2", s.tokens["learner-1"]);
    REQUIRE(r.status == 200);
    for (const auto& e : r.body["events"]) polled.push_back(e);
    since = r.body["last_seq"];
    if (terminal(r.body)) break;
    if (r.body["status"]["state"] == "awaiting_input" && r.body["status"]["who"] == "learner-1") {
      REQUIRE(next_answer < answers.size());
      CHECK(fx.post("/v1/sessions/" + s.id + "/input", json{{"content", answers[next_answer++]}}, s.tokens["learner-1"])
                .status == 200);
    }
  }
  for (auto& t : readers) t.join();

  auto st = fx.get("/v1/sessions/" + s.id + "/state", s.tokens["instructor"]).body;
  CHECK(st["status"]["state"] == "completed");
  CHECK(next_answer == 10);

  const auto learner_sse = sse_events(streams["learner-1"]);
  CHECK(learner_sse == polled);
  auto all = fx.get("/v1/sessions/" + s.id + "/events", s.tokens["instructor"]).body["events"];
  CHECK(sse_events(streams["instructor"]) == std::vector<json>(all.begin(), all.end()));
  CHECK(streams["learner-1"].find("id: ") != std::string::npos);

  // Nothing outside the learner's visibility.
  std::size_t visible = 0;
  for (const auto& e : all) {
    const auto& v = e["visibility"];
    visible += std::find(v.begin(), v.end(), "learner-1") != v.end();
  }
  CHECK(polled.size() == visible);
  for (const auto& e : polled) {
    const auto& v = e["visibility"];
    CHECK(std::find(v.begin(), v.end(), "learner-1") != v.end());
  }

  // A reconnect with Last-Event-ID resumes after that event.
  auto c = fx.client();
  httplib::Headers h = Fixture::headers(s.tokens["learner-1"]);
  h.emplace("Last-Event-ID", polled[polled.size() - 3]["seq"].dump());
  auto resumed = c.Get("/v1/sessions/" + s.id + "/stream", h);
  REQUIRE(resumed);
  CHECK(sse_events(resumed->body) == std::vector<json>(polled.end() - 2, polled.end()));

  // The persisted log is what the instructor saw.
  auto log = read_log(EventLog::path_for(fx.dir, s.id));
  REQUIRE(log.events.size() == all.size());
  for (std::size_t i = 0; i < all.size(); ++i) CHECK(log.events[i].seq == all[i]["seq"]);
  CHECK(replay(log.events).status.state == SessionStatus::completed);
}

TEST_CASE("fuzzed flows run through the service without leaks") {
  Fixture fx;
  fx.next_provider = [] { return std::make_unique<FixedProvider>("CORRECT yes, good."); };
  auto corpus = valid_corpus(77, 24);
  std::mt19937_64 rng(5);
  for (const auto& f : corpus.flows) {
    CAPTURE(f.id);
    fx.add_flow(f);
    json ov = json::object();
    for (const auto& [slot, src] : random_overrides(f, rng)) ov[slot] = std::string(to_string(src));
    auto s = fx.start(f.id, ov);
    for (int guard = 0; guard < 400; ++guard) {
      auto st = fx.wait_state(s, "instructor", blocked_on_human);
      REQUIRE_FALSE(st.contains("fault"));
      REQUIRE_FALSE(st.contains("provider_error"));
      if (terminal(st)) break;
      const std::string who = st["status"]["who"];
      REQUIRE(s.tokens.count(who));
      auto r = fx.post("/v1/sessions/" + s.id + "/input", json{{"content", "yes"}}, s.tokens[who]);
      REQUIRE(r.status == 200);
    }
    auto all = fx.get("/v1/sessions/" + s.id + "/events", s.tokens["instructor"]).body["events"];
    CHECK(fx.get("/v1/sessions/" + s.id + "/state", s.tokens["instructor"]).body["status"]["state"] == "completed");
    for (const auto& [slot, token] : s.tokens) {
      auto mine = fx.get("/v1/sessions/" + s.id + "/events", token).body["events"];
      std::size_t expected = 0;
      for (const auto& e : all) {
        const auto& v = e["visibility"];
        expected += std::find(v.begin(), v.end(), slot) != v.end();
        CHECK(std::find(v.begin(), v.end(), "instructor") != v.end());
      }
      CHECK(mine.size() == expected);
      for (const auto& e : mine) {
        const auto& v = e["visibility"];
        CHECK(std::find(v.begin(), v.end(), slot) != v.end());
      }
    }
    auto log = read_log(EventLog::path_for(fx.dir, s.id));
    CHECK(log.events.size() == all.size());
    CHECK_NOTHROW(replay(log.events));
  }
}

TEST_CASE("status table") {
  CHECK(http_status_for("MalformedRequest") == 400);
  CHECK(http_status_for("Unauthorized") == 401);
  CHECK(http_status_for("Forbidden") == 403);
  CHECK(http_status_for("UnknownSession") == 404);
  CHECK(http_status_for("NotYourTurn") == 409);
  CHECK(http_status_for("WordLimitExceeded") == 422);
  CHECK(http_status_for("StorageFailure") == 500);
}
