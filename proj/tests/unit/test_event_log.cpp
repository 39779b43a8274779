#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "learnflow/error.hpp"
#include "learnflow/event_log.hpp"
#include "learnflow/exemplars.hpp"
#include "harness.hpp"
#include "scenarios.hpp"

using namespace learnflow;
using namespace learnflow::testing;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("learnflow-log-" + std::to_string(::getpid()) + "-" + std::to_string(counter()++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int n = 0;
    return n;
  }
};

std::vector<Event> prefix(const std::vector<Event>& v, std::size_t k) { return {v.begin(), v.begin() + static_cast<long>(k)}; }

std::string code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return "";
}

}  // namespace

TEST_CASE("append enforces consecutive seq and persists JSON lines") {
  TempDir dir;
  auto t = run_exemplar("quiz-drill");
  {
    EventLog log(dir.path, "quiz-1");
    CHECK(log.path() == dir.path / "sessions" / "quiz-1.events.jsonl");
    CHECK(log.last_seq() == 0);
    Event skipped = t.state.transcript[1];
    CHECK(code_of([&] { log.append(skipped); }) == "SequenceGap");
    for (const auto& e : t.state.transcript) log.append(e);
    CHECK(log.last_seq() == t.state.transcript.size());
    CHECK(code_of([&] { log.append(t.state.transcript[3]); }) == "SequenceGap");
  }
  auto back = read_log(EventLog::path_for(dir.path, "quiz-1"));
  CHECK(back.session_id == "quiz-1");
  REQUIRE(back.events.size() == t.state.transcript.size());
  CHECK(back.events.front().seq == 1);
  for (std::size_t i = 0; i < back.events.size(); ++i) CHECK(back.events[i].same_as(t.state.transcript[i]));

  // Reopening continues after the last stored seq.
  EventLog again(dir.path, "quiz-1");
  CHECK(again.last_seq() == t.state.transcript.size());
}

TEST_CASE("log lines keep the documented key order") {
  auto t = run_exemplar("quiz-drill");
  std::istringstream in(to_jsonl(t.state.transcript, "s"));
  std::string first;
  std::getline(in, first);
  const std::vector<std::string> keys{"seq", "session_id", "step_id", "iteration", "kind", "sender",
                                      "recipients", "visibility", "content", "ts"};
  std::size_t at = 0;
  for (const auto& k : keys) {
    auto p = first.find("\"" + k + "\":");
    REQUIRE(p != std::string::npos);
    CHECK(p >= at);
    at = p;
  }
}

TEST_CASE("ten graded feedback responses are logged at step 7 and delivered at step 8") {
  auto t = run_exemplar("quiz-drill");
  std::istringstream in(to_jsonl(t.state.transcript, "s"));
  auto log = parse_log(in);
  auto at7 = events_at(log.events, "7");
  REQUIRE(at7.size() == 10);
  for (const auto& e : at7) {
    CHECK(e.kind == EventKind::agent_response);
    CHECK(e.visibility == std::vector<std::string>{"instructor"});
  }
  CHECK(events_at(log.events, "5").size() == 10);
}

TEST_CASE("corrupt records report their line") {
  auto t = run_exemplar("debate");
  auto text = to_jsonl(t.state.transcript, "s");
  std::vector<std::string> lines;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  for (std::size_t bad : {std::size_t{0}, std::size_t{4}, lines.size() - 1}) {
    auto copy = lines;
    copy[bad] = copy[bad].substr(0, copy[bad].size() / 2);
    std::string joined;
    for (const auto& l : copy) joined += l + "\n";
    std::istringstream broken(joined);
    try {
      parse_log(broken);
      FAIL("expected CorruptRecord");
    } catch (const Error& e) {
      CHECK(e.code() == "CorruptRecord");
      CHECK(e.details()["line"] == bad + 1);
    }
  }
  std::istringstream missing(R"({"seq": 1, "session_id": "s"})" "\n");
  CHECK(code_of([&] { parse_log(missing); }) == "CorruptRecord");
}

TEST_CASE("full replay of every exemplar equals the live state") {
  for (const auto& id : exemplar_ids()) {
    CAPTURE(id);
    auto t = run_exemplar(id);
    std::istringstream in(to_jsonl(t.state.transcript, id));
    auto log = parse_log(in);
    auto back = replay(log.events, nullptr, fixed_context());
    CHECK(equivalent(back, t.state));
    CHECK(back.status.state == SessionStatus::completed);
  }
}

TEST_CASE("truncated replay restores the session mid-loop") {
  auto t = run_exemplar("quiz-drill");
  const auto& ev = t.state.transcript;
  auto at5 = events_at(ev, "5");
  const Event* fifth = nullptr;
  for (const auto& e : at5) {
    if (e.iteration == 4 && e.kind == EventKind::agent_response && e.visibility.size() > 1) fifth = &e;
  }
  REQUIRE(fifth);
  const std::size_t k = fifth->seq;
  auto back = replay(prefix(ev, k), nullptr, fixed_context());
  CHECK(equivalent(back, t.snapshots.at(k)));
  REQUIRE(back.loop_frames.size() == 1);
  CHECK(back.loop_frames[0].iteration == 4);
  CHECK(back.bindings.at("loop_index") == "5");
  CHECK(back.status == make_status(SessionStatus::awaiting_input, "learner-1", "6"));

  // The restored session carries on to the same end.
  StubProvider p(quiz_script({"INCORRECT", "CORRECT", "CORRECT", "INCORRECT", "CORRECT", "CORRECT", "CORRECT",
                              "INCORRECT", "CORRECT", "CORRECT"}));
  for (int i = 0; i < 5; ++i) p.generate(PromptBundle{"", {{Origin::instructor, "instructor", "Generate a multiple-choice question"}}, {}}, "x");
  for (int i = 0; i < 4; ++i) p.generate(PromptBundle{"", {{Origin::instructor, "instructor", "Student answered"}}, {}}, "x");
  auto answers = quiz_answers();
  auto rest = std::vector<std::string>(answers.begin() + 4, answers.end());
  auto inputs = inputs_from({{"learner-1", rest}});
  for (;;) {
    if (back.status.state == SessionStatus::awaiting_input) {
      auto a = std::get<AwaitInput>(*pending_action(back));
      submit_input(back, a.slot_id, *inputs(a), fixed_context());
    } else if (back.status.state == SessionStatus::awaiting_agent) {
      auto inv = std::get<InvokeAgent>(*pending_action(back));
      apply_agent_response(back, inv.agent_id, p.generate(inv.prompt_bundle, inv.invocation_id), fixed_context());
    } else if (std::holds_alternative<Complete>(next_action(back, fixed_context()))) {
      break;
    }
  }
  CHECK(equivalent(back, t.state));
}

TEST_CASE("every prefix of every exemplar replays to the live snapshot") {
  for (const auto& id : exemplar_ids()) {
    CAPTURE(id);
    auto t = run_exemplar(id);
    auto failures = check_replay(t, true);
    CHECK(failures.empty());
    for (const auto& f : failures) MESSAGE(f);
  }
}

TEST_CASE("replay rejects divergent logs") {
  auto t = run_exemplar("quiz-drill");
  auto ev = t.state.transcript;

  auto altered = ev;
  altered[1].content = "You are a chemistry professor.";
  try {
    replay(altered, nullptr, fixed_context());
    FAIL("expected ReplayMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == "ReplayMismatch");
    CHECK(e.details()["line"] == 2);
  }

  auto wrong_sender = ev;
  for (auto& e : wrong_sender) {
    if (e.kind == EventKind::user_input) {
      e.sender = "instructor";
      break;
    }
  }
  CHECK(code_of([&] { replay(wrong_sender, nullptr, fixed_context()); }) == "ReplayMismatch");

  auto headless = prefix(ev, ev.size());
  headless.erase(headless.begin());
  CHECK(code_of([&] { replay(headless, nullptr, fixed_context()); }) == "ReplayMismatch");

  auto extra = ev;
  extra.push_back(ev.back());
  extra.back().seq = ev.size() + 1;
  CHECK(code_of([&] { replay(extra, nullptr, fixed_context()); }) == "ReplayMismatch");
}

TEST_CASE("empty record list") {
  CHECK(code_of([] { replay({}); }) == "CorruptRecord");
  auto s = replay({}, shared(exemplar_flow("debate")), fixed_context());
  CHECK(s.transcript.size() == 1);
  CHECK(s.cursor == 0);
}

TEST_CASE("projections") {
  auto t = run_exemplar("debate");
  const auto& ev = t.state.transcript;
  CHECK(project(ev, "instructor").size() == ev.size());
  auto learner = project(ev, "learner-1");
  CHECK(learner.size() < ev.size());
  for (const auto& e : learner) {
    CHECK(e.visible_to("learner-1"));
    CHECK(e.step_id != "4");  // the topic suggestion is for the instructor
    CHECK(e.step_id != "3");
    CHECK(e.kind != EventKind::system);
  }
  CHECK(events_at(learner, "8").size() == 5);
  CHECK(events_at(learner, "13").size() == 1);
  CHECK(code_of([&] { project(ev, "learner-2"); }) == "UnknownViewer");
  CHECK(code_of([&] { project(prefix(ev, 0), "instructor"); }) == "UnknownViewer");
  CHECK(project(ev, exemplar_flow("debate"), "learner-1").size() == learner.size());
}

TEST_CASE("projection of the 3v3 debate hides other debaters' hidden events") {
  auto t = run_exemplar("team-debate-3v3");
  for (const std::string viewer : {"a1", "a2", "a3", "b1", "b2", "b3"}) {
    auto mine = project(t.state.transcript, viewer);
    for (const auto& e : mine) CHECK(e.visible_to(viewer));
    CHECK(events_at(mine, "25").empty());
  }
}
