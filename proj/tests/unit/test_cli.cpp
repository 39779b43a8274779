#include <doctest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "learnflow/event_log.hpp"
#include "learnflow/exemplars.hpp"
#include "learnflow/flow_document.hpp"
#include "harness.hpp"
#include "scenarios.hpp"

using namespace learnflow;
using namespace learnflow::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int rc = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string quote(const std::string& s) { return "'" + s + "'"; }

struct Workspace {
  fs::path dir;
  Workspace() {
    static int n = 0;
    dir = fs::temp_directory_path() / ("learnflow-cli-" + std::to_string(::getpid()) + "-" + std::to_string(n++));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Workspace() { fs::remove_all(dir); }

  Outcome cli(const std::string& args) const {
    const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
    const std::string cmd = quote(LEARNFLOW_CLI) + " " + args + " >" + quote(out.string()) + " 2>" +
                            quote(err.string()) + " </dev/null";
    const int status = std::system(cmd.c_str());
    Outcome o;
    o.rc = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    o.out = slurp(out);
    o.err = slurp(err);
    return o;
  }

  fs::path write(const std::string& name, const std::string& text) const {
    auto p = dir / name;
    fs::create_directories(p.parent_path());
    std::ofstream(p, std::ios::binary) << text;
    return p;
  }

  fs::path data() const { return dir / "data"; }
};

const fs::path kFixtures = LEARNFLOW_FIXTURES;

std::string run_args(const std::string& id, const Workspace& ws) {
  const auto f = kFixtures / id;
  std::string a = "run " + id + " --script " + quote((f / "script.json").string()) + " --inputs " +
                  quote((f / "inputs.json").string()) + " --data-dir " + quote(ws.data().string());
  if (id == "team-debate-3v3") a += " --set-source b1=ai --set-source b2=ai --set-source b3=ai";
  return a;
}

}  // namespace

TEST_CASE("validate exit codes") {
  Workspace ws;
  auto ok = ws.cli("validate quiz-drill");
  CHECK(ok.rc == 0);
  CHECK(ok.out.find("ok") != std::string::npos);

  auto flow = exemplar_flow("quiz-drill");
  for (auto& s : flow.steps) {
    if (auto* r = std::get_if<RepetitionStep>(&s.body)) std::swap(r->first, r->last);
  }
  auto reversed = ws.cli("validate " + quote(ws.write("reversed.json", serialize_flow(flow)).string()));
  CHECK(reversed.rc == 1);
  CHECK(reversed.out.find("ReversedRange") != std::string::npos);

  CHECK(ws.cli("validate " + quote((ws.dir / "missing.json").string())).rc == 2);
  CHECK(ws.cli("validate " + quote(ws.write("broken.json", "{\"id\": ").string())).rc == 2);
  CHECK(ws.cli("").rc == 2);
  CHECK(ws.cli("frobnicate").rc == 2);
}

TEST_CASE("golden transcripts for the five exemplars") {
  for (const auto& id : exemplar_ids()) {
    CAPTURE(id);
    Workspace ws;
    auto r = ws.cli(run_args(id, ws));
    REQUIRE(r.rc == 0);
    CHECK(r.out == slurp(kFixtures / id / "transcript.txt"));
    CHECK(r.err.find("completed") != std::string::npos);

    // The CLI log matches the library run on the same scripts.
    auto log = read_log(EventLog::path_for(ws.data(), id));
    auto lib = run_exemplar(id);
    REQUIRE(log.events.size() == lib.state.transcript.size());
    for (std::size_t i = 0; i < log.events.size(); ++i) CHECK(log.events[i].same_as(lib.state.transcript[i]));

    // Byte-reproducible apart from timestamps.
    auto strip = [](const std::vector<Event>& v) {
      std::string s;
      for (auto e : v) {
        e.timestamp.clear();
        s += to_json(e, "x").dump() + "\n";
      }
      return s;
    };
    Workspace again;
    REQUIRE(again.cli(run_args(id, again)).rc == 0);
    CHECK(strip(read_log(EventLog::path_for(again.data(), id)).events) == strip(log.events));
  }
}

TEST_CASE("quiz with all answers wrong runs ten iterations then the final feedback") {
  Workspace ws;
  nlohmann::json script = nlohmann::json::array();
  for (const auto& e : quiz_script().entries) {
    nlohmann::json j{{"response", e.response}};
    if (e.match) j["match"] = *e.match;
    script.push_back(j);
  }
  nlohmann::json inputs = nlohmann::json::array();
  for (int i = 0; i < 10; ++i) inputs.push_back({{"slot", "learner-1"}, {"content", "d) Frost"}});
  auto r = ws.cli("run quiz-drill --quiet --script " + quote(ws.write("s.json", script.dump()).string()) +
                  " --inputs " + quote(ws.write("i.json", inputs.dump()).string()) + " --data-dir " +
                  quote(ws.data().string()));
  REQUIRE(r.rc == 0);
  CHECK(r.out.empty());
  auto ev = read_log(EventLog::path_for(ws.data(), "quiz-drill")).events;
  CHECK(events_at(ev, "6").size() == 10);
  CHECK(events_at(ev, "6").back().iteration == 9);
  CHECK(ev.back().step_id == "11");
  CHECK(replay(ev).tallies.at("learner-1") == Tally{0, 10});

  StubProvider p(quiz_script());
  auto lib = run_scripted(shared(exemplar_flow("quiz-drill")), {}, p,
                          inputs_from({{"learner-1", std::vector<std::string>(10, "d) Frost")}}), fixed_context(),
                          "quiz-drill");
  REQUIRE(ev.size() == lib.state.transcript.size());
  for (std::size_t i = 0; i < ev.size(); ++i) CHECK(ev[i].same_as(lib.state.transcript[i]));
}

TEST_CASE("starvation and input order") {
  Workspace ws;
  const auto script = (kFixtures / "quiz-drill" / "script.json").string();
  auto starved = ws.cli("run quiz-drill --quiet --script " + quote(script) + " --inputs " +
                        quote(ws.write("empty.json", "[]").string()) + " --data-dir " + quote(ws.data().string()));
  CHECK(starved.rc == 3);
  CHECK(starved.err.find("AwaitInput") != std::string::npos);
  CHECK(starved.err.find("learner-1") != std::string::npos);
  // What ran before the starvation is a valid log.
  CHECK_NOTHROW(replay(read_log(EventLog::path_for(ws.data(), "quiz-drill")).events));

  auto wrong = ws.cli("run quiz-drill --quiet --script " + quote(script) + " --inputs " +
                      quote(ws.write("wrong.json", R"([{"slot": "instructor", "content": "hi"}])").string()) +
                      " --data-dir " + quote(ws.data().string()));
  CHECK(wrong.rc == 3);
  CHECK(wrong.err.find("InputOrder") != std::string::npos);

  auto exhausted = ws.cli("run quiz-drill --quiet --script " + quote(ws.write("short.json", "[]").string()) +
                          " --data-dir " + quote(ws.data().string()));
  CHECK(exhausted.rc == 3);
  CHECK(exhausted.err.find("ScriptExhausted") != std::string::npos);

  CHECK(ws.cli("run quiz-drill --data-dir " + quote(ws.data().string())).rc == 2);  // stub needs a script
  CHECK(ws.cli("run quiz-drill --provider http --data-dir " + quote(ws.data().string())).rc == 2);
  CHECK(ws.cli("run quiz-drill --script " + quote(script) + " --set-source instructor=ai").rc == 1);
}

TEST_CASE("http provider failure exits 3") {
  Workspace ws;
  auto r = ws.cli("run quiz-drill --quiet --provider http --base-url http://127.0.0.1:9/v1 --model m --data-dir " +
                  quote(ws.data().string()));
  CHECK(r.rc == 3);
  CHECK(r.err.find("Timeout") != std::string::npos);
}

TEST_CASE("counseling with no, no, yes ends after three iterations") {
  Workspace ws;
  REQUIRE(ws.cli(run_args("counseling-simulation", ws)).rc == 0);
  auto ev = read_log(EventLog::path_for(ws.data(), "counseling-simulation")).events;
  CHECK(events_at(ev, "7").size() == 3);
  CHECK(events_at(ev, "7").back().iteration == 2);
  CHECK(events_at(ev, "10").size() == 1);
}

TEST_CASE("replay: full, truncated and corrupted logs") {
  Workspace ws;
  REQUIRE(ws.cli(run_args("quiz-drill", ws)).rc == 0);
  const auto log = EventLog::path_for(ws.data(), "quiz-drill");

  auto full = ws.cli("replay " + quote(log.string()));
  CHECK(full.rc == 0);
  CHECK(full.out == slurp(kFixtures / "quiz-drill" / "transcript.txt") + "status: completed\n");
  for (int i = 1; i <= 10; ++i) CHECK(full.out.find("--- iteration " + std::to_string(i) + " ---") != std::string::npos);

  auto learner = ws.cli("replay " + quote(log.string()) + " --as learner-1");
  CHECK(learner.rc == 0);
  CHECK(learner.out.find("hidden from learners") == std::string::npos);
  CHECK(learner.out.find("Give the learner final feedback") == std::string::npos);
  CHECK(ws.cli("replay " + quote(log.string()) + " --as learner-9").rc == 1);

  std::vector<std::string> lines;
  {
    std::istringstream in(slurp(log));
    for (std::string l; std::getline(in, l);) lines.push_back(l);
  }
  std::string head;
  for (std::size_t i = 0; i < 30; ++i) head += lines[i] + "\n";
  auto truncated = ws.cli("replay " + quote(ws.write("head.jsonl", head).string()));
  CHECK(truncated.rc == 0);
  CHECK(truncated.out.find("[30]") != std::string::npos);
  CHECK(truncated.out.find("[31]") == std::string::npos);
  CHECK(truncated.out.find("status: completed") == std::string::npos);

  auto corrupt = lines;
  corrupt[12] = corrupt[12].substr(0, 40);
  std::string bad;
  for (const auto& l : corrupt) bad += l + "\n";
  auto broken = ws.cli("replay " + quote(ws.write("bad.jsonl", bad).string()));
  CHECK(broken.rc == 1);
  CHECK(broken.err.find("CorruptRecord") != std::string::npos);
  CHECK(broken.err.find("line 13") != std::string::npos);

  auto tampered = lines;
  // Instructions are derived from the flow, so editing one must not replay.
  auto j = nlohmann::json::parse(tampered[3]);
  j["content"] = "edited";
  tampered[3] = j.dump();
  std::string edited;
  for (const auto& l : tampered) edited += l + "\n";
  auto mismatch = ws.cli("replay " + quote(ws.write("edited.jsonl", edited).string()));
  CHECK(mismatch.rc == 1);
  CHECK(mismatch.err.find("ReplayMismatch") != std::string::npos);

  CHECK(ws.cli("replay " + quote((ws.dir / "none.jsonl").string())).rc == 2);
}

TEST_CASE("examples export") {
  Workspace ws;
  const auto out = ws.dir / "flows";
  auto r = ws.cli("examples " + quote(out.string()));
  REQUIRE(r.rc == 0);
  for (const auto& id : exemplar_ids()) {
    const auto p = out / (id + ".json");
    REQUIRE(fs::exists(p));
    CHECK(ws.cli("validate " + quote(p.string())).rc == 0);
    CHECK(parse_flow(std::string_view(slurp(p))) == exemplar_flow(id));
  }
  std::ofstream(out / "quiz-drill.json") << "scribble";
  CHECK(ws.cli("examples " + quote(out.string())).rc == 2);
  CHECK(slurp(out / "quiz-drill.json") == "scribble");
  CHECK(ws.cli("examples " + quote(out.string()) + " --force --with-templates").rc == 0);
  CHECK(parse_flow(std::string_view(slurp(out / "quiz-drill.json"))) == exemplar_flow("quiz-drill"));
  CHECK(fs::exists(out / "templates" / "drill.json"));
  CHECK(ws.cli("examples " + quote(ws.write("file.txt", "x").string())).rc == 2);
}

TEST_CASE("instantiate a template") {
  Workspace ws;
  const auto out = ws.dir / "bio.json";
  auto r = ws.cli("instantiate drill --bind field=biology --bind topic='ecological population control' "
                  "--bind n_questions=10 -o " + quote(out.string()));
  CHECK(r.rc == 0);
  CHECK(ws.cli("validate " + quote(out.string())).rc == 0);
  CHECK(slurp(out).find("{{topic}}") == std::string::npos);
  auto missing = ws.cli("instantiate drill");
  CHECK(missing.rc == 1);
  CHECK(missing.err.find("UnboundPlaceholder") != std::string::npos);
  CHECK(ws.cli("instantiate nothing-here").rc == 2);
}
