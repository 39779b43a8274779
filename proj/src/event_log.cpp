#include "learnflow/event_log.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>

#include "learnflow/error.hpp"
#include "learnflow/flow_document.hpp"

namespace learnflow {

namespace {

using json = nlohmann::json;

[[noreturn]] void storage_failure(const std::filesystem::path& p, const std::string& what) {
  throw Error("StorageFailure", what + " '" + p.string() + "': " + std::strerror(errno));
}

json session_started_payload(const std::vector<Event>& records) {
  if (records.empty()) return nullptr;
  auto p = system_payload(records.front());
  if (!p.is_object() || p.value("type", "") != "session_started") return nullptr;
  return p;
}

[[noreturn]] void mismatch(std::size_t line, const std::string& what, json details = json::object()) {
  details["line"] = line;
  throw Error("ReplayMismatch", "record " + std::to_string(line) + ": " + what, std::move(details));
}

void expect_same(const Event& produced, const Event& rec, std::size_t line) {
  if (!produced.same_as(rec)) {
    mismatch(line, "recorded event differs from the replayed one",
             json{{"expected", json::parse(to_json(rec, "").dump())},
                  {"actual", json::parse(to_json(produced, "").dump())}});
  }
}

}  // namespace

EventLog::EventLog(const std::filesystem::path& data_dir, std::string session_id)
    : session_id_(std::move(session_id)), path_(path_for(data_dir, session_id_)) {
  std::error_code ec;
  std::filesystem::create_directories(path_.parent_path(), ec);
  if (ec) throw Error("StorageFailure", "cannot create '" + path_.parent_path().string() + "'");
  if (std::filesystem::exists(path_)) {
    auto existing = read_log(path_);
    if (!existing.events.empty()) last_seq_ = existing.events.back().seq;
  }
  fd_ = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd_ < 0) storage_failure(path_, "cannot open");
}

EventLog::~EventLog() {
  if (fd_ >= 0) ::close(fd_);
}

std::filesystem::path EventLog::path_for(const std::filesystem::path& data_dir,
                                         std::string_view session_id) {
  return data_dir / "sessions" / (std::string(session_id) + ".events.jsonl");
}

void EventLog::append(const Event& e) {
  if (e.seq != last_seq_ + 1) {
    throw Error("SequenceGap",
                "event seq " + std::to_string(e.seq) + " does not follow " + std::to_string(last_seq_),
                json{{"expected", last_seq_ + 1}, {"actual", e.seq}});
  }
  std::string line = to_json(e, session_id_).dump() + "\n";
  const char* p = line.data();
  std::size_t left = line.size();
  while (left > 0) {
    ssize_t n = ::write(fd_, p, left);
    if (n < 0) {
      if (errno == EINTR) continue;
      storage_failure(path_, "cannot write");
    }
    p += n;
    left -= static_cast<std::size_t>(n);
  }
  if (::fsync(fd_) != 0) storage_failure(path_, "cannot sync");
  last_seq_ = e.seq;
}

LogContents parse_log(std::istream& in) {
  LogContents out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      std::string sid;
      out.events.push_back(event_from_json(json::parse(line), &sid));
      if (out.session_id.empty()) out.session_id = sid;
    } catch (const std::exception& e) {
      throw Error("CorruptRecord", "line " + std::to_string(n) + ": " + e.what(), json{{"line", n}});
    }
  }
  return out;
}

LogContents read_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("NotFound", "cannot read log '" + path.string() + "'");
  return parse_log(in);
}

std::shared_ptr<const FlowDefinition> logged_flow(const std::vector<Event>& records) {
  auto p = session_started_payload(records);
  if (p.is_null() || !p.contains("flow")) return nullptr;
  return std::make_shared<const FlowDefinition>(parse_flow(p["flow"]));
}

SessionState replay(const std::vector<Event>& records,
                    std::shared_ptr<const FlowDefinition> flow, const EngineContext& ctx) {
  if (records.empty()) {
    if (!flow) throw Error("CorruptRecord", "empty log and no flow given", json{{"line", 0}});
    return start_session(flow, {}, "", ctx);
  }
  auto started = session_started_payload(records);
  if (started.is_null()) mismatch(1, "first record is not session_started");
  if (!flow) flow = logged_flow(records);

  std::map<std::string, Source> overrides;
  const json logged_overrides = started.value("overrides", json::object());
  for (const auto& [slot, v] : logged_overrides.items()) {
    auto src = v.is_string() ? source_from_string(v.get<std::string>()) : std::nullopt;
    if (!src) mismatch(1, "bad source override for '" + slot + "'");
    overrides[slot] = *src;
  }

  SessionState state;
  try {
    state = start_session(flow, overrides, started.value("session_id", ""), ctx);
  } catch (const Error& e) {
    mismatch(1, e.what());
  }
  expect_same(state.transcript.back(), records.front(), 1);
  state.transcript.back().timestamp = records.front().timestamp;

  std::size_t i = 1;
  while (i < records.size()) {
    const Event& rec = records[i];
    const std::size_t line = i + 1;
    std::vector<Event> produced;
    try {
      auto payload = system_payload(rec);
      const bool control = payload.is_object() && payload.value("type", "") == "control" &&
                           rec.sender != kEngineSender;
      if (control) {
        const auto action = payload.value("action", "");
        if (action == "advance") {
          produced = control_advance(state, ctx);
        } else if (action == "skip_step") {
          produced = control_skip(state, ctx);
        } else if (action == "override_response") {
          produced = control_override(state, payload.value("text", ""), ctx);
        } else if (action == "end") {
          produced = control_end(state, ctx);
        } else {
          mismatch(line, "unknown control action '" + action + "'");
        }
      } else if (state.status.state == SessionStatus::awaiting_input) {
        if (rec.kind != EventKind::user_input || rec.sender != state.status.who) {
          mismatch(line, "expected input from '" + state.status.who + "'");
        }
        produced = submit_input(state, rec.sender, rec.content, ctx);
      } else if (state.status.state == SessionStatus::awaiting_agent) {
        if (rec.kind != EventKind::agent_response || rec.sender != state.status.who) {
          mismatch(line, "expected a response from '" + state.status.who + "'");
        }
        produced = apply_agent_response(state, rec.sender, rec.content, ctx);
      } else if (state.status.terminal()) {
        mismatch(line, "record after the session finished");
      } else {
        auto act = next_action(state, ctx);
        if (auto* d = std::get_if<Deliver>(&act)) {
          produced.push_back(d->event);
        } else if (std::holds_alternative<Complete>(act)) {
          mismatch(line, "record after the flow completed");
        } else {
          continue;  // now awaiting; consume the record on the next pass
        }
      }
    } catch (const Error& e) {
      if (e.code() == "ReplayMismatch") throw;
      mismatch(line, e.what(), json{{"cause", e.code()}});
    }
    for (const auto& ev : produced) {
      if (i >= records.size()) mismatch(line, "replay produced more events than recorded");
      expect_same(ev, records[i], i + 1);
      // The transcript holds the same event; keep the recorded wall clock.
      for (auto it = state.transcript.rbegin(); it != state.transcript.rend(); ++it) {
        if (it->seq == ev.seq) {
          it->timestamp = records[i].timestamp;
          break;
        }
      }
      ++i;
    }
  }

  // Settle into the state the live session reached before its next event.
  if (state.status.state == SessionStatus::running) {
    SessionState probe = state;
    try {
      auto act = next_action(probe, ctx);
      if (!std::holds_alternative<Deliver>(act)) state = std::move(probe);
    } catch (const Error&) {
    }
  }
  return state;
}

std::vector<Event> project(const std::vector<Event>& records, const FlowDefinition& flow,
                           std::string_view viewer) {
  if (!flow.slot(viewer) && viewer != flow.instructor_id()) {
    throw Error("UnknownViewer", "'" + std::string(viewer) + "' is not in the roster",
                json{{"viewer", viewer}});
  }
  std::vector<Event> out;
  for (const auto& e : records) {
    if (e.visible_to(viewer)) out.push_back(e);
  }
  return out;
}

std::vector<Event> project(const std::vector<Event>& records, std::string_view viewer) {
  auto flow = logged_flow(records);
  if (!flow) throw Error("UnknownViewer", "log has no roster to check the viewer against");
  return project(records, *flow, viewer);
}

}  // namespace learnflow
