#include "learnflow/event.hpp"

#include <algorithm>

#include "learnflow/error.hpp"

namespace learnflow {

std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::instruction: return "instruction";
    case EventKind::user_input: return "user_input";
    case EventKind::agent_response: return "agent_response";
    case EventKind::system: return "system";
  }
  return "system";
}

std::optional<EventKind> event_kind_from_string(std::string_view s) {
  if (s == "instruction") return EventKind::instruction;
  if (s == "user_input") return EventKind::user_input;
  if (s == "agent_response") return EventKind::agent_response;
  if (s == "system") return EventKind::system;
  return std::nullopt;
}

bool Event::visible_to(std::string_view slot) const {
  return std::find(visibility.begin(), visibility.end(), slot) != visibility.end();
}

bool Event::same_as(const Event& o) const {
  return seq == o.seq && step_id == o.step_id && iteration == o.iteration && kind == o.kind &&
         sender == o.sender && recipients == o.recipients && visibility == o.visibility &&
         content == o.content;
}

nlohmann::ordered_json to_json(const Event& e, std::string_view session_id) {
  nlohmann::ordered_json j;
  j["seq"] = e.seq;
  j["session_id"] = session_id;
  j["step_id"] = e.step_id;
  j["iteration"] = e.iteration;
  j["kind"] = to_string(e.kind);
  j["sender"] = e.sender;
  j["recipients"] = e.recipients;
  j["visibility"] = e.visibility;
  j["content"] = e.content;
  j["ts"] = e.timestamp;
  return j;
}

Event event_from_json(const nlohmann::json& j, std::string* session_id) {
  auto bad = [](const std::string& why) -> Error { return Error("CorruptRecord", why); };
  if (!j.is_object()) throw bad("record is not an object");
  static constexpr const char* kKeys[] = {"seq", "session_id", "step_id", "iteration", "kind",
                                          "sender", "recipients", "visibility", "content", "ts"};
  for (const char* k : kKeys) {
    if (!j.contains(k)) throw bad(std::string("missing key '") + k + "'");
  }
  try {
    Event e;
    if (!j["seq"].is_number_unsigned() && !j["seq"].is_number_integer()) throw bad("seq must be an integer");
    e.seq = j["seq"].get<std::uint64_t>();
    e.step_id = j["step_id"].get<std::string>();
    e.iteration = j["iteration"].get<int>();
    auto kind = event_kind_from_string(j["kind"].get<std::string>());
    if (!kind) throw bad("unknown event kind");
    e.kind = *kind;
    e.sender = j["sender"].get<std::string>();
    e.recipients = j["recipients"].get<std::vector<std::string>>();
    e.visibility = j["visibility"].get<std::vector<std::string>>();
    e.content = j["content"].get<std::string>();
    e.timestamp = j["ts"].get<std::string>();
    if (session_id) *session_id = j["session_id"].get<std::string>();
    return e;
  } catch (const nlohmann::json::exception& ex) {
    throw bad(std::string("mistyped field: ") + ex.what());
  }
}

}  // namespace learnflow
