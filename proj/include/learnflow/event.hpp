#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace learnflow {

enum class EventKind { instruction, user_input, agent_response, system };

std::string_view to_string(EventKind k);
std::optional<EventKind> event_kind_from_string(std::string_view s);

/// Sender used for events the engine itself produces.
inline constexpr std::string_view kEngineSender = "engine";

/// One immutable transcript entry.
struct Event {
  std::uint64_t seq = 0;
  std::string step_id;
  int iteration = 0;
  EventKind kind = EventKind::system;
  std::string sender;
  std::vector<std::string> recipients;
  std::vector<std::string> visibility;
  std::string content;
  std::string timestamp;

  bool visible_to(std::string_view slot) const;
  /// Equality ignoring the wall-clock timestamp.
  bool same_as(const Event& other) const;
};

/// Log/wire form: keys seq, session_id, step_id, iteration, kind, sender,
/// recipients, visibility, content, ts in that order.
nlohmann::ordered_json to_json(const Event& e, std::string_view session_id);
/// Throws Error("CorruptRecord") on missing or mistyped fields.
Event event_from_json(const nlohmann::json& j, std::string* session_id = nullptr);

}  // namespace learnflow
