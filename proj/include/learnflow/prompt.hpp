#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "learnflow/event.hpp"
#include "learnflow/flow.hpp"

namespace learnflow {

enum class Origin { instructor, learner, agent };
std::string_view to_string(Origin o);

struct PromptMessage {
  Origin origin = Origin::instructor;
  /// Slot or agent id of the author; used for wire labels.
  std::string sender;
  std::string text;

  bool operator==(const PromptMessage&) const = default;
};

/// Provider-ready prompt: persona and material excerpts, then the
/// conversation, ending with the instruction.
struct PromptBundle {
  std::string system_text;
  std::vector<PromptMessage> messages;
  nlohmann::json params = nlohmann::json::object();

  std::size_t word_count() const;
  bool operator==(const PromptBundle&) const = default;
};

nlohmann::json to_json(const PromptBundle& b);
PromptBundle prompt_bundle_from_json(const nlohmann::json& j);

/// Builds the prompt for `agent`. History events where the agent is sender or
/// recipient become messages (oldest dropped first to fit
/// `agent.context_budget_words`); material chunks are appended to the persona,
/// lowest ranked dropped first if they alone break the budget. Throws
/// Error("BudgetTooSmall") when persona plus instruction exceed the budget.
/// `instructor_id` decides which senders map to Origin::instructor.
PromptBundle assemble_prompt(const AgentConfig& agent, const std::vector<Event>& history,
                             const PromptMessage& instruction,
                             const std::vector<std::string>& retrieved,
                             std::string_view instructor_id = "instructor");

}  // namespace learnflow
