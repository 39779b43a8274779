#pragma once

#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace learnflow {

enum class Role { instructor, learner, ai_agent };
enum class Source { human, ai };

struct ParticipantSlot {
  std::string slot_id;
  Role role = Role::learner;
  std::optional<std::string> team;
  /// Absent means "not toggleable"; alternatives require it.
  std::optional<Source> source;

  bool operator==(const ParticipantSlot&) const = default;
};

inline constexpr int kDefaultContextBudgetWords = 4000;

struct AgentConfig {
  std::string agent_id;
  std::string persona_prompt;
  std::vector<std::string> material_refs;
  nlohmann::json params = nlohmann::json::object();
  int context_budget_words = kDefaultContextBudgetWords;

  bool operator==(const AgentConfig&) const = default;
};

// Step kinds. Field names follow the flow-document keys.

struct AgentPromptStep {
  std::string agent;
  std::string text;
  bool operator==(const AgentPromptStep&) const = default;
};

struct ReferenceMaterialsStep {
  std::string agent;
  std::vector<std::string> materials;
  std::vector<std::string> audience;
  bool operator==(const ReferenceMaterialsStep&) const = default;
};

struct InstructionLearnerStep {
  std::vector<std::string> to;
  std::string text;
  bool operator==(const InstructionLearnerStep&) const = default;
};

struct InstructionAiStep {
  std::string agent;
  std::string text;
  bool grade = false;
  bool operator==(const InstructionAiStep&) const = default;
};

struct UserInputStep {
  std::string from;
  std::vector<std::string> to;
  std::optional<int> max_words;
  bool operator==(const UserInputStep&) const = default;
};

struct Visibility {
  bool all = false;
  std::vector<std::string> slots;
  bool operator==(const Visibility&) const = default;
};

struct AiResponseStep {
  std::string agent;
  Visibility visibility;
  bool operator==(const AiResponseStep&) const = default;
};

struct MasteryRule {
  int consecutive_correct = 1;
  bool operator==(const MasteryRule&) const = default;
};

struct RepetitionStep {
  std::string first;
  std::string last;
  int count = 1;
  /// Set instead of `count` while the count is still a template placeholder
  /// such as "{{n_questions}}".
  std::string count_template;
  std::optional<MasteryRule> exit;
  bool operator==(const RepetitionStep&) const = default;
};

/// Only `on: last_agent_response` exists, so the condition source is implicit.
struct BranchStep {
  std::string contains_token;
  std::string target;
  bool operator==(const BranchStep&) const = default;
};

struct AlternativeStep {
  std::string slot;
  std::string human_id;
  UserInputStep human;
  std::string prompt_id;
  InstructionAiStep prompt;
  std::string reply_id;
  AiResponseStep reply;
  bool operator==(const AlternativeStep&) const = default;
};

using StepBody =
    std::variant<AgentPromptStep, ReferenceMaterialsStep, InstructionLearnerStep,
                 InstructionAiStep, UserInputStep, AiResponseStep,
                 RepetitionStep, BranchStep, AlternativeStep>;

struct Step {
  std::string id;
  StepBody body;

  template <class T>
  const T* as() const {
    return std::get_if<T>(&body);
  }
  bool operator==(const Step&) const = default;
};

/// Name used in documents for the step's kind, e.g. "instruction_ai".
std::string_view kind_name(const StepBody& body);

struct FlowDefinition {
  std::string id;
  std::string title;
  std::vector<std::string> objectives;
  std::vector<ParticipantSlot> roster;
  std::vector<AgentConfig> agents;
  std::vector<Step> steps;
  /// Present only on template flows: placeholder name -> description.
  std::optional<std::map<std::string, std::string>> templates;

  const ParticipantSlot* slot(std::string_view id) const;
  const AgentConfig* agent(std::string_view id) const;
  /// Index into `steps`, or nullopt. Alternative variant ids resolve to the
  /// wrapping alternative step.
  std::optional<std::size_t> step_index(std::string_view id) const;
  /// The single instructor slot id ("instructor" when the roster has none).
  std::string instructor_id() const;

  bool operator==(const FlowDefinition&) const = default;
};

std::string_view to_string(Role r);
std::string_view to_string(Source s);
std::optional<Role> role_from_string(std::string_view s);
std::optional<Source> source_from_string(std::string_view s);

}  // namespace learnflow
