#include "learnflow/flow.hpp"

namespace learnflow {

std::string_view kind_name(const StepBody& body) {
  struct Visitor {
    std::string_view operator()(const AgentPromptStep&) const { return "agent_prompt"; }
    std::string_view operator()(const ReferenceMaterialsStep&) const { return "reference_materials"; }
    std::string_view operator()(const InstructionLearnerStep&) const { return "instruction_learner"; }
    std::string_view operator()(const InstructionAiStep&) const { return "instruction_ai"; }
    std::string_view operator()(const UserInputStep&) const { return "user_input"; }
    std::string_view operator()(const AiResponseStep&) const { return "ai_response"; }
    std::string_view operator()(const RepetitionStep&) const { return "repetition"; }
    std::string_view operator()(const BranchStep&) const { return "branch"; }
    std::string_view operator()(const AlternativeStep&) const { return "alternative"; }
  };
  return std::visit(Visitor{}, body);
}

const ParticipantSlot* FlowDefinition::slot(std::string_view id) const {
  for (const auto& s : roster) {
    if (s.slot_id == id) return &s;
  }
  return nullptr;
}

const AgentConfig* FlowDefinition::agent(std::string_view id) const {
  for (const auto& a : agents) {
    if (a.agent_id == id) return &a;
  }
  return nullptr;
}

std::optional<std::size_t> FlowDefinition::step_index(std::string_view id) const {
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (steps[i].id == id) return i;
    if (const auto* alt = steps[i].as<AlternativeStep>()) {
      if (alt->human_id == id || alt->prompt_id == id || alt->reply_id == id) {
        return i;
      }
    }
  }
  return std::nullopt;
}

std::string FlowDefinition::instructor_id() const {
  for (const auto& s : roster) {
    if (s.role == Role::instructor) return s.slot_id;
  }
  return "instructor";
}

std::string_view to_string(Role r) {
  switch (r) {
    case Role::instructor: return "instructor";
    case Role::learner: return "learner";
    case Role::ai_agent: return "ai-agent";
  }
  return "learner";
}

std::string_view to_string(Source s) { return s == Source::ai ? "ai" : "human"; }

std::optional<Role> role_from_string(std::string_view s) {
  if (s == "instructor") return Role::instructor;
  if (s == "learner") return Role::learner;
  if (s == "ai-agent") return Role::ai_agent;
  return std::nullopt;
}

std::optional<Source> source_from_string(std::string_view s) {
  if (s == "human") return Source::human;
  if (s == "ai") return Source::ai;
  return std::nullopt;
}

}  // namespace learnflow
