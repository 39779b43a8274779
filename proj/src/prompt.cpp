#include "learnflow/prompt.hpp"

#include <algorithm>
#include <deque>

#include "learnflow/error.hpp"
#include "learnflow/text.hpp"

namespace learnflow {

std::string_view to_string(Origin o) {
  switch (o) {
    case Origin::instructor: return "instructor";
    case Origin::learner: return "learner";
    case Origin::agent: return "agent";
  }
  return "learner";
}

std::size_t PromptBundle::word_count() const {
  std::size_t n = text::word_count(system_text);
  for (const auto& m : messages) n += text::word_count(m.text);
  return n;
}

nlohmann::json to_json(const PromptBundle& b) {
  nlohmann::json j;
  j["system_text"] = b.system_text;
  j["messages"] = nlohmann::json::array();
  for (const auto& m : b.messages) {
    j["messages"].push_back({{"origin", to_string(m.origin)}, {"sender", m.sender}, {"text", m.text}});
  }
  j["params"] = b.params;
  return j;
}

PromptBundle prompt_bundle_from_json(const nlohmann::json& j) {
  PromptBundle b;
  b.system_text = j.at("system_text").get<std::string>();
  for (const auto& m : j.at("messages")) {
    const auto o = m.at("origin").get<std::string>();
    Origin origin = o == "instructor" ? Origin::instructor : o == "agent" ? Origin::agent : Origin::learner;
    b.messages.push_back({origin, m.at("sender").get<std::string>(), m.at("text").get<std::string>()});
  }
  b.params = j.at("params");
  return b;
}

PromptBundle assemble_prompt(const AgentConfig& agent, const std::vector<Event>& history,
                             const PromptMessage& instruction,
                             const std::vector<std::string>& retrieved,
                             std::string_view instructor_id) {
  const std::size_t budget = static_cast<std::size_t>(agent.context_budget_words);
  const std::size_t fixed = text::word_count(agent.persona_prompt) + text::word_count(instruction.text);
  if (fixed > budget) {
    throw Error("BudgetTooSmall",
                "persona and instruction need " + std::to_string(fixed) + " words, budget is " +
                    std::to_string(budget),
                nlohmann::json{{"needed", fixed}, {"budget", budget}});
  }

  PromptBundle bundle;
  bundle.params = agent.params;

  std::vector<std::string> parts;
  if (!agent.persona_prompt.empty()) parts.push_back(agent.persona_prompt);
  std::size_t used = fixed;
  for (const auto& chunk : retrieved) {
    const auto w = text::word_count(chunk);
    if (used + w > budget) break;
    parts.push_back(chunk);
    used += w;
  }
  bundle.system_text = text::join(parts, "\n");

  std::deque<PromptMessage> kept;
  for (const auto& e : history) {
    const bool mine = e.sender == agent.agent_id ||
                      std::find(e.recipients.begin(), e.recipients.end(), agent.agent_id) !=
                          e.recipients.end();
    if (!mine) continue;
    Origin origin = e.sender == agent.agent_id ? Origin::agent
                    : e.sender == instructor_id ? Origin::instructor
                                                : Origin::learner;
    kept.push_back({origin, e.sender, e.content});
  }
  std::size_t history_words = 0;
  for (const auto& m : kept) history_words += text::word_count(m.text);
  while (!kept.empty() && used + history_words > budget) {
    history_words -= text::word_count(kept.front().text);
    kept.pop_front();
  }
  bundle.messages.assign(kept.begin(), kept.end());
  bundle.messages.push_back(instruction);
  return bundle;
}

}  // namespace learnflow
