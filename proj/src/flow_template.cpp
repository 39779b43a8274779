#include "learnflow/flow_template.hpp"

#include <charconv>
#include <functional>

#include "learnflow/error.hpp"
#include "learnflow/text.hpp"

namespace learnflow {

namespace {

/// Visits every free-text field that may carry template placeholders.
void for_each_text(FlowDefinition& flow, const std::function<void(std::string&)>& fn) {
  fn(flow.title);
  for (auto& o : flow.objectives) fn(o);
  for (auto& a : flow.agents) fn(a.persona_prompt);
  for (auto& step : flow.steps) {
    std::visit(
        [&](auto& s) {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, AgentPromptStep> ||
                        std::is_same_v<T, InstructionLearnerStep> ||
                        std::is_same_v<T, InstructionAiStep>) {
            fn(s.text);
          } else if constexpr (std::is_same_v<T, RepetitionStep>) {
            fn(s.count_template);
          } else if constexpr (std::is_same_v<T, AlternativeStep>) {
            fn(s.prompt.text);
          }
        },
        step.body);
  }
}

std::vector<text::PlaceholderRef> template_refs(const std::string& s) {
  std::vector<text::PlaceholderRef> refs;
  try {
    refs = text::scan_placeholders(s);
  } catch (const Error&) {
    return {};  // reported by validate_flow
  }
  std::erase_if(refs, [](const auto& r) { return text::is_runtime_placeholder(r.name); });
  return refs;
}

}  // namespace

std::set<std::string> template_placeholders(const FlowDefinition& flow) {
  std::set<std::string> names;
  if (flow.templates) {
    for (const auto& [k, _] : *flow.templates) names.insert(k);
  }
  FlowDefinition copy = flow;
  for_each_text(copy, [&](std::string& s) {
    for (const auto& r : template_refs(s)) names.insert(r.name);
  });
  return names;
}

Instantiation instantiate_template(const FlowDefinition& tmpl,
                                   const std::map<std::string, std::string>& bindings) {
  const auto names = template_placeholders(tmpl);
  for (const auto& name : names) {
    if (!bindings.count(name)) {
      throw Error("UnboundPlaceholder", "template placeholder '" + name + "' has no binding",
                  nlohmann::json{{"name", name}});
    }
  }

  Instantiation result{tmpl, {}};
  for (const auto& [name, _] : bindings) {
    if (!names.count(name)) {
      result.warnings.push_back({Severity::warning, std::nullopt, "UnusedBinding",
                                 "binding '" + name + "' is not used by the template"});
    }
  }

  for_each_text(result.flow, [&](std::string& s) {
    auto refs = template_refs(s);
    for (auto it = refs.rbegin(); it != refs.rend(); ++it) {
      // Bound values are plain text and never become placeholders themselves.
      s.replace(it->begin, it->end - it->begin, text::sanitize(bindings.at(it->name)));
    }
  });

  for (auto& step : result.flow.steps) {
    auto* rep = std::get_if<RepetitionStep>(&step.body);
    if (!rep || rep->count_template.empty()) continue;
    const auto& v = rep->count_template;
    int count = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), count);
    if (ec != std::errc{} || ptr != v.data() + v.size() || count <= 0) {
      throw Error("InvalidBinding",
                  "repetition count of step '" + step.id + "' resolved to '" + v +
                      "', not a positive integer");
    }
    rep->count = count;
    rep->count_template.clear();
  }
  result.flow.templates.reset();
  return result;
}

}  // namespace learnflow
