#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "learnflow/flow.hpp"
#include "learnflow/validate.hpp"

namespace learnflow {

/// Template placeholder names referenced anywhere in the flow, plus the keys
/// of its `templates` map.
std::set<std::string> template_placeholders(const FlowDefinition& flow);

struct Instantiation {
  FlowDefinition flow;
  /// UnusedBinding warnings.
  std::vector<Diagnostic> warnings;
};

/// Substitutes every template placeholder; runtime placeholders are left
/// alone. Throws Error("UnboundPlaceholder") naming the first missing binding,
/// or Error("InvalidBinding") when a repetition count does not resolve to a
/// positive integer.
Instantiation instantiate_template(const FlowDefinition& tmpl,
                                   const std::map<std::string, std::string>& bindings);

}  // namespace learnflow
