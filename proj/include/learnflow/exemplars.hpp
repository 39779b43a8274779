#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "learnflow/flow.hpp"

namespace learnflow {

/// Bundled flows: quiz-drill, debate, counseling-simulation,
/// collaborative-research, team-debate-3v3.
const std::vector<std::string>& exemplar_ids();
/// Bundled strategy templates: drill, debate, collaborate.
const std::vector<std::string>& template_ids();

/// Canonical document text (pretty JSON). Error("NotFound") for unknown ids.
std::string exemplar_document(std::string_view id);
FlowDefinition exemplar_flow(std::string_view id);
std::string template_document(std::string_view id);
FlowDefinition template_flow(std::string_view id);

}  // namespace learnflow
