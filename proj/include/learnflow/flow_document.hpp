#pragma once

#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "learnflow/flow.hpp"

namespace learnflow {

/// Parses a flow document (JSON). Throws Error with one of MalformedDocument,
/// UnknownStepKind, DuplicateStepId or MissingField. Placeholders are kept
/// verbatim.
FlowDefinition parse_flow(std::string_view document);
FlowDefinition parse_flow(const nlohmann::json& document);

/// Document form with keys in schema order.
nlohmann::ordered_json to_document(const FlowDefinition& flow);
std::string serialize_flow(const FlowDefinition& flow, int indent = 2);

}  // namespace learnflow
