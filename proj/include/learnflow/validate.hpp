#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "learnflow/flow.hpp"

namespace learnflow {

enum class Severity { error, warning };

struct Diagnostic {
  Severity severity = Severity::error;
  std::optional<std::string> step_id;
  std::string code;
  std::string message;
};

struct ValidationReport {
  bool ok = true;
  std::vector<Diagnostic> diagnostics;

  bool has(std::string_view code) const;
  nlohmann::json to_json() const;
};

/// Static checks: structure (ids, ranges, targets, roster and agent
/// references) and a must-dataflow pass over every feasible path for
/// response pairing and placeholder binding.
ValidationReport validate_flow(const FlowDefinition& flow);

}  // namespace learnflow
