#pragma once

#include <ostream>
#include <vector>

#include "learnflow/event.hpp"
#include "learnflow/flow.hpp"

namespace learnflow {

/// Human-readable transcript writer. Prints an iteration header whenever the
/// events enter a repetition range or move to its next pass.
class TranscriptPrinter {
 public:
  TranscriptPrinter(std::ostream& out, const FlowDefinition* flow);
  void print(const Event& e);

 private:
  std::ostream& out_;
  const FlowDefinition* flow_;
  bool in_loop_ = false;
  int iteration_ = -1;
};

void print_transcript(std::ostream& out, const FlowDefinition* flow, const std::vector<Event>& events);

}  // namespace learnflow
