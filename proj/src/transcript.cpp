#include "learnflow/transcript.hpp"

#include "learnflow/session.hpp"
#include "learnflow/text.hpp"

namespace learnflow {

namespace {

bool inside_range(const FlowDefinition& flow, const std::string& step_id) {
  auto idx = flow.step_index(step_id);
  if (!idx) return false;
  for (const auto& step : flow.steps) {
    const auto* r = step.as<RepetitionStep>();
    if (!r) continue;
    auto a = flow.step_index(r->first);
    auto b = flow.step_index(r->last);
    if (a && b && *idx >= *a && *idx <= *b) return true;
  }
  return false;
}

std::string describe_system(const Event& e) {
  auto p = system_payload(e);
  if (!p.is_object()) return e.content;
  const auto type = p.value("type", "");
  if (type == "session_started") {
    std::string s = "session started";
    if (p.contains("flow")) s += " (flow " + p["flow"].value("id", "") + ")";
    if (!p.value("overrides", nlohmann::json::object()).empty()) s += ", sources " + p["overrides"].dump();
    return s;
  }
  if (type == "control") {
    std::string s = "instructor " + p.value("action", "");
    if (p.contains("step_id")) s += " at step " + p["step_id"].get<std::string>();
    if (p.contains("text")) s += ": " + p["text"].get<std::string>();
    return s;
  }
  if (type == "warning") return "warning " + p.value("code", "") + ": " + p.value("message", "");
  return e.content;
}

}  // namespace

TranscriptPrinter::TranscriptPrinter(std::ostream& out, const FlowDefinition* flow)
    : out_(out), flow_(flow) {}

void TranscriptPrinter::print(const Event& e) {
  const bool loop = flow_ && e.kind != EventKind::system && inside_range(*flow_, e.step_id);
  if (loop && (!in_loop_ || e.iteration != iteration_)) {
    out_ << "--- iteration " << e.iteration + 1 << " ---\n";
  }
  if (e.kind != EventKind::system) {
    in_loop_ = loop;
    iteration_ = e.iteration;
  }

  out_ << "[" << e.seq << "]";
  if (!e.step_id.empty()) out_ << " step " << e.step_id;
  out_ << " " << to_string(e.kind) << " " << e.sender << " -> " << text::join(e.recipients, ", ");
  if (e.visibility.size() == 1) out_ << " (hidden from learners)";
  out_ << "\n";
  const std::string body = e.kind == EventKind::system ? describe_system(e) : e.content;
  std::size_t start = 0;
  while (start <= body.size()) {
    auto nl = body.find('\n', start);
    if (nl == std::string::npos) nl = body.size();
    out_ << "    " << body.substr(start, nl - start) << "\n";
    start = nl + 1;
  }
}

void print_transcript(std::ostream& out, const FlowDefinition* flow, const std::vector<Event>& events) {
  TranscriptPrinter p(out, flow);
  for (const auto& e : events) p.print(e);
}

}  // namespace learnflow
