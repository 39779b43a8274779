#include "learnflow/validate.hpp"

#include <algorithm>
#include <set>

#include "learnflow/error.hpp"
#include "learnflow/text.hpp"

namespace learnflow {

bool ValidationReport::has(std::string_view code) const {
  return std::any_of(diagnostics.begin(), diagnostics.end(),
                     [&](const Diagnostic& d) { return d.code == code; });
}

nlohmann::json ValidationReport::to_json() const {
  nlohmann::json j;
  j["ok"] = ok;
  j["diagnostics"] = nlohmann::json::array();
  for (const auto& d : diagnostics) {
    nlohmann::json e;
    e["severity"] = d.severity == Severity::error ? "error" : "warning";
    e["step_id"] = d.step_id ? nlohmann::json(*d.step_id) : nlohmann::json(nullptr);
    e["code"] = d.code;
    e["message"] = d.message;
    j["diagnostics"].push_back(std::move(e));
  }
  return j;
}

namespace {

struct Range {
  std::size_t rep = 0;
  std::size_t first = 0;
  std::size_t last = 0;
  bool loops_back = false;
};

/// Facts that hold on every path reaching a point. `top` stands for "no path
/// seen yet" (the identity of intersection).
struct Facts {
  bool top = true;
  std::set<std::string> set;

  bool has(const std::string& f) const { return top || set.count(f) > 0; }
  void meet(const Facts& other) {
    if (other.top) return;
    if (top) {
      *this = other;
      return;
    }
    std::set<std::string> out;
    std::set_intersection(set.begin(), set.end(), other.set.begin(), other.set.end(),
                          std::inserter(out, out.begin()));
    set = std::move(out);
  }
  bool operator==(const Facts&) const = default;
};

class Validator {
 public:
  explicit Validator(const FlowDefinition& flow) : flow_(flow) {}

  ValidationReport run() {
    check_roster();
    collect_ranges();
    for (std::size_t i = 0; i < flow_.steps.size(); ++i) check_step(i);
    check_overlaps();
    dataflow();
    report_.ok = std::none_of(report_.diagnostics.begin(), report_.diagnostics.end(),
                              [](const Diagnostic& d) { return d.severity == Severity::error; });
    return std::move(report_);
  }

 private:
  void error(std::optional<std::string> step, std::string code, std::string message) {
    add(Severity::error, std::move(step), std::move(code), std::move(message));
  }
  void warning(std::optional<std::string> step, std::string code, std::string message) {
    add(Severity::warning, std::move(step), std::move(code), std::move(message));
  }
  void add(Severity sev, std::optional<std::string> step, std::string code, std::string message) {
    for (const auto& d : report_.diagnostics) {
      if (d.step_id == step && d.code == code && d.message == message) return;
    }
    report_.diagnostics.push_back({sev, std::move(step), std::move(code), std::move(message)});
  }

  bool is_slot(const std::string& id) const { return flow_.slot(id) != nullptr; }
  bool is_agent(const std::string& id) const { return flow_.agent(id) != nullptr; }

  /// Agents a user_input addresses directly. Ids naming a roster slot are
  /// recipients, not invocation triggers.
  std::vector<std::string> triggered_agents(const UserInputStep& u) const {
    std::vector<std::string> out;
    for (const auto& id : u.to) {
      if (!is_slot(id) && is_agent(id)) out.push_back(id);
    }
    return out;
  }

  std::optional<std::size_t> top_level_index(const std::string& id) const {
    for (std::size_t i = 0; i < flow_.steps.size(); ++i) {
      if (flow_.steps[i].id == id) return i;
    }
    return std::nullopt;
  }

  const Range* enclosing_range(std::size_t index) const {
    for (const auto& r : ranges_) {
      if (index >= r.first && index <= r.last) return &r;
    }
    return nullptr;
  }

  void check_roster() {
    std::set<std::string> slots;
    int instructors = 0;
    for (const auto& s : flow_.roster) {
      if (s.slot_id.empty()) error(std::nullopt, "MissingField", "roster slot with empty slot_id");
      if (!slots.insert(s.slot_id).second) {
        error(std::nullopt, "DuplicateSlot", "duplicate roster slot '" + s.slot_id + "'");
      }
      if (s.role == Role::instructor) ++instructors;
      if (s.role == Role::ai_agent && s.source == Source::human) {
        error(std::nullopt, "RoleSourceConflict", "ai-agent slot '" + s.slot_id + "' cannot be human");
      }
      if (s.role == Role::instructor && s.source == Source::ai) {
        error(std::nullopt, "RoleSourceConflict", "instructor slot '" + s.slot_id + "' cannot be ai");
      }
    }
    if (instructors != 1) {
      error(std::nullopt, "InstructorCount",
            "roster must contain exactly one instructor slot (found " +
                std::to_string(instructors) + ")");
    }
    std::set<std::string> agents;
    for (const auto& a : flow_.agents) {
      if (a.agent_id.empty()) error(std::nullopt, "MissingField", "agent with empty agent_id");
      if (!agents.insert(a.agent_id).second) {
        error(std::nullopt, "DuplicateAgent", "duplicate agent '" + a.agent_id + "'");
      }
    }
  }

  void collect_ranges() {
    for (std::size_t i = 0; i < flow_.steps.size(); ++i) {
      const auto* rep = flow_.steps[i].as<RepetitionStep>();
      if (!rep) continue;
      const auto& id = flow_.steps[i].id;
      auto first = top_level_index(rep->first);
      auto last = top_level_index(rep->last);
      if (!first || !last) {
        error(id, "UnknownTarget", "repetition range references an unknown step");
        continue;
      }
      if (*first > *last) {
        error(id, "ReversedRange", "range [" + rep->first + ", " + rep->last + "] is reversed");
        continue;
      }
      if (i >= *first && i <= *last) {
        error(id, "RangeContainsRepetition", "range contains the repetition step itself");
        continue;
      }
      if (i != *last + 1) {
        error(id, "DetachedRepetition", "repetition step must directly follow its range end");
        continue;
      }
      const bool loops_back = !rep->count_template.empty() || rep->count > 1;
      ranges_.push_back({i, *first, *last, loops_back});
    }
  }

  void check_overlaps() {
    for (std::size_t a = 0; a < ranges_.size(); ++a) {
      for (std::size_t b = a + 1; b < ranges_.size(); ++b) {
        const auto& x = ranges_[a];
        const auto& y = ranges_[b];
        // Spans include the repetition step so a loop inside another loop's
        // body counts as overlapping.
        if (x.first <= y.rep && y.first <= x.rep) {
          error(flow_.steps[y.rep].id, "OverlappingRanges",
                "repetition ranges of '" + flow_.steps[x.rep].id + "' and '" +
                    flow_.steps[y.rep].id + "' overlap");
        }
      }
    }
  }

  void check_agent(const std::string& step, const std::string& agent) {
    if (!is_agent(agent)) error(step, "UnknownAgent", "unknown agent '" + agent + "'");
  }

  void check_recipients(const std::string& step, const std::vector<std::string>& ids) {
    for (const auto& id : ids) {
      if (!is_slot(id) && !is_agent(id)) {
        error(step, "UnknownParticipant", "unknown participant '" + id + "'");
      }
    }
  }

  void check_visibility(const std::string& step, const Visibility& v) {
    for (const auto& id : v.slots) {
      if (!is_slot(id)) error(step, "UnknownParticipant", "visibility names unknown slot '" + id + "'");
    }
  }

  void check_text(const std::string& step, std::size_t index, const std::string& text) {
    std::vector<text::PlaceholderRef> refs;
    try {
      refs = text::scan_placeholders(text);
    } catch (const Error& e) {
      error(step, "MalformedPlaceholder", e.what());
      return;
    }
    for (const auto& ref : refs) {
      if (!text::is_runtime_placeholder(ref.name)) {
        error(step, "UnresolvedTemplatePlaceholder",
              "template placeholder '{{" + ref.name + "}}' is not bound");
      } else if (ref.name == "loop_index") {
        if (!enclosing_range(index)) {
          error(step, "LoopIndexOutsideLoop", "'{{loop_index}}' used outside a repetition range");
        }
      } else if (ref.name.rfind("input:", 0) == 0) {
        const auto target = ref.name.substr(6);
        if (!is_input_step(target)) {
          error(step, "UnknownInputReference",
                "'{{" + ref.name + "}}' does not name a user_input step");
        }
      }
    }
  }

  bool is_input_step(const std::string& id) const {
    for (const auto& s : flow_.steps) {
      if (s.id == id && s.as<UserInputStep>()) return true;
      if (const auto* alt = s.as<AlternativeStep>(); alt && alt->human_id == id) return true;
    }
    return false;
  }

  void check_user_input(const std::string& step, const UserInputStep& u) {
    const auto* from = flow_.slot(u.from);
    if (!from) {
      error(step, "UnknownParticipant", "user_input from unknown slot '" + u.from + "'");
    } else if (from->role == Role::ai_agent) {
      error(step, "InputFromAgent", "user_input sender '" + u.from + "' is an ai-agent slot");
    }
    check_recipients(step, u.to);
    if (triggered_agents(u).size() > 1) {
      error(step, "MultipleAgentRecipients", "user_input may address at most one agent");
    }
  }

  void check_step(std::size_t i) {
    const auto& step = flow_.steps[i];
    const auto& id = step.id;
    std::visit(
        [&](const auto& s) {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, AgentPromptStep>) {
            check_agent(id, s.agent);
            check_text(id, i, s.text);
          } else if constexpr (std::is_same_v<T, ReferenceMaterialsStep>) {
            check_agent(id, s.agent);
            check_recipients(id, s.audience);
          } else if constexpr (std::is_same_v<T, InstructionLearnerStep>) {
            check_recipients(id, s.to);
            check_text(id, i, s.text);
          } else if constexpr (std::is_same_v<T, InstructionAiStep>) {
            check_agent(id, s.agent);
            check_text(id, i, s.text);
          } else if constexpr (std::is_same_v<T, UserInputStep>) {
            check_user_input(id, s);
          } else if constexpr (std::is_same_v<T, AiResponseStep>) {
            check_agent(id, s.agent);
            check_visibility(id, s.visibility);
          } else if constexpr (std::is_same_v<T, RepetitionStep>) {
            check_repetition(i, s);
          } else if constexpr (std::is_same_v<T, BranchStep>) {
            check_branch(i, s);
          } else if constexpr (std::is_same_v<T, AlternativeStep>) {
            check_alternative(i, s);
          }
        },
        step.body);
  }

  void check_repetition(std::size_t i, const RepetitionStep& r) {
    const auto& id = flow_.steps[i].id;
    if (!r.count_template.empty()) {
      error(id, "UnresolvedTemplatePlaceholder",
            "repetition count '" + r.count_template + "' is not bound");
    }
    if (!r.exit) return;
    auto first = top_level_index(r.first);
    auto last = top_level_index(r.last);
    if (!first || !last || *first > *last) return;
    bool graded = false;
    for (std::size_t k = *first; k <= *last; ++k) {
      if (const auto* ai = flow_.steps[k].as<InstructionAiStep>(); ai && ai->grade) graded = true;
      if (const auto* alt = flow_.steps[k].as<AlternativeStep>(); alt && alt->prompt.grade) graded = true;
    }
    if (!graded) {
      error(id, "MasteryWithoutGrading", "mastery exit needs a graded instruction_ai inside the range");
    }
  }

  void check_branch(std::size_t i, const BranchStep& b) {
    const auto& id = flow_.steps[i].id;
    auto tokens = text::normalized_tokens(b.contains_token);
    if (tokens.size() != 1 || tokens[0] != b.contains_token) {
      error(id, "InvalidBranchToken",
            "contains_token must be a single lowercase word without punctuation");
    }
    auto target = top_level_index(b.target);
    if (!target) {
      error(id, "UnknownTarget", "branch target '" + b.target + "' does not exist");
      return;
    }
    if (*target == i) {
      error(id, "SelfBranch", "branch cannot target itself");
      return;
    }
    if (flow_.steps[*target].as<RepetitionStep>()) {
      error(id, "BranchIntoLoopHeader", "branch cannot target a repetition step");
      return;
    }
    if (const auto* r = enclosing_range(i)) {
      if (*target < r->last) {
        error(id, "BranchTargetInsideLoop",
              "branch inside a loop must target its range end or a later step");
      }
    } else if (*target < i) {
      warning(id, "PossibleNonTermination", "backward branch may loop without bound");
    }
  }

  void check_alternative(std::size_t i, const AlternativeStep& alt) {
    const auto& id = flow_.steps[i].id;
    const auto* slot = flow_.slot(alt.slot);
    if (!slot) {
      error(id, "UnknownParticipant", "alternative slot '" + alt.slot + "' is not in the roster");
    } else {
      if (slot->role != Role::learner) {
        error(id, "InvalidAlternative", "alternative slot must be a learner slot");
      }
      if (!slot->source) {
        error(id, "MissingSourceToggle", "slot '" + alt.slot + "' has no source toggle");
      }
    }
    if (alt.human.from != alt.slot) {
      error(id, "InvalidAlternative", "human variant must be sent from the alternative's slot");
    }
    check_user_input(alt.human_id, alt.human);
    check_agent(alt.prompt_id, alt.prompt.agent);
    check_text(alt.prompt_id, i, alt.prompt.text);
    check_visibility(alt.reply_id, alt.reply.visibility);
    if (alt.prompt.agent != alt.reply.agent) {
      error(id, "InvalidAlternative", "ai variant instruction and response must use the same agent");
    }
  }

  // ---- dataflow ------------------------------------------------------------

  std::vector<std::size_t> successors(std::size_t i) const {
    std::vector<std::size_t> out{i + 1};
    if (flow_.steps[i].as<RepetitionStep>()) {
      for (const auto& r : ranges_) {
        if (r.rep == i && r.loops_back) out.push_back(r.first);
      }
    } else if (const auto* b = flow_.steps[i].as<BranchStep>()) {
      if (auto t = top_level_index(b->target); t && *t != i) out.push_back(*t);
    }
    return out;
  }

  void require_text_bindings(const std::string& step, const std::string& text, const Facts& in,
                             bool report) {
    if (!report) return;
    std::vector<text::PlaceholderRef> refs;
    try {
      refs = text::scan_placeholders(text);
    } catch (const Error&) {
      return;
    }
    for (const auto& ref : refs) {
      if (ref.name == "loop_index" || !text::is_runtime_placeholder(ref.name)) continue;
      if (ref.name.rfind("input:", 0) == 0 && !is_input_step(ref.name.substr(6))) continue;
      if (!in.has(ref.name)) {
        error(step, "UnboundRuntimePlaceholder",
              "'{{" + ref.name + "}}' may be unbound on some execution path");
      }
    }
  }

  void gen_user_input(const std::string& id, const UserInputStep& u, Facts& f) const {
    f.set.insert("input:" + id);
    for (const auto& a : triggered_agents(u)) {
      f.set.insert("ready:" + a);
      f.set.insert("response");
    }
  }

  void gen_instruction(const InstructionAiStep& s, Facts& f) const {
    f.set.insert("ready:" + s.agent);
    f.set.insert("response");
    if (s.grade) f.set.insert("score");
  }

  /// OUT = transfer(IN); reports use-site problems when `report` is set.
  Facts transfer(std::size_t i, const Facts& in, bool report) {
    if (in.top) return in;
    Facts f = in;
    const auto& step = flow_.steps[i];
    const auto& id = step.id;
    if (const auto* s = step.as<AgentPromptStep>()) {
      require_text_bindings(id, s->text, in, report);
    } else if (const auto* s = step.as<InstructionLearnerStep>()) {
      require_text_bindings(id, s->text, in, report);
    } else if (const auto* s = step.as<InstructionAiStep>()) {
      require_text_bindings(id, s->text, in, report);
      gen_instruction(*s, f);
    } else if (const auto* s = step.as<UserInputStep>()) {
      gen_user_input(id, *s, f);
    } else if (const auto* s = step.as<AiResponseStep>()) {
      if (report && !in.has("ready:" + s->agent)) {
        error(id, "UnpairedResponse",
              "no instruction_ai or user_input addressed to '" + s->agent +
                  "' precedes this response on every path");
      }
      f.set.erase("ready:" + s->agent);
    } else if (step.as<BranchStep>()) {
      if (report && !in.has("response")) {
        error(id, "BranchWithoutResponse", "no agent response is guaranteed before this branch");
      }
    } else if (const auto* alt = step.as<AlternativeStep>()) {
      Facts human = in;
      human.set.insert("role");
      gen_user_input(alt->human_id, alt->human, human);

      Facts ai = in;
      ai.set.insert("role");
      require_text_bindings(alt->prompt_id, alt->prompt.text, ai, report);
      gen_instruction(alt->prompt, ai);
      ai.set.erase("ready:" + alt->reply.agent);
      ai.set.insert("input:" + alt->human_id);

      human.meet(ai);
      f = std::move(human);
    }
    return f;
  }

  void dataflow() {
    const std::size_t n = flow_.steps.size();
    std::vector<Facts> in(n + 1);
    in[0].top = false;
    bool changed = true;
    while (changed) {
      changed = false;
      std::vector<Facts> next(n + 1);
      next[0].top = false;
      for (std::size_t i = 0; i < n; ++i) {
        Facts out = transfer(i, in[i], false);
        for (auto s : successors(i)) {
          if (s <= n) next[s].meet(out);
        }
      }
      // Entry keeps the empty fact set even when a back edge reaches it.
      next[0] = Facts{false, {}};
      for (std::size_t i = 0; i <= n; ++i) {
        if (!(next[i] == in[i])) {
          in[i] = next[i];
          changed = true;
        }
      }
    }
    for (std::size_t i = 0; i < n; ++i) transfer(i, in[i], true);
  }

  const FlowDefinition& flow_;
  std::vector<Range> ranges_;
  ValidationReport report_;
};

}  // namespace

ValidationReport validate_flow(const FlowDefinition& flow) { return Validator(flow).run(); }

}  // namespace learnflow
