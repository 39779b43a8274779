#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "learnflow/content_store.hpp"
#include "learnflow/event.hpp"
#include "learnflow/flow.hpp"
#include "learnflow/prompt.hpp"

namespace learnflow {

enum class SessionStatus { running, awaiting_input, awaiting_agent, completed, ended_by_instructor };
std::string_view to_string(SessionStatus s);

struct Status {
  SessionStatus state = SessionStatus::running;
  /// Awaited slot (awaiting_input) or agent (awaiting_agent).
  std::string who;
  std::string step_id;

  bool terminal() const {
    return state == SessionStatus::completed || state == SessionStatus::ended_by_instructor;
  }
  bool operator==(const Status&) const = default;
};

/// Runtime counter for one repetition range. `iteration` is 0-based.
struct LoopFrame {
  std::string repetition_step;
  std::string first;
  std::string last;
  int count = 1;
  int iteration = 0;
  int correct_streak = 0;
  bool operator==(const LoopFrame&) const = default;
};

struct PendingInvocation {
  std::string agent_id;
  PromptBundle prompt_bundle;
  std::string triggering_step_id;
  std::string invocation_id;
  bool graded = false;
  bool operator==(const PendingInvocation&) const = default;
};

struct Tally {
  int correct = 0;
  int total_graded = 0;
  bool operator==(const Tally&) const = default;
};

struct SessionState {
  std::string session_id;
  std::shared_ptr<const FlowDefinition> flow;
  std::map<std::string, Source> overrides;
  std::size_t cursor = 0;
  /// 1 while an alternative's ai variant has been invoked but not delivered.
  int alt_phase = 0;
  /// Empty or exactly one frame; nesting is rejected by validation.
  std::vector<LoopFrame> loop_frames;
  std::map<std::string, std::string> bindings;
  std::optional<PendingInvocation> pending_invocation;
  /// Completed agent output waiting for its ai_response step, per agent.
  std::map<std::string, std::string> undelivered;
  std::optional<std::string> last_agent_response;
  std::map<std::string, Tally> tallies;
  std::string active_respondent;
  std::map<std::string, std::string> personas;
  std::map<std::string, std::vector<std::string>> attached_materials;
  /// Warnings queued for delivery as system events.
  std::vector<std::string> notices;
  Status status;
  std::uint64_t next_seq = 1;
  std::vector<Event> transcript;
};

struct AwaitInput {
  std::string slot_id;
  std::string step_id;
  std::optional<int> max_words;
};

struct InvokeAgent {
  std::string agent_id;
  PromptBundle prompt_bundle;
  std::string step_id;
  std::string invocation_id;
};

struct Deliver {
  Event event;
};

struct Complete {};

using EngineAction = std::variant<AwaitInput, InvokeAgent, Deliver, Complete>;

struct EngineContext {
  /// Source of material excerpts; none attached when null.
  const ContentStore* materials = nullptr;
  std::size_t retrieval_k = 3;
  /// RFC3339 timestamp source; system UTC clock when empty.
  std::function<std::string()> clock;
};

std::string utc_now_rfc3339();

/// Appended to graded instructions so the response leads with the verdict.
inline constexpr std::string_view kGradingDirective = "Begin your reply with CORRECT or INCORRECT.";
inline constexpr std::string_view kAdvancedPlaceholder = "[advanced by instructor]";
inline constexpr std::string_view kSkippedPlaceholder = "[skipped by instructor]";

/// Throws Error("InvalidFlow") when validation fails and
/// Error("IllegalToggle") for overrides outside learner slots used by
/// alternative steps. Emits the session_started system event (seq 1).
SessionState start_session(std::shared_ptr<const FlowDefinition> flow,
                           const std::map<std::string, Source>& overrides,
                           std::string session_id, const EngineContext& ctx = {});

/// Runs non-emitting steps (repetition, branch) and returns the next action.
/// Deliver steps advance the cursor; instruction_ai and user_input move the
/// status to awaiting. Throws Error("InternalBlocked") while awaiting.
EngineAction next_action(SessionState& state, const EngineContext& ctx = {});

/// The outstanding AwaitInput/InvokeAgent for an awaiting state.
std::optional<EngineAction> pending_action(const SessionState& state);

/// Errors: NotYourTurn, WordLimitExceeded (details {limit, actual}),
/// SessionEnded. Nothing is recorded on error.
std::vector<Event> submit_input(SessionState& state, std::string_view slot_id,
                                std::string_view content, const EngineContext& ctx = {});

/// Errors: NoPendingInvocation, AgentMismatch.
std::vector<Event> apply_agent_response(SessionState& state, std::string_view agent_id,
                                        std::string_view content, const EngineContext& ctx = {});

/// Target step id when `contains_token` occurs among the normalized tokens of
/// `latest`, nullopt to continue. Throws Error("NoResponseInScope") when there
/// is no response yet.
std::optional<std::string> evaluate_branch(const BranchStep& branch,
                                           const std::optional<std::string>& latest);

/// Replaces every `{{name}}` from `bindings`. Throws
/// Error("UnboundRuntimePlaceholder") for a missing name.
std::string interpolate(std::string_view text, const std::map<std::string, std::string>& bindings);

/// Cursor must be at a repetition step. Exits the loop when the count is
/// reached or the mastery rule holds, otherwise jumps to the range start.
void advance_loop(SessionState& state);

// Instructor controls. Each raises Error("Inapplicable") when the current
// status does not allow it.
std::vector<Event> control_advance(SessionState& state, const EngineContext& ctx = {});
std::vector<Event> control_skip(SessionState& state, const EngineContext& ctx = {});
std::vector<Event> control_override(SessionState& state, std::string_view text,
                                    const EngineContext& ctx = {});
std::vector<Event> control_end(SessionState& state, const EngineContext& ctx = {});

/// Runs next_action until the session blocks or completes.
struct DriveResult {
  std::vector<Event> events;
  EngineAction blocking;
};
DriveResult drive(SessionState& state, const EngineContext& ctx = {});

Source effective_source(const SessionState& state, std::string_view slot_id);
Status make_status(SessionStatus s, std::string who = {}, std::string step = {});

/// Canonical JSON of the whole state with event timestamps removed; two
/// states are equivalent iff their canonical forms are equal.
nlohmann::json state_to_json(const SessionState& state);
bool equivalent(const SessionState& a, const SessionState& b);

/// Parses the JSON carried by system events; null for plain text.
nlohmann::json system_payload(const Event& e);

}  // namespace learnflow
