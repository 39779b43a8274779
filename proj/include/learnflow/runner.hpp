#pragma once

#include <functional>
#include <optional>
#include <string>

#include "learnflow/error.hpp"
#include "learnflow/provider.hpp"
#include "learnflow/session.hpp"

namespace learnflow {

/// Supplies human input for an AwaitInput; nullopt when none is left.
using InputSource = std::function<std::optional<std::string>(const AwaitInput&)>;

struct RunHooks {
  /// Called once per appended event, in seq order.
  std::function<void(const Event&)> on_event;
  /// Called when an input is refused (e.g. over the word limit); the source
  /// is then asked again.
  std::function<void(const AwaitInput&, const Error&)> on_reject;
};

enum class RunOutcome { completed, ended, starved };

/// Drives `state` until it completes or input runs out. Provider errors
/// propagate unchanged.
RunOutcome run_session(SessionState& state, const EngineContext& ctx, Provider& provider,
                       const InputSource& inputs, const RunHooks& hooks = {});

}  // namespace learnflow
