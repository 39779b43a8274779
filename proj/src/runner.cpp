#include "learnflow/runner.hpp"

#include "learnflow/error.hpp"

namespace learnflow {

RunOutcome run_session(SessionState& state, const EngineContext& ctx, Provider& provider,
                       const InputSource& inputs, const RunHooks& hooks) {
  auto emit = [&](const std::vector<Event>& events) {
    if (!hooks.on_event) return;
    for (const auto& e : events) hooks.on_event(e);
  };
  for (;;) {
    std::optional<EngineAction> act = pending_action(state);
    if (!act) {
      auto r = drive(state, ctx);
      emit(r.events);
      act = std::move(r.blocking);
    }
    if (std::holds_alternative<Complete>(*act)) {
      return state.status.state == SessionStatus::ended_by_instructor ? RunOutcome::ended
                                                                       : RunOutcome::completed;
    }
    if (auto* inv = std::get_if<InvokeAgent>(&*act)) {
      auto text = provider.generate(inv->prompt_bundle, inv->invocation_id);
      emit(apply_agent_response(state, inv->agent_id, text, ctx));
      continue;
    }
    const auto& await = std::get<AwaitInput>(*act);
    for (;;) {
      auto text = inputs ? inputs(await) : std::nullopt;
      if (!text) return RunOutcome::starved;
      try {
        emit(submit_input(state, await.slot_id, *text, ctx));
        break;
      } catch (const Error& e) {
        if (e.code() != "WordLimitExceeded") throw;
        if (hooks.on_reject) hooks.on_reject(await, e);
      }
    }
  }
}

}  // namespace learnflow
