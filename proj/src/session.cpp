#include "learnflow/session.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <ctime>
#include <set>

#include "learnflow/error.hpp"
#include "learnflow/flow_document.hpp"
#include "learnflow/text.hpp"
#include "learnflow/validate.hpp"

namespace learnflow {

namespace {

using json = nlohmann::json;

// Guard against branch cycles that never emit anything.
constexpr int kMaxSilentSteps = 100000;

struct Range {
  std::size_t rep = 0;
  std::size_t first = 0;
  std::size_t last = 0;
  const RepetitionStep* step = nullptr;
};

std::vector<Range> ranges_of(const FlowDefinition& flow) {
  std::vector<Range> out;
  for (std::size_t i = 0; i < flow.steps.size(); ++i) {
    const auto* r = flow.steps[i].as<RepetitionStep>();
    if (!r) continue;
    auto a = flow.step_index(r->first);
    auto b = flow.step_index(r->last);
    if (a && b) out.push_back({i, *a, *b, r});
  }
  return out;
}

void push_unique(std::vector<std::string>& v, const std::string& id) {
  if (std::find(v.begin(), v.end(), id) == v.end()) v.push_back(id);
}

std::vector<std::string> with_instructor(const FlowDefinition& flow,
                                         const std::vector<std::string>& ids) {
  std::vector<std::string> out;
  for (const auto& id : ids) push_unique(out, id);
  push_unique(out, flow.instructor_id());
  return out;
}

std::vector<std::string> slots_among(const FlowDefinition& flow,
                                     const std::vector<std::string>& ids) {
  std::vector<std::string> out;
  for (const auto& id : ids) {
    if (flow.slot(id)) push_unique(out, id);
  }
  return out;
}

std::vector<std::string> all_slots(const FlowDefinition& flow) {
  std::vector<std::string> out;
  for (const auto& s : flow.roster) push_unique(out, s.slot_id);
  push_unique(out, flow.instructor_id());
  return out;
}

std::vector<std::string> resolve_visibility(const FlowDefinition& flow, const Visibility& v) {
  if (v.all) return all_slots(flow);
  return with_instructor(flow, slots_among(flow, v.slots));
}

std::vector<std::string> triggered_agents(const FlowDefinition& flow, const UserInputStep& u) {
  std::vector<std::string> out;
  for (const auto& id : u.to) {
    if (!flow.slot(id) && flow.agent(id)) push_unique(out, id);
  }
  return out;
}

/// "{{" cannot appear structurally in compact JSON, only inside strings, so
/// escaping the second brace keeps the text parseable and placeholder-free.
template <class J>
std::string dump_payload(const J& j) {
  std::string s = j.dump();
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    out += s[i];
    if (s[i] == '{' && i + 1 < s.size() && s[i + 1] == '{') {
      out += "\\u007b";
      ++i;
    }
  }
  return out;
}

std::string timestamp(const EngineContext& ctx) {
  return ctx.clock ? ctx.clock() : utc_now_rfc3339();
}

int current_iteration(const SessionState& s) {
  return s.loop_frames.empty() ? 0 : s.loop_frames.front().iteration;
}

Event& emit(SessionState& s, std::string step_id, EventKind kind, std::string sender,
            std::vector<std::string> recipients, std::vector<std::string> visibility,
            std::string content, const EngineContext& ctx) {
  Event e;
  e.seq = s.next_seq++;
  e.step_id = std::move(step_id);
  e.iteration = current_iteration(s);
  e.kind = kind;
  e.sender = std::move(sender);
  e.recipients = std::move(recipients);
  e.visibility = std::move(visibility);
  e.content = std::move(content);
  e.timestamp = timestamp(ctx);
  s.transcript.push_back(std::move(e));
  return s.transcript.back();
}

bool is_delivery_step(const FlowDefinition& flow, const std::string& id) {
  for (const auto& step : flow.steps) {
    if (step.id == id && step.as<AiResponseStep>()) return true;
    if (const auto* alt = step.as<AlternativeStep>(); alt && alt->reply_id == id) return true;
  }
  return false;
}

/// Conversation the agent may see: no system events, and agent output only
/// once it was actually delivered.
std::vector<Event> prompt_history(const SessionState& s, std::size_t end) {
  std::vector<Event> out;
  for (std::size_t i = 0; i < end && i < s.transcript.size(); ++i) {
    const auto& e = s.transcript[i];
    if (e.kind == EventKind::system) continue;
    if (e.kind == EventKind::agent_response && !is_delivery_step(*s.flow, e.step_id)) continue;
    out.push_back(e);
  }
  return out;
}

Origin origin_of(const FlowDefinition& flow, const std::string& slot) {
  const auto* p = flow.slot(slot);
  if (slot == flow.instructor_id() || (p && p->role == Role::instructor)) return Origin::instructor;
  return Origin::learner;
}

PendingInvocation build_invocation(const SessionState& s, const std::string& agent_id,
                                   PromptMessage instruction, const std::string& step_id,
                                   bool graded, std::size_t history_end,
                                   const EngineContext& ctx) {
  const auto* cfg = s.flow->agent(agent_id);
  if (!cfg) throw Error("UnknownAgent", "unknown agent '" + agent_id + "'");
  AgentConfig agent = *cfg;
  if (auto it = s.personas.find(agent_id); it != s.personas.end()) agent.persona_prompt = it->second;

  std::vector<std::string> retrieved;
  auto mats = s.attached_materials.find(agent_id);
  if (ctx.materials && mats != s.attached_materials.end() && !mats->second.empty()) {
    std::set<std::string> only(mats->second.begin(), mats->second.end());
    for (const auto& hit : ctx.materials->retrieve(instruction.text, ctx.retrieval_k, &only)) {
      if (auto chunk = ctx.materials->chunk_text(hit.material_id, hit.chunk_index)) {
        retrieved.push_back(*chunk);
      }
    }
  }
  if (graded) instruction.text += "\n\n" + std::string(kGradingDirective);

  PendingInvocation p;
  p.agent_id = agent_id;
  p.prompt_bundle = assemble_prompt(agent, prompt_history(s, history_end), instruction, retrieved,
                                    s.flow->instructor_id());
  p.triggering_step_id = step_id;
  p.invocation_id = s.session_id + ":" + step_id + ":" + std::to_string(s.next_seq);
  p.graded = graded;
  return p;
}

void refresh_score(SessionState& s) {
  Tally t;
  if (!s.active_respondent.empty()) {
    if (auto it = s.tallies.find(s.active_respondent); it != s.tallies.end()) t = it->second;
  } else {
    for (const auto& [_, v] : s.tallies) {
      t.correct += v.correct;
      t.total_graded += v.total_graded;
    }
  }
  s.bindings["score"] = std::to_string(t.correct) + " out of " + std::to_string(t.total_graded);
}

/// CORRECT / INCORRECT as the first word, ignoring case and surrounding
/// punctuation such as "Correct!" or "**INCORRECT**".
std::optional<bool> verdict(std::string_view content) {
  auto words = text::split_words(content);
  if (words.empty()) return std::nullopt;
  std::string w = words.front();
  auto alnum = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; };
  auto b = std::find_if(w.begin(), w.end(), alnum);
  auto e = std::find_if(w.rbegin(), w.rend(), alnum).base();
  if (b >= e) return std::nullopt;
  std::string core(b, e);
  for (auto& c : core) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (core == "CORRECT") return true;
  if (core == "INCORRECT") return false;
  return std::nullopt;
}

void record_response(SessionState& s, const std::string& agent, const std::string& step_id,
                     const std::string& content, bool graded, bool grade_it) {
  s.undelivered[agent] = content;
  s.last_agent_response = content;
  if (!graded) return;
  if (grade_it) {
    if (auto v = verdict(content)) {
      if (!s.active_respondent.empty()) {
        auto& t = s.tallies[s.active_respondent];
        ++t.total_graded;
        if (*v) ++t.correct;
      }
      if (!s.loop_frames.empty()) {
        auto& f = s.loop_frames.front();
        f.correct_streak = *v ? f.correct_streak + 1 : 0;
      }
    } else {
      s.notices.push_back(dump_payload(json{{"type", "warning"},
                                            {"code", "UngradedResponse"},
                                            {"agent", agent},
                                            {"step_id", step_id},
                                            {"message", "graded response did not start with "
                                                        "CORRECT or INCORRECT"}}));
    }
  }
  refresh_score(s);
}

/// The user_input definition the session is waiting on.
std::pair<std::string, const UserInputStep*> awaited_input(const SessionState& s) {
  const auto& step = s.flow->steps.at(s.cursor);
  if (const auto* u = step.as<UserInputStep>()) return {step.id, u};
  if (const auto* alt = step.as<AlternativeStep>()) return {alt->human_id, &alt->human};
  throw Error("InternalBlocked", "cursor is not at an input step");
}

void sync_loop(SessionState& s) {
  if (!s.loop_frames.empty() || s.cursor >= s.flow->steps.size()) return;
  for (const auto& r : ranges_of(*s.flow)) {
    if (s.cursor >= r.first && s.cursor <= r.last) {
      LoopFrame f;
      f.repetition_step = s.flow->steps[r.rep].id;
      f.first = r.step->first;
      f.last = r.step->last;
      f.count = r.step->count;
      s.loop_frames.push_back(f);
      s.bindings["loop_index"] = "1";
      return;
    }
  }
}

void pop_loop(SessionState& s) {
  s.loop_frames.clear();
  s.bindings.erase("loop_index");
}

/// Moves past a user_input: emits the event, binds the input, and either
/// invokes the addressed agent or, when `trigger` is false, fills its reply
/// with `content` directly.
void record_input(SessionState& s, const std::string& slot, const std::string& input_id,
                  const UserInputStep& u, const std::string& content, EventKind kind,
                  const std::string& sender, const std::string& event_content, bool trigger,
                  const EngineContext& ctx) {
  const auto& flow = *s.flow;
  auto recipients = with_instructor(flow, u.to);
  auto vis = slots_among(flow, u.to);
  push_unique(vis, slot);
  push_unique(vis, flow.instructor_id());

  const std::size_t history_end = s.transcript.size();
  emit(s, input_id, kind, sender, std::move(recipients), std::move(vis), event_content, ctx);
  s.bindings["input:" + input_id] = content;
  s.active_respondent = slot;
  s.alt_phase = 0;
  ++s.cursor;
  s.status = make_status(SessionStatus::running);

  auto agents = triggered_agents(flow, u);
  if (agents.empty()) return;
  if (trigger) {
    PromptMessage msg{origin_of(flow, slot), slot, content};
    s.pending_invocation = build_invocation(s, agents.front(), std::move(msg), input_id, false,
                                            history_end, ctx);
    s.status = make_status(SessionStatus::awaiting_agent, agents.front(), input_id);
  } else {
    for (const auto& a : agents) record_response(s, a, input_id, content, false, false);
  }
}

std::string role_description(const FlowDefinition& flow, const std::string& slot) {
  const auto* p = flow.slot(slot);
  if (p && p->team) return slot + " (team " + *p->team + ")";
  return slot;
}

std::string current_step_id(const SessionState& s) {
  if (!s.status.step_id.empty()) return s.status.step_id;
  if (s.cursor < s.flow->steps.size()) return s.flow->steps[s.cursor].id;
  return "";
}

json control_payload(std::string action) {
  return json{{"type", "control"}, {"action", std::move(action)}};
}

void require_not_ended(const SessionState& s) {
  if (s.status.terminal()) throw Error("SessionEnded", "the session has ended");
}

}  // namespace

std::string_view to_string(SessionStatus s) {
  switch (s) {
    case SessionStatus::running: return "running";
    case SessionStatus::awaiting_input: return "awaiting_input";
    case SessionStatus::awaiting_agent: return "awaiting_agent";
    case SessionStatus::completed: return "completed";
    case SessionStatus::ended_by_instructor: return "ended_by_instructor";
  }
  return "running";
}

std::string utc_now_rfc3339() {
  using namespace std::chrono;
  auto now = system_clock::now();
  std::time_t t = system_clock::to_time_t(now);
  auto ms = duration_cast<milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[40];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
  return out;
}

Status make_status(SessionStatus s, std::string who, std::string step) {
  return Status{s, std::move(who), std::move(step)};
}

Source effective_source(const SessionState& state, std::string_view slot_id) {
  if (auto it = state.overrides.find(std::string(slot_id)); it != state.overrides.end()) {
    return it->second;
  }
  const auto* p = state.flow->slot(slot_id);
  return p && p->source ? *p->source : Source::human;
}

SessionState start_session(std::shared_ptr<const FlowDefinition> flow,
                           const std::map<std::string, Source>& overrides,
                           std::string session_id, const EngineContext& ctx) {
  if (!flow) throw Error("InvalidFlow", "no flow given");
  auto report = validate_flow(*flow);
  if (!report.ok) {
    throw Error("InvalidFlow", "flow '" + flow->id + "' does not validate", report.to_json());
  }
  for (const auto& [slot, _] : overrides) {
    const auto* p = flow->slot(slot);
    bool toggleable = p && p->role == Role::learner &&
                      std::any_of(flow->steps.begin(), flow->steps.end(), [&](const Step& s) {
                        const auto* alt = s.as<AlternativeStep>();
                        return alt && alt->slot == slot;
                      });
    if (!toggleable) {
      throw Error("IllegalToggle",
                  "slot '" + slot + "' is not a learner slot with an alternative step",
                  json{{"slot", slot}});
    }
  }

  SessionState s;
  s.session_id = std::move(session_id);
  s.flow = std::move(flow);
  s.overrides = overrides;
  for (const auto& a : s.flow->agents) {
    s.personas[a.agent_id] = a.persona_prompt;
    s.attached_materials[a.agent_id] = a.material_refs;
  }

  nlohmann::ordered_json ov = nlohmann::ordered_json::object();
  for (const auto& [slot, src] : overrides) ov[slot] = std::string(to_string(src));
  nlohmann::ordered_json payload{{"type", "session_started"},
               {"session_id", s.session_id},
               {"overrides", ov},
               {"flow", to_document(*s.flow)}};
  const auto instr = s.flow->instructor_id();
  emit(s, "", EventKind::system, std::string(kEngineSender), {instr}, {instr},
       dump_payload(payload), ctx);
  return s;
}

std::optional<std::string> evaluate_branch(const BranchStep& branch,
                                           const std::optional<std::string>& latest) {
  if (!latest) throw Error("NoResponseInScope", "branch evaluated before any agent response");
  auto want = text::normalized_tokens(branch.contains_token);
  if (want.size() != 1) return std::nullopt;
  for (const auto& tok : text::normalized_tokens(*latest)) {
    if (tok == want.front()) return branch.target;
  }
  return std::nullopt;
}

std::string interpolate(std::string_view text_in, const std::map<std::string, std::string>& bindings) {
  auto refs = text::scan_placeholders(text_in);
  std::string out(text_in);
  for (auto it = refs.rbegin(); it != refs.rend(); ++it) {
    auto b = bindings.find(it->name);
    if (b == bindings.end()) {
      throw Error("UnboundRuntimePlaceholder", "'{{" + it->name + "}}' has no value",
                  json{{"name", it->name}});
    }
    out.replace(it->begin, it->end - it->begin, b->second);
  }
  // Adjacent values and literal braces could still form "{{".
  return text::sanitize(out);
}

void advance_loop(SessionState& s) {
  const auto& step = s.flow->steps.at(s.cursor);
  const auto* rep = step.as<RepetitionStep>();
  if (!rep) throw Error("InternalBlocked", "cursor is not at a repetition step");
  if (s.loop_frames.empty()) {
    ++s.cursor;
    return;
  }
  auto& f = s.loop_frames.front();
  const int completed = f.iteration + 1;
  const bool mastered = rep->exit && f.correct_streak >= rep->exit->consecutive_correct;
  if (mastered || completed >= f.count) {
    pop_loop(s);
    ++s.cursor;
    return;
  }
  ++f.iteration;
  s.bindings["loop_index"] = std::to_string(f.iteration + 1);
  s.cursor = *s.flow->step_index(f.first);
}

EngineAction next_action(SessionState& state, const EngineContext& ctx) {
  if (state.status.terminal()) return Complete{};
  if (state.status.state == SessionStatus::awaiting_input ||
      state.status.state == SessionStatus::awaiting_agent) {
    throw Error("InternalBlocked", "session is waiting for " + state.status.who);
  }

  SessionState s = state;
  const auto& flow = *s.flow;
  const auto instr = flow.instructor_id();

  if (!s.notices.empty()) {
    std::string notice = s.notices.front();
    s.notices.erase(s.notices.begin());
    std::string step_id;
    try {
      step_id = json::parse(notice).value("step_id", "");
    } catch (const json::exception&) {
    }
    Event e = emit(s, step_id, EventKind::system, std::string(kEngineSender), {instr}, {instr},
                   notice, ctx);
    state = std::move(s);
    return Deliver{e};
  }

  for (int guard = 0; guard < kMaxSilentSteps; ++guard) {
    if (s.cursor >= flow.steps.size()) {
      s.status = make_status(SessionStatus::completed);
      state = std::move(s);
      return Complete{};
    }
    sync_loop(s);
    const auto& step = flow.steps[s.cursor];

    if (const auto* p = step.as<AgentPromptStep>()) {
      s.personas[p->agent] = interpolate(p->text, s.bindings);
      Event e = emit(s, step.id, EventKind::instruction, instr, with_instructor(flow, {p->agent}),
                     {instr}, s.personas[p->agent], ctx);
      ++s.cursor;
      state = std::move(s);
      return Deliver{e};
    }
    if (const auto* r = step.as<ReferenceMaterialsStep>()) {
      auto& attached = s.attached_materials[r->agent];
      for (const auto& m : r->materials) push_unique(attached, m);
      auto recipients = r->audience;
      push_unique(recipients, r->agent);
      Event e = emit(s, step.id, EventKind::instruction, instr, with_instructor(flow, recipients),
                     with_instructor(flow, slots_among(flow, r->audience)),
                     text::sanitize("Reference materials: " + text::join(r->materials, ", ")), ctx);
      ++s.cursor;
      state = std::move(s);
      return Deliver{e};
    }
    if (const auto* l = step.as<InstructionLearnerStep>()) {
      Event e = emit(s, step.id, EventKind::instruction, instr, with_instructor(flow, l->to),
                     with_instructor(flow, slots_among(flow, l->to)),
                     interpolate(l->text, s.bindings), ctx);
      ++s.cursor;
      state = std::move(s);
      return Deliver{e};
    }
    if (const auto* a = step.as<InstructionAiStep>()) {
      PromptMessage msg{Origin::instructor, instr, interpolate(a->text, s.bindings)};
      s.pending_invocation =
          build_invocation(s, a->agent, std::move(msg), step.id, a->grade, s.transcript.size(), ctx);
      s.status = make_status(SessionStatus::awaiting_agent, a->agent, step.id);
      ++s.cursor;
      const auto& p = *s.pending_invocation;
      InvokeAgent act{p.agent_id, p.prompt_bundle, p.triggering_step_id, p.invocation_id};
      state = std::move(s);
      return act;
    }
    if (const auto* u = step.as<UserInputStep>()) {
      s.status = make_status(SessionStatus::awaiting_input, u->from, step.id);
      state = std::move(s);
      return AwaitInput{u->from, step.id, u->max_words};
    }
    if (const auto* r = step.as<AiResponseStep>()) {
      auto it = s.undelivered.find(r->agent);
      if (it == s.undelivered.end()) {
        throw Error("UnpairedResponse", "no response from '" + r->agent + "' to deliver",
                    json{{"step_id", step.id}});
      }
      auto vis = resolve_visibility(flow, r->visibility);
      Event e = emit(s, step.id, EventKind::agent_response, r->agent, vis, vis, it->second, ctx);
      s.undelivered.erase(it);
      ++s.cursor;
      state = std::move(s);
      return Deliver{e};
    }
    if (step.as<RepetitionStep>()) {
      advance_loop(s);
      continue;
    }
    if (const auto* b = step.as<BranchStep>()) {
      auto target = evaluate_branch(*b, s.last_agent_response);
      if (!target) {
        ++s.cursor;
        continue;
      }
      const std::size_t to = *flow.step_index(*target);
      if (!s.loop_frames.empty()) {
        const auto& f = s.loop_frames.front();
        const auto first = *flow.step_index(f.first);
        const auto last = *flow.step_index(f.last);
        if (to < first || to > last) pop_loop(s);
      }
      s.cursor = to;
      continue;
    }
    if (const auto* alt = step.as<AlternativeStep>()) {
      s.bindings["role"] = text::sanitize(role_description(flow, alt->slot));
      if (effective_source(s, alt->slot) == Source::human) {
        s.status = make_status(SessionStatus::awaiting_input, alt->slot, alt->human_id);
        state = std::move(s);
        return AwaitInput{alt->slot, alt->human_id, alt->human.max_words};
      }
      if (s.alt_phase == 0) {
        PromptMessage msg{Origin::instructor, instr, interpolate(alt->prompt.text, s.bindings)};
        s.pending_invocation = build_invocation(s, alt->prompt.agent, std::move(msg), alt->prompt_id,
                                                alt->prompt.grade, s.transcript.size(), ctx);
        s.status = make_status(SessionStatus::awaiting_agent, alt->prompt.agent, alt->prompt_id);
        s.alt_phase = 1;
        const auto& p = *s.pending_invocation;
        InvokeAgent act{p.agent_id, p.prompt_bundle, p.triggering_step_id, p.invocation_id};
        state = std::move(s);
        return act;
      }
      auto it = s.undelivered.find(alt->reply.agent);
      if (it == s.undelivered.end()) {
        throw Error("UnpairedResponse", "no response from '" + alt->reply.agent + "' to deliver",
                    json{{"step_id", alt->reply_id}});
      }
      auto vis = resolve_visibility(flow, alt->reply.visibility);
      Event e =
          emit(s, alt->reply_id, EventKind::agent_response, alt->reply.agent, vis, vis, it->second, ctx);
      s.bindings["input:" + alt->human_id] = it->second;
      s.active_respondent = alt->slot;
      s.undelivered.erase(it);
      s.alt_phase = 0;
      ++s.cursor;
      state = std::move(s);
      return Deliver{e};
    }
    throw Error("InternalBlocked", "unhandled step kind at '" + step.id + "'");
  }
  throw Error("NonTerminating", "branches cycle without producing any event");
}

std::optional<EngineAction> pending_action(const SessionState& state) {
  if (state.status.state == SessionStatus::awaiting_input) {
    auto [id, u] = awaited_input(state);
    return AwaitInput{state.status.who, id, u->max_words};
  }
  if (state.status.state == SessionStatus::awaiting_agent && state.pending_invocation) {
    const auto& p = *state.pending_invocation;
    return InvokeAgent{p.agent_id, p.prompt_bundle, p.triggering_step_id, p.invocation_id};
  }
  return std::nullopt;
}

std::vector<Event> submit_input(SessionState& state, std::string_view slot_id,
                                std::string_view content, const EngineContext& ctx) {
  require_not_ended(state);
  if (state.status.state != SessionStatus::awaiting_input || state.status.who != slot_id) {
    throw Error("NotYourTurn", "slot '" + std::string(slot_id) + "' may not submit input now",
                json{{"slot", slot_id}, {"awaiting", state.status.who}});
  }
  auto [input_id, u] = awaited_input(state);
  // Counted on the stored form so replaying the logged text sees the same number.
  const std::string clean = text::sanitize(content);
  const auto words = static_cast<int>(text::word_count(clean));
  if (u->max_words && words > *u->max_words) {
    throw Error("WordLimitExceeded",
                "input has " + std::to_string(words) + " words, limit is " +
                    std::to_string(*u->max_words),
                json{{"limit", *u->max_words}, {"actual", words}});
  }
  SessionState s = state;
  const std::string slot(slot_id);
  record_input(s, slot, input_id, *u, clean, EventKind::user_input, slot, clean, true, ctx);
  Event e = s.transcript.back();
  state = std::move(s);
  return {e};
}

std::vector<Event> apply_agent_response(SessionState& state, std::string_view agent_id,
                                        std::string_view content, const EngineContext& ctx) {
  require_not_ended(state);
  if (state.status.state != SessionStatus::awaiting_agent || !state.pending_invocation) {
    throw Error("NoPendingInvocation", "no agent invocation is outstanding");
  }
  if (state.pending_invocation->agent_id != agent_id) {
    throw Error("AgentMismatch",
                "expected a response from '" + state.pending_invocation->agent_id + "'",
                json{{"expected", state.pending_invocation->agent_id}, {"actual", agent_id}});
  }
  SessionState s = state;
  const auto p = *s.pending_invocation;
  const std::string clean = text::sanitize(content);
  const auto instr = s.flow->instructor_id();
  emit(s, p.triggering_step_id, EventKind::agent_response, p.agent_id, {instr}, {instr}, clean, ctx);
  record_response(s, p.agent_id, p.triggering_step_id, clean, p.graded, true);
  s.pending_invocation.reset();
  s.status = make_status(SessionStatus::running);
  Event e = s.transcript.back();
  state = std::move(s);
  return {e};
}

namespace {

/// Controls act on the blocked form of the state: a running session first
/// takes its next transition when that transition emits nothing, so a
/// control lands on the same state live and in replay.
SessionState settled(const SessionState& state, const EngineContext& ctx) {
  if (state.status.state != SessionStatus::running) return state;
  SessionState s = state;
  const auto before = s.transcript.size();
  try {
    next_action(s, ctx);
  } catch (const Error&) {
    return state;
  }
  return s.transcript.size() == before ? s : state;
}

}  // namespace

std::vector<Event> control_advance(SessionState& state, const EngineContext& ctx) {
  SessionState s = settled(state, ctx);
  if (s.status.state != SessionStatus::awaiting_input) {
    throw Error("Inapplicable", "advance needs a session waiting for learner input");
  }
  auto [input_id, u] = awaited_input(s);
  const std::string slot = s.status.who;
  const std::string text(kAdvancedPlaceholder);
  auto payload = control_payload("advance");
  payload["slot"] = slot;
  payload["text"] = text;
  record_input(s, slot, input_id, *u, text, EventKind::system, s.flow->instructor_id(),
               dump_payload(payload), true, ctx);
  Event e = s.transcript.back();
  state = std::move(s);
  return {e};
}

std::vector<Event> control_skip(SessionState& state, const EngineContext& ctx) {
  require_not_ended(state);
  SessionState s = settled(state, ctx);
  require_not_ended(s);
  const auto& flow = *s.flow;
  const auto instr = flow.instructor_id();
  const std::string ph(kSkippedPlaceholder);
  auto payload = control_payload("skip_step");

  if (s.status.state == SessionStatus::awaiting_input) {
    auto [input_id, u] = awaited_input(s);
    payload["step_id"] = input_id;
    payload["slot"] = s.status.who;
    const std::string slot = s.status.who;
    record_input(s, slot, input_id, *u, ph, EventKind::system, instr, dump_payload(payload), false,
                 ctx);
  } else if (s.status.state == SessionStatus::awaiting_agent) {
    const auto p = *s.pending_invocation;
    payload["step_id"] = p.triggering_step_id;
    payload["agent"] = p.agent_id;
    emit(s, p.triggering_step_id, EventKind::system, instr, {instr}, {instr}, dump_payload(payload),
         ctx);
    record_response(s, p.agent_id, p.triggering_step_id, ph, p.graded, false);
    s.pending_invocation.reset();
    s.status = make_status(SessionStatus::running);
  } else {
    if (s.cursor >= flow.steps.size()) throw Error("Inapplicable", "no step left to skip");
    sync_loop(s);
    const auto& step = flow.steps[s.cursor];
    payload["step_id"] = step.id;
    emit(s, step.id, EventKind::system, instr, {instr}, {instr}, dump_payload(payload), ctx);
    if (const auto* a = step.as<InstructionAiStep>()) {
      record_response(s, a->agent, step.id, ph, a->grade, false);
    } else if (const auto* u = step.as<UserInputStep>()) {
      s.bindings["input:" + step.id] = ph;
      for (const auto& ag : triggered_agents(flow, *u)) record_response(s, ag, step.id, ph, false, false);
    } else if (const auto* r = step.as<AiResponseStep>()) {
      s.undelivered.erase(r->agent);
    } else if (step.as<RepetitionStep>()) {
      pop_loop(s);
    } else if (const auto* alt = step.as<AlternativeStep>()) {
      s.bindings["role"] = text::sanitize(role_description(flow, alt->slot));
      s.bindings["input:" + alt->human_id] = ph;
      s.undelivered.erase(alt->reply.agent);
      s.alt_phase = 0;
    }
    ++s.cursor;
  }
  Event e = s.transcript.back();
  state = std::move(s);
  return {e};
}

std::vector<Event> control_override(SessionState& state, std::string_view text_in,
                                    const EngineContext& ctx) {
  SessionState s = settled(state, ctx);
  if (s.status.state != SessionStatus::awaiting_agent || !s.pending_invocation) {
    throw Error("Inapplicable", "override needs an outstanding agent invocation");
  }
  const auto p = *s.pending_invocation;
  const auto instr = s.flow->instructor_id();
  const std::string clean = text::sanitize(text_in);
  auto payload = control_payload("override_response");
  payload["agent"] = p.agent_id;
  payload["step_id"] = p.triggering_step_id;
  payload["text"] = clean;
  emit(s, p.triggering_step_id, EventKind::system, instr, {instr}, {instr}, dump_payload(payload), ctx);
  record_response(s, p.agent_id, p.triggering_step_id, clean, p.graded, true);
  s.pending_invocation.reset();
  s.status = make_status(SessionStatus::running);
  Event e = s.transcript.back();
  state = std::move(s);
  return {e};
}

std::vector<Event> control_end(SessionState& state, const EngineContext& ctx) {
  require_not_ended(state);
  SessionState s = settled(state, ctx);
  require_not_ended(s);
  const auto step_id = current_step_id(s);
  auto everyone = all_slots(*s.flow);
  emit(s, step_id, EventKind::system, s.flow->instructor_id(), everyone, everyone,
       dump_payload(control_payload("end")), ctx);
  s.pending_invocation.reset();
  s.status = make_status(SessionStatus::ended_by_instructor);
  Event e = s.transcript.back();
  state = std::move(s);
  return {e};
}

DriveResult drive(SessionState& state, const EngineContext& ctx) {
  DriveResult r{{}, Complete{}};
  for (;;) {
    auto act = next_action(state, ctx);
    if (auto* d = std::get_if<Deliver>(&act)) {
      r.events.push_back(d->event);
      continue;
    }
    r.blocking = std::move(act);
    return r;
  }
}

nlohmann::json state_to_json(const SessionState& s) {
  json j;
  j["session_id"] = s.session_id;
  j["flow_id"] = s.flow ? s.flow->id : "";
  json ov = json::object();
  for (const auto& [k, v] : s.overrides) ov[k] = std::string(to_string(v));
  j["overrides"] = ov;
  j["cursor"] = s.cursor;
  j["alt_phase"] = s.alt_phase;
  json frames = json::array();
  for (const auto& f : s.loop_frames) {
    frames.push_back({{"repetition_step", f.repetition_step},
                      {"first", f.first},
                      {"last", f.last},
                      {"count", f.count},
                      {"iteration", f.iteration},
                      {"correct_streak", f.correct_streak}});
  }
  j["loop_frames"] = frames;
  j["bindings"] = s.bindings;
  if (s.pending_invocation) {
    const auto& p = *s.pending_invocation;
    j["pending_invocation"] = {{"agent_id", p.agent_id},
                               {"prompt_bundle", to_json(p.prompt_bundle)},
                               {"triggering_step_id", p.triggering_step_id},
                               {"invocation_id", p.invocation_id},
                               {"graded", p.graded}};
  } else {
    j["pending_invocation"] = nullptr;
  }
  j["undelivered"] = s.undelivered;
  j["last_agent_response"] = s.last_agent_response ? json(*s.last_agent_response) : json(nullptr);
  json tallies = json::object();
  for (const auto& [k, t] : s.tallies) tallies[k] = {{"correct", t.correct}, {"total_graded", t.total_graded}};
  j["tallies"] = tallies;
  j["active_respondent"] = s.active_respondent;
  j["personas"] = s.personas;
  j["attached_materials"] = s.attached_materials;
  j["notices"] = s.notices;
  j["status"] = {{"state", to_string(s.status.state)},
                 {"who", s.status.who},
                 {"step_id", s.status.step_id}};
  j["next_seq"] = s.next_seq;
  json events = json::array();
  for (const auto& e : s.transcript) {
    auto ej = to_json(e, s.session_id);
    ej.erase("ts");
    events.push_back(json::parse(ej.dump()));
  }
  j["transcript"] = events;
  return j;
}

bool equivalent(const SessionState& a, const SessionState& b) {
  return state_to_json(a) == state_to_json(b);
}

nlohmann::json system_payload(const Event& e) {
  if (e.kind != EventKind::system || e.content.empty() || e.content.front() != '{') return nullptr;
  try {
    return json::parse(e.content);
  } catch (const json::exception&) {
    return nullptr;
  }
}

}  // namespace learnflow
