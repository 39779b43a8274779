#include "learnflow/flow_document.hpp"

#include <initializer_list>
#include <set>

#include "learnflow/error.hpp"

namespace learnflow {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

[[noreturn]] void malformed(const std::string& msg) {
  throw Error("MalformedDocument", msg);
}

[[noreturn]] void missing(const std::string& what) {
  throw Error("MissingField", "missing field: " + what, json{{"field", what}});
}

void check_keys(const json& obj, std::initializer_list<std::string_view> allowed,
                const std::string& where) {
  if (!obj.is_object()) malformed(where + " must be an object");
  for (const auto& [key, _] : obj.items()) {
    bool known = false;
    for (auto a : allowed) known = known || key == a;
    if (!known) malformed("unknown key '" + key + "' in " + where);
  }
}

const json& require(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) missing(where + "." + key);
  return *it;
}

std::string get_string(const json& obj, const char* key, const std::string& where) {
  const auto& v = require(obj, key, where);
  if (!v.is_string()) malformed(where + "." + key + " must be a string");
  return v.get<std::string>();
}

std::string opt_string(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) return {};
  if (!it->is_string()) malformed(where + "." + key + " must be a string");
  return it->get<std::string>();
}

std::vector<std::string> string_list(const json& v, const std::string& where) {
  if (!v.is_array()) malformed(where + " must be an array of strings");
  std::vector<std::string> out;
  for (const auto& e : v) {
    if (!e.is_string()) malformed(where + " must be an array of strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

std::vector<std::string> get_list(const json& obj, const char* key, const std::string& where) {
  return string_list(require(obj, key, where), where + "." + key);
}

std::vector<std::string> opt_list(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) return {};
  return string_list(*it, where + "." + key);
}

int positive_int(const json& v, const std::string& where) {
  if (!v.is_number_integer() || v.get<long long>() <= 0 ||
      v.get<long long>() > 1'000'000'000) {
    malformed(where + " must be a positive integer");
  }
  return v.get<int>();
}

UserInputStep parse_user_input(const json& s, const std::string& where) {
  UserInputStep u;
  u.from = get_string(s, "from", where);
  u.to = get_list(s, "to", where);
  if (auto it = s.find("max_words"); it != s.end()) {
    u.max_words = positive_int(*it, where + ".max_words");
  }
  return u;
}

InstructionAiStep parse_instruction_ai(const json& s, const std::string& where) {
  InstructionAiStep st;
  st.agent = get_string(s, "agent", where);
  st.text = get_string(s, "text", where);
  if (auto it = s.find("grade"); it != s.end()) {
    if (!it->is_boolean()) malformed(where + ".grade must be a boolean");
    st.grade = it->get<bool>();
  }
  return st;
}

AiResponseStep parse_ai_response(const json& s, const std::string& where) {
  AiResponseStep st;
  st.agent = get_string(s, "agent", where);
  const auto& v = require(s, "visibility", where);
  if (v.is_string()) {
    if (v.get<std::string>() != "all") malformed(where + ".visibility must be a list or \"all\"");
    st.visibility.all = true;
  } else {
    st.visibility.slots = string_list(v, where + ".visibility");
  }
  return st;
}

std::string step_kind(const json& s, const std::string& where) {
  auto it = s.find("kind");
  if (it == s.end()) missing(where + ".kind");
  if (!it->is_string()) malformed(where + ".kind must be a string");
  return it->get<std::string>();
}

std::string step_no(const json& s, const std::string& where) {
  auto it = s.find("no");
  if (it == s.end()) missing(where + ".no");
  if (!it->is_string() || it->get<std::string>().empty()) {
    malformed(where + ".no must be a non-empty string");
  }
  return it->get<std::string>();
}

Step parse_step(const json& s, std::size_t index) {
  const std::string where = "steps[" + std::to_string(index) + "]";
  if (!s.is_object()) malformed(where + " must be an object");
  Step step;
  step.id = step_no(s, where);
  const std::string kind = step_kind(s, where);

  if (kind == "agent_prompt") {
    check_keys(s, {"no", "kind", "agent", "text"}, where);
    step.body = AgentPromptStep{get_string(s, "agent", where), get_string(s, "text", where)};
  } else if (kind == "reference_materials") {
    check_keys(s, {"no", "kind", "agent", "materials", "audience"}, where);
    step.body = ReferenceMaterialsStep{get_string(s, "agent", where),
                                       get_list(s, "materials", where),
                                       get_list(s, "audience", where)};
  } else if (kind == "instruction_learner") {
    check_keys(s, {"no", "kind", "to", "text"}, where);
    step.body = InstructionLearnerStep{get_list(s, "to", where), get_string(s, "text", where)};
  } else if (kind == "instruction_ai") {
    check_keys(s, {"no", "kind", "agent", "text", "grade"}, where);
    step.body = parse_instruction_ai(s, where);
  } else if (kind == "user_input") {
    check_keys(s, {"no", "kind", "from", "to", "max_words"}, where);
    step.body = parse_user_input(s, where);
  } else if (kind == "ai_response") {
    check_keys(s, {"no", "kind", "agent", "visibility"}, where);
    step.body = parse_ai_response(s, where);
  } else if (kind == "repetition") {
    check_keys(s, {"no", "kind", "range", "count", "exit"}, where);
    RepetitionStep r;
    auto range = get_list(s, "range", where);
    if (range.size() != 2) malformed(where + ".range must hold exactly two step ids");
    r.first = range[0];
    r.last = range[1];
    const auto& count = require(s, "count", where);
    if (count.is_string()) {
      // Only a template placeholder may stand in for the number.
      const auto c = count.get<std::string>();
      if (c.size() < 5 || c.rfind("{{", 0) != 0 || c.substr(c.size() - 2) != "}}") {
        malformed(where + ".count must be a positive integer");
      }
      r.count_template = c;
    } else {
      r.count = positive_int(count, where + ".count");
    }
    if (auto it = s.find("exit"); it != s.end()) {
      check_keys(*it, {"consecutive_correct"}, where + ".exit");
      r.exit = MasteryRule{positive_int(require(*it, "consecutive_correct", where + ".exit"),
                                        where + ".exit.consecutive_correct")};
    }
    step.body = r;
  } else if (kind == "branch") {
    check_keys(s, {"no", "kind", "on", "contains_token", "goto"}, where);
    if (get_string(s, "on", where) != "last_agent_response") {
      malformed(where + ".on must be \"last_agent_response\"");
    }
    step.body = BranchStep{get_string(s, "contains_token", where), get_string(s, "goto", where)};
  } else if (kind == "alternative") {
    check_keys(s, {"no", "kind", "human_variant", "ai_variant", "slot"}, where);
    AlternativeStep alt;
    alt.slot = get_string(s, "slot", where);
    const auto& hv = require(s, "human_variant", where);
    const std::string hw = where + ".human_variant";
    if (!hv.is_object()) malformed(hw + " must be an object");
    check_keys(hv, {"no", "kind", "from", "to", "max_words"}, hw);
    if (step_kind(hv, hw) != "user_input") malformed(hw + " must be a user_input step");
    alt.human_id = step_no(hv, hw);
    alt.human = parse_user_input(hv, hw);

    const auto& av = require(s, "ai_variant", where);
    const std::string aw = where + ".ai_variant";
    if (!av.is_array() || av.size() != 2) {
      malformed(aw + " must be [instruction_ai, ai_response]");
    }
    check_keys(av[0], {"no", "kind", "agent", "text", "grade"}, aw + "[0]");
    check_keys(av[1], {"no", "kind", "agent", "visibility"}, aw + "[1]");
    if (step_kind(av[0], aw) != "instruction_ai" || step_kind(av[1], aw) != "ai_response") {
      malformed(aw + " must be [instruction_ai, ai_response]");
    }
    alt.prompt_id = step_no(av[0], aw + "[0]");
    alt.prompt = parse_instruction_ai(av[0], aw + "[0]");
    alt.reply_id = step_no(av[1], aw + "[1]");
    alt.reply = parse_ai_response(av[1], aw + "[1]");
    step.body = std::move(alt);
  } else {
    throw Error("UnknownStepKind", where + ": unknown step kind '" + kind + "'",
                json{{"kind", kind}, {"step_id", step.id}});
  }
  return step;
}

ParticipantSlot parse_slot(const json& s, std::size_t index) {
  const std::string where = "roster[" + std::to_string(index) + "]";
  check_keys(s, {"slot_id", "role", "team", "source"}, where);
  ParticipantSlot slot;
  slot.slot_id = get_string(s, "slot_id", where);
  const auto role = get_string(s, "role", where);
  auto r = role_from_string(role);
  if (!r) malformed(where + ".role must be instructor, learner or ai-agent");
  slot.role = *r;
  if (s.contains("team")) slot.team = get_string(s, "team", where);
  if (s.contains("source")) {
    auto src = source_from_string(get_string(s, "source", where));
    if (!src) malformed(where + ".source must be human or ai");
    slot.source = *src;
  }
  return slot;
}

AgentConfig parse_agent(const json& a, std::size_t index) {
  const std::string where = "agents[" + std::to_string(index) + "]";
  check_keys(a, {"agent_id", "persona_prompt", "material_refs", "params",
                 "context_budget_words"},
             where);
  AgentConfig cfg;
  cfg.agent_id = get_string(a, "agent_id", where);
  cfg.persona_prompt = opt_string(a, "persona_prompt", where);
  cfg.material_refs = opt_list(a, "material_refs", where);
  if (auto it = a.find("params"); it != a.end()) {
    if (!it->is_object()) malformed(where + ".params must be an object");
    cfg.params = *it;
  }
  if (auto it = a.find("context_budget_words"); it != a.end()) {
    cfg.context_budget_words = positive_int(*it, where + ".context_budget_words");
  }
  return cfg;
}

}  // namespace

FlowDefinition parse_flow(std::string_view document) {
  json doc;
  try {
    doc = json::parse(document);
  } catch (const json::parse_error& e) {
    malformed(std::string("invalid JSON: ") + e.what());
  }
  return parse_flow(doc);
}

FlowDefinition parse_flow(const json& doc) {
  check_keys(doc, {"id", "title", "objectives", "roster", "agents", "steps", "templates"},
             "flow document");
  FlowDefinition flow;
  flow.id = get_string(doc, "id", "flow");
  if (flow.id.empty()) malformed("flow.id must be non-empty");
  flow.title = get_string(doc, "title", "flow");
  flow.objectives = get_list(doc, "objectives", "flow");

  const auto& roster = require(doc, "roster", "flow");
  if (!roster.is_array()) malformed("flow.roster must be an array");
  for (std::size_t i = 0; i < roster.size(); ++i) flow.roster.push_back(parse_slot(roster[i], i));

  const auto& agents = require(doc, "agents", "flow");
  if (!agents.is_array()) malformed("flow.agents must be an array");
  for (std::size_t i = 0; i < agents.size(); ++i) flow.agents.push_back(parse_agent(agents[i], i));

  const auto& steps = require(doc, "steps", "flow");
  if (!steps.is_array()) malformed("flow.steps must be an array");
  if (steps.empty()) throw Error("MissingField", "steps non-empty", json{{"field", "steps"}});

  std::set<std::string> seen;
  auto claim = [&](const std::string& id) {
    if (!seen.insert(id).second) {
      throw Error("DuplicateStepId", "duplicate step id '" + id + "'", json{{"step_id", id}});
    }
  };
  for (std::size_t i = 0; i < steps.size(); ++i) {
    Step step = parse_step(steps[i], i);
    claim(step.id);
    if (const auto* alt = step.as<AlternativeStep>()) {
      claim(alt->human_id);
      claim(alt->prompt_id);
      claim(alt->reply_id);
    }
    flow.steps.push_back(std::move(step));
  }

  if (auto it = doc.find("templates"); it != doc.end()) {
    if (!it->is_object()) malformed("flow.templates must be an object");
    std::map<std::string, std::string> t;
    for (const auto& [k, v] : it->items()) {
      if (!v.is_string()) malformed("flow.templates values must be strings");
      t[k] = v.get<std::string>();
    }
    flow.templates = std::move(t);
  }
  return flow;
}

namespace {

ordered_json user_input_doc(const std::string& id, const UserInputStep& u) {
  ordered_json j;
  j["no"] = id;
  j["kind"] = "user_input";
  j["from"] = u.from;
  j["to"] = u.to;
  if (u.max_words) j["max_words"] = *u.max_words;
  return j;
}

ordered_json instruction_ai_doc(const std::string& id, const InstructionAiStep& s) {
  ordered_json j;
  j["no"] = id;
  j["kind"] = "instruction_ai";
  j["agent"] = s.agent;
  j["text"] = s.text;
  if (s.grade) j["grade"] = true;
  return j;
}

ordered_json ai_response_doc(const std::string& id, const AiResponseStep& s) {
  ordered_json j;
  j["no"] = id;
  j["kind"] = "ai_response";
  j["agent"] = s.agent;
  if (s.visibility.all) {
    j["visibility"] = "all";
  } else {
    j["visibility"] = s.visibility.slots;
  }
  return j;
}

struct StepDoc {
  const std::string& id;

  ordered_json head(std::string_view kind) const {
    ordered_json j;
    j["no"] = id;
    j["kind"] = kind;
    return j;
  }
  ordered_json operator()(const AgentPromptStep& s) const {
    auto j = head("agent_prompt");
    j["agent"] = s.agent;
    j["text"] = s.text;
    return j;
  }
  ordered_json operator()(const ReferenceMaterialsStep& s) const {
    auto j = head("reference_materials");
    j["agent"] = s.agent;
    j["materials"] = s.materials;
    j["audience"] = s.audience;
    return j;
  }
  ordered_json operator()(const InstructionLearnerStep& s) const {
    auto j = head("instruction_learner");
    j["to"] = s.to;
    j["text"] = s.text;
    return j;
  }
  ordered_json operator()(const InstructionAiStep& s) const { return instruction_ai_doc(id, s); }
  ordered_json operator()(const UserInputStep& s) const { return user_input_doc(id, s); }
  ordered_json operator()(const AiResponseStep& s) const { return ai_response_doc(id, s); }
  ordered_json operator()(const RepetitionStep& s) const {
    auto j = head("repetition");
    j["range"] = {s.first, s.last};
    if (s.count_template.empty()) {
      j["count"] = s.count;
    } else {
      j["count"] = s.count_template;
    }
    if (s.exit) j["exit"] = {{"consecutive_correct", s.exit->consecutive_correct}};
    return j;
  }
  ordered_json operator()(const BranchStep& s) const {
    auto j = head("branch");
    j["on"] = "last_agent_response";
    j["contains_token"] = s.contains_token;
    j["goto"] = s.target;
    return j;
  }
  ordered_json operator()(const AlternativeStep& s) const {
    auto j = head("alternative");
    j["human_variant"] = user_input_doc(s.human_id, s.human);
    j["ai_variant"] = {instruction_ai_doc(s.prompt_id, s.prompt),
                       ai_response_doc(s.reply_id, s.reply)};
    j["slot"] = s.slot;
    return j;
  }
};

}  // namespace

ordered_json to_document(const FlowDefinition& flow) {
  ordered_json doc;
  doc["id"] = flow.id;
  doc["title"] = flow.title;
  doc["objectives"] = flow.objectives;
  doc["roster"] = ordered_json::array();
  for (const auto& s : flow.roster) {
    ordered_json j;
    j["slot_id"] = s.slot_id;
    j["role"] = to_string(s.role);
    if (s.team) j["team"] = *s.team;
    if (s.source) j["source"] = to_string(*s.source);
    doc["roster"].push_back(std::move(j));
  }
  doc["agents"] = ordered_json::array();
  for (const auto& a : flow.agents) {
    ordered_json j;
    j["agent_id"] = a.agent_id;
    if (!a.persona_prompt.empty()) j["persona_prompt"] = a.persona_prompt;
    if (!a.material_refs.empty()) j["material_refs"] = a.material_refs;
    if (!a.params.empty()) j["params"] = ordered_json::parse(a.params.dump());
    if (a.context_budget_words != kDefaultContextBudgetWords) {
      j["context_budget_words"] = a.context_budget_words;
    }
    doc["agents"].push_back(std::move(j));
  }
  doc["steps"] = ordered_json::array();
  for (const auto& step : flow.steps) {
    doc["steps"].push_back(std::visit(StepDoc{step.id}, step.body));
  }
  if (flow.templates) {
    ordered_json t = ordered_json::object();
    for (const auto& [k, v] : *flow.templates) t[k] = v;
    doc["templates"] = std::move(t);
  }
  return doc;
}

std::string serialize_flow(const FlowDefinition& flow, int indent) {
  return to_document(flow).dump(indent);
}

}  // namespace learnflow
