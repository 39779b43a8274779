#include "learnflow/exemplars.hpp"

#include <map>

#include <nlohmann/json.hpp>

#include "learnflow/error.hpp"
#include "learnflow/flow_document.hpp"

namespace learnflow {

namespace {

using ojson = nlohmann::ordered_json;

constexpr const char* kQuiz = R"json({
  "id": "quiz-drill",
  "title": "AI-Driven Quiz Activity",
  "objectives": ["Practice identifying factors that regulate population density"],
  "roster": [
    {"slot_id": "instructor", "role": "instructor", "source": "human"},
    {"slot_id": "learner-1", "role": "learner", "source": "human"}
  ],
  "agents": [{"agent_id": "biology-tutor"}],
  "steps": [
    {"no": "1", "kind": "agent_prompt", "agent": "biology-tutor", "text": "You are a biology professor."},
    {"no": "2", "kind": "reference_materials", "agent": "biology-tutor", "materials": ["biology-course"], "audience": ["learner-1"]},
    {"no": "3", "kind": "instruction_learner", "to": ["learner-1"],
     "text": "You will be given 10 multiple-choice questions in biology. Find the correct answers."},
    {"no": "4", "kind": "instruction_ai", "agent": "biology-tutor",
     "text": "Generate a multiple-choice question about ecological population control, without revealing the correct answer"},
    {"no": "5", "kind": "ai_response", "agent": "biology-tutor", "visibility": ["learner-1"]},
    {"no": "6", "kind": "user_input", "from": "learner-1", "to": ["instructor"]},
    {"no": "7", "kind": "instruction_ai", "agent": "biology-tutor",
     "text": "Student answered: {{input:6}}. Give short feedback.", "grade": true},
    {"no": "8", "kind": "ai_response", "agent": "biology-tutor", "visibility": ["learner-1"]},
    {"no": "9", "kind": "repetition", "range": ["4", "8"], "count": 10},
    {"no": "10", "kind": "instruction_ai", "agent": "biology-tutor",
     "text": "Give the learner final feedback for a 10-question quiz activity. Correct answers: {{score}}."},
    {"no": "11", "kind": "ai_response", "agent": "biology-tutor", "visibility": ["learner-1"]}
  ]
})json";

constexpr const char* kDebate = R"json({
  "id": "debate",
  "title": "AI-Facilitated Debate",
  "objectives": ["Argue a position on algorithmic accountability and respond to counterarguments"],
  "roster": [
    {"slot_id": "instructor", "role": "instructor", "source": "human"},
    {"slot_id": "learner-1", "role": "learner", "source": "human"}
  ],
  "agents": [{"agent_id": "sociology-expert"}],
  "steps": [
    {"no": "1", "kind": "agent_prompt", "agent": "sociology-expert", "text": "You are a technology sociology expert."},
    {"no": "2", "kind": "instruction_learner", "to": ["learner-1"],
     "text": "You will participate in a debate as part of a technology sociology course. Present your arguments on the given topic, and the AI will respond to your points during the discussion."},
    {"no": "3", "kind": "instruction_ai", "agent": "sociology-expert",
     "text": "We will hold a debate session for a technology sociology course. Suggest a debate topic."},
    {"no": "4", "kind": "ai_response", "agent": "sociology-expert", "visibility": ["instructor"]},
    {"no": "5", "kind": "instruction_learner", "to": ["learner-1"], "text": "Please provide your argument or counterargument."},
    {"no": "6", "kind": "user_input", "from": "learner-1", "to": ["instructor"]},
    {"no": "7", "kind": "instruction_ai", "agent": "sociology-expert",
     "text": "Please respond to the following learner argument from a technology sociology expert's perspective: {{input:6}}."},
    {"no": "8", "kind": "ai_response", "agent": "sociology-expert", "visibility": ["learner-1"]},
    {"no": "9", "kind": "repetition", "range": ["5", "8"], "count": 5},
    {"no": "10", "kind": "instruction_learner", "to": ["learner-1"],
     "text": "You have completed 5 rounds of debate. Please summarize each part's argument and present your final opinion."},
    {"no": "11", "kind": "instruction_ai", "agent": "sociology-expert",
     "text": "Summarize the key points discussed in the debate and provide your evaluation or reflection on the arguments presented."},
    {"no": "12", "kind": "ai_response", "agent": "sociology-expert", "visibility": ["learner-1"]},
    {"no": "13", "kind": "user_input", "from": "instructor", "to": ["learner-1"]}
  ]
})json";

constexpr const char* kCounseling = R"json({
  "id": "counseling-simulation",
  "title": "Virtual Counseling Simulation for Pre-Service Teachers",
  "objectives": ["Practice counseling an at-risk youth until the session goals are met"],
  "roster": [
    {"slot_id": "instructor", "role": "instructor", "source": "human"},
    {"slot_id": "learner-1", "role": "learner", "source": "human"}
  ],
  "agents": [{"agent_id": "counselee", "persona_prompt": "You support pre-service teacher training."}],
  "steps": [
    {"no": "1", "kind": "instruction_learner", "to": ["learner-1"],
     "text": "We will conduct a virtual counseling session with an at-risk youth as part of pre-service teacher training. These are the situation and consulting goals of today's session. As a counsellor, please carry out the session with the student."},
    {"no": "2", "kind": "instruction_ai", "agent": "counselee",
     "text": "We will conduct a virtual counseling session with an at-risk youth as part of pre-service teacher training. Please provide a situation and counseling goals for this session."},
    {"no": "3", "kind": "ai_response", "agent": "counselee", "visibility": ["learner-1"]},
    {"no": "4", "kind": "agent_prompt", "agent": "counselee",
     "text": "Please take on the role of an adolescent who is experiencing difficulties and is seeking counseling and support."},
    {"no": "5", "kind": "user_input", "from": "learner-1", "to": ["counselee"]},
    {"no": "6", "kind": "ai_response", "agent": "counselee", "visibility": ["learner-1"]},
    {"no": "7", "kind": "instruction_ai", "agent": "counselee",
     "text": "Was the goal of the counseling session achieved? Please answer with yes or no."},
    {"no": "8", "kind": "branch", "on": "last_agent_response", "contains_token": "yes", "goto": "10"},
    {"no": "9", "kind": "repetition", "range": ["5", "8"], "count": 10},
    {"no": "10", "kind": "instruction_ai", "agent": "counselee", "text": "Summarize and evaluate the session."},
    {"no": "11", "kind": "ai_response", "agent": "counselee", "visibility": ["learner-1"]},
    {"no": "12", "kind": "user_input", "from": "instructor", "to": ["learner-1"]}
  ]
})json";

constexpr const char* kResearch = R"json({
  "id": "collaborative-research",
  "title": "AI-Powered Collaborative Research Project",
  "objectives": ["Gather sources on AI and sustainable innovation and build a position together"],
  "roster": [
    {"slot_id": "instructor", "role": "instructor", "source": "human"},
    {"slot_id": "learners", "role": "learner", "team": "research-group", "source": "human"}
  ],
  "agents": [{"agent_id": "research-mate", "persona_prompt": "You are an AI learning mate supporting a student research group."}],
  "steps": [
    {"no": "1", "kind": "instruction_learner", "to": ["learners"],
     "text": "Topic: AI and Sustainable Innovation. Explore diverse information sources, such as academic articles, news reports, and policy briefs, and submit your findings through the AI-LMS."},
    {"no": "2", "kind": "user_input", "from": "learners", "to": ["instructor"]},
    {"no": "3", "kind": "instruction_ai", "agent": "research-mate",
     "text": "Summarize, compare, and organize the collected materials.\n\nCollected materials:\n{{input:2}}"},
    {"no": "4", "kind": "ai_response", "agent": "research-mate", "visibility": ["learners"]},
    {"no": "5", "kind": "instruction_learner", "to": ["learners"],
     "text": "Review the synthesized summary provided by the AI Learning Mate. Based on this information, develop and submit your individual argument or position on the topic."},
    {"no": "6", "kind": "user_input", "from": "learners", "to": ["instructor"]},
    {"no": "7", "kind": "instruction_ai", "agent": "research-mate",
     "text": "Compare and synthesize the individual papers submitted by learners. Highlight key similarities and differences in their arguments.\n\nPapers:\n{{input:6}}"},
    {"no": "8", "kind": "ai_response", "agent": "research-mate", "visibility": ["learners"]},
    {"no": "9", "kind": "instruction_learner", "to": ["learners"],
     "text": "Review the AI's comparative summary of the submitted papers. Reflect on the feedback and finalize your argument or perspective accordingly."},
    {"no": "10", "kind": "user_input", "from": "learners", "to": ["instructor"]},
    {"no": "11", "kind": "user_input", "from": "instructor", "to": ["learners"]}
  ]
})json";

constexpr const char* kDrillTemplate = R"json({
  "id": "drill",
  "title": "Drill and practice: {{topic}}",
  "objectives": ["Answer {{n_questions}} practice questions on {{topic}}"],
  "roster": [
    {"slot_id": "instructor", "role": "instructor", "source": "human"},
    {"slot_id": "learner-1", "role": "learner", "source": "human"}
  ],
  "agents": [{"agent_id": "tutor"}],
  "steps": [
    {"no": "1", "kind": "agent_prompt", "agent": "tutor", "text": "You are a professor who teaches {{topic}}."},
    {"no": "2", "kind": "reference_materials", "agent": "tutor", "materials": ["course-materials"], "audience": ["learner-1"]},
    {"no": "3", "kind": "instruction_learner", "to": ["learner-1"],
     "text": "You will be given {{n_questions}} multiple-choice questions about {{topic}}. Find the correct answers."},
    {"no": "4", "kind": "instruction_ai", "agent": "tutor",
     "text": "Generate a multiple-choice question about {{topic}}, without revealing the correct answer"},
    {"no": "5", "kind": "ai_response", "agent": "tutor", "visibility": ["learner-1"]},
    {"no": "6", "kind": "user_input", "from": "learner-1", "to": ["instructor"]},
    {"no": "7", "kind": "instruction_ai", "agent": "tutor",
     "text": "Student answered: {{input:6}}. Give short feedback.", "grade": true},
    {"no": "8", "kind": "ai_response", "agent": "tutor", "visibility": ["learner-1"]},
    {"no": "9", "kind": "repetition", "range": ["4", "8"], "count": "{{n_questions}}"},
    {"no": "10", "kind": "instruction_ai", "agent": "tutor",
     "text": "Give the learner final feedback for a {{n_questions}}-question quiz activity. Correct answers: {{score}}."},
    {"no": "11", "kind": "ai_response", "agent": "tutor", "visibility": ["learner-1"]}
  ],
  "templates": {
    "topic": "subject of the practice questions",
    "n_questions": "number of question rounds (positive integer)"
  }
})json";

constexpr const char* kDebateTemplate = R"json({
  "id": "debate-template",
  "title": "Debate with an expert agent: {{field}}",
  "objectives": ["Argue and defend a position in {{field}}"],
  "roster": [
    {"slot_id": "instructor", "role": "instructor", "source": "human"},
    {"slot_id": "learner-1", "role": "learner", "source": "human"}
  ],
  "agents": [{"agent_id": "expert"}],
  "steps": [
    {"no": "1", "kind": "agent_prompt", "agent": "expert", "text": "You are an expert in {{field}}."},
    {"no": "2", "kind": "instruction_learner", "to": ["learner-1"],
     "text": "You will participate in a debate as part of a {{field}} course. Present your arguments on the given topic, and the AI will respond to your points during the discussion."},
    {"no": "3", "kind": "instruction_ai", "agent": "expert",
     "text": "We will hold a debate session for a {{field}} course. Suggest a debate topic."},
    {"no": "4", "kind": "ai_response", "agent": "expert", "visibility": "all"},
    {"no": "5", "kind": "instruction_learner", "to": ["learner-1"], "text": "Please provide your argument or counterargument."},
    {"no": "6", "kind": "user_input", "from": "learner-1", "to": ["instructor"]},
    {"no": "7", "kind": "instruction_ai", "agent": "expert",
     "text": "Please respond to the following learner argument from the perspective of an expert in {{field}}: {{input:6}}."},
    {"no": "8", "kind": "ai_response", "agent": "expert", "visibility": ["learner-1"]},
    {"no": "9", "kind": "repetition", "range": ["5", "8"], "count": "{{rounds}}"},
    {"no": "10", "kind": "instruction_ai", "agent": "expert",
     "text": "Summarize the key points discussed in the debate and provide your evaluation or reflection on the arguments presented."},
    {"no": "11", "kind": "ai_response", "agent": "expert", "visibility": ["learner-1"]},
    {"no": "12", "kind": "user_input", "from": "instructor", "to": ["learner-1"]}
  ],
  "templates": {
    "field": "course subject framing the debate",
    "rounds": "number of argument rounds (positive integer)"
  }
})json";

constexpr const char* kCollaborateTemplate = R"json({
  "id": "collaborate",
  "title": "Collaborative research: {{topic}}",
  "objectives": ["Build a shared understanding of {{topic}} from multiple sources"],
  "roster": [
    {"slot_id": "instructor", "role": "instructor", "source": "human"},
    {"slot_id": "learners", "role": "learner", "team": "research-group", "source": "human"}
  ],
  "agents": [{"agent_id": "research-mate", "persona_prompt": "You are an AI learning mate supporting a student research group."}],
  "steps": [
    {"no": "1", "kind": "instruction_learner", "to": ["learners"],
     "text": "Topic: {{topic}}. Explore diverse information sources and submit your findings."},
    {"no": "2", "kind": "user_input", "from": "learners", "to": ["instructor"]},
    {"no": "3", "kind": "instruction_ai", "agent": "research-mate",
     "text": "Summarize, compare, and organize the collected materials.\n\nCollected materials:\n{{input:2}}"},
    {"no": "4", "kind": "ai_response", "agent": "research-mate", "visibility": ["learners"]},
    {"no": "5", "kind": "instruction_learner", "to": ["learners"],
     "text": "Review the synthesized summary and submit your individual position on {{topic}}."},
    {"no": "6", "kind": "user_input", "from": "learners", "to": ["instructor"]},
    {"no": "7", "kind": "instruction_ai", "agent": "research-mate",
     "text": "Compare and synthesize the individual papers. Highlight key similarities and differences.\n\nPapers:\n{{input:6}}"},
    {"no": "8", "kind": "ai_response", "agent": "research-mate", "visibility": ["learners"]},
    {"no": "9", "kind": "user_input", "from": "learners", "to": ["instructor"]},
    {"no": "10", "kind": "user_input", "from": "instructor", "to": ["learners"]}
  ],
  "templates": {"topic": "research theme for the group"}
})json";

// The team debate repeats one turn shape 12 times, so it is generated.
ojson team_debate() {
  const std::vector<std::string> debaters{"a1", "a2", "a3", "b1", "b2", "b3"};
  ojson roster = ojson::array();
  roster.push_back({{"slot_id", "instructor"}, {"role", "instructor"}, {"source", "human"}});
  for (const auto& d : debaters) {
    const std::string team = d[0] == 'a' ? "A" : "B";
    roster.push_back({{"slot_id", d}, {"role", "learner"}, {"team", team}, {"source", "human"}});
  }
  ojson agents = ojson::array();
  for (const auto& d : debaters) {
    const std::string team = d[0] == 'a' ? "A" : "B";
    const std::string position = d[0] == 'a' ? "Position A" : "Position B";
    agents.push_back({{"agent_id", d},
                      {"persona_prompt", "You are member " + std::string(1, d[1]) + " of team " + team +
                                             " in a 3-on-3 debate, arguing " + position +
                                             ". Use clear logic, supporting evidence, and persuasive clarity."}});
  }
  agents.push_back({{"agent_id", "judge"},
                    {"persona_prompt", "You are an impartial debate judge."}});

  ojson steps = ojson::array();
  auto others = [&](const std::string& self) {
    ojson to = ojson::array();
    for (const auto& d : debaters) {
      if (d != self) to.push_back(d);
    }
    return to;
  };
  auto instruct = [&](const std::string& no, const std::string& text) {
    steps.push_back({{"no", no}, {"kind", "instruction_learner"}, {"to", debaters}, {"text", text}});
  };
  auto turn = [&](const std::string& n, const std::string& slot) {
    steps.push_back(
        {{"no", n + "-alt"},
         {"kind", "alternative"},
         {"human_variant",
          {{"no", n + "-1"}, {"kind", "user_input"}, {"from", slot}, {"to", others(slot)}, {"max_words", 120}}},
         {"ai_variant",
          ojson::array({{{"no", n + "-2.prompt"},
                         {"kind", "instruction_ai"},
                         {"agent", slot},
                         {"text", "Generate an argument for the assigned role: {{role}}. Stay within 120 words."}},
                        {{"no", n + "-2"}, {"kind", "ai_response"}, {"agent", slot}, {"visibility", "all"}}})},
         {"slot", slot}});
  };

  instruct("1",
           "We will conduct a 3-on-3 debate on the given topic. Teams will take either Position A or "
           "Position B. Each team member should contribute within a 120-word limit according to their "
           "assigned role.");
  instruct("2", "Team A Member 1: Please enter your Opening Statement.");
  turn("3", "a1");
  instruct("4", "Team B Member 1: Please enter your Opening Statement.");
  turn("5", "b1");
  instruct("6", "Team A Member 2: Please write your Rebuttal.");
  turn("7", "a2");
  instruct("8", "Team B Member 2: Please write your Rebuttal.");
  turn("9", "b2");
  instruct("10", "Team A Member 3: Please pose a Cross-Question to Team B.");
  turn("10", "a3");
  instruct("11", "Team B Member 3: Please pose a Cross-Question to Team A.");
  turn("12", "b3");
  instruct("13", "Team A Member 1: Please respond to the question from Team B.");
  turn("14", "a1");
  instruct("15", "Team B Member 1: Please respond to the question from Team A.");
  turn("16", "b1");
  instruct("17", "Team A Member 2: Please strengthen your argument based on the Q&A.");
  turn("18", "a2");
  instruct("19", "Team B Member 2: Please strengthen your argument based on the Q&A.");
  turn("20", "b2");
  instruct("21", "Team A Member 3: Please summarize your team's position and conclude the debate.");
  turn("22", "a3");
  instruct("23", "Team B Member 3: Please summarize your team's position and conclude the debate.");
  turn("24", "b3");

  std::string record =
      "Evaluate the debate and provide constructive feedback for each participant based on their "
      "assigned roles.\n";
  const std::vector<std::pair<std::string, std::string>> turns{
      {"3", "a1"}, {"5", "b1"},  {"7", "a2"},  {"9", "b2"},  {"10", "a3"}, {"12", "b3"},
      {"14", "a1"}, {"16", "b1"}, {"18", "a2"}, {"20", "b2"}, {"22", "a3"}, {"24", "b3"}};
  for (const auto& [n, slot] : turns) record += "\n" + slot + ": {{input:" + n + "-1}}";
  steps.push_back({{"no", "25"}, {"kind", "instruction_ai"}, {"agent", "judge"}, {"text", record}});

  return ojson{{"id", "team-debate-3v3"},
               {"title", "3-on-3 Debate with Human-AI Teams"},
               {"objectives", {"Build and defend a team position within a structured five-round debate"}},
               {"roster", roster},
               {"agents", agents},
               {"steps", steps}};
}

std::string canonical(const ojson& doc) { return serialize_flow(parse_flow(nlohmann::json::parse(doc.dump()))); }
std::string canonical(const char* text) { return serialize_flow(parse_flow(std::string_view(text))); }

const std::map<std::string, std::string, std::less<>>& exemplar_table() {
  static const std::map<std::string, std::string, std::less<>> table{
      {"quiz-drill", canonical(kQuiz)},
      {"debate", canonical(kDebate)},
      {"counseling-simulation", canonical(kCounseling)},
      {"collaborative-research", canonical(kResearch)},
      {"team-debate-3v3", canonical(team_debate())},
  };
  return table;
}

const std::map<std::string, std::string, std::less<>>& template_table() {
  static const std::map<std::string, std::string, std::less<>> table{
      {"drill", canonical(kDrillTemplate)},
      {"debate", canonical(kDebateTemplate)},
      {"collaborate", canonical(kCollaborateTemplate)},
  };
  return table;
}

std::string lookup(const std::map<std::string, std::string, std::less<>>& table, std::string_view id) {
  auto it = table.find(id);
  if (it == table.end()) throw Error("NotFound", "no bundled flow '" + std::string(id) + "'");
  return it->second;
}

}  // namespace

const std::vector<std::string>& exemplar_ids() {
  static const std::vector<std::string> ids{"quiz-drill", "debate", "counseling-simulation",
                                            "collaborative-research", "team-debate-3v3"};
  return ids;
}

const std::vector<std::string>& template_ids() {
  static const std::vector<std::string> ids{"drill", "debate", "collaborate"};
  return ids;
}

std::string exemplar_document(std::string_view id) { return lookup(exemplar_table(), id); }
FlowDefinition exemplar_flow(std::string_view id) { return parse_flow(std::string_view(exemplar_document(id))); }
std::string template_document(std::string_view id) { return lookup(template_table(), id); }
FlowDefinition template_flow(std::string_view id) { return parse_flow(std::string_view(template_document(id))); }

}  // namespace learnflow
