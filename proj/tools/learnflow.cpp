// learnflow: validate, run, replay and serve instructional conversation flows.

#include <CLI11.hpp>

#include <csignal>
#include <deque>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>

#include "learnflow/error.hpp"
#include "learnflow/event_log.hpp"
#include "learnflow/exemplars.hpp"
#include "learnflow/flow_document.hpp"
#include "learnflow/flow_template.hpp"
#include "learnflow/runner.hpp"
#include "learnflow/service.hpp"
#include "learnflow/transcript.hpp"
#include "learnflow/validate.hpp"

namespace fs = std::filesystem;
using namespace learnflow;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 1;
constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("Unreadable", "cannot read '" + p.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// A path, or the id of a bundled exemplar when no such file exists.
FlowDefinition load_flow(const std::string& where) {
  if (!fs::exists(where)) {
    const auto& ids = exemplar_ids();
    if (std::find(ids.begin(), ids.end(), where) != ids.end()) return exemplar_flow(where);
  }
  return parse_flow(std::string_view(read_file(where)));
}

void print_report(const ValidationReport& report, std::ostream& out) {
  for (const auto& d : report.diagnostics) {
    out << (d.severity == Severity::error ? "error" : "warning");
    if (d.step_id) out << " [step " << *d.step_id << "]";
    out << " " << d.code << ": " << d.message << "\n";
  }
  out << (report.ok ? "ok" : "invalid") << "\n";
}

std::unique_ptr<Provider> make_provider(const std::string& kind, const std::string& script_path,
                                        const std::string& base_url, const std::string& model,
                                        ProviderScript* script_out = nullptr) {
  if (kind == "stub") {
    if (script_path.empty()) throw Error("Usage", "--provider stub needs --script");
    auto script = parse_provider_script(read_file(script_path));
    if (script_out) *script_out = script;
    return std::make_unique<StubProvider>(std::move(script));
  }
  if (base_url.empty() || model.empty()) throw Error("Usage", "--provider http needs --base-url and --model");
  HttpProviderConfig cfg;
  cfg.base_url = base_url;
  cfg.model = model;
  cfg.api_key = api_key_from_env();
  return std::make_unique<HttpProvider>(std::move(cfg));
}

/// Inputs file: [{"slot": "...", "content": "..."}, ...] consumed in
/// AwaitInput order. A list of plain strings or an object of per-slot lists
/// is also accepted.
class ScriptedInputs {
 public:
  explicit ScriptedInputs(const nlohmann::json& j) {
    if (j.is_array()) {
      for (const auto& v : j) {
        if (v.is_string()) {
          ordered_.push_back({"", v.get<std::string>()});
        } else {
          ordered_.push_back({v.at("slot").get<std::string>(), v.at("content").get<std::string>()});
        }
      }
    } else if (j.is_object()) {
      for (const auto& [slot, list] : j.items()) {
        for (const auto& v : list) per_slot_[slot].push_back(v.get<std::string>());
      }
    } else {
      throw Error("MalformedScript", "inputs must be a list or an object of lists");
    }
  }

  std::optional<std::string> next(const AwaitInput& a) {
    if (auto it = per_slot_.find(a.slot_id); it != per_slot_.end() && !it->second.empty()) {
      auto v = it->second.front();
      it->second.pop_front();
      return v;
    }
    if (ordered_.empty()) return std::nullopt;
    auto [slot, content] = ordered_.front();
    if (!slot.empty() && slot != a.slot_id) {
      throw Error("InputOrder", "next scripted input is for '" + slot + "' but the session awaits '" +
                                    a.slot_id + "' at step " + a.step_id);
    }
    ordered_.pop_front();
    return content;
  }

 private:
  std::deque<std::pair<std::string, std::string>> ordered_;
  std::map<std::string, std::deque<std::string>> per_slot_;
};

std::optional<std::string> prompt_terminal(const AwaitInput& a) {
  std::cerr << "[" << a.slot_id << ", step " << a.step_id;
  if (a.max_words) std::cerr << ", max " << *a.max_words << " words";
  std::cerr << "] > " << std::flush;
  std::string line;
  if (!std::getline(std::cin, line)) return std::nullopt;
  return line;
}

struct RunOptions {
  std::string flow;
  std::string provider = "stub";
  std::string script;
  std::string inputs;
  std::string data_dir = "learnflow-data";
  std::string base_url;
  std::string model;
  std::string materials;
  std::vector<std::string> sources;
  std::string session_id;
  bool quiet = false;
};

int cmd_validate(const std::string& path) {
  FlowDefinition flow;
  try {
    flow = load_flow(path);
  } catch (const Error& e) {
    std::cerr << "error " << e.code() << ": " << e.what() << "\n";
    return kExitUsage;
  }
  auto report = validate_flow(flow);
  print_report(report, std::cout);
  return report.ok ? kExitOk : kExitInvalid;
}

int cmd_run(const RunOptions& o) {
  std::shared_ptr<const FlowDefinition> flow;
  std::unique_ptr<Provider> provider;
  std::optional<ScriptedInputs> scripted;
  auto store = std::make_shared<ContentStore>();
  std::map<std::string, Source> overrides;
  try {
    flow = std::make_shared<const FlowDefinition>(load_flow(o.flow));
    provider = make_provider(o.provider, o.script, o.base_url, o.model);
    if (!o.inputs.empty()) scripted.emplace(nlohmann::json::parse(read_file(o.inputs)));
    if (!o.materials.empty()) store->load_directory(o.materials);
    for (const auto& s : o.sources) {
      auto eq = s.find('=');
      auto src = eq == std::string::npos ? std::nullopt : source_from_string(s.substr(eq + 1));
      if (!src) throw Error("Usage", "--set-source expects slot=human|ai, got '" + s + "'");
      overrides[s.substr(0, eq)] = *src;
    }
  } catch (const Error& e) {
    std::cerr << "error " << e.code() << ": " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  auto report = validate_flow(*flow);
  if (!report.ok) {
    print_report(report, std::cerr);
    return kExitInvalid;
  }

  EngineContext ctx;
  ctx.materials = store.get();
  const std::string session_id = o.session_id.empty() ? flow->id : o.session_id;
  SessionState state;
  try {
    state = start_session(flow, overrides, session_id, ctx);
  } catch (const Error& e) {
    std::cerr << "error " << e.code() << ": " << e.what() << "\n";
    return kExitInvalid;
  }

  const auto log_path = EventLog::path_for(o.data_dir, session_id);
  std::error_code ec;
  fs::remove(log_path, ec);
  std::unique_ptr<EventLog> log;
  try {
    log = std::make_unique<EventLog>(o.data_dir, session_id);
  } catch (const Error& e) {
    std::cerr << "error " << e.code() << ": " << e.what() << "\n";
    return kExitUsage;
  }

  TranscriptPrinter printer(std::cout, flow.get());
  auto on_event = [&](const Event& e) {
    log->append(e);
    if (!o.quiet) printer.print(e);
  };
  for (const auto& e : state.transcript) on_event(e);

  RunHooks hooks;
  hooks.on_event = on_event;
  hooks.on_reject = [](const AwaitInput& a, const Error& e) {
    std::cerr << "input from " << a.slot_id << " refused: " << e.what() << "\n";
  };
  InputSource inputs = [&](const AwaitInput& a) {
    return scripted ? scripted->next(a) : prompt_terminal(a);
  };

  RunOutcome outcome;
  try {
    outcome = run_session(state, ctx, *provider, inputs, hooks);
  } catch (const Error& e) {
    std::cerr << "error " << e.code() << ": " << e.what() << "\n";
    std::cerr << "log: " << log_path.string() << "\n";
    return kExitRuntime;
  }
  if (outcome == RunOutcome::starved) {
    auto act = pending_action(state);
    std::string who = act ? std::get<AwaitInput>(*act).slot_id : "?";
    std::string step = act ? std::get<AwaitInput>(*act).step_id : "?";
    std::cerr << "error AwaitInput: no input left for " << who << " at step " << step << "\n";
    std::cerr << "log: " << log_path.string() << "\n";
    return kExitRuntime;
  }
  std::cerr << "session " << session_id << " " << to_string(state.status.state) << "; log: "
            << log_path.string() << "\n";
  return kExitOk;
}

int cmd_replay(const std::string& path, const std::string& viewer) {
  try {
    auto contents = read_log(path);
    auto flow = logged_flow(contents.events);
    auto state = replay(contents.events, flow);
    const auto& shown = viewer.empty() ? contents.events : project(contents.events, viewer);
    print_transcript(std::cout, state.flow.get(), shown);
    std::cout << "status: " << to_string(state.status.state);
    if (!state.status.who.empty()) std::cout << " (" << state.status.who << ", step " << state.status.step_id << ")";
    std::cout << "\n";
    return kExitOk;
  } catch (const Error& e) {
    std::cerr << "error " << e.code() << ": " << e.what() << "\n";
    return e.code() == "NotFound" ? kExitUsage : kExitInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalid;
  }
}

int cmd_examples(const std::string& dir, bool force, bool with_templates) {
  std::error_code ec;
  if (fs::exists(dir, ec) && !fs::is_directory(dir, ec)) {
    std::cerr << "error: '" << dir << "' is not a directory\n";
    return kExitUsage;
  }
  if (fs::is_directory(dir, ec) && !fs::is_empty(dir, ec) && !force) {
    std::cerr << "error: '" << dir << "' is not empty (use --force to overwrite)\n";
    return kExitUsage;
  }
  auto write = [&](const fs::path& p, const std::string& text) {
    fs::create_directories(p.parent_path(), ec);
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << text << "\n";
    if (!out) throw Error("StorageFailure", "cannot write '" + p.string() + "'");
    std::cout << p.string() << "\n";
  };
  try {
    for (const auto& id : exemplar_ids()) write(fs::path(dir) / (id + ".json"), exemplar_document(id));
    if (with_templates) {
      for (const auto& id : template_ids()) {
        write(fs::path(dir) / "templates" / (id + ".json"), template_document(id));
      }
    }
  } catch (const Error& e) {
    std::cerr << "error " << e.code() << ": " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitOk;
}

int cmd_instantiate(const std::string& source, const std::vector<std::string>& binds,
                    const std::string& out_path) {
  try {
    FlowDefinition tmpl;
    const auto& ids = template_ids();
    if (!fs::exists(source) && std::find(ids.begin(), ids.end(), source) != ids.end()) {
      tmpl = template_flow(source);
    } else {
      tmpl = parse_flow(std::string_view(read_file(source)));
    }
    std::map<std::string, std::string> bindings;
    for (const auto& b : binds) {
      auto eq = b.find('=');
      if (eq == std::string::npos) throw Error("Usage", "--bind expects name=value, got '" + b + "'");
      bindings[b.substr(0, eq)] = b.substr(eq + 1);
    }
    auto inst = instantiate_template(tmpl, bindings);
    for (const auto& w : inst.warnings) std::cerr << "warning " << w.code << ": " << w.message << "\n";
    const auto text = serialize_flow(inst.flow);
    if (out_path.empty()) {
      std::cout << text << "\n";
    } else {
      std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
      out << text << "\n";
      if (!out) throw Error("StorageFailure", "cannot write '" + out_path + "'");
    }
    auto report = validate_flow(inst.flow);
    if (!report.ok) {
      print_report(report, std::cerr);
      return kExitInvalid;
    }
    return kExitOk;
  } catch (const Error& e) {
    std::cerr << "error " << e.code() << ": " << e.what() << "\n";
    return e.code() == "UnboundPlaceholder" || e.code() == "InvalidBinding" ? kExitInvalid : kExitUsage;
  }
}

Service* g_service = nullptr;

int cmd_serve(const std::string& host, int port, const RunOptions& o) {
  ServiceConfig cfg;
  cfg.data_dir = o.data_dir;
  try {
    if (!o.materials.empty()) {
      auto store = std::make_shared<ContentStore>();
      store->load_directory(o.materials);
      cfg.materials = store;
    }
    if (o.provider == "stub") {
      ProviderScript script;
      if (!o.script.empty()) script = parse_provider_script(read_file(o.script));
      cfg.provider_factory = [script](const std::string&) { return std::make_unique<StubProvider>(script); };
    } else {
      make_provider(o.provider, o.script, o.base_url, o.model);  // validates the options
      cfg.provider_factory = [o](const std::string&) {
        return make_provider(o.provider, o.script, o.base_url, o.model);
      };
    }
  } catch (const Error& e) {
    std::cerr << "error " << e.code() << ": " << e.what() << "\n";
    return kExitUsage;
  }
  Service service(std::move(cfg));
  try {
    const int bound = service.start(host, port);
    std::cerr << "listening on http://" << host << ":" << bound << "/v1\n";
  } catch (const Error& e) {
    std::cerr << "error " << e.code() << ": " << e.what() << "\n";
    return kExitRuntime;
  }
  g_service = &service;
  std::signal(SIGINT, [](int) {
    if (g_service) std::thread([] { g_service->stop(); }).detach();
  });
  std::signal(SIGTERM, [](int) {
    if (g_service) std::thread([] { g_service->stop(); }).detach();
  });
  service.wait();
  g_service = nullptr;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"learnflow: instructional conversation flows"};
  app.require_subcommand(1);

  std::string flow_path;
  auto* validate = app.add_subcommand("validate", "Check a flow document");
  validate->add_option("flow", flow_path, "Flow document path or bundled exemplar id")->required();

  RunOptions ro;
  auto add_provider_options = [&](CLI::App* sc) {
    sc->add_option("--provider", ro.provider, "stub or http")->check(CLI::IsMember({"stub", "http"}));
    sc->add_option("--script", ro.script, "Stub provider script (JSON)");
    sc->add_option("--base-url", ro.base_url, "Chat-completions base URL, e.g. http://localhost:8000/v1");
    sc->add_option("--model", ro.model, "Model name for the http provider");
    sc->add_option("--data-dir", ro.data_dir, "Directory for session logs");
    sc->add_option("--materials", ro.materials, "Directory of .txt/.md reference materials");
  };
  auto* run = app.add_subcommand("run", "Run a session in the terminal");
  run->add_option("flow", ro.flow, "Flow document path or bundled exemplar id")->required();
  add_provider_options(run);
  run->add_option("--inputs", ro.inputs, "Scripted human input (JSON)");
  run->add_option("--set-source", ro.sources, "Toggle a learner slot: slot=human|ai");
  run->add_option("--session-id", ro.session_id, "Session id (defaults to the flow id)");
  run->add_flag("--quiet", ro.quiet, "Do not print the transcript");

  std::string log_path, viewer;
  auto* rep = app.add_subcommand("replay", "Verify and print a session log");
  rep->add_option("log", log_path, "events.jsonl file")->required();
  rep->add_option("--as", viewer, "Show only what this slot can see");

  std::string host = "127.0.0.1";
  int port = 8080;
  auto* serve = app.add_subcommand("serve", "Serve the HTTP API");
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port (0 picks a free one)");
  add_provider_options(serve);

  std::string export_dir;
  bool force = false, with_templates = false;
  auto* ex = app.add_subcommand("examples", "Write the bundled exemplar flows");
  ex->add_option("dir", export_dir, "Target directory")->required();
  ex->add_flag("--force", force, "Overwrite a non-empty directory");
  ex->add_flag("--with-templates", with_templates, "Also write the drill/debate/collaborate templates");

  std::string tmpl_source, out_path;
  std::vector<std::string> binds;
  auto* inst = app.add_subcommand("instantiate", "Bind a template's placeholders");
  inst->add_option("template", tmpl_source, "Template path or bundled template id")->required();
  inst->add_option("--bind", binds, "name=value");
  inst->add_option("-o,--output", out_path, "Write the flow here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  if (*validate) return cmd_validate(flow_path);
  if (*run) return cmd_run(ro);
  if (*rep) return cmd_replay(log_path, viewer);
  if (*serve) return cmd_serve(host, port, ro);
  if (*ex) return cmd_examples(export_dir, force, with_templates);
  if (*inst) return cmd_instantiate(tmpl_source, binds, out_path);
  return kExitUsage;
}
