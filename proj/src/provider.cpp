#include "learnflow/provider.hpp"

#include <cstdlib>
#include <thread>

#include <httplib.h>

#include "learnflow/error.hpp"

namespace learnflow {

ProviderScript parse_provider_script(std::string_view json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error("MalformedScript", std::string("stub script is not valid JSON: ") + e.what());
  }
  if (!j.is_array()) throw Error("MalformedScript", "stub script must be a JSON array");
  ProviderScript script;
  for (const auto& e : j) {
    if (!e.is_object() || !e.contains("response") || !e["response"].is_string()) {
      throw Error("MalformedScript", "each stub entry needs a string 'response'");
    }
    ScriptEntry entry;
    entry.response = e["response"].get<std::string>();
    if (e.contains("match")) {
      if (!e["match"].is_string()) throw Error("MalformedScript", "'match' must be a string");
      entry.match = e["match"].get<std::string>();
    }
    script.entries.push_back(std::move(entry));
  }
  return script;
}

StubProvider::StubProvider(ProviderScript script)
    : script_(std::move(script)), used_(script_.entries.size(), false) {
  for (std::size_t i = 0; i < script_.cursor && i < used_.size(); ++i) used_[i] = true;
}

std::string StubProvider::generate(const PromptBundle& bundle, std::string_view) {
  std::lock_guard lock(mu_);
  const std::string final_text = bundle.messages.empty() ? "" : bundle.messages.back().text;
  auto take = [&](std::size_t i) {
    used_[i] = true;
    ++script_.cursor;
    return script_.entries[i].response;
  };
  for (std::size_t i = 0; i < script_.entries.size(); ++i) {
    const auto& e = script_.entries[i];
    if (!used_[i] && e.match && final_text.find(*e.match) != std::string::npos) return take(i);
  }
  for (std::size_t i = 0; i < script_.entries.size(); ++i) {
    if (!used_[i] && !script_.entries[i].match) return take(i);
  }
  throw Error("ScriptExhausted", "stub script has no entry left for this invocation");
}

std::size_t StubProvider::cursor() const {
  std::lock_guard lock(mu_);
  return script_.cursor;
}

std::size_t StubProvider::remaining() const {
  std::lock_guard lock(mu_);
  return script_.entries.size() - script_.cursor;
}

std::string api_key_from_env() {
  const char* v = std::getenv("LEARNFLOW_API_KEY");
  return v ? std::string(v) : std::string();
}

nlohmann::json chat_request(const PromptBundle& bundle, std::string_view model) {
  nlohmann::json body = nlohmann::json::object();
  if (bundle.params.is_object()) {
    for (const auto& [k, v] : bundle.params.items()) body[k] = v;
  }
  body["model"] = model;
  auto messages = nlohmann::json::array();
  if (!bundle.system_text.empty()) {
    messages.push_back({{"role", "system"}, {"content", bundle.system_text}});
  }
  for (const auto& m : bundle.messages) {
    switch (m.origin) {
      case Origin::agent:
        messages.push_back({{"role", "assistant"}, {"content", m.text}});
        break;
      case Origin::instructor:
        messages.push_back({{"role", "user"}, {"content", "INSTRUCTOR: " + m.text}});
        break;
      case Origin::learner:
        messages.push_back({{"role", "user"}, {"content", "LEARNER " + m.sender + ": " + m.text}});
        break;
    }
  }
  body["messages"] = std::move(messages);
  return body;
}

HttpProvider::HttpProvider(HttpProviderConfig config) : config_(std::move(config)) {
  const auto& url = config_.base_url;
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw Error("InvalidConfig", "base_url must start with http:// or https://");
  }
  auto path_start = url.find('/', scheme_end + 3);
  origin_ = url.substr(0, path_start);
  std::string prefix = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  path_ = prefix + "/chat/completions";
  if (!config_.sleep) {
    config_.sleep = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
  }
}

std::string HttpProvider::generate(const PromptBundle& bundle, std::string_view invocation_id) {
  const std::string body = chat_request(bundle, config_.model).dump();
  httplib::Headers headers{{"Idempotency-Key", std::string(invocation_id)}};
  if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

  auto backoff = config_.initial_backoff;
  std::string last_transport_error;
  int last_status = 0;
  std::string last_body;
  for (int attempt = 0; attempt <= config_.retries; ++attempt) {
    if (attempt > 0) {
      config_.sleep(backoff);
      backoff *= 2;
    }
    httplib::Client client(origin_);
    client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(config_.connect_timeout));
    client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(config_.read_timeout));
    auto res = client.Post(path_, headers, body, "application/json");
    if (!res) {
      last_transport_error = httplib::to_string(res.error());
      last_status = 0;
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_status = res->status;
      last_body = res->body;
      continue;
    }
    if (res->status < 200 || res->status >= 300) {
      last_status = res->status;
      last_body = res->body;
      break;
    }
    try {
      auto j = nlohmann::json::parse(res->body);
      return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception&) {
      throw Error("ProviderError", "unexpected completion body",
                  nlohmann::json{{"status", res->status}, {"body", res->body.substr(0, 200)}});
    }
  }
  const int attempts = config_.retries + 1;
  if (last_status == 0) {
    throw Error("Timeout",
                "provider unreachable after " + std::to_string(attempts) + " attempts: " + last_transport_error,
                nlohmann::json{{"attempts", attempts}});
  }
  throw Error("ProviderError", "provider returned HTTP " + std::to_string(last_status),
              nlohmann::json{{"status", last_status}, {"body", last_body.substr(0, 200)}});
}

}  // namespace learnflow
