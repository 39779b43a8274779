#pragma once

#include <chrono>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "learnflow/prompt.hpp"

namespace learnflow {

/// Generation backend. Implementations must be safe to call concurrently.
class Provider {
 public:
  virtual ~Provider() = default;
  /// `invocation_id` is stable across retries of one invocation.
  virtual std::string generate(const PromptBundle& bundle, std::string_view invocation_id) = 0;
};

struct ScriptEntry {
  std::optional<std::string> match;
  std::string response;
};

struct ProviderScript {
  std::vector<ScriptEntry> entries;
  /// Number of consumed entries.
  std::size_t cursor = 0;
};

/// Parses `[{"match"?: string, "response": string}, ...]`.
ProviderScript parse_provider_script(std::string_view json_text);

/// Deterministic scripted provider. Each call consumes the first unused entry
/// whose `match` occurs in the bundle's final message, otherwise the first
/// unused entry without a `match`.
class StubProvider : public Provider {
 public:
  explicit StubProvider(ProviderScript script);
  std::string generate(const PromptBundle& bundle, std::string_view invocation_id) override;
  std::size_t cursor() const;
  std::size_t remaining() const;

 private:
  mutable std::mutex mu_;
  ProviderScript script_;
  std::vector<bool> used_;
};

struct HttpProviderConfig {
  std::string base_url;  // e.g. http://localhost:8000/v1
  std::string model;
  std::string api_key;   // empty: no Authorization header
  int retries = 2;
  std::chrono::milliseconds initial_backoff{500};
  std::chrono::milliseconds connect_timeout{5000};
  std::chrono::milliseconds read_timeout{60000};
  /// Replaceable for tests; defaults to std::this_thread::sleep_for.
  std::function<void(std::chrono::milliseconds)> sleep;
};

/// Reads LEARNFLOW_API_KEY, empty when unset.
std::string api_key_from_env();

/// Chat-completions request body for `bundle`.
nlohmann::json chat_request(const PromptBundle& bundle, std::string_view model);

/// POSTs {base_url}/chat/completions. Transport failures, 429 and 5xx are
/// retried with exponential backoff; exhausted transport retries raise
/// Error("Timeout"), HTTP failures Error("ProviderError").
class HttpProvider : public Provider {
 public:
  explicit HttpProvider(HttpProviderConfig config);
  std::string generate(const PromptBundle& bundle, std::string_view invocation_id) override;

 private:
  HttpProviderConfig config_;
  std::string origin_;  // scheme://host[:port]
  std::string path_;    // path prefix + /chat/completions
};

}  // namespace learnflow
