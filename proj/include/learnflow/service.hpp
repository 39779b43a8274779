#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>

#include "learnflow/content_store.hpp"
#include "learnflow/provider.hpp"

namespace learnflow {

struct ServiceConfig {
  std::filesystem::path data_dir = "learnflow-data";
  /// One provider per session, created when the session starts.
  std::function<std::unique_ptr<Provider>(const std::string& session_id)> provider_factory;
  std::shared_ptr<const ContentStore> materials;
  /// Upper bound for `?wait=` on the long-poll feed.
  std::chrono::seconds max_wait{30};
  /// Interval between SSE keep-alive comments while idle.
  std::chrono::milliseconds heartbeat{15000};
};

/// HTTP/1.1 JSON API under /v1. Flow endpoints and session creation are open;
/// every other session endpoint takes `Authorization: Bearer <token>`.
class Service {
 public:
  explicit Service(ServiceConfig config);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds and serves on a background thread; port 0 picks a free port.
  /// Returns the bound port. Error("StorageFailure"/"BindFailure") on failure.
  int start(const std::string& host, int port);
  /// Blocks until stop() is called.
  void wait();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// HTTP status used for an error code.
int http_status_for(std::string_view code);

}  // namespace learnflow
