#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <memory>
#include <string>
#include <vector>

#include "learnflow/event.hpp"
#include "learnflow/flow.hpp"
#include "learnflow/session.hpp"

namespace learnflow {

/// Append-only JSON Lines file for one session:
/// {data_dir}/sessions/{session_id}.events.jsonl
class EventLog {
 public:
  EventLog(const std::filesystem::path& data_dir, std::string session_id);
  ~EventLog();
  EventLog(const EventLog&) = delete;
  EventLog& operator=(const EventLog&) = delete;

  /// Requires e.seq == last_seq() + 1 (Error "SequenceGap"); the line is
  /// flushed to disk before returning (Error "StorageFailure").
  void append(const Event& e);
  std::uint64_t last_seq() const { return last_seq_; }
  const std::filesystem::path& path() const { return path_; }

  static std::filesystem::path path_for(const std::filesystem::path& data_dir,
                                        std::string_view session_id);

 private:
  std::string session_id_;
  std::filesystem::path path_;
  int fd_ = -1;
  std::uint64_t last_seq_ = 0;
};

struct LogContents {
  std::string session_id;
  std::vector<Event> events;
};

/// Error("CorruptRecord") with details {line} for unparsable lines.
LogContents parse_log(std::istream& in);
LogContents read_log(const std::filesystem::path& path);

/// Rebuilds the session by feeding the recorded inputs, agent responses and
/// instructor controls back through the engine and checking every produced
/// event against the record (timestamps excepted). The flow comes from the
/// session_started record unless given. Error("ReplayMismatch") with details
/// {line} on divergence.
SessionState replay(const std::vector<Event>& records,
                    std::shared_ptr<const FlowDefinition> flow = nullptr,
                    const EngineContext& ctx = {});

/// The events `viewer` may see, in order. Error("UnknownViewer") when the
/// viewer is not in the roster.
std::vector<Event> project(const std::vector<Event>& records, std::string_view viewer);
std::vector<Event> project(const std::vector<Event>& records, const FlowDefinition& flow,
                           std::string_view viewer);

/// Flow embedded in the session_started record, if any.
std::shared_ptr<const FlowDefinition> logged_flow(const std::vector<Event>& records);

}  // namespace learnflow
