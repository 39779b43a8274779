#pragma once

#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

namespace learnflow {

/// Every failure raised by the library carries a stable code (the names used
/// in diagnostics, HTTP error bodies and CLI messages) plus optional details.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message,
        nlohmann::json details = nullptr)
      : std::runtime_error(message),
        code_(std::move(code)),
        details_(std::move(details)) {}

  const std::string& code() const noexcept { return code_; }
  const nlohmann::json& details() const noexcept { return details_; }

 private:
  std::string code_;
  nlohmann::json details_;
};

}  // namespace learnflow
