#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace learnflow::text {

/// Maximal runs of non-whitespace bytes.
std::vector<std::string> split_words(std::string_view s);
std::size_t word_count(std::string_view s);

/// Lowercase, drop ASCII punctuation, split on whitespace. Shared by branch
/// matching and keyword retrieval.
std::vector<std::string> normalized_tokens(std::string_view s);

/// Neutralizes "{{" so that untrusted text can never be read as a placeholder.
std::string sanitize(std::string_view s);

struct PlaceholderRef {
  std::size_t begin = 0;  // offset of "{{"
  std::size_t end = 0;    // one past "}}"
  std::string name;
};

/// Scans `{{name}}` references. Throws Error("MalformedPlaceholder") on an
/// unterminated "{{" or a name outside [A-Za-z0-9_.:-]+.
std::vector<PlaceholderRef> scan_placeholders(std::string_view s);

/// input:STEP_ID, role, loop_index and score are resolved while a session runs;
/// every other name is a template placeholder.
bool is_runtime_placeholder(std::string_view name);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

}  // namespace learnflow::text
