#include "learnflow/text.hpp"

#include <cctype>

#include "learnflow/error.hpp"

namespace learnflow::text {

namespace {

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
         c == '\v';
}

bool is_name_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' ||
         c == ':' || c == '-';
}

}  // namespace

std::vector<std::string> split_words(std::string_view s) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && is_space(s[i])) ++i;
    std::size_t start = i;
    while (i < s.size() && !is_space(s[i])) ++i;
    if (i > start) words.emplace_back(s.substr(start, i - start));
  }
  return words;
}

std::size_t word_count(std::string_view s) {
  std::size_t n = 0;
  bool in_word = false;
  for (char c : s) {
    if (is_space(c)) {
      in_word = false;
    } else if (!in_word) {
      in_word = true;
      ++n;
    }
  }
  return n;
}

std::vector<std::string> normalized_tokens(std::string_view s) {
  std::string cleaned;
  cleaned.reserve(s.size());
  for (char c : s) {
    auto u = static_cast<unsigned char>(c);
    if (u < 0x80 && std::ispunct(u)) continue;
    cleaned.push_back(u < 0x80 ? static_cast<char>(std::tolower(u)) : c);
  }
  return split_words(cleaned);
}

std::string sanitize(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    if (c == '{' && !out.empty() && out.back() == '{') out.push_back(' ');
    out.push_back(c);
  }
  return out;
}

std::vector<PlaceholderRef> scan_placeholders(std::string_view s) {
  std::vector<PlaceholderRef> refs;
  std::size_t pos = 0;
  while ((pos = s.find("{{", pos)) != std::string_view::npos) {
    auto close = s.find("}}", pos + 2);
    if (close == std::string_view::npos) {
      throw Error("MalformedPlaceholder", "unterminated '{{' in text");
    }
    std::string name(s.substr(pos + 2, close - pos - 2));
    if (name.empty()) {
      throw Error("MalformedPlaceholder", "empty placeholder name");
    }
    for (char c : name) {
      if (!is_name_char(c)) {
        throw Error("MalformedPlaceholder",
                    "invalid placeholder name '" + name + "'");
      }
    }
    refs.push_back({pos, close + 2, std::move(name)});
    pos = close + 2;
  }
  return refs;
}

bool is_runtime_placeholder(std::string_view name) {
  return name == "role" || name == "loop_index" || name == "score" ||
         (name.size() > 6 && name.substr(0, 6) == "input:");
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out.append(sep);
    out.append(parts[i]);
  }
  return out;
}

}  // namespace learnflow::text
