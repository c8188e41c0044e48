#include "sadforge/json_extract.hpp"

#include <string>

namespace sadforge::json_extract {
namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

bool opens_single_quoted(char previous_structural) {
  return previous_structural == '{' || previous_structural == '[' || previous_structural == ',' ||
         previous_structural == ':';
}

}  // namespace

std::optional<std::string_view> first_balanced_object(std::string_view text) {
  std::size_t start = text.find('{');
  while (start != std::string_view::npos) {
    int depth = 0;
    char quote = 0;
    char previous = 0;
    for (std::size_t i = start; i < text.size(); ++i) {
      char c = text[i];
      if (quote != 0) {
        if (c == '\\') {
          ++i;
        } else if (c == quote) {
          quote = 0;
          previous = c;
        }
        continue;
      }
      if (c == '"' || (c == '\'' && opens_single_quoted(previous))) {
        quote = c;
        continue;
      }
      if (c == '{') ++depth;
      if (c == '}' && --depth == 0) return text.substr(start, i - start + 1);
      if (!is_space(c)) previous = c;
    }
    // Unbalanced from this brace; a later one might still close.
    start = text.find('{', start + 1);
  }
  return std::nullopt;
}

nlohmann::ordered_json parse_lenient(std::string_view block) {
  auto parsed = nlohmann::ordered_json::parse(block, nullptr, false);
  if (!parsed.is_discarded()) return parsed;

  std::string repaired;
  repaired.reserve(block.size() + 8);
  char quote = 0;
  char previous = 0;
  for (std::size_t i = 0; i < block.size(); ++i) {
    char c = block[i];
    if (quote == '"') {
      repaired.push_back(c);
      if (c == '\\' && i + 1 < block.size()) {
        repaired.push_back(block[++i]);
      } else if (c == '"') {
        quote = 0;
        previous = c;
      }
      continue;
    }
    if (quote == '\'') {
      if (c == '\\' && i + 1 < block.size()) {
        char next = block[++i];
        if (next == '\'') {
          repaired.push_back('\'');
        } else {
          repaired.push_back('\\');
          repaired.push_back(next);
        }
      } else if (c == '\'') {
        repaired.push_back('"');
        quote = 0;
        previous = c;
      } else if (c == '"') {
        repaired += "\\\"";
      } else {
        repaired.push_back(c);
      }
      continue;
    }
    if (c == '"') {
      quote = '"';
    } else if (c == '\'' && opens_single_quoted(previous)) {
      quote = '\'';
      repaired.push_back('"');
      continue;
    }
    repaired.push_back(c);
    if (!is_space(c)) previous = c;
  }
  return nlohmann::ordered_json::parse(repaired, nullptr, false);
}

}  // namespace sadforge::json_extract
