#pragma once

// Pulling JSON objects out of free-form LLM replies.

#include <optional>
#include <string_view>

#include <nlohmann/json.hpp>

namespace sadforge::json_extract {

/// The first brace-balanced `{...}` block in `text`. Braces inside quoted
/// strings do not count. A single quote opens a string only where a JSON
/// string could start (after `{`, `[`, `,` or `:`), so apostrophes in prose
/// are ignored.
std::optional<std::string_view> first_balanced_object(std::string_view text);

/// Parses `block` as JSON; failing that, retries after rewriting
/// single-quoted strings as double-quoted ones (`{'1': 'Go'}`). Returns a
/// discarded value when both fail.
nlohmann::ordered_json parse_lenient(std::string_view block);

}  // namespace sadforge::json_extract
