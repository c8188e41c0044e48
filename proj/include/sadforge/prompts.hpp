#pragma once

// System prompts, compiled in from the fixture files under prompts/.

#include <string_view>

namespace sadforge::prompts {

/// Bumped whenever a fixture file changes.
inline constexpr std::string_view kVersion = "1";

std::string_view scenario_generation();
std::string_view humanoid();
std::string_view oracle();
std::string_view summarizer();
/// Not a published prompt.
std::string_view reviewer();
/// Not a published prompt.
std::string_view prune_proposal();

}  // namespace sadforge::prompts
