#pragma once

// Line prefixes shared by the stage prompts and the synthetic mock replies.

#include <string_view>

namespace sadforge::message_format {

inline constexpr std::string_view kScenario = "Scenario: ";
inline constexpr std::string_view kObjectsHeader = "Objects in the environment:";
inline constexpr std::string_view kInvolvedHeader = "Objects involved in the scenario:";
inline constexpr std::string_view kSceneGraph = "Scene graph: ";
inline constexpr std::string_view kCompleteSceneGraph = "Complete scene graph: ";
inline constexpr std::string_view kInstructions = "Instructions: ";
inline constexpr std::string_view kInitialInstructions = "The oracle's initial instructions:";
inline constexpr std::string_view kUpdatedInstructions = "The oracle's updated instructions:";
inline constexpr std::string_view kConversationHeader = "Conversation:";
inline constexpr std::string_view kOracleSpeaker = "Oracle: ";
inline constexpr std::string_view kHumanoidSpeaker = "Humanoid: ";
inline constexpr std::string_view kReviewerFeedback = "Reviewer feedback: ";
inline constexpr std::string_view kItemBullet = "- ";

}  // namespace sadforge::message_format
