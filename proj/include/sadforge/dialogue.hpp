#pragma once

// Humanoid / Oracle / Summarizer dialogue over a pruned scene graph, with an
// optional Reviewer pass against the complete graph.
//
//   1. Oracle sees the scenario and the pruned graph, answers with an
//      instruction set.
//   2. Up to max_rounds times: Humanoid (scenario + conversation only, never
//      the graph) asks a question or says done; the Oracle answers each
//      question with a new instruction set.
//   3. Summarizer condenses the conversation into the final set.
//   4. Reviewer (optional) checks the final set against the complete graph
//      and may request one Oracle revision, followed by a second summary.

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "sadforge/error.hpp"
#include "sadforge/gateway.hpp"
#include "sadforge/scenario.hpp"
#include "sadforge/sgl.hpp"

namespace sadforge::dialogue {

/// Ordered steps; step i is keyed "i+1" on the wire.
class InstructionSet {
 public:
  InstructionSet() = default;
  explicit InstructionSet(std::vector<std::string> steps) : steps_(std::move(steps)) {}

  const std::vector<std::string>& steps() const { return steps_; }
  std::size_t size() const { return steps_.size(); }
  bool empty() const { return steps_.empty(); }

  /// {"1": "...", "2": "..."} in step order, compact.
  std::string to_json_text() const;
  nlohmann::ordered_json to_json() const;
  /// "1. first\n2. second"; newlines inside a step become spaces.
  std::string numbered() const;

  friend bool operator==(const InstructionSet&, const InstructionSet&) = default;

 private:
  std::vector<std::string> steps_;
};

enum class Role { Humanoid, Oracle, Summarizer, Reviewer };
std::string_view to_string(Role role);
Role parse_role(std::string_view name);

struct DialogueTurn {
  Role role = Role::Oracle;
  std::string content;
  int turn_index = 0;
  std::optional<InstructionSet> instructions;
  /// Oracle/Summarizer reply that did not parse and was re-prompted.
  bool failed = false;
};

struct DialogueConfig {
  int max_rounds = 10;
  int json_retry_budget = 2;
  bool reviewer_enabled = false;
  llm::AgentConfig humanoid = llm::humanoid_config();
  llm::AgentConfig oracle = llm::oracle_config();
  llm::AgentConfig summarizer = llm::summarizer_config();
  llm::AgentConfig reviewer = llm::reviewer_config();
};

enum class ErrorKind {
  NoJsonFound,
  NotFlatObject,
  NonContiguousIndices,
  EmptyInstruction,
  InstructionParseFailure,
  Precondition,
};

std::string_view to_string(ErrorKind kind);

class DialogueError : public Error {
 public:
  DialogueError(ErrorKind kind, std::string message);
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Extracts the first balanced `{...}` block and reads it as a flat map of
/// decimal keys to non-empty strings. Keys are ordered numerically and must
/// be contiguous; a contiguous run starting elsewhere than 1 is re-indexed.
InstructionSet parse_instruction_json(std::string_view text);

/// True iff the message has the standalone word "done" (any case) and no
/// question mark.
bool detect_done(std::string_view humanoid_message);

struct Verdict {
  bool accept = true;
  std::string feedback;
  /// The reply could not be read; treated as accept.
  bool unparsed = false;
};

Verdict review_instructions(const InstructionSet& final_set, const scenario::Scenario& scenario,
                            const sgl::SceneGraph& full_graph, llm::Gateway& gateway, const llm::AgentConfig& config);

struct DialogueResult {
  std::vector<DialogueTurn> turns;
  InstructionSet final_instructions;
  /// Number of Humanoid questions the Oracle answered.
  int rounds = 0;
  /// max_rounds reached without the Humanoid saying done.
  bool truncated = false;
  bool reviewer_used = false;
  bool revised = false;
  std::vector<std::string> warnings;
};

using TurnObserver = std::function<void(const DialogueTurn&)>;

DialogueResult run_dialogue(const sgl::SceneGraph& pruned_graph, const sgl::SceneGraph& full_graph,
                            const scenario::Scenario& scenario, llm::Gateway& gateway, const DialogueConfig& config,
                            const TurnObserver& on_turn = {});

nlohmann::json to_json(const DialogueTurn& turn);
DialogueTurn turn_from_json(const nlohmann::json& doc);
InstructionSet instructions_from_json(const nlohmann::json& doc);

}  // namespace sadforge::dialogue
