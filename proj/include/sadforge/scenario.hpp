#pragma once

// Scenario generation and diversity selection.
//
// The LLM proposes up to ten scenarios per scan; their descriptions are
// embedded and the five whose summed pairwise cosine similarity is lowest
// are kept.

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "sadforge/error.hpp"
#include "sadforge/gateway.hpp"
#include "sadforge/sgl.hpp"

namespace sadforge::scenario {

inline constexpr std::size_t kMaxCandidates = 10;
inline constexpr std::size_t kDefaultSelection = 5;
/// Appended as a user turn when the first reply does not parse.
inline constexpr std::string_view kSchemaReminder = "Respond only with the JSON schema shown";

struct Scenario {
  std::string description;
  std::vector<sgl::ObjectId> involved_object_ids;
  /// Position of the scenario in the model's reply.
  int origin_index = 0;

  friend bool operator==(const Scenario&, const Scenario&) = default;
};

struct ScenarioSet {
  std::string scan_id;
  std::vector<Scenario> candidates;
  std::vector<std::size_t> selected;
  std::vector<std::vector<double>> embeddings;
};

enum class ErrorKind { ResponseParse, DimensionMismatch, ZeroVector, Precondition };

class ScenarioError : public Error {
 public:
  ScenarioError(ErrorKind kind, std::string message);
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// User message listing the scan's objects and the expected reply schema.
std::string scenario_request(const sgl::SceneGraph& graph);

/// Parses a reply in the form
///   {"scenarios":[{"description": "...", "objects": ["<label>-<id>", ...]}]}
/// Object references absent from `graph` are dropped; scenarios left without
/// objects or description are discarded; at most ten are kept.
std::vector<Scenario> parse_scenario_response(std::string_view reply, const sgl::SceneGraph& graph);

/// Asks the model for scenarios, re-prompting once with `kSchemaReminder`
/// when the first reply does not parse.
std::vector<Scenario> generate_scenarios(const sgl::SceneGraph& graph, llm::Gateway& gateway,
                                         const llm::AgentConfig& config);

double cosine_similarity(std::span<const double> u, std::span<const double> v);

/// Indices of the k-subset with the smallest sum of pairwise cosine
/// similarities, by exhaustive search. Ties (within 1e-12) go to the
/// lexicographically smallest index tuple. With n <= k every index is
/// returned.
std::vector<std::size_t> select_diverse(const std::vector<std::vector<double>>& vectors,
                                        std::size_t k = kDefaultSelection);

/// generate_scenarios + embed + select_diverse for one scan.
ScenarioSet build_scenario_set(std::string scan_id, const sgl::SceneGraph& graph, llm::Gateway& gateway,
                               const llm::AgentConfig& config, std::size_t k = kDefaultSelection);

nlohmann::json to_json(const Scenario& scenario);
Scenario scenario_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const ScenarioSet& set);
ScenarioSet scenario_set_from_json(const nlohmann::json& doc);

/// Resolves `<label>-<id>` (or a bare id) against `graph`.
std::optional<sgl::ObjectId> resolve_ref(const nlohmann::json& ref, const sgl::SceneGraph& graph);

}  // namespace sadforge::scenario
