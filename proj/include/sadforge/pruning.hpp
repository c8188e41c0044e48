#pragma once

// Scenario-specific pruning: an LLM proposes the relevant objects, a
// reviewer (human or auto) decides, and the decision prunes the graph.

#include <cstddef>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sadforge/error.hpp"
#include "sadforge/gateway.hpp"
#include "sadforge/scenario.hpp"
#include "sadforge/sgl.hpp"

namespace sadforge::pruning {

enum class ProposalSource { Llm, SeedOnly };
enum class ReviewStatus { Approved, AutoApproved };
enum class ReviewMode { Auto, InteractiveCli, Web };

std::string_view to_string(ProposalSource source);
std::string_view to_string(ReviewStatus status);
std::string_view to_string(ReviewMode mode);
ReviewMode parse_review_mode(std::string_view name);

struct SubsetProposal {
  std::string scan_id;
  std::size_t scenario_index = 0;
  std::set<sgl::ObjectId> proposed_ids;
  std::map<sgl::ObjectId, std::string> rationale;
  ProposalSource source = ProposalSource::Llm;
};

struct ReviewDecision {
  std::string scan_id;
  std::size_t scenario_index = 0;
  std::set<sgl::ObjectId> kept_ids;
  std::string reviewer;
  std::string decided_at;
  ReviewStatus status = ReviewStatus::Approved;
  std::string idempotency_key;

  /// Content hash of (scan, scenario, kept ids, reviewer, status); the
  /// timestamp is excluded so that re-deciding identically yields the same id.
  std::string id() const;
};

enum class ErrorKind { UnknownObjectId, EmptySubset, Mode, AlreadyDecided, InvalidDecision };

class PruningError : public Error {
 public:
  PruningError(ErrorKind kind, std::string message);
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// User message: scenario, its involved objects, the full object list and
/// the reply schema {"objects": ["<label>-<id>", ...]}.
std::string proposal_request(const sgl::SceneGraph& graph, const scenario::Scenario& scenario);

/// Involved objects plus every valid id the model adds. With
/// `fallback_on_failure`, a failing gateway or unparseable reply yields a
/// seed-only proposal instead of an exception.
SubsetProposal propose_subset(const std::string& scan_id, std::size_t scenario_index, const sgl::SceneGraph& graph,
                              const scenario::Scenario& scenario, llm::Gateway& gateway,
                              const llm::AgentConfig& config, bool fallback_on_failure = true);

/// Throws EmptySubset or UnknownObjectId.
sgl::SceneGraph apply_decision(const sgl::SceneGraph& graph, const ReviewDecision& decision);

/// Accepts the proposal as-is. Refuses (ErrorKind::Mode) unless `mode` is Auto.
ReviewDecision auto_approve(const SubsetProposal& proposal, ReviewMode mode);

std::string now_iso8601();

nlohmann::json to_json(const SubsetProposal& proposal);
SubsetProposal proposal_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const ReviewDecision& decision);
ReviewDecision decision_from_json(const nlohmann::json& doc);

/// Append-only JSONL store of decisions, latest line per (scan, scenario)
/// wins. Writes are serialized in-process and, when `lock_path` is set,
/// across processes through an advisory file lock.
class DecisionLog {
 public:
  explicit DecisionLog(std::filesystem::path path, std::optional<std::filesystem::path> lock_path = std::nullopt);

  std::optional<ReviewDecision> find(const std::string& scan_id, std::size_t scenario_index) const;
  std::vector<ReviewDecision> all() const;

  /// Persists `decision`. A second decision for an already decided item is
  /// rejected with AlreadyDecided unless `amend`; resubmitting with the same
  /// non-empty idempotency key returns the stored decision unchanged.
  ReviewDecision record(const ReviewDecision& decision, bool amend = false);

  void reload();

 private:
  void load_locked();

  std::filesystem::path path_;
  std::optional<std::filesystem::path> lock_path_;
  mutable std::mutex mutex_;
  std::map<std::pair<std::string, std::size_t>, ReviewDecision> latest_;
};

}  // namespace sadforge::pruning
