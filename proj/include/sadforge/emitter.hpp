#pragma once

// Turns finished dialogue records into chat-format instruction samples,
// splits scans into train/test, and computes dataset statistics.
//
// One JSONL line per sample:
//   {"messages":[{"role":"system","content":...},...],"family":"steps",
//    "meta":{"scan_id":...,"scenario_index":0,"sample_index":0}}

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "sadforge/dialogue.hpp"
#include "sadforge/error.hpp"
#include "sadforge/gateway.hpp"
#include "sadforge/scenario.hpp"
#include "sadforge/sgl.hpp"
#include "sadforge/util.hpp"

namespace sadforge::emit {

inline constexpr std::size_t kMembershipCap = 5;
inline constexpr double kDefaultTrainRatio = 0.8;

struct SadRecord {
  std::string scan_id;
  std::size_t scenario_index = 0;
  scenario::Scenario scenario;
  sgl::SceneGraph pruned_graph;
  /// Workspace-relative path of the scan's complete graph.
  std::string full_graph_ref;
  std::vector<dialogue::DialogueTurn> transcript;
  dialogue::InstructionSet final_instructions;
  bool truncated = false;
  bool reviewer_used = false;
  bool revised = false;
  bool failed = false;
  std::string failure;
};

nlohmann::json to_json(const SadRecord& record);
SadRecord record_from_json(const nlohmann::json& doc);

enum class Family { Conversation, Steps, PruneGraph, PruneMembership };
std::string_view to_string(Family family);
std::optional<Family> parse_family(std::string_view name);

struct InstructSample {
  std::vector<llm::ChatMessage> messages;
  Family family = Family::Steps;
  std::string scan_id;
  std::size_t scenario_index = 0;
  std::size_t sample_index = 0;
  /// Membership samples only: the object asked about and the expected answer.
  std::optional<sgl::ObjectId> object_id;
  std::optional<bool> positive;

  nlohmann::ordered_json to_json() const;
};

/// Inverse of InstructSample::to_json. Throws EmitError(Precondition) on a
/// line that fails validate_sample_json.
InstructSample sample_from_json(const nlohmann::json& line);

enum class ErrorKind { EmptyTranscript, EmptyInput, InvalidRatio, DuplicateScanId, UnknownScan, Precondition };

class EmitError : public Error {
 public:
  EmitError(ErrorKind kind, std::string message);
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Problems with one emitted JSONL line; empty means the line is valid.
/// Checks the chat layout (system, then user/assistant alternating, ending
/// with assistant, non-empty contents), the family tag and the meta block.
std::vector<std::string> validate_sample_json(const nlohmann::json& line);

/// "1. first\n2. second", one line per step.
std::string render_steps(const dialogue::InstructionSet& steps);

/// The multi-turn conversation replayed as one sample. The last Oracle
/// answer is replaced by the final instructions. Throws EmptyTranscript when
/// the record has no Oracle turn.
std::vector<InstructSample> emit_conversation_samples(const SadRecord& record);

/// Scenario request answered directly with the final instructions.
std::vector<InstructSample> emit_step_samples(const SadRecord& record);

/// One whole-graph pruning sample plus up to `membership_cap` yes and
/// `membership_cap` no questions about single objects, drawn without
/// replacement with `rng`.
std::vector<InstructSample> emit_pruning_samples(const SadRecord& record, const sgl::SceneGraph& full_graph,
                                                 util::SplitMix64& rng, std::size_t membership_cap = kMembershipCap);

struct SplitManifest {
  std::vector<std::string> train_scan_ids;
  std::vector<std::string> test_scan_ids;
  std::uint64_t seed = 0;
  double ratio = kDefaultTrainRatio;

  /// "train", "test", or nullopt for an unknown scan.
  std::optional<std::string> split_of(const std::string& scan_id) const;
};

nlohmann::ordered_json to_json(const SplitManifest& manifest);
SplitManifest split_manifest_from_json(const nlohmann::json& doc);

/// Shuffles the sorted ids with `seed` and assigns the first
/// floor(ratio * N) to train. Both lists are returned sorted.
SplitManifest split(std::vector<std::string> scan_ids, double ratio, std::uint64_t seed);

using TokenCounter = std::function<std::size_t(std::string_view)>;

/// Number of maximal runs of non-whitespace bytes.
std::size_t count_tokens(std::string_view text);

struct StatsRow {
  std::size_t scans = 0;
  std::size_t scenarios = 0;
  std::size_t task_steps = 0;
  std::size_t input_tokens = 0;
  std::size_t output_tokens = 0;
  std::size_t total_tokens = 0;

  friend bool operator==(const StatsRow&, const StatsRow&) = default;
};

struct DatasetStats {
  StatsRow train;
  StatsRow test;
  StatsRow total;
};

nlohmann::ordered_json to_json(const DatasetStats& stats);

/// Input tokens come from system and user messages, output tokens from
/// assistant messages. Scans are counted from the manifest, scenarios as
/// distinct (scan, scenario) pairs among samples, task steps as final
/// instruction counts of the non-failed records. Throws UnknownScan.
DatasetStats compute_stats(const std::vector<InstructSample>& samples, const std::vector<SadRecord>& records,
                           const SplitManifest& manifest, const TokenCounter& counter = count_tokens);

/// LoRA fine-tuning settings plus dataset paths; `overrides` (a JSON
/// object) replaces top-level keys.
nlohmann::ordered_json emit_training_manifest(const nlohmann::json& overrides = nlohmann::json::object(),
                                              const std::string& train_file = "train-instruct.jsonl",
                                              const std::string& test_file = "test-instruct.jsonl");

struct Dataset {
  std::vector<InstructSample> train;
  std::vector<InstructSample> test;
  std::size_t skipped_records = 0;
};

/// Every family for every non-failed record, routed by the scan's split and
/// ordered by (scan, scenario, family, sample index). Membership sampling is
/// seeded per record from `seed`, so the result does not depend on record
/// order. `full_graphs` must hold each record's complete scan graph.
Dataset build_dataset(const std::vector<SadRecord>& records, const std::map<std::string, sgl::SceneGraph>& full_graphs,
                      const SplitManifest& manifest, std::uint64_t seed, std::size_t membership_cap = kMembershipCap);

std::string to_jsonl(const std::vector<InstructSample>& samples);

}  // namespace sadforge::emit
