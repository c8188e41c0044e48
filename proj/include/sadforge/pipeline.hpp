#pragma once

// Stage orchestration over an on-disk workspace.
//
//   <workspace>/
//     scans.json                       ingested scan ids and catalog stats
//     scans/<scan>/graph.sgl           complete scene graph
//     scans/<scan>/scenarios.json      candidates, embeddings, selection
//     scans/<scan>/proposals/<i>.json  object subset proposals
//     scans/<scan>/pruned/<i>.json     pruned graph + the decision it came from
//     scans/<scan>/dialogue/<i>.json   finished record (journal alongside while running)
//     decisions.jsonl                  review decisions, append-only
//     transcripts.jsonl                every provider exchange
//     status.json                      per-unit state and artifact digest
//     split.json, stats.json
//     out/{train,test}-instruct.jsonl, out/train_manifest.json
//
// Every artifact is written through a temp file and renamed into place.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sadforge/dialogue.hpp"
#include "sadforge/emitter.hpp"
#include "sadforge/error.hpp"
#include "sadforge/gateway.hpp"
#include "sadforge/pruning.hpp"

namespace sadforge::pipeline {

struct EndpointConfig {
  /// chat: mock | openai. embeddings: hashed | mock | openai.
  std::string kind = "mock";
  std::string base_url;
  std::filesystem::path cassette;
  std::size_t dim = 256;
  llm::EndpointProfile profile;
};

inline EndpointConfig hashed_endpoint() {
  EndpointConfig ep;
  ep.kind = "hashed";
  return ep;
}

struct ReviewConfig {
  pruning::ReviewMode mode = pruning::ReviewMode::Auto;
  std::string host = "127.0.0.1";
  int port = 8088;
  std::filesystem::path static_dir;
  /// Static bearer token for /api routes; empty disables auth.
  std::string token;
};

struct PipelineConfig {
  std::optional<std::uint64_t> seed;
  std::filesystem::path workspace;
  int parallelism = 4;

  std::filesystem::path catalog_objects;
  std::filesystem::path catalog_relations;
  std::string catalog_format = "neutral";  ///< neutral | 3dssg

  EndpointConfig chat;
  EndpointConfig embeddings = hashed_endpoint();
  std::string api_key;

  std::map<std::string, llm::AgentConfig> agents;
  ReviewConfig review;
  std::size_t scenarios_per_scan = 5;
  int max_rounds = 10;
  int json_retry_budget = 2;
  bool reviewer_enabled = false;
  std::size_t membership_cap = emit::kMembershipCap;
  double train_ratio = emit::kDefaultTrainRatio;
  nlohmann::json training_overrides = nlohmann::json::object();
  llm::RetryPolicy retry;
  /// Real wall-clock latencies in transcripts.jsonl; off keeps it byte-stable.
  bool record_latency = false;

  const llm::AgentConfig& agent(const std::string& role) const;
  dialogue::DialogueConfig dialogue_config() const;
  /// Throws ConfigError naming the first problem.
  void validate() const;
};

/// Reads a JSON config; relative paths resolve against the file's
/// directory. SADFORGE_API_KEY and SADFORGE_BASE_URL override the file.
PipelineConfig load_config(const std::filesystem::path& path);
PipelineConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir);

/// A stage was started before the artifacts it consumes exist.
class GateError : public Error {
 public:
  using Error::Error;
};

/// One or more units of a stage failed; the others completed.
class StageError : public Error {
 public:
  using Error::Error;
};

enum class UnitState { Pending, Running, Done, Failed, Skipped };
std::string_view to_string(UnitState state);
UnitState parse_unit_state(std::string_view name);

struct UnitStatus {
  UnitState state = UnitState::Pending;
  std::string digest;
  std::string error;
};

class Workspace {
 public:
  explicit Workspace(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }
  /// Scan ids are percent-encoded into a single path component.
  static std::string encode_component(std::string_view scan_id);

  std::filesystem::path scans_manifest() const { return root_ / "scans.json"; }
  std::filesystem::path scan_dir(const std::string& scan_id) const;
  std::filesystem::path graph_path(const std::string& scan_id) const;
  std::filesystem::path scenarios_path(const std::string& scan_id) const;
  std::filesystem::path proposal_path(const std::string& scan_id, std::size_t idx) const;
  std::filesystem::path pruned_path(const std::string& scan_id, std::size_t idx) const;
  std::filesystem::path dialogue_path(const std::string& scan_id, std::size_t idx) const;
  std::filesystem::path journal_path(const std::string& scan_id, std::size_t idx) const;
  std::filesystem::path decisions_path() const { return root_ / "decisions.jsonl"; }
  std::filesystem::path transcripts_path() const { return root_ / "transcripts.jsonl"; }
  std::filesystem::path status_path() const { return root_ / "status.json"; }
  std::filesystem::path lock_path() const { return root_ / "workspace.lock"; }
  std::filesystem::path split_path() const { return root_ / "split.json"; }
  std::filesystem::path stats_path() const { return root_ / "stats.json"; }
  std::filesystem::path out_dir() const { return root_ / "out"; }

  /// Ingested scan ids, sorted; empty before ingest.
  std::vector<std::string> scan_ids() const;
  sgl::SceneGraph load_graph(const std::string& scan_id) const;
  /// (scan, scenario index) pairs with a proposal on disk, sorted.
  std::vector<std::pair<std::string, std::size_t>> proposal_keys() const;
  pruning::SubsetProposal load_proposal(const std::string& scan_id, std::size_t idx) const;
  scenario::ScenarioSet load_scenarios(const std::string& scan_id) const;

 private:
  std::filesystem::path root_;
};

/// Persistent per-unit status, keyed "<stage>/<scan>[/<idx>]".
class StatusStore {
 public:
  explicit StatusStore(std::filesystem::path path);

  UnitStatus get(const std::string& key) const;
  void set(const std::string& key, UnitStatus status);
  std::map<std::string, UnitStatus> all() const;
  void clear_stage(const std::string& stage);

 private:
  void save_locked() const;

  std::filesystem::path path_;
  mutable std::mutex mutex_;
  std::map<std::string, UnitStatus> units_;
};

struct StageReport {
  std::string stage;
  std::size_t ran = 0;
  std::size_t skipped = 0;
  std::size_t failed = 0;
  std::size_t pending = 0;
};

struct StatusRow {
  std::string stage;
  std::size_t done = 0;
  std::size_t failed = 0;
  std::size_t pending = 0;
  /// pending | partial | done | failed
  std::string state;
};

inline const std::vector<std::string>& stage_order() {
  static const std::vector<std::string> stages = {"ingest",   "scenarios", "prune-propose", "review", "prune-apply",
                                                  "dialogue", "split",     "emit",          "stats"};
  return stages;
}

/// Per-stage unit counts read from the workspace alone; every stage shows
/// as pending on an empty workspace.
std::vector<StatusRow> workspace_status(const Workspace& workspace);

struct RunOptions {
  bool fresh = false;
  /// Input and output for the interactive-cli review mode.
  std::istream* review_in = nullptr;
  std::ostream* review_out = nullptr;
};

class Pipeline {
 public:
  /// Providers default to the ones named in `config`; tests may inject their own.
  Pipeline(PipelineConfig config, RunOptions options = {}, std::shared_ptr<llm::Provider> chat = nullptr,
           std::shared_ptr<llm::Provider> embeddings = nullptr);

  StageReport ingest();
  StageReport scenarios();
  StageReport prune_propose();
  /// Auto-approves (auto mode) or prompts on the review streams (cli mode)
  /// for every undecided proposal. In web mode it only counts pending items.
  StageReport review();
  StageReport prune_apply();
  StageReport dialogue();
  StageReport split();
  StageReport emit();
  StageReport stats();
  /// All stages in order. Stops after `review` when decisions are still
  /// pending (web mode); `paused` reports that.
  std::vector<StageReport> run_all(bool* paused = nullptr);

  std::vector<StatusRow> status() const;
  /// sha256 of each emitted file under out/ plus split.json and stats.json.
  std::map<std::string, std::string> output_digests() const;

  const Workspace& workspace() const { return workspace_; }
  const PipelineConfig& config() const { return config_; }

 private:
  template <typename Unit>
  StageReport run_units(const std::string& stage, const std::vector<Unit>& units,
                        const std::function<std::string(const Unit&)>& key_of,
                        const std::function<std::filesystem::path(const Unit&)>& artifact_of,
                        const std::function<void(const Unit&)>& work);
  llm::Gateway& gateway();
  bool unit_is_current(const std::string& key, const std::filesystem::path& artifact) const;
  void record_done(const std::string& key, const std::filesystem::path& artifact);

  PipelineConfig config_;
  RunOptions options_;
  Workspace workspace_;
  std::unique_ptr<StatusStore> status_;
  std::shared_ptr<llm::Provider> chat_;
  std::shared_ptr<llm::Provider> embeddings_;
  std::shared_ptr<llm::Gateway> gateway_;
};

/// Entry point of the `sadforge` executable. Returns the process exit code:
/// 0 ok, 2 config error, 3 stage failure, 4 gate violation.
int run_cli(int argc, char** argv);

}  // namespace sadforge::pipeline
