#include "sadforge/pipeline.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>

#include "sadforge/http_provider.hpp"
#include "sadforge/ingest.hpp"
#include "sadforge/mock_provider.hpp"
#include "sadforge/prompts.hpp"
#include "sadforge/scenario.hpp"
#include "sadforge/util.hpp"

namespace sadforge::pipeline {
namespace fs = std::filesystem;
namespace {

using nlohmann::json;

json read_json(const fs::path& path) {
  json doc = json::parse(util::read_file(path), nullptr, false);
  if (doc.is_discarded()) throw Error(fmt::format("{}: not valid JSON", path.string()));
  return doc;
}

std::string unit_key(const std::string& stage, const std::string& scan_id) { return fmt::format("{}/{}", stage, scan_id); }
std::string unit_key(const std::string& stage, const std::string& scan_id, std::size_t idx) {
  return fmt::format("{}/{}/{}", stage, scan_id, idx);
}

fs::path resolve(const fs::path& base, const json& value) {
  fs::path p = value.get<std::string>();
  return p.is_absolute() ? p : base / p;
}

template <typename T>
T get_or(const json& doc, const char* key, T fallback) {
  auto it = doc.find(key);
  if (it == doc.end() || it->is_null()) return fallback;
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("config field '{}': {}", key, e.what()));
  }
}

EndpointConfig parse_endpoint(const json& doc, const fs::path& base, std::string default_kind) {
  EndpointConfig ep;
  ep.kind = std::move(default_kind);
  if (doc.is_null()) return ep;
  if (!doc.is_object()) throw ConfigError("endpoint entries must be objects");
  ep.kind = get_or<std::string>(doc, "kind", ep.kind);
  ep.base_url = get_or<std::string>(doc, "base_url", "");
  if (doc.contains("cassette")) ep.cassette = resolve(base, doc["cassette"]);
  ep.dim = get_or<std::size_t>(doc, "dim", ep.dim);
  ep.profile.name = get_or<std::string>(doc, "name", ep.kind);
  if (doc.contains("penalty_field")) ep.profile.penalty_field = llm::parse_penalty_field(doc["penalty_field"].get<std::string>());
  ep.profile.max_concurrency = get_or<int>(doc, "max_concurrency", ep.profile.max_concurrency);
  ep.profile.requests_per_second = get_or<double>(doc, "requests_per_second", ep.profile.requests_per_second);
  ep.profile.burst = get_or<double>(doc, "burst", ep.profile.burst);
  ep.profile.embedding_model = get_or<std::string>(doc, "embedding_model", ep.profile.embedding_model);
  return ep;
}

std::shared_ptr<llm::Provider> make_provider(const EndpointConfig& ep, const std::string& api_key,
                                             const std::shared_ptr<llm::Provider>& chat_mock) {
  if (ep.kind == "mock") {
    if (chat_mock) return chat_mock;
    if (ep.cassette.empty()) throw ConfigError("mock endpoint needs a cassette");
    return llm::MockProvider::from_file(ep.cassette);
  }
  if (ep.kind == "openai") return std::make_shared<llm::HttpProvider>(ep.base_url, api_key);
  if (ep.kind == "hashed") return std::make_shared<llm::HashedEmbeddingProvider>(ep.dim);
  throw ConfigError(fmt::format("unknown endpoint kind '{}'", ep.kind));
}

std::string stage_of(const std::string& key) { return key.substr(0, key.find('/')); }

std::set<sgl::ObjectId> parse_id_list(const std::string& line) {
  std::set<sgl::ObjectId> ids;
  std::string token;
  auto flush = [&] {
    if (token.empty()) return;
    if (!std::all_of(token.begin(), token.end(), [](char c) { return c >= '0' && c <= '9'; }) || token.size() > 18) {
      throw pruning::PruningError(pruning::ErrorKind::InvalidDecision, fmt::format("'{}' is not an object id", token));
    }
    ids.insert(std::stoull(token));
    token.clear();
  };
  for (char c : line) {
    if (c == ',' || std::isspace(static_cast<unsigned char>(c))) flush();
    else token.push_back(c);
  }
  flush();
  return ids;
}

}  // namespace

// ---------------------------------------------------------------- config

const llm::AgentConfig& PipelineConfig::agent(const std::string& role) const {
  auto it = agents.find(role);
  if (it == agents.end()) throw ConfigError(fmt::format("no agent config for role '{}'", role));
  return it->second;
}

dialogue::DialogueConfig PipelineConfig::dialogue_config() const {
  dialogue::DialogueConfig dc;
  dc.max_rounds = max_rounds;
  dc.json_retry_budget = json_retry_budget;
  dc.reviewer_enabled = reviewer_enabled;
  dc.humanoid = agent("humanoid");
  dc.oracle = agent("oracle");
  dc.summarizer = agent("summarizer");
  dc.reviewer = agent("reviewer");
  return dc;
}

void PipelineConfig::validate() const {
  if (!seed) throw ConfigError("a seed is required (config 'seed' or --seed)");
  if (workspace.empty()) throw ConfigError("a workspace path is required (config 'workspace' or --workspace)");
  if (parallelism < 1) throw ConfigError("parallelism must be at least 1");
  if (scenarios_per_scan < 1) throw ConfigError("scenarios.select must be at least 1");
  if (max_rounds < 1) throw ConfigError("dialogue.max_rounds must be at least 1");
  if (json_retry_budget < 0) throw ConfigError("dialogue.json_retry_budget must be non-negative");
  if (!(train_ratio > 0.0 && train_ratio < 1.0)) throw ConfigError("emit.ratio must lie in (0, 1)");
  if (catalog_format != "neutral" && catalog_format != "3dssg") {
    throw ConfigError(fmt::format("unknown catalog format '{}'", catalog_format));
  }
  for (const char* role : {"scenario", "prune", "humanoid", "oracle", "summarizer"}) agent(role).validate();
  if (reviewer_enabled) agent("reviewer").validate();
  for (const auto* ep : {&chat, &embeddings}) {
    if (ep->kind == "openai" && ep->base_url.empty()) throw ConfigError("openai endpoint needs base_url or SADFORGE_BASE_URL");
  }
  if (chat.kind != "mock" && chat.kind != "openai") throw ConfigError(fmt::format("unknown chat endpoint kind '{}'", chat.kind));
}

PipelineConfig parse_config(const json& doc, const fs::path& base_dir) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  static const std::set<std::string> known = {"seed",     "workspace", "parallelism", "catalog", "endpoints", "agents",
                                              "review",   "scenarios", "dialogue",    "emit",    "retry",     "record_latency"};
  for (const auto& [key, _] : doc.items()) {
    if (!known.contains(key)) throw ConfigError(fmt::format("unknown config field '{}'", key));
  }
  PipelineConfig c;
  if (doc.contains("seed")) c.seed = get_or<std::uint64_t>(doc, "seed", 0);
  if (doc.contains("workspace")) c.workspace = resolve(base_dir, doc["workspace"]);
  c.parallelism = get_or<int>(doc, "parallelism", c.parallelism);
  c.record_latency = get_or<bool>(doc, "record_latency", c.record_latency);

  const json catalog = doc.value("catalog", json::object());
  if (catalog.contains("objects")) c.catalog_objects = resolve(base_dir, catalog["objects"]);
  if (catalog.contains("relations")) c.catalog_relations = resolve(base_dir, catalog["relations"]);
  c.catalog_format = get_or<std::string>(catalog, "format", c.catalog_format);

  const json endpoints = doc.value("endpoints", json::object());
  c.chat = parse_endpoint(endpoints.value("chat", json()), base_dir, "mock");
  c.embeddings = parse_endpoint(endpoints.value("embeddings", json()), base_dir, "hashed");

  c.agents = {{"scenario", llm::scenario_config()},     {"prune", llm::prune_config()},
              {"humanoid", llm::humanoid_config()},     {"oracle", llm::oracle_config()},
              {"summarizer", llm::summarizer_config()}, {"reviewer", llm::reviewer_config()}};
  const json agents = doc.value("agents", json::object());
  for (const auto& [role, overrides] : agents.items()) {
    auto it = c.agents.find(role);
    if (it == c.agents.end()) throw ConfigError(fmt::format("unknown agent role '{}'", role));
    it->second = llm::apply_overrides(it->second, overrides);
  }

  const json review = doc.value("review", json::object());
  c.review.mode = pruning::parse_review_mode(get_or<std::string>(review, "mode", "auto"));
  c.review.host = get_or<std::string>(review, "host", c.review.host);
  c.review.port = get_or<int>(review, "port", c.review.port);
  if (review.contains("static_dir")) c.review.static_dir = resolve(base_dir, review["static_dir"]);
  c.review.token = get_or<std::string>(review, "token", "");

  c.scenarios_per_scan = get_or<std::size_t>(doc.value("scenarios", json::object()), "select", c.scenarios_per_scan);

  const json dlg = doc.value("dialogue", json::object());
  c.max_rounds = get_or<int>(dlg, "max_rounds", c.max_rounds);
  c.json_retry_budget = get_or<int>(dlg, "json_retry_budget", c.json_retry_budget);
  c.reviewer_enabled = get_or<bool>(dlg, "reviewer_enabled", c.reviewer_enabled);

  const json em = doc.value("emit", json::object());
  c.membership_cap = get_or<std::size_t>(em, "membership_cap", c.membership_cap);
  c.train_ratio = get_or<double>(em, "ratio", c.train_ratio);
  c.training_overrides = em.value("training", json::object());

  const json retry = doc.value("retry", json::object());
  c.retry.max_attempts = get_or<int>(retry, "max_attempts", c.retry.max_attempts);
  c.retry.base_delay = std::chrono::milliseconds(get_or<int>(retry, "base_delay_ms", static_cast<int>(c.retry.base_delay.count())));
  c.retry.multiplier = get_or<double>(retry, "multiplier", c.retry.multiplier);
  c.retry.jitter = get_or<double>(retry, "jitter", c.retry.jitter);

  if (const char* key = std::getenv("SADFORGE_API_KEY")) c.api_key = key;
  if (const char* url = std::getenv("SADFORGE_BASE_URL")) {
    if (c.chat.kind == "openai") c.chat.base_url = url;
    if (c.embeddings.kind == "openai") c.embeddings.base_url = url;
  }
  return c;
}

PipelineConfig load_config(const fs::path& path) {
  std::string text;
  try {
    text = util::read_file(path);
  } catch (const std::exception& e) {
    throw ConfigError(fmt::format("cannot read config {}: {}", path.string(), e.what()));
  }
  json doc = json::parse(text, nullptr, false);
  if (doc.is_discarded()) throw ConfigError(fmt::format("{}: not valid JSON", path.string()));
  return parse_config(doc, fs::absolute(path).parent_path());
}

// ---------------------------------------------------------------- status

std::string_view to_string(UnitState state) {
  switch (state) {
    case UnitState::Pending: return "pending";
    case UnitState::Running: return "running";
    case UnitState::Done: return "done";
    case UnitState::Failed: return "failed";
    case UnitState::Skipped: return "skipped";
  }
  return "pending";
}

UnitState parse_unit_state(std::string_view name) {
  for (auto s : {UnitState::Pending, UnitState::Running, UnitState::Done, UnitState::Failed, UnitState::Skipped}) {
    if (to_string(s) == name) return s;
  }
  throw Error(fmt::format("unknown unit state '{}'", name));
}

StatusStore::StatusStore(fs::path path) : path_(std::move(path)) {
  if (!fs::exists(path_)) return;
  json doc = read_json(path_);
  const json units = doc.value("units", json::object());
  for (const auto& [key, entry] : units.items()) {
    units_[key] = {parse_unit_state(entry.value("state", "pending")), entry.value("digest", ""), entry.value("error", "")};
  }
}

UnitStatus StatusStore::get(const std::string& key) const {
  std::lock_guard lock(mutex_);
  auto it = units_.find(key);
  return it == units_.end() ? UnitStatus{} : it->second;
}

void StatusStore::set(const std::string& key, UnitStatus status) {
  std::lock_guard lock(mutex_);
  units_[key] = std::move(status);
  save_locked();
}

std::map<std::string, UnitStatus> StatusStore::all() const {
  std::lock_guard lock(mutex_);
  return units_;
}

void StatusStore::clear_stage(const std::string& stage) {
  std::lock_guard lock(mutex_);
  std::erase_if(units_, [&](const auto& entry) { return stage_of(entry.first) == stage; });
  save_locked();
}

void StatusStore::save_locked() const {
  json units = json::object();
  for (const auto& [key, s] : units_) {
    json entry = {{"state", to_string(s.state)}};
    if (!s.digest.empty()) entry["digest"] = s.digest;
    if (!s.error.empty()) entry["error"] = s.error;
    units[key] = entry;
  }
  util::atomic_write(path_, json{{"units", units}}.dump(2) + "\n");
}

// ---------------------------------------------------------------- workspace

Workspace::Workspace(fs::path root) : root_(std::move(root)) {}

std::string Workspace::encode_component(std::string_view scan_id) {
  std::string out;
  for (std::size_t i = 0; i < scan_id.size(); ++i) {
    auto c = static_cast<unsigned char>(scan_id[i]);
    bool plain = std::isalnum(c) || c == '-' || c == '_' || (c == '.' && i > 0);
    if (plain) out.push_back(static_cast<char>(c));
    else out += fmt::format("%{:02X}", c);
  }
  return out;
}

fs::path Workspace::scan_dir(const std::string& scan_id) const { return root_ / "scans" / encode_component(scan_id); }
fs::path Workspace::graph_path(const std::string& scan_id) const { return scan_dir(scan_id) / "graph.sgl"; }
fs::path Workspace::scenarios_path(const std::string& scan_id) const { return scan_dir(scan_id) / "scenarios.json"; }
fs::path Workspace::proposal_path(const std::string& scan_id, std::size_t idx) const {
  return scan_dir(scan_id) / "proposals" / fmt::format("{}.json", idx);
}
fs::path Workspace::pruned_path(const std::string& scan_id, std::size_t idx) const {
  return scan_dir(scan_id) / "pruned" / fmt::format("{}.json", idx);
}
fs::path Workspace::dialogue_path(const std::string& scan_id, std::size_t idx) const {
  return scan_dir(scan_id) / "dialogue" / fmt::format("{}.json", idx);
}
fs::path Workspace::journal_path(const std::string& scan_id, std::size_t idx) const {
  return scan_dir(scan_id) / "dialogue" / fmt::format("{}.journal.jsonl", idx);
}

std::vector<std::string> Workspace::scan_ids() const {
  if (!fs::exists(scans_manifest())) return {};
  return read_json(scans_manifest()).at("scans").get<std::vector<std::string>>();
}

sgl::SceneGraph Workspace::load_graph(const std::string& scan_id) const {
  return sgl::parse_sgl(util::read_file(graph_path(scan_id)));
}

std::vector<std::pair<std::string, std::size_t>> Workspace::proposal_keys() const {
  std::vector<std::pair<std::string, std::size_t>> keys;
  for (const auto& scan : scan_ids()) {
    fs::path dir = scan_dir(scan) / "proposals";
    if (!fs::is_directory(dir)) continue;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.path().extension() != ".json") continue;
      std::string stem = entry.path().stem().string();
      if (stem.empty() || !std::all_of(stem.begin(), stem.end(), [](char c) { return c >= '0' && c <= '9'; })) continue;
      keys.emplace_back(scan, std::stoull(stem));
    }
  }
  std::sort(keys.begin(), keys.end());
  return keys;
}

pruning::SubsetProposal Workspace::load_proposal(const std::string& scan_id, std::size_t idx) const {
  return pruning::proposal_from_json(read_json(proposal_path(scan_id, idx)));
}

scenario::ScenarioSet Workspace::load_scenarios(const std::string& scan_id) const {
  return scenario::scenario_set_from_json(read_json(scenarios_path(scan_id)));
}

// ---------------------------------------------------------------- pipeline

Pipeline::Pipeline(PipelineConfig config, RunOptions options, std::shared_ptr<llm::Provider> chat,
                   std::shared_ptr<llm::Provider> embeddings)
    : config_(std::move(config)),
      options_(options),
      workspace_(config_.workspace),
      chat_(std::move(chat)),
      embeddings_(std::move(embeddings)) {
  config_.validate();
  fs::create_directories(workspace_.root());
  status_ = std::make_unique<StatusStore>(workspace_.status_path());
}

llm::Gateway& Pipeline::gateway() {
  if (gateway_) return *gateway_;
  if (!chat_) chat_ = make_provider(config_.chat, config_.api_key, nullptr);
  if (!embeddings_) {
    auto mock = config_.embeddings.kind == "mock" && config_.chat.kind == "mock" ? chat_ : nullptr;
    embeddings_ = make_provider(config_.embeddings, config_.api_key, mock);
  }
  llm::GatewayOptions go;
  go.retry = config_.retry;
  go.profile = config_.chat.profile;
  go.profile.embedding_model = config_.embeddings.profile.embedding_model;
  go.transcript = std::make_shared<llm::TranscriptLog>(workspace_.transcripts_path());
  go.seed = *config_.seed;
  go.record_latency = config_.record_latency;
  gateway_ = std::make_shared<llm::Gateway>(chat_, embeddings_, std::move(go));
  return *gateway_;
}

bool Pipeline::unit_is_current(const std::string& key, const fs::path& artifact) const {
  if (options_.fresh) return false;
  UnitStatus s = status_->get(key);
  if (s.state != UnitState::Done || s.digest.empty() || !fs::exists(artifact)) return false;
  return util::sha256_hex(util::read_file(artifact)) == s.digest;
}

void Pipeline::record_done(const std::string& key, const fs::path& artifact) {
  status_->set(key, {UnitState::Done, util::sha256_hex(util::read_file(artifact)), {}});
}

template <typename Unit>
StageReport Pipeline::run_units(const std::string& stage, const std::vector<Unit>& units,
                                const std::function<std::string(const Unit&)>& key_of,
                                const std::function<fs::path(const Unit&)>& artifact_of,
                                const std::function<void(const Unit&)>& work) {
  StageReport report{stage};
  std::mutex report_mutex;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < units.size(); i = next++) {
      const Unit& unit = units[i];
      const std::string key = key_of(unit);
      const fs::path artifact = artifact_of(unit);
      if (unit_is_current(key, artifact)) {
        std::lock_guard lock(report_mutex);
        ++report.skipped;
        continue;
      }
      status_->set(key, {UnitState::Running, {}, {}});
      try {
        work(unit);
        record_done(key, artifact);
        std::lock_guard lock(report_mutex);
        ++report.ran;
      } catch (const std::exception& e) {
        spdlog::error("{}: {}", key, e.what());
        status_->set(key, {UnitState::Failed, {}, e.what()});
        std::lock_guard lock(report_mutex);
        ++report.failed;
      }
    }
  };
  std::size_t n_threads = std::min<std::size_t>(static_cast<std::size_t>(config_.parallelism), units.size());
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < n_threads; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  return report;
}

StageReport Pipeline::ingest() {
  if (config_.catalog_objects.empty() || config_.catalog_relations.empty()) {
    throw ConfigError("catalog.objects and catalog.relations must be configured");
  }
  json objects, relations;
  try {
    objects = read_json(config_.catalog_objects);
    relations = read_json(config_.catalog_relations);
  } catch (const std::exception& e) {
    throw ConfigError(fmt::format("cannot load catalog: {}", e.what()));
  }
  if (config_.catalog_format == "3dssg") {
    auto neutral = ingest::adapt_3dssg(objects, relations);
    objects = std::move(neutral.objects);
    relations = std::move(neutral.relations);
  }
  auto records = ingest::load_catalog(objects, relations);

  std::vector<std::string> ids;
  for (const auto& r : records) ids.push_back(r.scan_id);
  json manifest = {{"scans", ids}, {"stats", ingest::to_json(ingest::catalog_stats(records))}};
  util::atomic_write(workspace_.scans_manifest(), manifest.dump(2) + "\n");

  return run_units<ingest::ScanRecord>(
      "ingest", records, [](const auto& r) { return unit_key("ingest", r.scan_id); },
      [&](const auto& r) { return workspace_.graph_path(r.scan_id); },
      [&](const auto& r) {
        fs::create_directories(workspace_.scan_dir(r.scan_id));
        util::atomic_write(workspace_.scan_dir(r.scan_id) / "meta.json",
                           json{{"scan_id", r.scan_id}, {"source", r.source_meta}}.dump(2) + "\n");
        util::atomic_write(workspace_.graph_path(r.scan_id), sgl::serialize_sgl(r.graph) + "\n");
      });
}

StageReport Pipeline::scenarios() {
  auto scans = workspace_.scan_ids();
  if (scans.empty()) throw GateError("scenarios: no ingested scans; run ingest first");
  auto& gw = gateway();
  return run_units<std::string>(
      "scenarios", scans, [](const auto& s) { return unit_key("scenarios", s); },
      [&](const auto& s) { return workspace_.scenarios_path(s); },
      [&](const auto& s) {
        auto set = scenario::build_scenario_set(s, workspace_.load_graph(s), gw, config_.agent("scenario"),
                                                config_.scenarios_per_scan);
        util::atomic_write(workspace_.scenarios_path(s), scenario::to_json(set).dump(2) + "\n");
      });
}

StageReport Pipeline::prune_propose() {
  using Key = std::pair<std::string, std::size_t>;
  std::vector<Key> units;
  std::map<std::string, scenario::ScenarioSet> sets;
  bool any = false;
  for (const auto& scan : workspace_.scan_ids()) {
    if (!fs::exists(workspace_.scenarios_path(scan))) continue;
    any = true;
    sets[scan] = workspace_.load_scenarios(scan);
    for (auto idx : sets[scan].selected) units.emplace_back(scan, idx);
  }
  if (!any) throw GateError("prune-propose: no scenarios; run scenarios first");
  auto& gw = gateway();
  return run_units<Key>(
      "prune-propose", units, [](const Key& k) { return unit_key("prune-propose", k.first, k.second); },
      [&](const Key& k) { return workspace_.proposal_path(k.first, k.second); },
      [&](const Key& k) {
        const auto& scenario = sets.at(k.first).candidates.at(k.second);
        auto proposal = pruning::propose_subset(k.first, k.second, workspace_.load_graph(k.first), scenario, gw,
                                                config_.agent("prune"));
        fs::create_directories(workspace_.proposal_path(k.first, k.second).parent_path());
        util::atomic_write(workspace_.proposal_path(k.first, k.second), pruning::to_json(proposal).dump(2) + "\n");
      });
}

StageReport Pipeline::review() {
  auto keys = workspace_.proposal_keys();
  if (keys.empty() && workspace_.scan_ids().empty()) throw GateError("review: no proposals; run prune-propose first");
  pruning::DecisionLog log(workspace_.decisions_path(), workspace_.lock_path());
  StageReport report{"review"};
  for (const auto& [scan, idx] : keys) {
    if (log.find(scan, idx)) {
      ++report.skipped;
      continue;
    }
    auto proposal = workspace_.load_proposal(scan, idx);
    switch (config_.review.mode) {
      case pruning::ReviewMode::Auto: {
        auto decision = log.record(pruning::auto_approve(proposal, pruning::ReviewMode::Auto));
        status_->set(unit_key("review", scan, idx), {UnitState::Done, decision.id(), {}});
        ++report.ran;
        break;
      }
      case pruning::ReviewMode::InteractiveCli: {
        std::istream& in = options_.review_in ? *options_.review_in : std::cin;
        std::ostream& out = options_.review_out ? *options_.review_out : std::cout;
        auto graph = workspace_.load_graph(scan);
        auto scenario = workspace_.load_scenarios(scan).candidates.at(idx);
        out << fmt::format("\n[{} / scenario {}] {}\n", scan, idx, scenario.description);
        for (const auto& obj : graph.objects) {
          out << fmt::format("  [{}] {:>4}  {} ({} relations)\n", proposal.proposed_ids.contains(obj.id) ? 'x' : ' ',
                             obj.id, obj.ref(), graph.degree(obj.id));
        }
        bool decided = false;
        while (!decided) {
          out << "keep ids (blank = proposal, 'skip' = later): " << std::flush;
          std::string line;
          if (!std::getline(in, line)) break;
          std::string_view answer = util::trim(line);
          if (answer == "skip") break;
          try {
            pruning::ReviewDecision d;
            d.scan_id = scan;
            d.scenario_index = idx;
            d.kept_ids = answer.empty() ? proposal.proposed_ids : parse_id_list(std::string(answer));
            d.reviewer = "cli";
            d.decided_at = pruning::now_iso8601();
            pruning::apply_decision(graph, d);
            auto stored = log.record(d);
            status_->set(unit_key("review", scan, idx), {UnitState::Done, stored.id(), {}});
            decided = true;
          } catch (const pruning::PruningError& e) {
            out << "  rejected: " << e.what() << "\n";
          }
        }
        decided ? ++report.ran : ++report.pending;
        break;
      }
      case pruning::ReviewMode::Web: ++report.pending; break;
    }
  }
  return report;
}

StageReport Pipeline::prune_apply() {
  using Key = std::pair<std::string, std::size_t>;
  util::FileLock lock(workspace_.lock_path());
  pruning::DecisionLog log(workspace_.decisions_path());
  auto keys = workspace_.proposal_keys();
  std::vector<Key> units;
  std::size_t pending = 0;
  for (const auto& key : keys) {
    auto decision = log.find(key.first, key.second);
    if (!decision) {
      ++pending;
      continue;
    }
    // An amended decision invalidates the pruned graph built from the old one.
    fs::path pruned = workspace_.pruned_path(key.first, key.second);
    if (fs::exists(pruned) && read_json(pruned).value("decision_id", "") != decision->id()) {
      status_->set(unit_key("prune-apply", key.first, key.second), {});
    }
    units.push_back(key);
  }
  if (units.empty()) throw GateError("prune-apply: no review decisions; review the proposals first");
  auto report = run_units<Key>(
      "prune-apply", units, [](const Key& k) { return unit_key("prune-apply", k.first, k.second); },
      [&](const Key& k) { return workspace_.pruned_path(k.first, k.second); },
      [&](const Key& k) {
        auto decision = *log.find(k.first, k.second);
        auto pruned = pruning::apply_decision(workspace_.load_graph(k.first), decision);
        json doc = {{"scan_id", k.first},
                    {"scenario_index", k.second},
                    {"decision_id", decision.id()},
                    {"kept_ids", decision.kept_ids},
                    {"graph", sgl::serialize_sgl(pruned)}};
        fs::create_directories(workspace_.pruned_path(k.first, k.second).parent_path());
        util::atomic_write(workspace_.pruned_path(k.first, k.second), doc.dump(2) + "\n");
      });
  report.pending = pending;
  if (pending > 0) spdlog::warn("prune-apply: {} item(s) still await review", pending);
  return report;
}

StageReport Pipeline::dialogue() {
  using Key = std::pair<std::string, std::size_t>;
  std::vector<Key> units;
  std::size_t pending = 0;
  for (const auto& key : workspace_.proposal_keys()) {
    if (fs::exists(workspace_.pruned_path(key.first, key.second))) units.push_back(key);
    else ++pending;
  }
  if (units.empty()) throw GateError("dialogue: no pruned graphs; run prune-apply first");
  const auto dc = config_.dialogue_config();
  auto& gw = gateway();
  auto report = run_units<Key>(
      "dialogue", units, [](const Key& k) { return unit_key("dialogue", k.first, k.second); },
      [&](const Key& k) { return workspace_.dialogue_path(k.first, k.second); },
      [&](const Key& k) {
        const auto& [scan, idx] = k;
        json pruned_doc = read_json(workspace_.pruned_path(scan, idx));
        emit::SadRecord record;
        record.scan_id = scan;
        record.scenario_index = idx;
        record.scenario = workspace_.load_scenarios(scan).candidates.at(idx);
        record.pruned_graph = sgl::parse_sgl(pruned_doc.at("graph").get<std::string>());
        record.full_graph_ref = fs::relative(workspace_.graph_path(scan), workspace_.root()).generic_string();
        auto full = workspace_.load_graph(scan);

        fs::path journal = workspace_.journal_path(scan, idx);
        fs::create_directories(journal.parent_path());
        std::ofstream journal_out(journal, std::ios::trunc);
        auto observe = [&](const dialogue::DialogueTurn& turn) {
          record.transcript.push_back(turn);
          journal_out << dialogue::to_json(turn).dump() << '\n' << std::flush;
        };
        try {
          auto result = dialogue::run_dialogue(record.pruned_graph, full, record.scenario, gw, dc, observe);
          record.transcript = std::move(result.turns);
          record.final_instructions = std::move(result.final_instructions);
          record.truncated = result.truncated;
          record.reviewer_used = result.reviewer_used;
          record.revised = result.revised;
        } catch (const std::exception& e) {
          record.failed = true;
          record.failure = e.what();
        }
        journal_out.close();
        util::atomic_write(workspace_.dialogue_path(scan, idx), emit::to_json(record).dump(2) + "\n");
        fs::remove(journal);
        if (record.failed) throw StageError(fmt::format("dialogue failed: {}", record.failure));
      });
  report.pending = pending;
  return report;
}

StageReport Pipeline::split() {
  auto scans = workspace_.scan_ids();
  if (scans.empty()) throw GateError("split: no ingested scans; run ingest first");
  StageReport report{"split"};
  auto manifest = emit::split(scans, config_.train_ratio, *config_.seed);
  std::string text = emit::to_json(manifest).dump(2) + "\n";
  if (unit_is_current("split", workspace_.split_path()) && util::read_file(workspace_.split_path()) == text) {
    ++report.skipped;
    return report;
  }
  util::atomic_write(workspace_.split_path(), text);
  record_done("split", workspace_.split_path());
  ++report.ran;
  return report;
}

StageReport Pipeline::emit() {
  if (!fs::exists(workspace_.split_path())) throw GateError("emit: no split manifest; run split first");
  auto manifest = emit::split_manifest_from_json(read_json(workspace_.split_path()));
  std::vector<emit::SadRecord> records;
  std::map<std::string, sgl::SceneGraph> graphs;
  std::size_t pending = 0;
  for (const auto& [scan, idx] : workspace_.proposal_keys()) {
    fs::path path = workspace_.dialogue_path(scan, idx);
    if (!fs::exists(path)) {
      ++pending;
      continue;
    }
    records.push_back(emit::record_from_json(read_json(path)));
    if (!graphs.contains(scan)) graphs[scan] = workspace_.load_graph(scan);
  }
  if (records.empty()) throw GateError("emit: no dialogue records; run dialogue first");
  auto data = emit::build_dataset(records, graphs, manifest, *config_.seed, config_.membership_cap);

  StageReport report{"emit"};
  report.pending = pending;
  fs::create_directories(workspace_.out_dir());
  auto write = [&](const std::string& key, const fs::path& path, const std::string& text) {
    if (unit_is_current(key, path) && util::read_file(path) == text) {
      ++report.skipped;
      return;
    }
    util::atomic_write(path, text);
    record_done(key, path);
    ++report.ran;
  };
  auto lines = [](const std::vector<emit::InstructSample>& samples) {
    for (const auto& s : samples) {
      auto problems = emit::validate_sample_json(json::parse(s.to_json().dump()));
      if (!problems.empty()) throw StageError(fmt::format("emitted sample fails validation: {}", problems.front()));
    }
    return emit::to_jsonl(samples);
  };
  write("emit/train", workspace_.out_dir() / "train-instruct.jsonl", lines(data.train));
  write("emit/test", workspace_.out_dir() / "test-instruct.jsonl", lines(data.test));
  write("emit/manifest", workspace_.out_dir() / "train_manifest.json",
        emit::emit_training_manifest(config_.training_overrides).dump(2) + "\n");
  return report;
}

StageReport Pipeline::stats() {
  fs::path train = workspace_.out_dir() / "train-instruct.jsonl";
  fs::path test = workspace_.out_dir() / "test-instruct.jsonl";
  if (!fs::exists(train) || !fs::exists(test) || !fs::exists(workspace_.split_path())) {
    throw GateError("stats: no emitted dataset; run emit first");
  }
  auto manifest = emit::split_manifest_from_json(read_json(workspace_.split_path()));
  std::vector<emit::InstructSample> samples;
  for (const auto& path : {train, test}) {
    const std::string text = util::read_file(path);
    for (auto line : util::split_lines(text)) {
      if (util::trim(line).empty()) continue;
      samples.push_back(emit::sample_from_json(json::parse(line)));
    }
  }
  std::vector<emit::SadRecord> records;
  for (const auto& [scan, idx] : workspace_.proposal_keys()) {
    fs::path path = workspace_.dialogue_path(scan, idx);
    if (fs::exists(path)) records.push_back(emit::record_from_json(read_json(path)));
  }
  auto stats = emit::compute_stats(samples, records, manifest);
  std::string text = emit::to_json(stats).dump(2) + "\n";
  StageReport report{"stats"};
  if (unit_is_current("stats", workspace_.stats_path()) && util::read_file(workspace_.stats_path()) == text) {
    ++report.skipped;
    return report;
  }
  util::atomic_write(workspace_.stats_path(), text);
  record_done("stats", workspace_.stats_path());
  ++report.ran;
  return report;
}

std::vector<StageReport> Pipeline::run_all(bool* paused) {
  std::vector<StageReport> reports;
  if (paused) *paused = false;
  reports.push_back(ingest());
  reports.push_back(scenarios());
  reports.push_back(prune_propose());
  reports.push_back(review());
  if (reports.back().pending > 0) {
    spdlog::info("run-all: {} item(s) await review; resume after deciding them", reports.back().pending);
    if (paused) *paused = true;
    return reports;
  }
  reports.push_back(prune_apply());
  reports.push_back(dialogue());
  reports.push_back(split());
  reports.push_back(emit());
  reports.push_back(stats());
  return reports;
}

std::vector<StatusRow> workspace_status(const Workspace& ws) {
  auto units = StatusStore(ws.status_path()).all();
  auto scans = ws.scan_ids();
  auto proposals = ws.proposal_keys();
  std::size_t selected = 0;
  for (const auto& scan : scans) {
    if (fs::exists(ws.scenarios_path(scan))) selected += ws.load_scenarios(scan).selected.size();
  }
  pruning::DecisionLog log(ws.decisions_path());
  std::size_t decided = 0;
  for (const auto& [scan, idx] : proposals) decided += log.find(scan, idx) ? 1 : 0;

  std::map<std::string, std::size_t> expected = {
      {"ingest", std::max<std::size_t>(scans.size(), 1)},
      {"scenarios", std::max<std::size_t>(scans.size(), 1)},
      {"prune-propose", std::max<std::size_t>(selected, 1)},
      {"review", std::max<std::size_t>(proposals.size(), 1)},
      {"prune-apply", std::max<std::size_t>(decided, 1)},
      {"dialogue", std::max<std::size_t>(decided, 1)},
      {"split", 1},
      {"emit", 3},
      {"stats", 1}};

  std::vector<StatusRow> rows;
  for (const auto& stage : stage_order()) {
    StatusRow row;
    row.stage = stage;
    if (stage == "review") {
      row.done = decided;
    } else {
      for (const auto& [key, s] : units) {
        if (stage_of(key) != stage) continue;
        if (s.state == UnitState::Done || s.state == UnitState::Skipped) ++row.done;
        if (s.state == UnitState::Failed) ++row.failed;
      }
    }
    std::size_t want = expected[stage];
    row.pending = want > row.done + row.failed ? want - row.done - row.failed : 0;
    if (row.failed > 0) row.state = "failed";
    else if (row.done == 0) row.state = "pending";
    else if (row.pending > 0) row.state = "partial";
    else row.state = "done";
    rows.push_back(row);
  }
  return rows;
}

std::vector<StatusRow> Pipeline::status() const { return workspace_status(workspace_); }

std::map<std::string, std::string> Pipeline::output_digests() const {
  std::map<std::string, std::string> digests;
  for (const fs::path& path : {workspace_.out_dir() / "train-instruct.jsonl", workspace_.out_dir() / "test-instruct.jsonl",
                               workspace_.out_dir() / "train_manifest.json", workspace_.split_path(), workspace_.stats_path()}) {
    if (fs::exists(path)) {
      digests[fs::relative(path, workspace_.root()).generic_string()] = util::sha256_hex(util::read_file(path));
    }
  }
  return digests;
}

}  // namespace sadforge::pipeline
