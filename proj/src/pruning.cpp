#include "sadforge/pruning.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <ctime>
#include <fstream>

#include "sadforge/json_extract.hpp"
#include "sadforge/message_format.hpp"
#include "sadforge/util.hpp"

namespace sadforge::pruning {
namespace {

using nlohmann::json;
namespace mf = message_format;

}  // namespace

std::string_view to_string(ProposalSource source) {
  return source == ProposalSource::Llm ? "llm" : "seed-only";
}

std::string_view to_string(ReviewStatus status) {
  return status == ReviewStatus::Approved ? "approved" : "auto_approved";
}

std::string_view to_string(ReviewMode mode) {
  switch (mode) {
    case ReviewMode::Auto: return "auto";
    case ReviewMode::InteractiveCli: return "cli";
    case ReviewMode::Web: return "web";
  }
  return "auto";
}

ReviewMode parse_review_mode(std::string_view name) {
  if (name == "auto") return ReviewMode::Auto;
  if (name == "cli" || name == "interactive-cli") return ReviewMode::InteractiveCli;
  if (name == "web") return ReviewMode::Web;
  throw ConfigError(fmt::format("unknown review mode '{}'", name));
}

std::string ReviewDecision::id() const {
  std::string canonical = fmt::format("{}\n{}\n{}\n{}\n{}", scan_id, scenario_index, fmt::join(kept_ids, ","), reviewer,
                                      to_string(status));
  return util::sha256_hex(canonical).substr(0, 16);
}

PruningError::PruningError(ErrorKind kind, std::string message) : Error(std::move(message)), kind_(kind) {}

std::string proposal_request(const sgl::SceneGraph& graph, const scenario::Scenario& scenario) {
  std::string out = fmt::format("{}{}\n{}\n", mf::kScenario, scenario.description, mf::kInvolvedHeader);
  for (auto id : scenario.involved_object_ids) {
    if (const auto* obj = graph.find_object(id)) out += fmt::format("{}{}\n", mf::kItemBullet, obj->ref());
  }
  out += fmt::format("\n{}\n", mf::kObjectsHeader);
  for (const auto& obj : graph.objects) {
    out += fmt::format("{}{}", mf::kItemBullet, obj.ref());
    if (!obj.attributes.empty()) out += fmt::format(" ({})", fmt::join(obj.attributes, ", "));
    out += '\n';
  }
  out += "\nRespond only with a JSON object of the form "
         R"({"objects": ["<label>-<id>", ...]})"
         ".";
  return out;
}

SubsetProposal propose_subset(const std::string& scan_id, std::size_t scenario_index, const sgl::SceneGraph& graph,
                              const scenario::Scenario& scenario, llm::Gateway& gateway,
                              const llm::AgentConfig& config, bool fallback_on_failure) {
  SubsetProposal proposal;
  proposal.scan_id = scan_id;
  proposal.scenario_index = scenario_index;
  for (auto id : scenario.involved_object_ids) {
    if (graph.find_object(id) == nullptr) {
      throw PruningError(ErrorKind::UnknownObjectId,
                         fmt::format("scenario {} of scan '{}' names object {} absent from the graph", scenario_index, scan_id, id));
    }
    proposal.proposed_ids.insert(id);
  }

  auto seed_only = [&](const std::string& why) {
    spdlog::warn("scan '{}' scenario {}: proposal falls back to involved objects ({})", scan_id, scenario_index, why);
    proposal.source = ProposalSource::SeedOnly;
    return proposal;
  };

  std::string reply;
  try {
    reply = gateway.chat(config, {{"user", proposal_request(graph, scenario)}}).response;
  } catch (const llm::GatewayError& e) {
    if (!fallback_on_failure) throw;
    return seed_only(e.what());
  }

  auto block = json_extract::first_balanced_object(reply);
  auto doc = block ? json_extract::parse_lenient(*block) : nlohmann::ordered_json(nlohmann::ordered_json::value_t::discarded);
  if (doc.is_discarded() || !doc.is_object() || !doc.contains("objects") || !doc["objects"].is_array()) {
    if (!fallback_on_failure) {
      throw llm::GatewayError(llm::GatewayErrorKind::MalformedResponse, "prune reply lacks an 'objects' array");
    }
    return seed_only("reply lacks an 'objects' array");
  }
  for (const auto& ref : doc["objects"]) {
    auto id = scenario::resolve_ref(json(ref), graph);
    if (!id) {
      spdlog::warn("scan '{}' scenario {}: dropping unknown object reference {}", scan_id, scenario_index, ref.dump());
      continue;
    }
    proposal.proposed_ids.insert(*id);
  }
  if (auto rationale = doc.find("rationale"); rationale != doc.end() && rationale->is_object()) {
    for (const auto& [ref, why] : rationale->items()) {
      auto id = scenario::resolve_ref(json(ref), graph);
      if (id && why.is_string() && proposal.proposed_ids.contains(*id)) proposal.rationale[*id] = why.get<std::string>();
    }
  }
  proposal.source = ProposalSource::Llm;
  return proposal;
}

sgl::SceneGraph apply_decision(const sgl::SceneGraph& graph, const ReviewDecision& decision) {
  if (decision.kept_ids.empty()) {
    throw PruningError(ErrorKind::EmptySubset,
                       fmt::format("decision for scan '{}' scenario {} keeps no objects", decision.scan_id, decision.scenario_index));
  }
  for (auto id : decision.kept_ids) {
    if (graph.find_object(id) == nullptr) {
      throw PruningError(ErrorKind::UnknownObjectId, fmt::format("decision keeps object {} absent from scan '{}'", id, decision.scan_id));
    }
  }
  return sgl::prune(graph, decision.kept_ids);
}

ReviewDecision auto_approve(const SubsetProposal& proposal, ReviewMode mode) {
  if (mode != ReviewMode::Auto) {
    throw PruningError(ErrorKind::Mode, fmt::format("auto approval requires review mode 'auto' (current: '{}')", to_string(mode)));
  }
  if (proposal.proposed_ids.empty()) {
    throw PruningError(ErrorKind::EmptySubset, "cannot auto-approve an empty proposal");
  }
  ReviewDecision d;
  d.scan_id = proposal.scan_id;
  d.scenario_index = proposal.scenario_index;
  d.kept_ids = proposal.proposed_ids;
  d.reviewer = "auto";
  d.decided_at = now_iso8601();
  d.status = ReviewStatus::AutoApproved;
  return d;
}

std::string now_iso8601() {
  auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buffer[32];
  std::strftime(buffer, sizeof buffer, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buffer;
}

json to_json(const SubsetProposal& proposal) {
  json rationale = json::object();
  for (const auto& [id, why] : proposal.rationale) rationale[std::to_string(id)] = why;
  return {{"scan_id", proposal.scan_id},
          {"scenario_index", proposal.scenario_index},
          {"proposed_ids", proposal.proposed_ids},
          {"rationale", rationale},
          {"source", to_string(proposal.source)}};
}

SubsetProposal proposal_from_json(const json& doc) {
  SubsetProposal p;
  p.scan_id = doc.at("scan_id").get<std::string>();
  p.scenario_index = doc.at("scenario_index").get<std::size_t>();
  p.proposed_ids = doc.at("proposed_ids").get<std::set<sgl::ObjectId>>();
  const auto rationale = doc.value("rationale", json::object());
  for (const auto& [id, why] : rationale.items()) {
    p.rationale[std::stoull(id)] = why.get<std::string>();
  }
  p.source = doc.at("source").get<std::string>() == "llm" ? ProposalSource::Llm : ProposalSource::SeedOnly;
  return p;
}

json to_json(const ReviewDecision& decision) {
  return {{"id", decision.id()},
          {"scan_id", decision.scan_id},
          {"scenario_index", decision.scenario_index},
          {"kept_ids", decision.kept_ids},
          {"reviewer", decision.reviewer},
          {"decided_at", decision.decided_at},
          {"status", to_string(decision.status)},
          {"idempotency_key", decision.idempotency_key}};
}

ReviewDecision decision_from_json(const json& doc) {
  ReviewDecision d;
  try {
    d.scan_id = doc.at("scan_id").get<std::string>();
    d.scenario_index = doc.at("scenario_index").get<std::size_t>();
    d.kept_ids = doc.at("kept_ids").get<std::set<sgl::ObjectId>>();
    d.reviewer = doc.at("reviewer").get<std::string>();
    d.decided_at = doc.value("decided_at", "");
    d.status = doc.value("status", "approved") == "auto_approved" ? ReviewStatus::AutoApproved : ReviewStatus::Approved;
    d.idempotency_key = doc.value("idempotency_key", "");
  } catch (const json::exception& e) {
    throw PruningError(ErrorKind::InvalidDecision, fmt::format("malformed decision: {}", e.what()));
  }
  return d;
}

DecisionLog::DecisionLog(std::filesystem::path path, std::optional<std::filesystem::path> lock_path)
    : path_(std::move(path)), lock_path_(std::move(lock_path)) {
  reload();
}

void DecisionLog::reload() {
  std::lock_guard lock(mutex_);
  load_locked();
}

void DecisionLog::load_locked() {
  latest_.clear();
  std::ifstream in(path_);
  std::string line;
  while (std::getline(in, line)) {
    if (util::trim(line).empty()) continue;
    json doc = json::parse(line, nullptr, false);
    if (doc.is_discarded()) {
      spdlog::warn("{}: skipping unreadable line", path_.string());
      continue;
    }
    ReviewDecision d = decision_from_json(doc);
    latest_[{d.scan_id, d.scenario_index}] = std::move(d);
  }
}

std::optional<ReviewDecision> DecisionLog::find(const std::string& scan_id, std::size_t scenario_index) const {
  std::lock_guard lock(mutex_);
  auto it = latest_.find({scan_id, scenario_index});
  if (it == latest_.end()) return std::nullopt;
  return it->second;
}

std::vector<ReviewDecision> DecisionLog::all() const {
  std::lock_guard lock(mutex_);
  std::vector<ReviewDecision> out;
  for (const auto& [_, d] : latest_) out.push_back(d);
  return out;
}

ReviewDecision DecisionLog::record(const ReviewDecision& decision, bool amend) {
  if (decision.kept_ids.empty()) {
    throw PruningError(ErrorKind::EmptySubset, "a decision must keep at least one object");
  }
  std::lock_guard lock(mutex_);
  std::optional<util::FileLock> file_lock;
  if (lock_path_) file_lock.emplace(*lock_path_);
  load_locked();

  auto key = std::pair{decision.scan_id, decision.scenario_index};
  if (auto it = latest_.find(key); it != latest_.end()) {
    if (!decision.idempotency_key.empty() && it->second.idempotency_key == decision.idempotency_key) {
      return it->second;
    }
    if (!amend) {
      throw PruningError(ErrorKind::AlreadyDecided, fmt::format("scan '{}' scenario {} is already decided",
                                                                 decision.scan_id, decision.scenario_index));
    }
  }
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  std::ofstream out(path_, std::ios::app | std::ios::binary);
  if (!out) throw Error(fmt::format("cannot append to {}", path_.string()));
  out << to_json(decision).dump() << '\n';
  out.flush();
  latest_[key] = decision;
  return decision;
}

}  // namespace sadforge::pruning
