#include "sadforge/scenario.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sadforge/json_extract.hpp"
#include "sadforge/message_format.hpp"
#include "sadforge/util.hpp"

namespace sadforge::scenario {
namespace {

using nlohmann::json;
namespace mf = message_format;

constexpr double kTieTolerance = 1e-12;

std::vector<std::vector<double>> similarity_matrix(const std::vector<std::vector<double>>& vectors) {
  const std::size_t n = vectors.size();
  std::vector<std::vector<double>> sim(n, std::vector<double>(n, 1.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) sim[i][j] = sim[j][i] = cosine_similarity(vectors[i], vectors[j]);
  }
  return sim;
}

// Advances `combo` to the next k-combination of [0, n) in lexicographic order.
bool next_combination(std::vector<std::size_t>& combo, std::size_t n) {
  const std::size_t k = combo.size();
  for (std::size_t i = k; i-- > 0;) {
    if (combo[i] < n - k + i) {
      ++combo[i];
      for (std::size_t j = i + 1; j < k; ++j) combo[j] = combo[j - 1] + 1;
      return true;
    }
  }
  return false;
}

}  // namespace

ScenarioError::ScenarioError(ErrorKind kind, std::string message) : Error(std::move(message)), kind_(kind) {}

std::string scenario_request(const sgl::SceneGraph& graph) {
  std::string out(mf::kObjectsHeader);
  out += '\n';
  for (const auto& obj : graph.objects) {
    out += fmt::format("{}{}", mf::kItemBullet, obj.ref());
    if (!obj.attributes.empty()) out += fmt::format(" ({})", fmt::join(obj.attributes, ", "));
    out += '\n';
  }
  out += "\nRespond only with a JSON object of the form "
         R"({"scenarios": [{"description": "<one sentence>", "objects": ["<label>-<id>", ...]}]})"
         ", listing for each scenario the objects involved exactly as written above.";
  return out;
}

std::optional<sgl::ObjectId> resolve_ref(const json& ref, const sgl::SceneGraph& graph) {
  if (ref.is_number_unsigned() || (ref.is_number_integer() && ref.get<std::int64_t>() >= 0)) {
    auto id = ref.get<sgl::ObjectId>();
    return graph.find_object(id) ? std::optional(id) : std::nullopt;
  }
  if (!ref.is_string()) return std::nullopt;
  std::string_view text = util::trim(ref.get_ref<const std::string&>());
  std::size_t dash = text.rfind('-');
  if (dash == std::string_view::npos || dash == 0 || dash + 1 == text.size()) return std::nullopt;
  std::string_view digits = text.substr(dash + 1);
  if (!std::all_of(digits.begin(), digits.end(), [](char c) { return c >= '0' && c <= '9'; }) || digits.size() > 18) {
    return std::nullopt;
  }
  sgl::ObjectId id = std::stoull(std::string(digits));
  const sgl::ObjectNode* obj = graph.find_object(id);
  if (obj == nullptr || obj->label != sgl::normalize_token(text.substr(0, dash))) return std::nullopt;
  return id;
}

std::vector<Scenario> parse_scenario_response(std::string_view reply, const sgl::SceneGraph& graph) {
  auto block = json_extract::first_balanced_object(reply);
  if (!block) throw ScenarioError(ErrorKind::ResponseParse, "scenario reply contains no JSON object");
  auto doc = json_extract::parse_lenient(*block);
  if (doc.is_discarded() || !doc.is_object()) {
    throw ScenarioError(ErrorKind::ResponseParse, "scenario reply is not a JSON object");
  }
  auto list = doc.find("scenarios");
  if (list == doc.end() || !list->is_array()) {
    throw ScenarioError(ErrorKind::ResponseParse, "scenario reply lacks a 'scenarios' array");
  }
  std::vector<Scenario> out;
  int origin = -1;
  for (const auto& entry : *list) {
    ++origin;
    if (out.size() == kMaxCandidates) break;
    if (!entry.is_object()) continue;
    auto desc = entry.find("description");
    auto objects = entry.find("objects");
    if (desc == entry.end() || !desc->is_string() || objects == entry.end() || !objects->is_array()) continue;
    Scenario s;
    s.description = std::string(util::trim(desc->get<std::string>()));
    s.origin_index = origin;
    for (const auto& ref : *objects) {
      auto id = resolve_ref(json(ref), graph);
      if (!id) {
        spdlog::warn("scenario {}: dropping unknown object reference {}", origin, ref.dump());
        continue;
      }
      if (std::find(s.involved_object_ids.begin(), s.involved_object_ids.end(), *id) == s.involved_object_ids.end()) {
        s.involved_object_ids.push_back(*id);
      }
    }
    if (s.description.empty() || s.involved_object_ids.empty()) {
      spdlog::warn("scenario {}: discarded (no description or no valid objects)", origin);
      continue;
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Scenario> generate_scenarios(const sgl::SceneGraph& graph, llm::Gateway& gateway,
                                         const llm::AgentConfig& config) {
  if (graph.objects.empty()) throw ScenarioError(ErrorKind::Precondition, "cannot generate scenarios for an empty graph");
  std::vector<llm::ChatMessage> messages{{"user", scenario_request(graph)}};
  auto first = gateway.chat(config, messages);
  try {
    return parse_scenario_response(first.response, graph);
  } catch (const ScenarioError& e) {
    spdlog::warn("scenario reply did not parse ({}); re-prompting once", e.what());
  }
  messages.push_back({"assistant", first.response});
  messages.push_back({"user", std::string(kSchemaReminder)});
  auto second = gateway.chat(config, messages);
  return parse_scenario_response(second.response, graph);
}

double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    throw ScenarioError(ErrorKind::DimensionMismatch, fmt::format("vector dimensions differ ({} vs {})", u.size(), v.size()));
  }
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  if (nu == 0.0 || nv == 0.0) throw ScenarioError(ErrorKind::ZeroVector, "cosine similarity of a zero vector");
  return std::clamp(dot / (std::sqrt(nu) * std::sqrt(nv)), -1.0, 1.0);
}

std::vector<std::size_t> select_diverse(const std::vector<std::vector<double>>& vectors, std::size_t k) {
  if (k == 0) throw ScenarioError(ErrorKind::Precondition, "selection size must be at least 1");
  const std::size_t n = vectors.size();
  for (const auto& v : vectors) {
    if (v.size() != vectors.front().size()) throw ScenarioError(ErrorKind::DimensionMismatch, "vectors differ in dimension");
  }
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  if (n <= k) return all;

  const auto sim = similarity_matrix(vectors);
  std::vector<std::size_t> combo(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k));
  std::vector<std::size_t> best;
  double best_score = 0.0;
  do {
    double score = 0.0;
    for (std::size_t a = 0; a < k; ++a) {
      for (std::size_t b = a + 1; b < k; ++b) score += sim[combo[a]][combo[b]];
    }
    // Combinations arrive in lexicographic order, so only a strictly better
    // score replaces the incumbent.
    if (best.empty() || score < best_score - kTieTolerance) {
      best = combo;
      best_score = score;
    }
  } while (next_combination(combo, n));
  return best;
}

ScenarioSet build_scenario_set(std::string scan_id, const sgl::SceneGraph& graph, llm::Gateway& gateway,
                               const llm::AgentConfig& config, std::size_t k) {
  ScenarioSet set;
  set.scan_id = std::move(scan_id);
  set.candidates = generate_scenarios(graph, gateway, config);
  if (set.candidates.empty()) return set;
  std::vector<std::string> texts;
  texts.reserve(set.candidates.size());
  for (const auto& c : set.candidates) texts.push_back(c.description);
  set.embeddings = gateway.embed(texts);
  set.selected = select_diverse(set.embeddings, k);
  return set;
}

json to_json(const Scenario& scenario) {
  return {{"description", scenario.description},
          {"involved_object_ids", scenario.involved_object_ids},
          {"origin_index", scenario.origin_index}};
}

Scenario scenario_from_json(const json& doc) {
  Scenario s;
  s.description = doc.at("description").get<std::string>();
  s.involved_object_ids = doc.at("involved_object_ids").get<std::vector<sgl::ObjectId>>();
  s.origin_index = doc.at("origin_index").get<int>();
  return s;
}

json to_json(const ScenarioSet& set) {
  json candidates = json::array();
  for (const auto& c : set.candidates) candidates.push_back(to_json(c));
  return {{"scan_id", set.scan_id}, {"candidates", candidates}, {"selected", set.selected}, {"embeddings", set.embeddings}};
}

ScenarioSet scenario_set_from_json(const json& doc) {
  ScenarioSet set;
  set.scan_id = doc.at("scan_id").get<std::string>();
  for (const auto& c : doc.at("candidates")) set.candidates.push_back(scenario_from_json(c));
  set.selected = doc.at("selected").get<std::vector<std::size_t>>();
  set.embeddings = doc.value("embeddings", std::vector<std::vector<double>>{});
  return set;
}

}  // namespace sadforge::scenario
