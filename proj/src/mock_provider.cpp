#include "sadforge/mock_provider.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cctype>
#include <cmath>

#include "sadforge/message_format.hpp"
#include "sadforge/util.hpp"

namespace sadforge::llm {
namespace {

using nlohmann::json;
namespace mf = message_format;

[[noreturn]] void cassette_error(const std::string& what) {
  throw GatewayError(GatewayErrorKind::CassetteSchema, what);
}

std::vector<std::string> words_of(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  for (char c : text) {
    auto u = static_cast<unsigned char>(c);
    if (std::isalnum(u) || u >= 0x80) {
      current.push_back(static_cast<char>(std::tolower(u)));
    } else if (!current.empty()) {
      words.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

json chat_completion(const std::string& model, std::size_t sequence, const std::string& content) {
  return {
      {"id", fmt::format("mock-{}", sequence)},
      {"object", "chat.completion"},
      {"model", model},
      {"choices", json::array({{{"index", 0},
                                {"message", {{"role", "assistant"}, {"content", content}}},
                                {"finish_reason", "stop"}}})},
  };
}

WireResponse embeddings_reply(const WireRequest& request, std::size_t dim) {
  const json& input = request.body.at("input");
  json data = json::array();
  std::size_t index = 0;
  for (const json& text : input) {
    data.push_back({{"object", "embedding"}, {"index", index++}, {"embedding", hashed_embedding(text.get<std::string>(), dim)}});
  }
  return {200, json{{"object", "list"}, {"data", std::move(data)}, {"model", request.body.value("model", "")}}.dump(), {}};
}

WireResponse fault_response(const std::string& kind) {
  if (kind == "timeout") return {0, {}, "timeout"};
  if (kind == "rate_limit") return {429, R"({"error":{"message":"rate limited"}})", {}};
  if (kind == "server_error") return {500, R"({"error":{"message":"internal error"}})", {}};
  if (kind == "bad_request") return {400, R"({"error":{"message":"bad request"}})", {}};
  return {200, "{\"choices\": [", {}};  // malformed
}

// ---- synthetic replies -----------------------------------------------------

std::vector<std::string> user_contents(const json& body) {
  std::vector<std::string> out;
  for (const json& m : body.at("messages")) {
    if (m.value("role", "") == "user") out.push_back(m.value("content", ""));
  }
  return out;
}

std::size_t assistant_count(const json& body) {
  return static_cast<std::size_t>(std::count_if(body.at("messages").begin(), body.at("messages").end(),
                                                [](const json& m) { return m.value("role", "") == "assistant"; }));
}

std::string line_after(std::string_view text, std::string_view prefix) {
  for (auto line : util::split_lines(text)) {
    if (line.starts_with(prefix)) return std::string(util::trim(line.substr(prefix.size())));
  }
  return {};
}

// `- <label>-<id> ...` bullet lines following `header`, up to the next blank line.
std::vector<std::string> bullet_refs(std::string_view text, std::string_view header) {
  std::vector<std::string> refs;
  bool inside = false;
  for (auto line : util::split_lines(text)) {
    if (line == header) {
      inside = true;
      continue;
    }
    if (!inside) continue;
    if (!line.starts_with(mf::kItemBullet)) break;
    std::string_view rest = line.substr(mf::kItemBullet.size());
    refs.emplace_back(rest.substr(0, rest.find(' ')));
  }
  return refs;
}

std::string readable(std::string_view ref) {
  std::string label(ref.substr(0, ref.rfind('-')));
  std::replace(label.begin(), label.end(), '_', ' ');
  return label;
}

// Object labels named in an SGL text, in statement order.
std::vector<std::string> sgl_labels(std::string_view sgl) {
  std::vector<std::string> labels;
  std::size_t pos = 0;
  while ((pos = sgl.find("obj-", pos)) != std::string_view::npos) {
    pos += 4;
    std::size_t colon = sgl.find(':', pos);
    if (colon == std::string_view::npos) break;
    labels.push_back(readable(sgl.substr(pos, colon - pos)));
  }
  return labels;
}

constexpr std::string_view kActivities[] = {
    "clean up",          "reorganize the space",    "prepare a quick snack", "find a misplaced phone",
    "set up a workspace", "water the plants",       "move some furniture",   "respond to a small fire",
    "check for a water leak", "tidy up after guests", "get ready for a video call", "repair a wobbly fixture",
};

std::string synth_scenarios(const json& body) {
  auto users = user_contents(body);
  std::string prompt = users.empty() ? std::string{} : users.front();
  auto refs = bullet_refs(prompt, mf::kObjectsHeader);
  json scenarios = json::array();
  if (!refs.empty()) {
    std::uint64_t h0 = util::fnv1a64(prompt);
    std::size_t count = 6 + h0 % 5;
    for (std::size_t i = 0; i < count; ++i) {
      std::uint64_t h = util::fnv1a64(fmt::format("{}#{}", prompt, i));
      std::string_view activity = kActivities[h % std::size(kActivities)];
      const std::string& a = refs[(h >> 8) % refs.size()];
      const std::string& b = refs[(h >> 24) % refs.size()];
      json objects = json::array({a});
      std::string description;
      if (a != b) {
        objects.push_back(b);
        description = fmt::format("Someone wants to {} around the {} and the {}.", activity, readable(a), readable(b));
      } else {
        description = fmt::format("Someone wants to {} near the {}.", activity, readable(a));
      }
      scenarios.push_back({{"description", description}, {"objects", objects}});
    }
  }
  return json{{"scenarios", scenarios}}.dump();
}

std::string synth_prune(const json& body) {
  auto users = user_contents(body);
  std::string prompt = users.empty() ? std::string{} : users.front();
  auto involved = bullet_refs(prompt, mf::kInvolvedHeader);
  auto all = bullet_refs(prompt, mf::kObjectsHeader);
  json objects = json::array();
  for (const auto& r : involved) objects.push_back(r);
  if (!all.empty()) {
    const std::string& extra = all[util::fnv1a64(prompt) % all.size()];
    if (std::find(involved.begin(), involved.end(), extra) == involved.end()) objects.push_back(extra);
  }
  return json{{"objects", objects}}.dump();
}

std::string synth_oracle(const json& body) {
  auto users = user_contents(body);
  std::string first = users.empty() ? std::string{} : users.front();
  std::string scenario = line_after(first, mf::kScenario);
  auto labels = sgl_labels(line_after(first, mf::kSceneGraph));
  std::uint64_t h = util::fnv1a64(scenario);
  nlohmann::ordered_json steps;
  std::size_t n = 0;
  auto add = [&](std::string step) { steps[std::to_string(++n)] = std::move(step); };
  if (!labels.empty()) add(fmt::format("Walk over to the {}", labels[h % labels.size()]));
  add(fmt::format("Take a moment to look at what is needed to {}",
                  scenario.empty() ? std::string("finish the task") : std::string(kActivities[h % std::size(kActivities)])));
  if (labels.size() > 1) add(fmt::format("Use the {} as needed", labels[(h >> 16) % labels.size()]));
  for (std::size_t i = 1; i < users.size(); ++i) {
    auto words = words_of(users[i]);
    // The longest word is usually a noun worth repeating back.
    std::string focus;
    for (const auto& w : words) {
      if (w.size() > focus.size()) focus = w;
    }
    if (focus.empty()) focus = "area";
    add(fmt::format("Double-check the {} before moving on", focus));
  }
  add("Confirm that everything is back in order");
  return steps.dump();
}

constexpr std::string_view kQuestions[] = {
    "Where exactly should I start?",
    "How will I know when this step is finished?",
    "Is there anything I should be careful about while doing this?",
    "What should I do if something is missing?",
    "Do I need any tools for this?",
};

std::string synth_humanoid(const json& body) {
  auto users = user_contents(body);
  std::string first = users.empty() ? std::string{} : users.front();
  std::uint64_t h = util::fnv1a64(line_after(first, mf::kScenario));
  std::size_t rounds = h % 3;
  std::size_t asked = assistant_count(body);
  if (asked < rounds) return std::string(kQuestions[(h + asked) % std::size(kQuestions)]);
  return "Thank you, that is everything I needed. done";
}

std::string synth_summarizer(const json& body) {
  auto users = user_contents(body);
  std::string convo = users.empty() ? std::string{} : users.back();
  std::string last_oracle;
  for (auto line : util::split_lines(convo)) {
    if (line.starts_with(mf::kOracleSpeaker)) last_oracle = std::string(line.substr(mf::kOracleSpeaker.size()));
  }
  json parsed = json::parse(last_oracle, nullptr, false);
  if (parsed.is_discarded() || !parsed.is_object() || parsed.empty()) return R"({"1": "Complete the task carefully"})";
  std::vector<std::pair<long, std::string>> entries;
  for (const auto& [k, v] : parsed.items()) {
    if (v.is_string()) entries.emplace_back(std::strtol(k.c_str(), nullptr, 10), v.get<std::string>());
  }
  std::sort(entries.begin(), entries.end());
  nlohmann::ordered_json out;
  std::size_t n = 0;
  for (auto& [_, text] : entries) out[std::to_string(++n)] = text;
  return out.dump();
}

}  // namespace

std::vector<double> hashed_embedding(std::string_view text, std::size_t dim) {
  if (dim == 0) throw GatewayError(GatewayErrorKind::Precondition, "embedding dimension must be positive");
  std::vector<double> v(dim, 0.0);
  auto words = words_of(text);
  if (words.empty()) words.emplace_back(text);
  for (const auto& w : words) v[util::fnv1a64(w) % dim] += 1.0;
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

WireResponse HashedEmbeddingProvider::post(const WireRequest& request) {
  if (request.path != "/v1/embeddings") return {404, R"({"error":{"message":"embeddings only"}})", {}};
  return embeddings_reply(request, dim_);
}

MockProvider::MockProvider(const json& cassette) {
  if (!cassette.is_object()) cassette_error("cassette must be a JSON object");
  std::string mode = cassette.value("mode", "script");
  if (mode != "script" && mode != "synthetic") cassette_error(fmt::format("unknown cassette mode '{}'", mode));
  synthetic_ = mode == "synthetic";
  if (auto dim = cassette.find("embedding_dim"); dim != cassette.end()) {
    if (!dim->is_number_unsigned() || dim->get<std::size_t>() == 0) cassette_error("embedding_dim must be a positive integer");
    embedding_dim_ = dim->get<std::size_t>();
  }
  if (auto responses = cassette.find("responses"); responses != cassette.end()) {
    if (!responses->is_object()) cassette_error("'responses' must map roles to arrays");
    for (const auto& [role, lines] : responses->items()) {
      if (!lines.is_array()) cassette_error(fmt::format("responses for '{}' must be an array", role));
      auto& script = scripts_[role];
      for (const json& line : lines) {
        if (line.is_string()) {
          script.push_back(line.get<std::string>());
        } else if (line.is_object() && line.contains("content") && line["content"].is_string()) {
          script.push_back(line["content"].get<std::string>());
        } else {
          cassette_error(fmt::format("response for '{}' must be a string or {{\"content\": string}}", role));
        }
      }
    }
  }
  if (auto faults = cassette.find("faults"); faults != cassette.end()) {
    if (!faults->is_array()) cassette_error("'faults' must be an array");
    for (const json& f : *faults) {
      if (!f.is_object() || !f.contains("kind") || !f["kind"].is_string()) cassette_error("fault needs a string 'kind'");
      Fault fault;
      fault.kind = f["kind"].get<std::string>();
      static const std::vector<std::string> kinds = {"timeout", "rate_limit", "server_error", "bad_request", "malformed"};
      if (std::find(kinds.begin(), kinds.end(), fault.kind) == kinds.end()) {
        cassette_error(fmt::format("unknown fault kind '{}'", fault.kind));
      }
      try {
        fault.role = f.value("role", "");
        fault.after = f.value("after", std::size_t{0});
        fault.count = f.value("count", std::size_t{1});
      } catch (const json::exception& e) {
        cassette_error(fmt::format("malformed fault: {}", e.what()));
      }
      faults_.push_back(std::move(fault));
    }
  }
}

std::shared_ptr<MockProvider> MockProvider::from_file(const std::filesystem::path& path) {
  json cassette = json::parse(util::read_file(path), nullptr, false);
  if (cassette.is_discarded()) cassette_error(fmt::format("{} is not valid JSON", path.string()));
  return std::make_shared<MockProvider>(cassette);
}

WireResponse MockProvider::post(const WireRequest& request) {
  std::lock_guard lock(mutex_);
  recorded_.push_back(request);
  std::size_t role_index = role_calls_[request.role]++;
  std::size_t global_index = total_calls_++;
  for (const auto& fault : faults_) {
    std::size_t index = fault.role.empty() ? global_index : role_index;
    if ((fault.role.empty() || fault.role == request.role) && index >= fault.after && index < fault.after + fault.count) {
      return fault_response(fault.kind);
    }
  }
  if (request.path == "/v1/embeddings") return embeddings_reply(request, embedding_dim_);
  return chat_reply(request, global_index);
}

WireResponse MockProvider::chat_reply(const WireRequest& request, std::size_t sequence) {
  const std::string model = request.body.value("model", "");
  auto script = scripts_.find(request.role);
  if (script != scripts_.end() || !synthetic_) {
    std::size_t& cursor = cursors_[request.role];
    if (script == scripts_.end() || cursor >= script->second.size()) {
      throw GatewayError(GatewayErrorKind::ScriptExhausted,
                         fmt::format("cassette has no reply left for role '{}' (call {})", request.role, cursor + 1));
    }
    return {200, chat_completion(model, sequence, script->second[cursor++]).dump(), {}};
  }
  return {200, chat_completion(model, sequence, synthesize_reply(request.role, request.body)).dump(), {}};
}

std::vector<WireRequest> MockProvider::recorded() const {
  std::lock_guard lock(mutex_);
  return recorded_;
}

std::size_t MockProvider::calls(std::string_view role) const {
  std::lock_guard lock(mutex_);
  auto it = role_calls_.find(role);
  return it == role_calls_.end() ? 0 : it->second;
}

std::string synthesize_reply(std::string_view role, const json& body) {
  if (role == "scenario") return synth_scenarios(body);
  if (role == "prune") return synth_prune(body);
  if (role == "oracle") return synth_oracle(body);
  if (role == "humanoid") return synth_humanoid(body);
  if (role == "summarizer") return synth_summarizer(body);
  if (role == "reviewer") return R"({"verdict": "accept"})";
  throw GatewayError(GatewayErrorKind::ScriptExhausted, fmt::format("no synthetic replies for role '{}'", role));
}

}  // namespace sadforge::llm
