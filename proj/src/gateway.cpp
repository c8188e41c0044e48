#include "sadforge/gateway.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <cmath>
#include <thread>

#include "sadforge/prompts.hpp"

namespace sadforge::llm {
namespace {

using nlohmann::json;

constexpr const char* kChatPath = "/v1/chat/completions";
constexpr const char* kEmbeddingsPath = "/v1/embeddings";

bool is_transient(int status) { return status == 0 || status == 429 || status >= 500; }

std::string to_lower_copy(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

void AgentConfig::validate() const {
  if (role_name.empty()) throw ConfigError("agent config: role_name is empty");
  if (model.empty()) throw ConfigError(fmt::format("agent '{}': model is empty", role_name));
  if (system_prompt.empty()) throw ConfigError(fmt::format("agent '{}': system_prompt is empty", role_name));
  if (!(temperature >= 0.0 && temperature <= 2.0)) {
    throw ConfigError(fmt::format("agent '{}': temperature {} outside [0, 2]", role_name, temperature));
  }
  if (!(repetition_penalty > 0.0)) {
    throw ConfigError(fmt::format("agent '{}': repetition_penalty must be positive", role_name));
  }
  if (max_tokens <= 0) throw ConfigError(fmt::format("agent '{}': max_tokens must be positive", role_name));
}

AgentConfig humanoid_config() {
  return {"humanoid", "llama3-8b-8192", 1.0, 1.2, 128, std::string(prompts::humanoid())};
}

AgentConfig oracle_config() {
  return {"oracle", "mixtral-8x7b-32768", 0.7, 1.2, 512, std::string(prompts::oracle())};
}

AgentConfig summarizer_config() {
  return {"summarizer", "llama3-8b-8192", 0.1, 1.2, 1024, std::string(prompts::summarizer())};
}

AgentConfig scenario_config() {
  return {"scenario", "gpt-3.5-turbo", 0.7, 1.0, 1024, std::string(prompts::scenario_generation())};
}

AgentConfig prune_config() {
  return {"prune", "gpt-3.5-turbo", 0.2, 1.0, 512, std::string(prompts::prune_proposal())};
}

AgentConfig reviewer_config() {
  return {"reviewer", "mixtral-8x7b-32768", 0.2, 1.2, 512, std::string(prompts::reviewer())};
}

AgentConfig apply_overrides(AgentConfig base, const json& overrides) {
  if (overrides.is_null()) return base;
  if (!overrides.is_object()) throw ConfigError(fmt::format("agent '{}': overrides must be an object", base.role_name));
  try {
    for (const auto& [key, value] : overrides.items()) {
      if (key == "model") base.model = value.get<std::string>();
      else if (key == "temperature") base.temperature = value.get<double>();
      else if (key == "repetition_penalty") base.repetition_penalty = value.get<double>();
      else if (key == "max_tokens") base.max_tokens = value.get<int>();
      else if (key == "system_prompt") base.system_prompt = value.get<std::string>();
      else throw ConfigError(fmt::format("agent '{}': unknown field '{}'", base.role_name, key));
    }
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("agent '{}': {}", base.role_name, e.what()));
  }
  if (!(base.temperature >= 0.0 && base.temperature <= 2.0)) {
    throw ConfigError(fmt::format("agent '{}': temperature {} outside [0, 2]", base.role_name, base.temperature));
  }
  if (!(base.repetition_penalty > 0.0)) {
    throw ConfigError(fmt::format("agent '{}': repetition_penalty must be positive", base.role_name));
  }
  if (base.max_tokens <= 0) throw ConfigError(fmt::format("agent '{}': max_tokens must be positive", base.role_name));
  return base;
}

json to_json(const AgentConfig& config) {
  return {{"role_name", config.role_name},           {"model", config.model},
          {"temperature", config.temperature},       {"repetition_penalty", config.repetition_penalty},
          {"max_tokens", config.max_tokens},         {"system_prompt", config.system_prompt}};
}

PenaltyField parse_penalty_field(std::string_view name) {
  if (name == "frequency_penalty") return PenaltyField::FrequencyPenalty;
  if (name == "repetition_penalty") return PenaltyField::RepetitionPenalty;
  if (name == "none") return PenaltyField::None;
  throw ConfigError(fmt::format("unknown penalty field '{}'", name));
}

double frequency_penalty_for(double repetition_penalty) {
  return std::round((repetition_penalty - 1.0) * 1e6) / 1e6;
}

json chat_wire_body(const AgentConfig& config, const std::vector<ChatMessage>& messages, PenaltyField penalty_field) {
  json wire_messages = json::array();
  for (const auto& m : messages) wire_messages.push_back({{"role", m.role}, {"content", m.content}});
  json body = {
      {"model", config.model},
      {"messages", std::move(wire_messages)},
      {"temperature", config.temperature},
      {"max_tokens", config.max_tokens},
  };
  switch (penalty_field) {
    case PenaltyField::FrequencyPenalty: body["frequency_penalty"] = frequency_penalty_for(config.repetition_penalty); break;
    case PenaltyField::RepetitionPenalty: body["repetition_penalty"] = config.repetition_penalty; break;
    case PenaltyField::None: break;
  }
  return body;
}

std::string_view to_string(GatewayErrorKind kind) {
  switch (kind) {
    case GatewayErrorKind::TransientExhausted: return "TransientExhausted";
    case GatewayErrorKind::ProviderRejected: return "ProviderRejected";
    case GatewayErrorKind::MalformedResponse: return "MalformedResponse";
    case GatewayErrorKind::ScriptExhausted: return "ScriptExhausted";
    case GatewayErrorKind::CassetteSchema: return "CassetteSchemaError";
    case GatewayErrorKind::Precondition: return "PreconditionError";
  }
  return "Unknown";
}

GatewayError::GatewayError(GatewayErrorKind kind, std::string message, int attempts)
    : Error(fmt::format("{}: {}", to_string(kind), message)), kind_(kind), attempts_(attempts) {}

std::chrono::milliseconds RetryPolicy::delay(int attempt, double u) const {
  double nominal = static_cast<double>(base_delay.count()) * std::pow(multiplier, attempt - 1);
  double factor = 1.0 + jitter * (2.0 * u - 1.0);
  return std::chrono::milliseconds(static_cast<std::int64_t>(std::llround(nominal * factor)));
}

TranscriptLog::TranscriptLog(std::filesystem::path path) : path_(std::move(path)) {
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  out_.open(path_, std::ios::app | std::ios::binary);
  if (!out_) throw Error(fmt::format("cannot open transcript log {}", path_.string()));
}

void TranscriptLog::append(const json& entry) {
  std::lock_guard lock(mutex_);
  out_ << entry.dump() << '\n';
  out_.flush();
}

Gateway::Gateway(std::shared_ptr<Provider> chat_provider, std::shared_ptr<Provider> embedding_provider,
                 GatewayOptions options)
    : chat_provider_(std::move(chat_provider)),
      embedding_provider_(std::move(embedding_provider)),
      options_(std::move(options)),
      tokens_(options_.profile.burst),
      last_refill_(std::chrono::steady_clock::now()),
      jitter_rng_(options_.seed) {
  if (!options_.sleep) options_.sleep = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
  if (options_.retry.max_attempts < 1) throw ConfigError("retry budget must allow at least one attempt");
  if (options_.profile.max_concurrency < 1) throw ConfigError("max_concurrency must be at least 1");
}

void Gateway::acquire_slot() {
  std::unique_lock lock(mutex_);
  slot_cv_.wait(lock, [this] { return in_flight_ < options_.profile.max_concurrency; });
  ++in_flight_;
}

void Gateway::release_slot() {
  {
    std::lock_guard lock(mutex_);
    --in_flight_;
  }
  slot_cv_.notify_one();
}

void Gateway::take_token() {
  const double rate = options_.profile.requests_per_second;
  if (rate <= 0.0) return;
  std::unique_lock lock(mutex_);
  while (true) {
    auto now = std::chrono::steady_clock::now();
    double elapsed = std::chrono::duration<double>(now - last_refill_).count();
    tokens_ = std::min(options_.profile.burst, tokens_ + elapsed * rate);
    last_refill_ = now;
    if (tokens_ >= 1.0) {
      tokens_ -= 1.0;
      return;
    }
    auto wait = std::chrono::duration<double>((1.0 - tokens_) / rate);
    slot_cv_.wait_for(lock, std::chrono::duration_cast<std::chrono::microseconds>(wait));
  }
}

Gateway::Attempted Gateway::send(Provider& provider, const WireRequest& request) {
  const std::uint64_t call = next_call_.fetch_add(1);
  const int budget = options_.retry.max_attempts;
  auto log = [&](int attempt, const WireResponse& response, std::string_view outcome, std::chrono::milliseconds latency) {
    if (!options_.transcript) return;
    options_.transcript->append({
        {"call", call},
        {"attempt", attempt},
        {"role", request.role},
        {"provider", provider.id()},
        {"path", request.path},
        {"request", request.body},
        {"status", response.status},
        {"outcome", outcome},
        {"response", response.body},
        {"error", response.error},
        {"latency_ms", options_.record_latency ? latency.count() : 0},
    });
  };

  std::string last_error;
  for (int attempt = 1; attempt <= budget; ++attempt) {
    take_token();
    acquire_slot();
    auto started = std::chrono::steady_clock::now();
    WireResponse response;
    try {
      response = provider.post(request);
    } catch (...) {
      release_slot();
      throw;
    }
    release_slot();
    auto latency = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - started);

    if (is_transient(response.status)) {
      log(attempt, response, "transient", latency);
      last_error = response.status == 0 ? (response.error.empty() ? "no response" : response.error)
                                        : fmt::format("HTTP {}", response.status);
      spdlog::debug("{} attempt {}/{} failed: {}", request.role, attempt, budget, last_error);
      if (attempt < budget) {
        double u;
        {
          std::lock_guard lock(mutex_);
          u = std::uniform_real_distribution<double>(0.0, 1.0)(jitter_rng_);
        }
        options_.sleep(options_.retry.delay(attempt, u));
      }
      continue;
    }
    if (response.status < 200 || response.status >= 300) {
      log(attempt, response, "rejected", latency);
      throw GatewayError(GatewayErrorKind::ProviderRejected,
                         fmt::format("{} request rejected with HTTP {}: {}", request.role, response.status, response.body),
                         attempt);
    }
    json parsed = json::parse(response.body, nullptr, false);
    if (parsed.is_discarded()) {
      log(attempt, response, "malformed", latency);
      throw GatewayError(GatewayErrorKind::MalformedResponse, fmt::format("{} response is not JSON", request.role), attempt);
    }
    log(attempt, response, "ok", latency);
    return {std::move(parsed), attempt, latency};
  }
  throw GatewayError(GatewayErrorKind::TransientExhausted,
                     fmt::format("{} request failed after {} attempts ({})", request.role, budget, last_error), budget);
}

ChatExchange Gateway::chat(const AgentConfig& config, const std::vector<ChatMessage>& messages) {
  if (messages.empty()) throw GatewayError(GatewayErrorKind::Precondition, "chat requires at least one message");
  ChatExchange exchange;
  exchange.request.reserve(messages.size() + 1);
  exchange.request.push_back({"system", config.system_prompt});
  exchange.request.insert(exchange.request.end(), messages.begin(), messages.end());

  WireRequest request{to_lower_copy(config.role_name), kChatPath,
                      chat_wire_body(config, exchange.request, options_.profile.penalty_field)};
  Attempted result = send(*chat_provider_, request);

  const json* content = nullptr;
  if (auto choices = result.body.find("choices"); choices != result.body.end() && choices->is_array() && !choices->empty()) {
    const json& first = (*choices)[0];
    if (auto msg = first.find("message"); msg != first.end() && msg->is_object()) {
      if (auto c = msg->find("content"); c != msg->end() && c->is_string()) content = &*c;
    }
  }
  if (content == nullptr) {
    throw GatewayError(GatewayErrorKind::MalformedResponse,
                       fmt::format("{} response lacks choices[0].message.content", config.role_name), result.attempts);
  }
  exchange.response = content->get<std::string>();
  exchange.attempts = result.attempts;
  exchange.latency = result.latency;
  exchange.provider_id = chat_provider_->id();
  return exchange;
}

std::vector<std::vector<double>> Gateway::embed(const std::vector<std::string>& texts) {
  if (texts.empty()) throw GatewayError(GatewayErrorKind::Precondition, "embed requires at least one text");
  for (const auto& t : texts) {
    if (t.empty()) throw GatewayError(GatewayErrorKind::Precondition, "embed received an empty text");
  }
  WireRequest request{"embeddings", kEmbeddingsPath, {{"model", options_.profile.embedding_model}, {"input", texts}}};
  Attempted result = send(*embedding_provider_, request);

  auto malformed = [&](std::string_view why) {
    return GatewayError(GatewayErrorKind::MalformedResponse, fmt::format("embedding response {}", why), result.attempts);
  };
  auto data = result.body.find("data");
  if (data == result.body.end() || !data->is_array() || data->size() != texts.size()) {
    throw malformed("does not carry one entry per input");
  }
  std::vector<std::vector<double>> vectors(texts.size());
  std::vector<bool> filled(texts.size(), false);
  for (std::size_t i = 0; i < data->size(); ++i) {
    const json& entry = (*data)[i];
    std::size_t index = i;
    if (auto idx = entry.find("index"); idx != entry.end()) {
      if (!idx->is_number_unsigned() && !idx->is_number_integer()) throw malformed("has a non-integer index");
      index = idx->get<std::size_t>();
    }
    if (index >= texts.size() || filled[index]) throw malformed("has an invalid index");
    auto emb = entry.find("embedding");
    if (emb == entry.end() || !emb->is_array() || emb->empty()) throw malformed("has an empty embedding");
    for (const json& v : *emb) {
      if (!v.is_number()) throw malformed("has a non-numeric component");
      vectors[index].push_back(v.get<double>());
    }
    filled[index] = true;
  }
  for (const auto& v : vectors) {
    if (v.size() != vectors.front().size()) throw malformed("mixes vector dimensions");
  }
  return vectors;
}

}  // namespace sadforge::llm
