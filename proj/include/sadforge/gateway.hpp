#pragma once

// Uniform client for OpenAI-compatible chat-completion and embedding
// endpoints. Providers move JSON bodies over some transport (HTTP, the mock
// cassette player, the local hashed embedder); the Gateway owns retries,
// rate limiting, request shaping and the transcript log.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sadforge/error.hpp"

namespace sadforge::llm {

struct AgentConfig {
  std::string role_name;
  std::string model;
  double temperature = 1.0;
  double repetition_penalty = 1.0;
  int max_tokens = 256;
  std::string system_prompt;

  /// Throws ConfigError when a field is missing or out of range
  /// (temperature in [0, 2], repetition_penalty > 0, max_tokens > 0).
  void validate() const;
};

// Agent defaults. Humanoid, Oracle and Summarizer carry the published
// settings; the scenario, prune and reviewer agents are our own.
AgentConfig humanoid_config();
AgentConfig oracle_config();
AgentConfig summarizer_config();
AgentConfig scenario_config();
AgentConfig prune_config();
AgentConfig reviewer_config();

/// Applies a JSON object of field overrides onto `base`.
AgentConfig apply_overrides(AgentConfig base, const nlohmann::json& overrides);
nlohmann::json to_json(const AgentConfig& config);

struct ChatMessage {
  std::string role;
  std::string content;

  friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

/// Where the repetition penalty goes on the wire.
enum class PenaltyField {
  FrequencyPenalty,   ///< `frequency_penalty = penalty - 1.0` (1.2 -> 0.2)
  RepetitionPenalty,  ///< `repetition_penalty = penalty`, for vLLM-style servers
  None,
};

PenaltyField parse_penalty_field(std::string_view name);

/// Maps a multiplicative repetition penalty onto the additive
/// frequency_penalty scale, rounded to 6 decimals.
double frequency_penalty_for(double repetition_penalty);

nlohmann::json chat_wire_body(const AgentConfig& config, const std::vector<ChatMessage>& messages,
                              PenaltyField penalty_field);

struct WireRequest {
  std::string role;  ///< agent role, or "embeddings"
  std::string path;  ///< "/v1/chat/completions" or "/v1/embeddings"
  nlohmann::json body;
};

struct WireResponse {
  int status = 0;  ///< HTTP status; 0 means the request never completed
  std::string body;
  std::string error;
};

class Provider {
 public:
  virtual ~Provider() = default;
  virtual WireResponse post(const WireRequest& request) = 0;
  virtual std::string id() const = 0;
};

enum class GatewayErrorKind {
  TransientExhausted,
  ProviderRejected,
  MalformedResponse,
  ScriptExhausted,
  CassetteSchema,
  Precondition,
};

std::string_view to_string(GatewayErrorKind kind);

class GatewayError : public Error {
 public:
  GatewayError(GatewayErrorKind kind, std::string message, int attempts = 0);
  GatewayErrorKind kind() const noexcept { return kind_; }
  int attempts() const noexcept { return attempts_; }

 private:
  GatewayErrorKind kind_;
  int attempts_;
};

struct RetryPolicy {
  int max_attempts = 4;
  std::chrono::milliseconds base_delay{500};
  double multiplier = 2.0;
  double jitter = 0.2;

  /// Delay before retry number `attempt` (1-based), jitter applied from `u` in [0, 1).
  std::chrono::milliseconds delay(int attempt, double u) const;
};

struct EndpointProfile {
  std::string name = "default";
  PenaltyField penalty_field = PenaltyField::FrequencyPenalty;
  int max_concurrency = 4;
  double requests_per_second = 0.0;  ///< 0 disables the token bucket
  double burst = 1.0;
  std::string embedding_model = "clip-text";
};

/// Append-only JSONL log, one line per attempt. Thread-safe.
class TranscriptLog {
 public:
  explicit TranscriptLog(std::filesystem::path path);
  void append(const nlohmann::json& entry);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::mutex mutex_;
  std::ofstream out_;
};

struct ChatExchange {
  std::vector<ChatMessage> request;
  std::string response;
  std::chrono::milliseconds latency{0};
  int attempts = 0;
  std::string provider_id;
};

struct GatewayOptions {
  RetryPolicy retry;
  EndpointProfile profile;
  std::shared_ptr<TranscriptLog> transcript;
  std::uint64_t seed = 0;
  /// Latencies are logged as 0 when false, keeping transcripts byte-stable.
  bool record_latency = true;
  std::function<void(std::chrono::milliseconds)> sleep;
};

class Gateway {
 public:
  Gateway(std::shared_ptr<Provider> chat_provider, std::shared_ptr<Provider> embedding_provider,
          GatewayOptions options = {});

  /// Prepends the agent's system prompt to `messages`, posts the request and
  /// returns the first choice. Transient failures (no response, 429, 5xx) are
  /// retried with exponential backoff until the attempt budget is spent.
  ChatExchange chat(const AgentConfig& config, const std::vector<ChatMessage>& messages);

  /// One vector per text, all of the same dimension, in input order.
  std::vector<std::vector<double>> embed(const std::vector<std::string>& texts);

  const EndpointProfile& profile() const { return options_.profile; }

 private:
  struct Attempted {
    nlohmann::json body;
    int attempts = 0;
    std::chrono::milliseconds latency{0};
  };
  Attempted send(Provider& provider, const WireRequest& request);
  void acquire_slot();
  void release_slot();
  void take_token();

  std::shared_ptr<Provider> chat_provider_;
  std::shared_ptr<Provider> embedding_provider_;
  GatewayOptions options_;

  std::mutex mutex_;
  std::condition_variable slot_cv_;
  int in_flight_ = 0;
  double tokens_ = 0.0;
  std::chrono::steady_clock::time_point last_refill_;
  std::mt19937_64 jitter_rng_;
  std::atomic<std::uint64_t> next_call_{1};
};

}  // namespace sadforge::llm
