#pragma once

// Offline providers: the cassette player used by tests and dry runs, and
// the hashed bag-of-words embedder used when no embedding endpoint is
// configured.
//
// Cassette document:
//   {
//     "mode": "script" | "synthetic",        // default "script"
//     "responses": {"oracle": ["{\"1\": \"Go to the kitchen\"}", ...], ...},
//     "faults": [{"role": "oracle", "after": 0, "kind": "timeout", "count": 2}],
//     "embedding_dim": 256
//   }
//
// In script mode every chat call consumes the next scripted reply for its
// role, and running out is an error. In synthetic mode roles without a
// script get deterministic replies computed from the request alone.
// Fault kinds: timeout, rate_limit, server_error, bad_request, malformed.
// `after` counts earlier calls to the same role (to any role when `role` is
// omitted); the fault fires for `count` consecutive calls.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "sadforge/gateway.hpp"

namespace sadforge::llm {

inline constexpr std::size_t kDefaultEmbeddingDim = 256;

/// Deterministic L2-normalised bag-of-words vector: each lowercase
/// alphanumeric word adds 1 to bucket FNV-1a(word) mod dim.
std::vector<double> hashed_embedding(std::string_view text, std::size_t dim = kDefaultEmbeddingDim);

/// Serves `/v1/embeddings` locally with `hashed_embedding`.
class HashedEmbeddingProvider : public Provider {
 public:
  explicit HashedEmbeddingProvider(std::size_t dim = kDefaultEmbeddingDim) : dim_(dim) {}
  WireResponse post(const WireRequest& request) override;
  std::string id() const override { return "hashed-embedder"; }

 private:
  std::size_t dim_;
};

class MockProvider : public Provider {
 public:
  /// Throws GatewayError(CassetteSchema) on a malformed cassette.
  explicit MockProvider(const nlohmann::json& cassette);
  static std::shared_ptr<MockProvider> from_file(const std::filesystem::path& path);

  WireResponse post(const WireRequest& request) override;
  std::string id() const override { return "mock"; }

  /// Every request received, in arrival order.
  std::vector<WireRequest> recorded() const;
  std::size_t calls(std::string_view role) const;

 private:
  struct Fault {
    std::string role;
    std::size_t after = 0;
    std::size_t count = 1;
    std::string kind;
  };

  WireResponse chat_reply(const WireRequest& request, std::size_t sequence);

  bool synthetic_ = false;
  std::size_t embedding_dim_ = kDefaultEmbeddingDim;
  std::map<std::string, std::vector<std::string>, std::less<>> scripts_;
  std::map<std::string, std::size_t, std::less<>> cursors_;
  std::map<std::string, std::size_t, std::less<>> role_calls_;
  std::size_t total_calls_ = 0;
  std::vector<Fault> faults_;
  std::vector<WireRequest> recorded_;
  mutable std::mutex mutex_;
};

/// Deterministic stand-in for an LLM reply, computed only from the role and
/// the request messages. Understands the message layouts the pipeline
/// stages send.
std::string synthesize_reply(std::string_view role, const nlohmann::json& body);

}  // namespace sadforge::llm
