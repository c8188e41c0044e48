#pragma once

#include <chrono>
#include <string>

#include "sadforge/gateway.hpp"

namespace sadforge::llm {

/// OpenAI-compatible HTTP transport. `base_url` is scheme://host[:port]
/// with an optional path prefix; request paths are appended to it.
class HttpProvider : public Provider {
 public:
  HttpProvider(std::string base_url, std::string api_key,
               std::chrono::seconds timeout = std::chrono::seconds(60));

  WireResponse post(const WireRequest& request) override;
  std::string id() const override { return base_url_; }

 private:
  std::string base_url_;
  std::string origin_;
  std::string prefix_;
  std::string api_key_;
  std::chrono::seconds timeout_;
};

}  // namespace sadforge::llm
