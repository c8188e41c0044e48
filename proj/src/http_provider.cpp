#include "sadforge/http_provider.hpp"

#include <fmt/format.h>
#include <httplib.h>

namespace sadforge::llm {

HttpProvider::HttpProvider(std::string base_url, std::string api_key, std::chrono::seconds timeout)
    : base_url_(std::move(base_url)), api_key_(std::move(api_key)), timeout_(timeout) {
  while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
  auto scheme = base_url_.find("://");
  if (scheme == std::string::npos) throw ConfigError(fmt::format("base URL '{}' has no scheme", base_url_));
  auto path = base_url_.find('/', scheme + 3);
  origin_ = base_url_.substr(0, path);
  prefix_ = path == std::string::npos ? std::string{} : base_url_.substr(path);
  // A base of ".../v1" already carries the version segment.
  if (prefix_.ends_with("/v1")) prefix_.resize(prefix_.size() - 3);
}

WireResponse HttpProvider::post(const WireRequest& request) {
  httplib::Client client(origin_);
  client.set_connection_timeout(timeout_);
  client.set_read_timeout(timeout_);
  client.set_write_timeout(timeout_);
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
  auto result = client.Post(prefix_ + request.path, headers, request.body.dump(), "application/json");
  if (!result) return {0, {}, httplib::to_string(result.error())};
  return {result->status, result->body, {}};
}

}  // namespace sadforge::llm
