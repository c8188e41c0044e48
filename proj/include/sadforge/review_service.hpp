#pragma once

// HTTP API behind the review UI.
//
//   GET  /healthz
//   GET  /api/queue?offset=0&limit=50        undecided proposals
//   GET  /api/items/{scan}/{idx}             graph, scenario, proposal, degrees
//   POST /api/items/{scan}/{idx}/decision    {"kept_ids":[..], "reviewer":"..",
//                                             "amend":false, "idempotency_key":".."}
//   GET  /                                   static UI assets, when configured
//
// Errors are {"error":{"code":..., "message":...}} with 400 (unreadable
// body), 401 (bad token), 404 (unknown item), 409 (already decided) or 422
// (invalid decision). The service only records decisions; pruned graphs are
// produced by prune-apply.

#include <memory>
#include <string>

#include "sadforge/pipeline.hpp"

namespace sadforge::pipeline {

class ReviewService {
 public:
  ReviewService(Workspace workspace, ReviewConfig config);
  ~ReviewService();
  ReviewService(const ReviewService&) = delete;
  ReviewService& operator=(const ReviewService&) = delete;

  /// Serves on host:port until stop(). Returns false if the socket cannot be bound.
  bool listen(const std::string& host, int port);
  /// Serves on an ephemeral port from a background thread and returns the port.
  int start_background(const std::string& host = "127.0.0.1");
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace sadforge::pipeline
