#include "sadforge/review_service.hpp"

#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include <filesystem>
#include <thread>

#include "sadforge/util.hpp"

namespace sadforge::pipeline {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr std::string_view kPlaceholderPage =
    "<!doctype html><title>sadforge review</title>"
    "<p>The review UI assets are not installed. The JSON API is served under <code>/api</code>.</p>";

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view code, const std::string& message) {
  send_json(res, status, {{"error", {{"code", code}, {"message", message}}}});
}

std::optional<std::size_t> parse_index(const std::string& text) {
  if (text.empty() || text.size() > 18) return std::nullopt;
  for (char c : text) {
    if (c < '0' || c > '9') return std::nullopt;
  }
  return std::stoull(text);
}

}  // namespace

struct ReviewService::Impl {
  Impl(Workspace ws, ReviewConfig cfg)
      : workspace(std::move(ws)), config(std::move(cfg)), log(workspace.decisions_path(), workspace.lock_path()) {
    routes();
  }

  bool item_exists(const std::string& scan, std::size_t idx) const {
    auto scans = workspace.scan_ids();
    return std::find(scans.begin(), scans.end(), scan) != scans.end() && fs::exists(workspace.proposal_path(scan, idx));
  }

  void routes() {
    server.set_pre_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
      if (config.token.empty() || req.path.rfind("/api/", 0) != 0) return httplib::Server::HandlerResponse::Unhandled;
      if (req.get_header_value("Authorization") == "Bearer " + config.token) {
        return httplib::Server::HandlerResponse::Unhandled;
      }
      send_error(res, 401, "unauthorized", "missing or wrong bearer token");
      return httplib::Server::HandlerResponse::Handled;
    });

    server.Get("/healthz", [](const httplib::Request&, httplib::Response& res) { send_json(res, 200, {{"status", "ok"}}); });

    server.Get("/api/queue", [this](const httplib::Request& req, httplib::Response& res) {
      std::size_t offset = 0, limit = 50;
      if (req.has_param("offset")) {
        auto v = parse_index(req.get_param_value("offset"));
        if (!v) return send_error(res, 400, "bad_request", "offset must be a non-negative integer");
        offset = *v;
      }
      if (req.has_param("limit")) {
        auto v = parse_index(req.get_param_value("limit"));
        if (!v || *v == 0 || *v > 500) return send_error(res, 400, "bad_request", "limit must be in [1, 500]");
        limit = *v;
      }
      log.reload();
      json pending = json::array();
      for (const auto& [scan, idx] : workspace.proposal_keys()) {
        if (!log.find(scan, idx)) pending.push_back({{"scan_id", scan}, {"scenario_index", idx}});
      }
      json items = json::array();
      for (std::size_t i = offset; i < pending.size() && items.size() < limit; ++i) {
        std::string scan = pending[i]["scan_id"];
        std::size_t idx = pending[i]["scenario_index"];
        auto proposal = workspace.load_proposal(scan, idx);
        auto scenario = workspace.load_scenarios(scan).candidates.at(idx);
        items.push_back({{"scan_id", scan},
                         {"scenario_index", idx},
                         {"description", scenario.description},
                         {"proposed_ids", proposal.proposed_ids},
                         {"source", pruning::to_string(proposal.source)}});
      }
      send_json(res, 200, {{"total", pending.size()}, {"offset", offset}, {"limit", limit}, {"items", items}});
    });

    server.Get(R"(/api/items/([^/]+)/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      std::string scan = req.matches[1];
      auto idx = parse_index(req.matches[2]);
      if (!idx || !item_exists(scan, *idx)) return send_error(res, 404, "not_found", "unknown review item");
      auto graph = workspace.load_graph(scan);
      auto proposal = workspace.load_proposal(scan, *idx);
      auto scenario = workspace.load_scenarios(scan).candidates.at(*idx);
      json objects = json::array();
      for (const auto& obj : graph.objects) {
        objects.push_back({{"id", obj.id},
                           {"label", obj.label},
                           {"attributes", obj.attributes},
                           {"degree", graph.degree(obj.id)},
                           {"proposed", proposal.proposed_ids.contains(obj.id)}});
      }
      json relations = json::array();
      for (const auto& rel : graph.relations) {
        relations.push_back({{"id", rel.id},
                             {"subject_id", rel.subject_id},
                             {"predicate", rel.predicate},
                             {"object_id", rel.object_id}});
      }
      log.reload();
      auto decision = log.find(scan, *idx);
      send_json(res, 200,
                {{"scan_id", scan},
                 {"scenario_index", *idx},
                 {"scenario", scenario::to_json(scenario)},
                 {"graph_sgl", sgl::serialize_sgl(graph)},
                 {"objects", objects},
                 {"relations", relations},
                 {"proposal", pruning::to_json(proposal)},
                 {"decision", decision ? pruning::to_json(*decision) : json(nullptr)}});
    });

    server.Post(R"(/api/items/([^/]+)/([^/]+)/decision)", [this](const httplib::Request& req, httplib::Response& res) {
      std::string scan = req.matches[1];
      auto idx = parse_index(req.matches[2]);
      if (!idx || !item_exists(scan, *idx)) return send_error(res, 404, "not_found", "unknown review item");
      json body = json::parse(req.body, nullptr, false);
      if (body.is_discarded() || !body.is_object()) return send_error(res, 400, "bad_request", "body must be a JSON object");

      auto kept = body.find("kept_ids");
      if (kept == body.end() || !kept->is_array()) return send_error(res, 422, "invalid_decision", "kept_ids must be an array");
      pruning::ReviewDecision d;
      d.scan_id = scan;
      d.scenario_index = *idx;
      for (const auto& id : *kept) {
        if (!id.is_number_unsigned()) return send_error(res, 422, "invalid_decision", "kept_ids must hold object ids");
        d.kept_ids.insert(id.get<sgl::ObjectId>());
      }
      if (d.kept_ids.empty()) return send_error(res, 422, "empty_subset", "kept_ids must not be empty");
      auto reviewer = body.find("reviewer");
      if (reviewer == body.end() || !reviewer->is_string() || util::trim(reviewer->get<std::string>()).empty()) {
        return send_error(res, 422, "invalid_decision", "reviewer must be a non-empty string");
      }
      d.reviewer = std::string(util::trim(reviewer->get<std::string>()));
      auto amend = body.value("amend", json(false));
      auto key = body.value("idempotency_key", json(""));
      if (!amend.is_boolean() || !key.is_string()) {
        return send_error(res, 422, "invalid_decision", "amend must be a boolean and idempotency_key a string");
      }
      d.idempotency_key = key.get<std::string>();
      d.decided_at = pruning::now_iso8601();
      d.status = pruning::ReviewStatus::Approved;

      sgl::SceneGraph preview;
      try {
        preview = pruning::apply_decision(workspace.load_graph(scan), d);
        auto stored = log.record(d, amend.get<bool>());
        preview = pruning::apply_decision(workspace.load_graph(scan), stored);
        spdlog::info("decision {} recorded for {} scenario {} by {}", stored.id(), scan, *idx, stored.reviewer);
        send_json(res, 200,
                  {{"decision", pruning::to_json(stored)},
                   {"preview_sgl", sgl::serialize_sgl(preview)},
                   {"kept_objects", preview.objects.size()},
                   {"kept_relations", preview.relations.size()}});
      } catch (const pruning::PruningError& e) {
        switch (e.kind()) {
          case pruning::ErrorKind::AlreadyDecided: {
            json current = nullptr;
            if (auto existing = log.find(scan, *idx)) current = pruning::to_json(*existing);
            send_json(res, 409, {{"error", {{"code", "already_decided"}, {"message", e.what()}}}, {"decision", current}});
            break;
          }
          case pruning::ErrorKind::EmptySubset: send_error(res, 422, "empty_subset", e.what()); break;
          default: send_error(res, 422, "invalid_decision", e.what()); break;
        }
      }
    });

    if (!config.static_dir.empty() && fs::is_directory(config.static_dir)) {
      server.set_mount_point("/", config.static_dir.string());
    } else {
      server.Get("/", [](const httplib::Request&, httplib::Response& res) {
        res.set_content(std::string(kPlaceholderPage), "text/html");
      });
    }

    server.set_exception_handler([](const httplib::Request& req, httplib::Response& res, std::exception_ptr ep) {
      std::string message = "internal error";
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        message = e.what();
      } catch (...) {
      }
      spdlog::error("{} {}: {}", req.method, req.path, message);
      send_error(res, 500, "internal", message);
    });
  }

  Workspace workspace;
  ReviewConfig config;
  pruning::DecisionLog log;
  httplib::Server server;
  std::thread thread;
};

ReviewService::ReviewService(Workspace workspace, ReviewConfig config)
    : impl_(std::make_unique<Impl>(std::move(workspace), std::move(config))) {}

ReviewService::~ReviewService() { stop(); }

bool ReviewService::listen(const std::string& host, int port) {
  spdlog::info("review service listening on http://{}:{}", host, port);
  return impl_->server.listen(host, port);
}

int ReviewService::start_background(const std::string& host) {
  int port = impl_->server.bind_to_any_port(host);
  if (port <= 0) throw Error(fmt::format("cannot bind review service on {}", host));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port;
}

void ReviewService::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace sadforge::pipeline
