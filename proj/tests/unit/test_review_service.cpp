#include <doctest.h>
#include <httplib.h>

#include "sadforge/pipeline.hpp"
#include "sadforge/review_service.hpp"
#include "test_support.hpp"

using namespace sadforge;
using namespace sadforge::pipeline;
using nlohmann::json;

namespace {

/// Workspace with proposals but no decisions (web review mode).
struct ReviewFixture {
  testing::TempDir dir{"review"};
  Workspace ws{dir.path()};

  ReviewFixture() {
    auto config = load_config(testing::fixture("pipeline_config.json"));
    config.workspace = dir.path();
    config.review.mode = pruning::ReviewMode::Web;
    Pipeline p(config);
    p.run_all();
  }
};

json body_of(const httplib::Result& r) { return json::parse(r->body); }

std::string item_path(const std::string& scan, std::size_t idx) {
  return "/api/items/" + scan + "/" + std::to_string(idx);
}

json decision_body(const std::set<sgl::ObjectId>& ids, std::string reviewer = "ana") {
  return {{"kept_ids", ids}, {"reviewer", std::move(reviewer)}};
}

}  // namespace

TEST_SUITE("review_service") {
  TEST_CASE("queue, item view and decisions") {
    ReviewFixture fx;
    ReviewService service(fx.ws, ReviewConfig{});
    int port = service.start_background();
    httplib::Client client("127.0.0.1", port);

    auto health = client.Get("/healthz");
    REQUIRE(health);
    CHECK(health->status == 200);

    auto queue = client.Get("/api/queue?limit=500");
    REQUIRE(queue);
    CHECK(queue->status == 200);
    auto q = body_of(queue);
    CHECK(q["total"] == 15);
    REQUIRE(q["items"].size() == 15);
    std::string scan = q["items"][0]["scan_id"];
    std::size_t idx = q["items"][0]["scenario_index"];
    std::set<sgl::ObjectId> proposed = q["items"][0]["proposed_ids"];

    auto page = body_of(client.Get("/api/queue?offset=14&limit=5"));
    CHECK(page["items"].size() == 1);
    CHECK(client.Get("/api/queue?limit=0")->status == 400);
    CHECK(client.Get("/api/queue?offset=-1")->status == 400);

    auto item = client.Get(item_path(scan, idx));
    REQUIRE(item);
    CHECK(item->status == 200);
    auto view = body_of(item);
    CHECK(view["decision"].is_null());
    CHECK(view["graph_sgl"] == sgl::serialize_sgl(fx.ws.load_graph(scan)));
    std::size_t flagged = 0;
    for (const auto& obj : view["objects"]) flagged += obj["proposed"].get<bool>() ? 1 : 0;
    CHECK(flagged == proposed.size());

    CHECK(client.Get(item_path("nope", 0))->status == 404);
    CHECK(client.Get(item_path(scan, 99))->status == 404);

    const std::string decide = item_path(scan, idx) + "/decision";
    auto empty = client.Post(decide, decision_body({}).dump(), "application/json");
    CHECK(empty->status == 422);
    CHECK(body_of(empty)["error"]["code"] == "empty_subset");
    CHECK(client.Post(decide, "not json", "application/json")->status == 400);
    CHECK(client.Post(decide, decision_body({999999}).dump(), "application/json")->status == 422);
    CHECK(client.Post(decide, json{{"kept_ids", proposed}}.dump(), "application/json")->status == 422);
    CHECK(client.Post(item_path("nope", 0) + "/decision", decision_body({1}).dump(), "application/json")->status == 404);

    // Approve as-is.
    auto ok = client.Post(decide, decision_body(proposed).dump(), "application/json");
    REQUIRE(ok);
    CHECK(ok->status == 200);
    auto stored = body_of(ok);
    CHECK(stored["decision"]["kept_ids"] == json(proposed));
    CHECK(stored["kept_objects"] == proposed.size());
    CHECK(body_of(client.Get("/api/queue"))["total"] == 14);
    CHECK(!body_of(client.Get(item_path(scan, idx)))["decision"].is_null());

    // Second submit without amend conflicts and reports the stored decision.
    std::set<sgl::ObjectId> one{*proposed.begin()};
    auto conflict = client.Post(decide, decision_body(one, "bo").dump(), "application/json");
    CHECK(conflict->status == 409);
    CHECK(body_of(conflict)["decision"]["reviewer"] == "ana");

    auto amend = decision_body(one, "bo");
    amend["amend"] = true;
    auto amended = client.Post(decide, amend.dump(), "application/json");
    CHECK(amended->status == 200);
    CHECK(body_of(amended)["decision"]["kept_ids"] == json(one));

    // A retried submit with the same idempotency key is not a conflict.
    auto [scan2, idx2] = std::pair<std::string, std::size_t>(q["items"][1]["scan_id"], q["items"][1]["scenario_index"]);
    auto keyed = decision_body(q["items"][1]["proposed_ids"].get<std::set<sgl::ObjectId>>());
    keyed["idempotency_key"] = "retry-1";
    auto first = client.Post(item_path(scan2, idx2) + "/decision", keyed.dump(), "application/json");
    auto retry = client.Post(item_path(scan2, idx2) + "/decision", keyed.dump(), "application/json");
    CHECK(first->status == 200);
    CHECK(retry->status == 200);
    CHECK(body_of(retry)["decision"] == body_of(first)["decision"]);
    service.stop();

    pruning::DecisionLog log(fx.ws.decisions_path());
    CHECK(log.all().size() == 2);
    CHECK(log.find(scan, idx)->reviewer == "bo");
  }

  TEST_CASE("decisions from the service feed prune-apply") {
    ReviewFixture fx;
    {
      ReviewService service(fx.ws, ReviewConfig{});
      httplib::Client client("127.0.0.1", service.start_background());
      auto q = body_of(client.Get("/api/queue?limit=500"));
      for (const auto& item : q["items"]) {
        auto r = client.Post(item_path(item["scan_id"], item["scenario_index"]) + "/decision",
                             decision_body(item["proposed_ids"].get<std::set<sgl::ObjectId>>()).dump(), "application/json");
        CHECK(r->status == 200);
      }
    }
    auto config = load_config(testing::fixture("pipeline_config.json"));
    config.workspace = fx.dir.path();
    config.review.mode = pruning::ReviewMode::Web;
    Pipeline p(config);
    bool paused = true;
    auto reports = p.run_all(&paused);
    CHECK_FALSE(paused);
    CHECK(reports.back().stage == "stats");
    CHECK(std::filesystem::exists(fx.ws.out_dir() / "train-instruct.jsonl"));
  }

  TEST_CASE("bearer token guards the API") {
    ReviewFixture fx;
    ReviewConfig cfg;
    cfg.token = "s3cret";
    ReviewService service(fx.ws, cfg);
    httplib::Client client("127.0.0.1", service.start_background());
    CHECK(client.Get("/api/queue")->status == 401);
    CHECK(client.Get("/healthz")->status == 200);
    CHECK(client.Get("/api/queue", {{"Authorization", "Bearer wrong"}})->status == 401);
    CHECK(client.Get("/api/queue", {{"Authorization", "Bearer s3cret"}})->status == 200);
  }
}
