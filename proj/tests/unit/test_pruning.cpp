#include <doctest.h>

#include "sadforge/pruning.hpp"
#include "test_support.hpp"

using namespace sadforge;
using namespace sadforge::pruning;
using nlohmann::json;

namespace {

sgl::SceneGraph room() {
  return sgl::parse_sgl(
      "obj-table-1:[]; obj-mug-2:[]; obj-kettle-3:[]; obj-fridge-4:[]; obj-chair-7:[]; "
      "rel-1:(mug-2,on,table-1); rel-2:(chair-7,near,table-1); rel-3:(kettle-3,near,mug-2);");
}

scenario::Scenario tea() { return {"Make tea", {2, 3}, 0}; }

ReviewDecision decision(std::set<sgl::ObjectId> kept, std::string reviewer = "ana", std::string key = {}) {
  ReviewDecision d;
  d.scan_id = "scan";
  d.scenario_index = 0;
  d.kept_ids = std::move(kept);
  d.reviewer = std::move(reviewer);
  d.decided_at = now_iso8601();
  d.idempotency_key = std::move(key);
  return d;
}

}  // namespace

TEST_SUITE("pruning") {
  TEST_CASE("reply naming exactly the involved objects") {
    auto rig = testing::mock_rig({{"responses", {{"prune", {R"({"objects": ["mug-2", "kettle-3"]})"}}}}});
    auto p = propose_subset("scan", 0, room(), tea(), *rig.gateway, llm::prune_config());
    CHECK(p.proposed_ids == std::set<sgl::ObjectId>{2, 3});
    CHECK(p.source == ProposalSource::Llm);
  }

  TEST_CASE("extra valid ids join the proposal, unknown ones are dropped") {
    auto rig = testing::mock_rig(
        {{"responses", {{"prune", {R"({"objects": ["mug-2", "chair-7", "sofa-99"], "rationale": {"chair-7": "sit"}})"}}}}});
    auto p = propose_subset("scan", 0, room(), tea(), *rig.gateway, llm::prune_config());
    CHECK(p.proposed_ids == std::set<sgl::ObjectId>{2, 3, 7});
    CHECK(p.rationale.at(7) == "sit");
  }

  TEST_CASE("gateway failure falls back to the involved objects") {
    auto rig = testing::mock_rig(
        {{"responses", {{"prune", {"{}"}}}}, {"faults", json::array({{{"kind", "timeout"}, {"count", 10}}})}});
    auto p = propose_subset("scan", 0, room(), tea(), *rig.gateway, llm::prune_config());
    CHECK(p.source == ProposalSource::SeedOnly);
    CHECK(p.proposed_ids == std::set<sgl::ObjectId>{2, 3});

    auto strict = testing::mock_rig(
        {{"responses", {{"prune", {"{}"}}}}, {"faults", json::array({{{"kind", "timeout"}, {"count", 10}}})}});
    CHECK_THROWS_AS(propose_subset("scan", 0, room(), tea(), *strict.gateway, llm::prune_config(), false), llm::GatewayError);
  }

  TEST_CASE("applying decisions") {
    auto g = room();
    CHECK(apply_decision(g, decision({1, 2, 3, 4, 7})) == g);
    try {
      apply_decision(g, decision({}));
      FAIL("expected PruningError");
    } catch (const PruningError& e) {
      CHECK(e.kind() == ErrorKind::EmptySubset);
    }
    CHECK_THROWS_AS(apply_decision(g, decision({42})), PruningError);

    // Object table-1 takes part in relations 1 and 2; dropping it removes both.
    auto pruned = apply_decision(g, decision({2, 3, 4, 7}));
    CHECK(pruned.relations.size() == 1);
    CHECK(pruned.relations[0].id == 3);
    CHECK(pruned == testing::brute_force_prune(g, {2, 3, 4, 7}));
  }

  TEST_CASE("auto approval copies the proposal and only runs in auto mode") {
    SubsetProposal p{"scan", 0, {1, 2, 3}, {}, ProposalSource::Llm};
    auto d = auto_approve(p, ReviewMode::Auto);
    CHECK(d.kept_ids == std::set<sgl::ObjectId>{1, 2, 3});
    CHECK(d.status == ReviewStatus::AutoApproved);
    try {
      auto_approve(p, ReviewMode::Web);
      FAIL("expected PruningError");
    } catch (const PruningError& e) {
      CHECK(e.kind() == ErrorKind::Mode);
    }
  }

  TEST_CASE("review mode names") {
    CHECK(parse_review_mode("auto") == ReviewMode::Auto);
    CHECK(parse_review_mode("cli") == ReviewMode::InteractiveCli);
    CHECK(parse_review_mode("interactive-cli") == ReviewMode::InteractiveCli);
    CHECK(parse_review_mode("web") == ReviewMode::Web);
  }

  TEST_CASE("decision ids ignore the timestamp") {
    auto a = decision({1, 2});
    auto b = a;
    b.decided_at = "2000-01-01T00:00:00Z";
    CHECK(a.id() == b.id());
    b.kept_ids.insert(3);
    CHECK(a.id() != b.id());
  }

  TEST_CASE("decision log: double submit, amend and idempotency") {
    testing::TempDir dir("decisions");
    auto path = dir.path() / "decisions.jsonl";
    {
      DecisionLog log(path, dir.path() / "lock");
      auto first = log.record(decision({1, 2}, "ana", "k1"));
      CHECK(log.find("scan", 0)->kept_ids == std::set<sgl::ObjectId>{1, 2});

      // Same idempotency key: the stored decision comes back unchanged.
      auto again = log.record(decision({1, 2, 3}, "ana", "k1"));
      CHECK(again.id() == first.id());

      try {
        log.record(decision({1}, "bo"));
        FAIL("expected PruningError");
      } catch (const PruningError& e) {
        CHECK(e.kind() == ErrorKind::AlreadyDecided);
      }
      auto amended = log.record(decision({1}, "bo"), true);
      CHECK(log.find("scan", 0)->id() == amended.id());
      CHECK_FALSE(log.find("scan", 1));
    }
    DecisionLog reopened(path);
    CHECK(reopened.find("scan", 0)->reviewer == "bo");
    CHECK(reopened.all().size() == 1);
  }

  TEST_CASE("proposal and decision JSON round trip") {
    SubsetProposal p{"scan", 3, {1, 4}, {{4, "needed"}}, ProposalSource::SeedOnly};
    auto back = proposal_from_json(to_json(p));
    CHECK(back.proposed_ids == p.proposed_ids);
    CHECK(back.rationale == p.rationale);
    CHECK(back.source == ProposalSource::SeedOnly);
    auto d = decision({5, 6}, "ana", "key");
    auto dback = decision_from_json(to_json(d));
    CHECK(dback.id() == d.id());
    CHECK(dback.idempotency_key == "key");
  }
}
