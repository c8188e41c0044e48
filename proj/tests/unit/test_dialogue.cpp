#include <doctest.h>

#include "sadforge/dialogue.hpp"
#include "test_support.hpp"

using namespace sadforge;
using namespace sadforge::dialogue;
using nlohmann::json;

namespace {

sgl::SceneGraph full_graph() {
  return sgl::parse_sgl(
      "obj-table-1:[wooden]; obj-mug-2:[small,ceramic]; obj-coffee_machine-3:[]; obj-shelf-4:[]; "
      "rel-1:(mug-2,on,table-1); rel-2:(coffee_machine-3,on,shelf-4);");
}

sgl::SceneGraph pruned_graph() { return sgl::prune(full_graph(), {1, 2, 3}); }

scenario::Scenario coffee() { return {"Someone wants a coffee in a clean mug.", {2, 3}, 0}; }

struct Run {
  DialogueResult result;
  testing::MockRig rig;
};

Run run_cassette(const std::string& name, DialogueConfig config = {}) {
  auto rig = testing::mock_rig(testing::load_json(testing::fixture("cassettes/" + name + ".json")));
  auto result = run_dialogue(pruned_graph(), full_graph(), coffee(), *rig.gateway, config);
  return {std::move(result), std::move(rig)};
}

std::vector<Role> roles_of(const DialogueResult& r) {
  std::vector<Role> out;
  for (const auto& t : r.turns) out.push_back(t.role);
  return out;
}

}  // namespace

TEST_SUITE("dialogue") {
  TEST_CASE("instruction JSON parsing") {
    auto three = parse_instruction_json(
        R"({"1": "Go to the kitchen", "2": "Turn on the coffee machine", "3": "Wait for the coffee to brew"})");
    CHECK(three.steps() ==
          std::vector<std::string>{"Go to the kitchen", "Turn on the coffee machine", "Wait for the coffee to brew"});
    CHECK(parse_instruction_json(R"(Sure! {"1":"x"})").steps() == std::vector<std::string>{"x"});
    CHECK(parse_instruction_json(R"({"2": "b", "10": "j", "1": "a", "3": "c", "4": "d", "5": "e", "6": "f", "7": "g", "8": "h", "9": "i"})")
              .steps()
              .back() == "j");
    CHECK(parse_instruction_json(R"({"0": "a", "1": "b"})").size() == 2);

    auto kind_of = [](std::string_view text) {
      try {
        parse_instruction_json(text);
      } catch (const DialogueError& e) {
        return e.kind();
      }
      FAIL("expected DialogueError for " << text);
      return ErrorKind::Precondition;
    };
    CHECK(kind_of("no braces here") == ErrorKind::NoJsonFound);
    CHECK(kind_of(R"({"1": ["nested"]})") == ErrorKind::NotFlatObject);
    CHECK(kind_of(R"({"step": "x"})") == ErrorKind::NotFlatObject);
    CHECK(kind_of(R"({"1": "a", "3": "c"})") == ErrorKind::NonContiguousIndices);
    CHECK(kind_of(R"({"1": "  "})") == ErrorKind::EmptyInstruction);
    CHECK(kind_of("{}") == ErrorKind::EmptyInstruction);
  }

  TEST_CASE("instruction sets render as JSON and numbered lines") {
    InstructionSet s({"Go to the table", "Pick up\nthe mug"});
    CHECK(s.to_json_text() == R"({"1":"Go to the table","2":"Pick up\nthe mug"})");
    CHECK(s.numbered() == "1. Go to the table\n2. Pick up the mug");
    CHECK(parse_instruction_json(s.to_json_text()) == s);
  }

  TEST_CASE("done detection") {
    CHECK(detect_done("done"));
    CHECK(detect_done("Thanks, I am DONE."));
    CHECK_FALSE(detect_done("Is it done?"));
    CHECK_FALSE(detect_done("I have abandoned the task"));
    CHECK_FALSE(detect_done("done_with_it"));
    CHECK_FALSE(detect_done("Which mug do you mean?"));
  }

  TEST_CASE("immediate done") {
    auto run = run_cassette("immediate_done");
    const auto& r = run.result;
    CHECK(r.rounds == 0);
    CHECK_FALSE(r.truncated);
    CHECK(roles_of(r) == std::vector<Role>{Role::Oracle, Role::Humanoid, Role::Summarizer});
    CHECK(r.final_instructions.steps() == std::vector<std::string>{"Go to the kitchen"});
  }

  TEST_CASE("two rounds of questions") {
    auto run = run_cassette("two_rounds");
    const auto& r = run.result;
    CHECK(r.rounds == 2);
    CHECK(r.turns.size() == 7);
    auto roles = roles_of(r);
    CHECK(std::count(roles.begin(), roles.end(), Role::Oracle) == 3);
    CHECK(r.final_instructions.size() == 3);
    CHECK(r.final_instructions.steps()[2] == "Carry it to the coffee machine");
  }

  TEST_CASE("never done stops at max_rounds and still summarizes") {
    DialogueConfig config;
    config.max_rounds = 3;
    auto run = run_cassette("never_done", config);
    const auto& r = run.result;
    CHECK(r.truncated);
    CHECK(r.rounds == 3);
    CHECK(r.turns.size() == 8);
    CHECK(r.turns.back().role == Role::Summarizer);
    CHECK(!r.final_instructions.empty());
    CHECK(!r.warnings.empty());
  }

  TEST_CASE("malformed oracle reply is retried") {
    auto run = run_cassette("malformed_then_valid");
    const auto& r = run.result;
    CHECK(r.turns.size() == 4);
    CHECK(std::count_if(r.turns.begin(), r.turns.end(), [](const DialogueTurn& t) { return t.failed; }) == 1);
    CHECK(r.turns[0].failed);
    CHECK(r.final_instructions.steps() == std::vector<std::string>{"Go to the kitchen", "Open the fridge"});
    // The retry carries the rejected reply and a reminder.
    auto oracle_calls = run.rig.provider->recorded();
    REQUIRE(oracle_calls.size() >= 2);
    CHECK(oracle_calls[1].body["messages"].size() == oracle_calls[0].body["messages"].size() + 2);
  }

  TEST_CASE("retry budget exhaustion raises InstructionParseFailure") {
    auto rig = testing::mock_rig({{"responses", {{"oracle", {"nope", "still nope", "no"}}}}});
    DialogueConfig config;
    config.json_retry_budget = 2;
    try {
      run_dialogue(pruned_graph(), full_graph(), coffee(), *rig.gateway, config);
      FAIL("expected DialogueError");
    } catch (const DialogueError& e) {
      CHECK(e.kind() == ErrorKind::InstructionParseFailure);
    }
    CHECK(rig.provider->calls("oracle") == 3);
  }

  TEST_CASE("reviewer revise replaces the final set") {
    DialogueConfig config;
    config.reviewer_enabled = true;
    auto run = run_cassette("reviewer_revise", config);
    const auto& r = run.result;
    CHECK(r.reviewer_used);
    CHECK(r.revised);
    CHECK(roles_of(r) == std::vector<Role>{Role::Oracle, Role::Humanoid, Role::Summarizer, Role::Reviewer, Role::Oracle,
                                           Role::Summarizer});
    CHECK(r.final_instructions.steps() ==
          std::vector<std::string>{"Go to the shelf", "Take the mug from the coffee machine"});
  }

  TEST_CASE("reviewer accept leaves the output unchanged") {
    auto cassette = testing::load_json(testing::fixture("cassettes/immediate_done.json"));
    cassette["responses"]["reviewer"] = {R"({"verdict": "accept"})"};
    auto rig = testing::mock_rig(cassette);
    DialogueConfig config;
    config.reviewer_enabled = true;
    auto r = run_dialogue(pruned_graph(), full_graph(), coffee(), *rig.gateway, config);
    CHECK(r.reviewer_used);
    CHECK_FALSE(r.revised);
    CHECK(r.final_instructions.steps() == std::vector<std::string>{"Go to the kitchen"});
  }

  TEST_CASE("unreadable reviewer reply counts as accept with a warning") {
    auto rig = testing::mock_rig({{"responses", {{"reviewer", {"Looks fine to me!"}}}}});
    auto v = review_instructions(InstructionSet({"Go"}), coffee(), full_graph(), *rig.gateway, llm::reviewer_config());
    CHECK(v.accept);
    CHECK(v.unparsed);
  }

  TEST_CASE("the humanoid never sees scene graph text and the reviewer sees the full graph") {
    DialogueConfig config;
    config.reviewer_enabled = true;
    auto run = run_cassette("reviewer_revise", config);
    for (const auto& req : run.rig.provider->recorded()) {
      auto text = req.body["messages"].dump();
      if (req.role == "humanoid") CHECK(text.find("obj-") == std::string::npos);
      if (req.role == "reviewer") CHECK(text.find(sgl::serialize_sgl(full_graph())) != std::string::npos);
      if (req.role == "oracle") CHECK(text.find(sgl::serialize_sgl(pruned_graph())) != std::string::npos);
    }
  }

  TEST_CASE("turns round-trip through JSON") {
    auto run = run_cassette("two_rounds");
    for (const auto& t : run.result.turns) {
      auto back = turn_from_json(to_json(t));
      CHECK(back.role == t.role);
      CHECK(back.content == t.content);
      CHECK(back.turn_index == t.turn_index);
      CHECK(back.instructions == t.instructions);
    }
  }
}
