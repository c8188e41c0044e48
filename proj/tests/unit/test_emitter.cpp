#include <doctest.h>

#include "sadforge/emitter.hpp"
#include "test_support.hpp"

using namespace sadforge;
using namespace sadforge::emit;
using dialogue::DialogueTurn;
using dialogue::InstructionSet;
using dialogue::Role;
using nlohmann::json;

namespace {

sgl::SceneGraph full_graph() {
  return sgl::parse_sgl(
      "obj-table-1:[]; obj-mug-2:[]; obj-kettle-3:[]; obj-fridge-4:[]; obj-sofa-5:[]; obj-lamp-6:[]; "
      "rel-1:(mug-2,on,table-1); rel-2:(kettle-3,near,fridge-4); rel-3:(lamp-6,near,sofa-5);");
}

DialogueTurn oracle(int i, InstructionSet s) { return {Role::Oracle, s.to_json_text(), i, s, false}; }
DialogueTurn humanoid(int i, std::string text) { return {Role::Humanoid, std::move(text), i, std::nullopt, false}; }

SadRecord base_record(std::set<sgl::ObjectId> kept) {
  SadRecord r;
  r.scan_id = "scan-a";
  r.scenario_index = 2;
  r.scenario = {"Someone wants tea.", {2, 3}, 0};
  r.pruned_graph = sgl::prune(full_graph(), kept);
  r.full_graph_ref = "scans/scan-a/graph.sgl";
  return r;
}

SadRecord zero_round_record() {
  auto r = base_record({1, 2});
  InstructionSet s({"Go to the kitchen"});
  r.transcript = {oracle(0, s), humanoid(1, "done"), {Role::Summarizer, s.to_json_text(), 2, s, false}};
  r.final_instructions = s;
  return r;
}

SadRecord two_round_record() {
  auto r = base_record({1, 2, 3, 4});
  InstructionSet a({"Go to the table"}), b({"Go to the table", "Take the mug"}),
      c({"Go to the table", "Take the mug", "Fill the kettle"});
  r.transcript = {oracle(0, a), humanoid(1, "Which table?"), oracle(2, b), humanoid(3, "And then?"), oracle(4, c),
                  humanoid(5, "done")};
  r.final_instructions = c;
  return r;
}

}  // namespace

TEST_SUITE("emitter") {
  TEST_CASE("zero-round conversation is system, request, answer") {
    auto samples = emit_conversation_samples(zero_round_record());
    REQUIRE(samples.size() == 1);
    const auto& m = samples[0].messages;
    REQUIRE(m.size() == 3);
    CHECK(m[0].role == "system");
    CHECK(m[0].content.find("obj-mug-2:[];") != std::string::npos);
    CHECK(m[0].content.find("kettle") == std::string::npos);
    CHECK(m[1].content == "Someone wants tea. What should I do, step by step?");
    CHECK(m[2].content == "1. Go to the kitchen");
    CHECK(validate_sample_json(samples[0].to_json()).empty());
  }

  TEST_CASE("two-round conversation adds two question/answer pairs") {
    auto samples = emit_conversation_samples(two_round_record());
    REQUIRE(samples.size() == 1);
    const auto& m = samples[0].messages;
    REQUIRE(m.size() == 7);
    CHECK(m[2].content == "1. Go to the table");
    CHECK(m[3].content == "Which table?");
    CHECK(m[5].content == "And then?");
    CHECK(m[6].content == "1. Go to the table\n2. Take the mug\n3. Fill the kettle");
  }

  TEST_CASE("record without oracle turns cannot be emitted") {
    auto r = base_record({1});
    try {
      emit_conversation_samples(r);
      FAIL("expected EmitError");
    } catch (const EmitError& e) {
      CHECK(e.kind() == ErrorKind::EmptyTranscript);
    }
  }

  TEST_CASE("step samples have one numbered line per instruction") {
    auto r = two_round_record();
    auto s = emit_step_samples(r);
    REQUIRE(s.size() == 1);
    CHECK(util::split_lines(s[0].messages.back().content).size() == 3);
    r.final_instructions = InstructionSet({"Only"});
    CHECK(emit_step_samples(r)[0].messages.back().content == "1. Only");
    r.final_instructions = InstructionSet({"Open the\nfridge", "Close it"});
    CHECK(emit_step_samples(r)[0].messages.back().content == "1. Open the fridge\n2. Close it");
  }

  TEST_CASE("membership negatives come only from dropped objects") {
    util::SplitMix64 rng(1);
    // Kept {1,2}: objects 3..6 are dropped.
    auto samples = emit_pruning_samples(zero_round_record(), full_graph(), rng, 5);
    std::size_t negatives = 0, positives = 0;
    for (const auto& s : samples) {
      CHECK(validate_sample_json(s.to_json()).empty());
      if (s.family != Family::PruneMembership) continue;
      if (*s.positive) {
        ++positives;
        CHECK(s.messages.back().content.rfind("Yes,", 0) == 0);
      } else {
        ++negatives;
        CHECK(*s.object_id >= 3);
        CHECK(s.messages.back().content.rfind("No,", 0) == 0);
      }
    }
    CHECK(negatives == 4);
    CHECK(positives == 2);
    CHECK(samples.front().family == Family::PruneGraph);
    CHECK(samples.front().messages.back().content == sgl::serialize_sgl(zero_round_record().pruned_graph));

    auto all = base_record({1, 2, 3, 4, 5, 6});
    all.transcript = zero_round_record().transcript;
    auto none = emit_pruning_samples(all, full_graph(), rng, 5);
    CHECK(std::none_of(none.begin(), none.end(), [](const InstructSample& s) { return s.positive == false; }));
  }

  TEST_CASE("membership sampling respects the cap and the seed") {
    util::SplitMix64 a(77), b(77);
    auto r = base_record({1, 2, 3, 4, 5, 6});
    auto first = emit_pruning_samples(r, full_graph(), a, 2);
    auto second = emit_pruning_samples(r, full_graph(), b, 2);
    CHECK(first.size() == 3);
    CHECK(to_jsonl(first) == to_jsonl(second));
  }

  TEST_CASE("split sizes follow the floor rule") {
    std::vector<std::string> ids;
    for (int i = 0; i < 1482; ++i) ids.push_back("scan" + std::to_string(i));
    auto m = split(ids, 0.8, 42);
    CHECK(m.train_scan_ids.size() == 1482 * 8 / 10);
    CHECK(m.test_scan_ids.size() == 1482 - 1482 * 8 / 10);
    CHECK(std::is_sorted(m.train_scan_ids.begin(), m.train_scan_ids.end()));
    std::vector<std::string> both;
    std::set_intersection(m.train_scan_ids.begin(), m.train_scan_ids.end(), m.test_scan_ids.begin(),
                          m.test_scan_ids.end(), std::back_inserter(both));
    CHECK(both.empty());
    auto again = split(ids, 0.8, 42);
    CHECK(to_json(again) == to_json(m));
    CHECK(m.split_of("scan7").has_value());
    CHECK_FALSE(m.split_of("nope").has_value());

    auto one = split({"only"}, 0.8, 1);
    CHECK(one.train_scan_ids.empty());
    CHECK(one.test_scan_ids.size() == 1);
  }

  TEST_CASE("split input errors") {
    auto kind_of = [](std::vector<std::string> ids, double ratio) {
      try {
        split(std::move(ids), ratio, 0);
      } catch (const EmitError& e) {
        return e.kind();
      }
      return ErrorKind::Precondition;
    };
    CHECK(kind_of({}, 0.8) == ErrorKind::EmptyInput);
    CHECK(kind_of({"a"}, 1.5) == ErrorKind::InvalidRatio);
    CHECK(kind_of({"a", "a"}, 0.5) == ErrorKind::DuplicateScanId);
  }

  TEST_CASE("default token counter") {
    CHECK(count_tokens("") == 0);
    CHECK(count_tokens("hello world") == 2);
    CHECK(count_tokens("  a\tb\n c ") == 3);
  }

  TEST_CASE("stats count input and output tokens per split") {
    SplitManifest manifest;
    manifest.train_scan_ids = {"scan-a"};
    manifest.test_scan_ids = {"scan-b"};
    CHECK(compute_stats({}, {}, manifest).total.total_tokens == 0);

    InstructSample s;
    s.scan_id = "scan-a";
    s.messages = {{"user", "one two three"}, {"assistant", "four five"}};
    auto stats = compute_stats({s}, {}, manifest);
    CHECK(stats.train.input_tokens == 3);
    CHECK(stats.train.output_tokens == 2);
    CHECK(stats.train.total_tokens == 5);
    CHECK(stats.train.scenarios == 1);
    CHECK(stats.test.total_tokens == 0);

    auto t = s;
    t.scan_id = "scan-b";
    auto record = two_round_record();
    record.scan_id = "scan-b";
    stats = compute_stats({s, t}, {record}, manifest);
    CHECK(stats.total.total_tokens == stats.train.total_tokens + stats.test.total_tokens);
    CHECK(stats.total.scenarios == 2);
    CHECK(stats.test.task_steps == 3);

    t.scan_id = "scan-z";
    CHECK_THROWS_AS(compute_stats({t}, {}, manifest), EmitError);
  }

  TEST_CASE("training manifest defaults and overrides") {
    auto m = emit_training_manifest();
    CHECK(m["lora_rank"] == 64);
    CHECK(m["lora_alpha"] == 32);
    CHECK(m["lora_dropout"] == 0.05);
    CHECK(m["learning_rate"] == 2e-4);
    CHECK(m["train_file"] == "train-instruct.jsonl");
    auto o = emit_training_manifest({{"lora_rank", 8}});
    CHECK(o["lora_rank"] == 8);
    CHECK(o["lora_alpha"] == 32);
    CHECK_THROWS_AS(emit_training_manifest(json::array()), ConfigError);
  }

  TEST_CASE("schema validator rejects broken lines") {
    auto good = emit_step_samples(two_round_record())[0].to_json();
    CHECK(validate_sample_json(good).empty());
    auto bad = good;
    bad["messages"].erase(bad["messages"].size() - 1);
    CHECK(!validate_sample_json(bad).empty());
    bad = good;
    bad["family"] = "poetry";
    CHECK(!validate_sample_json(bad).empty());
    bad = good;
    bad["messages"][1]["role"] = "assistant";
    CHECK(!validate_sample_json(bad).empty());
    bad = good;
    bad["meta"].erase("scan_id");
    CHECK(!validate_sample_json(bad).empty());
    auto back = sample_from_json(good);
    CHECK(back.to_json() == good);
  }

  TEST_CASE("records round-trip through JSON") {
    auto r = two_round_record();
    r.truncated = true;
    auto back = record_from_json(to_json(r));
    CHECK(back.pruned_graph == r.pruned_graph);
    CHECK(back.final_instructions == r.final_instructions);
    CHECK(back.transcript.size() == r.transcript.size());
    CHECK(back.truncated);
  }

  TEST_CASE("dataset building routes by split and skips failed records") {
    auto a = two_round_record();
    auto b = zero_round_record();
    b.scan_id = "scan-b";
    auto c = zero_round_record();
    c.scan_id = "scan-b";
    c.scenario_index = 4;
    c.failed = true;
    SplitManifest manifest;
    manifest.train_scan_ids = {"scan-a"};
    manifest.test_scan_ids = {"scan-b"};
    std::map<std::string, sgl::SceneGraph> graphs = {{"scan-a", full_graph()}, {"scan-b", full_graph()}};
    auto ds = build_dataset({a, b, c}, graphs, manifest, 9);
    CHECK(ds.skipped_records == 1);
    for (const auto& s : ds.train) CHECK(s.scan_id == "scan-a");
    for (const auto& s : ds.test) CHECK(s.scan_id == "scan-b");
    auto reversed = build_dataset({c, b, a}, graphs, manifest, 9);
    CHECK(to_jsonl(reversed.train) == to_jsonl(ds.train));
    CHECK(to_jsonl(reversed.test) == to_jsonl(ds.test));
  }
}
