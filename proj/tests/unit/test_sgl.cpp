#include <doctest.h>

#include "sadforge/sgl.hpp"
#include "test_support.hpp"

using namespace sadforge;
using namespace sadforge::sgl;

TEST_SUITE("sgl") {
  TEST_CASE("parses two objects and a relation regardless of statement order") {
    auto g = parse_sgl("obj-table-2:[large]; obj-chair-1:[wooden,brown]; rel-1:(chair-1,under,table-2);");
    REQUIRE(g.objects.size() == 2);
    REQUIRE(g.relations.size() == 1);
    CHECK(g.objects[0].id == 1);
    CHECK(g.objects[0].label == "chair");
    CHECK(g.objects[0].attributes == std::vector<std::string>{"wooden", "brown"});
    CHECK(g.objects[1].attributes == std::vector<std::string>{"large"});
    CHECK(g.relations[0].predicate == "under");
    CHECK(g.relations[0].subject_id == 1);
    CHECK(g.relations[0].object_id == 2);
  }

  TEST_CASE("empty text is the empty graph") {
    CHECK(parse_sgl("").empty());
    CHECK(parse_sgl(" \n\t ").empty());
    CHECK(serialize_sgl(SceneGraph{}).empty());
  }

  TEST_CASE("relation to an undeclared object is a dangling reference") {
    try {
      parse_sgl("obj-chair-1:[wooden]; rel-1:(chair-1,under,table-2);");
      FAIL("expected SglError");
    } catch (const SglError& e) {
      CHECK(e.kind() == ErrorKind::DanglingReference);
      CHECK(std::string(e.what()).find("table-2") != std::string::npos);
    }
  }

  TEST_CASE("canonical serialization orders objects then relations by id") {
    auto g = parse_sgl("obj-table-2:[large]; obj-chair-1:[wooden,brown]; rel-1:(chair-1,under,table-2);");
    CHECK(serialize_sgl(g) == "obj-chair-1:[wooden,brown]; obj-table-2:[large]; rel-1:(chair-1,under,table-2);");
  }

  TEST_CASE("objects without attributes serialize with empty brackets") {
    auto g = parse_sgl("obj-lamp-4:[];");
    CHECK(serialize_sgl(g) == "obj-lamp-4:[];");
  }

  TEST_CASE("syntax errors carry a byte position") {
    const std::vector<std::pair<std::string, std::size_t>> cases = {
        {"obj-chair-1:[wooden]", 20},
        {"obj-chair:[wooden];", 4},
        {"xyz", 0},
        {"obj-chair-1:[wooden]; rel-1:(chair-1,under);", 42},
    };
    for (const auto& [text, pos] : cases) {
      CAPTURE(text);
      try {
        parse_sgl(text);
        FAIL("expected SglError");
      } catch (const SglError& e) {
        CHECK(e.kind() == ErrorKind::Syntax);
        REQUIRE(e.position().has_value());
        CHECK(*e.position() <= text.size());
        CHECK(*e.position() == pos);
      }
    }
  }

  TEST_CASE("duplicate object ids are rejected by the parser") {
    CHECK_THROWS_AS(parse_sgl("obj-a-3:[]; obj-b-3:[];"), SglError);
  }

  TEST_CASE("normalize_token lowercases and joins separators") {
    CHECK(normalize_token("Trash Can") == "trash_can");
    CHECK(normalize_token("  on table ") == "on_table");
    CHECK(normalize_token("a,b;c") == "a_b_c");
    CHECK(is_valid_token("coffee_machine"));
    CHECK_FALSE(is_valid_token("Coffee"));
    CHECK_FALSE(is_valid_token("a b"));
    CHECK_FALSE(is_valid_token(""));
  }

  TEST_CASE("build_graph normalizes and deduplicates attributes") {
    auto g = build_graph({{"Coffee Machine", 5, {"Red", "red", "shiny"}}}, {});
    REQUIRE(g.objects.size() == 1);
    CHECK(g.objects[0].label == "coffee_machine");
    CHECK(g.objects[0].attributes == std::vector<std::string>{"red", "shiny"});
  }

  TEST_CASE("prune keeps exactly the kept objects and their internal relations") {
    auto g = parse_sgl(
        "obj-a-1:[]; obj-b-2:[]; obj-c-3:[]; rel-1:(a-1,near,b-2); rel-2:(b-2,near,c-3); rel-3:(a-1,near,c-3);");
    CHECK(prune(g, {1, 2, 3}) == g);
    CHECK(prune(g, {}).empty());
    auto p = prune(g, {1, 3});
    CHECK(serialize_sgl(p) == "obj-a-1:[]; obj-c-3:[]; rel-3:(a-1,near,c-3);");
    CHECK_THROWS_AS(prune(g, {9}), SglError);
  }

  TEST_CASE("prune matches the brute-force filter on random graphs") {
    util::SplitMix64 rng(11);
    for (int i = 0; i < 100; ++i) {
      auto g = testing::random_graph(rng, 20, 40);
      auto keep = testing::random_subset(rng, g);
      CHECK(prune(g, keep) == testing::brute_force_prune(g, keep));
    }
  }

  TEST_CASE("validate reports forced violations") {
    auto g = parse_sgl("obj-a-1:[]; obj-b-2:[]; rel-1:(a-1,near,b-2);");
    CHECK(validate(g).empty());

    auto dangling = g;
    dangling.objects.pop_back();
    auto v = validate(dangling);
    REQUIRE(!v.empty());
    CHECK(v[0].kind == ViolationKind::DanglingReference);

    SceneGraph dup;
    dup.objects = {{"a", 3, {}}, {"b", 3, {}}};
    v = validate(dup);
    REQUIRE(v.size() == 1);
    CHECK(v[0].kind == ViolationKind::DuplicateId);
    CHECK(v[0].id == 3u);

    SceneGraph self;
    self.objects = {{"a", 1, {}}};
    self.relations = {{1, "a", 1, "near", "a", 1}};
    v = validate(self);
    REQUIRE(!v.empty());
    CHECK(v[0].kind == ViolationKind::SelfRelation);
  }

  TEST_CASE("random graphs survive a round trip") {
    util::SplitMix64 rng(3);
    for (int i = 0; i < 200; ++i) {
      auto g = testing::random_graph(rng);
      auto text = serialize_sgl(g);
      auto back = parse_sgl(text);
      CHECK(back == g);
      CHECK(serialize_sgl(back) == text);
    }
  }
}
