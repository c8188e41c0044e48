#include <doctest.h>

#include <algorithm>

#include "sadforge/gateway.hpp"
#include "sadforge/json_extract.hpp"
#include "sadforge/mock_provider.hpp"
#include "test_support.hpp"

using namespace sadforge;
using namespace sadforge::llm;
using nlohmann::json;

namespace {

json echo_cassette(std::vector<std::string> replies, json faults = json::array()) {
  return {{"responses", {{"oracle", replies}}}, {"faults", std::move(faults)}};
}

const std::vector<ChatMessage> kHello = {{"user", "hello"}};

}  // namespace

TEST_SUITE("gateway") {
  TEST_CASE("scripted reply comes back after one attempt") {
    auto rig = testing::mock_rig(echo_cassette({"hello"}));
    auto ex = rig.gateway->chat(oracle_config(), kHello);
    CHECK(ex.response == "hello");
    CHECK(ex.attempts == 1);
    CHECK(ex.provider_id == "mock");
    REQUIRE(ex.request.size() == 2);
    CHECK(ex.request[0].role == "system");
  }

  TEST_CASE("two timeouts then success takes three attempts") {
    auto rig = testing::mock_rig(echo_cassette({"ok"}, json::array({{{"role", "oracle"}, {"after", 0}, {"kind", "timeout"}, {"count", 2}}})));
    auto ex = rig.gateway->chat(oracle_config(), kHello);
    CHECK(ex.response == "ok");
    CHECK(ex.attempts == 3);
  }

  TEST_CASE("five rate limits exhaust a budget of four") {
    auto rig = testing::mock_rig(echo_cassette({"ok"}, json::array({{{"role", "oracle"}, {"after", 0}, {"kind", "rate_limit"}, {"count", 5}}})));
    try {
      rig.gateway->chat(oracle_config(), kHello);
      FAIL("expected GatewayError");
    } catch (const GatewayError& e) {
      CHECK(e.kind() == GatewayErrorKind::TransientExhausted);
      CHECK(e.attempts() == 4);
    }
  }

  TEST_CASE("a single timeout with a one-attempt budget surfaces as transient") {
    auto provider = std::make_shared<MockProvider>(echo_cassette({"ok"}, json::array({{{"after", 0}, {"kind", "timeout"}}})));
    GatewayOptions options;
    options.retry.max_attempts = 1;
    options.sleep = [](std::chrono::milliseconds) {};
    Gateway gw(provider, std::make_shared<HashedEmbeddingProvider>(), options);
    try {
      gw.chat(oracle_config(), kHello);
      FAIL("expected GatewayError");
    } catch (const GatewayError& e) {
      CHECK(e.kind() == GatewayErrorKind::TransientExhausted);
    }
  }

  TEST_CASE("4xx is not retried and malformed bodies are reported") {
    auto rejected = testing::mock_rig(echo_cassette({"ok"}, json::array({{{"after", 0}, {"kind", "bad_request"}}})));
    try {
      rejected.gateway->chat(oracle_config(), kHello);
      FAIL("expected GatewayError");
    } catch (const GatewayError& e) {
      CHECK(e.kind() == GatewayErrorKind::ProviderRejected);
      CHECK(e.attempts() == 1);
    }
    auto malformed = testing::mock_rig(echo_cassette({"ok"}, json::array({{{"after", 0}, {"kind", "malformed"}}})));
    try {
      malformed.gateway->chat(oracle_config(), kHello);
      FAIL("expected GatewayError");
    } catch (const GatewayError& e) {
      CHECK(e.kind() == GatewayErrorKind::MalformedResponse);
    }
  }

  TEST_CASE("running past the script is an error") {
    auto rig = testing::mock_rig(echo_cassette({"only one"}));
    rig.gateway->chat(oracle_config(), kHello);
    try {
      rig.gateway->chat(oracle_config(), kHello);
      FAIL("expected GatewayError");
    } catch (const GatewayError& e) {
      CHECK(e.kind() == GatewayErrorKind::ScriptExhausted);
    }
  }

  TEST_CASE("malformed cassettes are rejected up front") {
    CHECK_THROWS_AS(MockProvider(json{{"responses", {{"oracle", 3}}}}), GatewayError);
    CHECK_THROWS_AS(MockProvider(json{{"faults", json::array({{{"kind", "meteor"}}})}}), GatewayError);
  }

  TEST_CASE("replaying a cassette twice writes identical transcripts") {
    testing::TempDir dir("gateway");
    std::string logs[2];
    for (int run = 0; run < 2; ++run) {
      auto provider = std::make_shared<MockProvider>(
          echo_cassette({"a", "b"}, json::array({{{"role", "oracle"}, {"after", 1}, {"kind", "server_error"}}})));
      GatewayOptions options;
      auto path = dir.path() / ("t" + std::to_string(run) + ".jsonl");
      options.transcript = std::make_shared<TranscriptLog>(path);
      options.record_latency = false;
      options.sleep = [](std::chrono::milliseconds) {};
      {
        Gateway gw(provider, std::make_shared<HashedEmbeddingProvider>(), options);
        gw.chat(oracle_config(), kHello);
        gw.chat(oracle_config(), kHello);
        gw.embed({"a kitchen", "a bedroom"});
      }
      options.transcript.reset();
      logs[run] = util::read_file(path);
    }
    CHECK(!logs[0].empty());
    CHECK(logs[0] == logs[1]);
    // Two chats, one retried server error, one embedding batch.
    CHECK(std::count(logs[0].begin(), logs[0].end(), '\n') == 4);
  }

  TEST_CASE("wire body carries sampling settings and the mapped penalty") {
    auto cfg = humanoid_config();
    auto body = chat_wire_body(cfg, {{"system", cfg.system_prompt}, {"user", "hi"}}, PenaltyField::FrequencyPenalty);
    CHECK(body["model"] == cfg.model);
    CHECK(body["temperature"] == 1.0);
    CHECK(body["max_tokens"] == 128);
    CHECK(body["frequency_penalty"].get<double>() == doctest::Approx(0.2));
    CHECK_FALSE(body.contains("repetition_penalty"));
    CHECK(body["messages"][0]["content"] == cfg.system_prompt);

    auto vllm = chat_wire_body(cfg, {{"user", "hi"}}, PenaltyField::RepetitionPenalty);
    CHECK(vllm["repetition_penalty"] == 1.2);
    CHECK_FALSE(vllm.contains("frequency_penalty"));

    auto none = chat_wire_body(cfg, {{"user", "hi"}}, PenaltyField::None);
    CHECK_FALSE(none.contains("repetition_penalty"));
    CHECK_FALSE(none.contains("frequency_penalty"));
  }

  TEST_CASE("penalty mapping and field names") {
    CHECK(frequency_penalty_for(1.2) == 0.2);
    CHECK(frequency_penalty_for(1.0) == 0.0);
    CHECK(parse_penalty_field("frequency_penalty") == PenaltyField::FrequencyPenalty);
    CHECK(parse_penalty_field("repetition_penalty") == PenaltyField::RepetitionPenalty);
    CHECK(parse_penalty_field("none") == PenaltyField::None);
    CHECK_THROWS_AS(parse_penalty_field("logit_bias"), ConfigError);
  }

  TEST_CASE("agent defaults and overrides") {
    CHECK(humanoid_config().temperature == 1.0);
    CHECK(humanoid_config().max_tokens == 128);
    CHECK(oracle_config().temperature == 0.7);
    CHECK(oracle_config().max_tokens == 512);
    CHECK(summarizer_config().temperature == 0.1);
    CHECK(summarizer_config().max_tokens == 1024);
    for (const auto& cfg : {humanoid_config(), oracle_config(), summarizer_config()}) {
      CHECK(cfg.repetition_penalty == 1.2);
    }
    auto cfg = apply_overrides(oracle_config(), {{"temperature", 0.3}, {"model", "local"}});
    CHECK(cfg.temperature == 0.3);
    CHECK(cfg.model == "local");
    CHECK(cfg.max_tokens == 512);
    CHECK_THROWS_AS(apply_overrides(oracle_config(), {{"top_k", 3}}), ConfigError);
    CHECK_THROWS_AS(apply_overrides(oracle_config(), {{"temperature", 3.0}}), ConfigError);
  }

  TEST_CASE("hashed embeddings are deterministic and shaped") {
    auto rig = testing::mock_rig(json::object());
    auto v = rig.gateway->embed({"a", "b"});
    REQUIRE(v.size() == 2);
    CHECK(v[0].size() == v[1].size());
    CHECK(rig.gateway->embed({"same text"}) == rig.gateway->embed({"same text"}));
    CHECK_THROWS_AS(rig.gateway->embed({"x", ""}), GatewayError);
    CHECK_THROWS_AS(rig.gateway->embed({}), GatewayError);
  }

  TEST_CASE("retry delay grows geometrically within the jitter band") {
    RetryPolicy policy;
    CHECK(policy.delay(1, 0.5).count() == 500);
    CHECK(policy.delay(3, 0.5).count() == 2000);
    CHECK(policy.delay(1, 0.0).count() == 400);
    CHECK(policy.delay(1, 1.0).count() == 600);
  }

  TEST_CASE("balanced object extraction skips prose and repairs single quotes") {
    CHECK(json_extract::first_balanced_object("Sure! {\"1\": \"x\"} bye") == std::optional<std::string_view>("{\"1\": \"x\"}"));
    CHECK(!json_extract::first_balanced_object("no braces here"));
    CHECK(json_extract::first_balanced_object("it's {\"a\": \"}\"}") == std::optional<std::string_view>("{\"a\": \"}\"}"));
    auto parsed = json_extract::parse_lenient("{'1': 'Go to the kitchen', '2': 'it\\'s fine'}");
    REQUIRE(!parsed.is_discarded());
    CHECK(parsed["1"] == "Go to the kitchen");
  }
}
