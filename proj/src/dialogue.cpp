#include "sadforge/dialogue.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>

#include "sadforge/json_extract.hpp"
#include "sadforge/message_format.hpp"
#include "sadforge/util.hpp"

namespace sadforge::dialogue {
namespace {

using nlohmann::json;
namespace mf = message_format;

constexpr std::string_view kJsonReminder =
    "Your previous reply could not be read. Respond only with a single JSON object with the instruction index as "
    "key and the instruction as value, and nothing else.";

bool is_word_char(char c) {
  auto u = static_cast<unsigned char>(c);
  return std::isalnum(u) || c == '_';
}

std::string one_line(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char c : text) {
    if (c == '\n' || c == '\r') {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space && c != ' ') out.push_back(' ');
    pending_space = false;
    out.push_back(c);
  }
  return out;
}

class Session {
 public:
  Session(llm::Gateway& gateway, const DialogueConfig& config, const TurnObserver& on_turn)
      : gateway_(gateway), config_(config), on_turn_(on_turn) {}

  const DialogueTurn& record(Role role, std::string content, std::optional<InstructionSet> set = std::nullopt,
                             bool failed = false) {
    DialogueTurn turn{role, std::move(content), static_cast<int>(result.turns.size()), std::move(set), failed};
    result.turns.push_back(std::move(turn));
    if (on_turn_) on_turn_(result.turns.back());
    return result.turns.back();
  }

  // Asks `agent` for an instruction set, re-prompting after each unreadable
  // reply. Only the successful exchange is appended to `history`.
  InstructionSet ask_instructions(const llm::AgentConfig& agent, Role role, std::vector<llm::ChatMessage>& history) {
    std::vector<llm::ChatMessage> attempt_messages = history;
    for (int attempt = 0; attempt <= config_.json_retry_budget; ++attempt) {
      std::string reply = gateway_.chat(agent, attempt_messages).response;
      try {
        InstructionSet set = parse_instruction_json(reply);
        record(role, reply, set);
        history.push_back({"assistant", set.to_json_text()});
        return set;
      } catch (const DialogueError& e) {
        result.warnings.push_back(fmt::format("{} reply {} unreadable: {}", to_string(role), attempt + 1, e.what()));
        spdlog::warn("{} reply unreadable ({}), attempt {}/{}", to_string(role), e.what(), attempt + 1,
                     config_.json_retry_budget + 1);
        record(role, reply, std::nullopt, true);
        attempt_messages.push_back({"assistant", reply});
        attempt_messages.push_back({"user", std::string(kJsonReminder)});
      }
    }
    throw DialogueError(ErrorKind::InstructionParseFailure,
                        fmt::format("{} produced no readable instruction set in {} attempts", to_string(role),
                                    config_.json_retry_budget + 1));
  }

  InstructionSet summarize() {
    std::string convo(mf::kConversationHeader);
    for (const auto& turn : result.turns) {
      if (turn.failed) continue;
      switch (turn.role) {
        case Role::Oracle: convo += fmt::format("\n{}{}", mf::kOracleSpeaker, turn.instructions->to_json_text()); break;
        case Role::Humanoid: convo += fmt::format("\n{}{}", mf::kHumanoidSpeaker, one_line(turn.content)); break;
        case Role::Reviewer: convo += fmt::format("\nReviewer: {}", one_line(turn.content)); break;
        case Role::Summarizer: break;
      }
    }
    std::vector<llm::ChatMessage> history{{"user", convo}};
    return ask_instructions(config_.summarizer, Role::Summarizer, history);
  }

  DialogueResult result;

 private:
  llm::Gateway& gateway_;
  const DialogueConfig& config_;
  const TurnObserver& on_turn_;
};

}  // namespace

std::string InstructionSet::to_json_text() const { return to_json().dump(); }

nlohmann::ordered_json InstructionSet::to_json() const {
  nlohmann::ordered_json out = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < steps_.size(); ++i) out[std::to_string(i + 1)] = steps_[i];
  return out;
}

std::string InstructionSet::numbered() const {
  std::string out;
  for (std::size_t i = 0; i < steps_.size(); ++i) {
    if (i > 0) out.push_back('\n');
    out += fmt::format("{}. {}", i + 1, one_line(steps_[i]));
  }
  return out;
}

std::string_view to_string(Role role) {
  switch (role) {
    case Role::Humanoid: return "humanoid";
    case Role::Oracle: return "oracle";
    case Role::Summarizer: return "summarizer";
    case Role::Reviewer: return "reviewer";
  }
  return "oracle";
}

Role parse_role(std::string_view name) {
  if (name == "humanoid") return Role::Humanoid;
  if (name == "oracle") return Role::Oracle;
  if (name == "summarizer") return Role::Summarizer;
  if (name == "reviewer") return Role::Reviewer;
  throw DialogueError(ErrorKind::Precondition, fmt::format("unknown dialogue role '{}'", name));
}

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::NoJsonFound: return "NoJsonFound";
    case ErrorKind::NotFlatObject: return "NotFlatObject";
    case ErrorKind::NonContiguousIndices: return "NonContiguousIndices";
    case ErrorKind::EmptyInstruction: return "EmptyInstruction";
    case ErrorKind::InstructionParseFailure: return "InstructionParseFailure";
    case ErrorKind::Precondition: return "PreconditionError";
  }
  return "Unknown";
}

DialogueError::DialogueError(ErrorKind kind, std::string message)
    : Error(fmt::format("{}: {}", to_string(kind), message)), kind_(kind) {}

InstructionSet parse_instruction_json(std::string_view text) {
  auto block = json_extract::first_balanced_object(text);
  if (!block) throw DialogueError(ErrorKind::NoJsonFound, "no JSON object in reply");
  auto doc = json_extract::parse_lenient(*block);
  if (doc.is_discarded() || !doc.is_object()) throw DialogueError(ErrorKind::NotFlatObject, "first {...} block is not a JSON object");
  if (doc.empty()) throw DialogueError(ErrorKind::EmptyInstruction, "instruction object is empty");

  std::vector<std::pair<std::uint64_t, std::string>> entries;
  for (const auto& [key, value] : doc.items()) {
    std::string_view k = util::trim(key);
    if (k.empty() || k.size() > 18 || !std::all_of(k.begin(), k.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      throw DialogueError(ErrorKind::NotFlatObject, fmt::format("key '{}' is not a decimal index", key));
    }
    if (!value.is_string()) throw DialogueError(ErrorKind::NotFlatObject, fmt::format("value for '{}' is not a string", key));
    std::string step(util::trim(value.get<std::string>()));
    if (step.empty()) throw DialogueError(ErrorKind::EmptyInstruction, fmt::format("instruction '{}' is empty", key));
    entries.emplace_back(std::stoull(std::string(k)), std::move(step));
  }
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  for (std::size_t i = 1; i < entries.size(); ++i) {
    if (entries[i].first != entries[i - 1].first + 1) {
      throw DialogueError(ErrorKind::NonContiguousIndices,
                          fmt::format("indices jump from {} to {}", entries[i - 1].first, entries[i].first));
    }
  }
  if (entries.front().first != 1) {
    spdlog::info("re-indexing instructions starting at {} to start at 1", entries.front().first);
  }
  std::vector<std::string> steps;
  steps.reserve(entries.size());
  for (auto& [_, step] : entries) steps.push_back(std::move(step));
  return InstructionSet(std::move(steps));
}

bool detect_done(std::string_view message) {
  if (message.find('?') != std::string_view::npos) return false;
  for (std::size_t pos = 0; pos + 4 <= message.size(); ++pos) {
    bool match = true;
    for (std::size_t i = 0; i < 4; ++i) {
      if (std::tolower(static_cast<unsigned char>(message[pos + i])) != "done"[i]) {
        match = false;
        break;
      }
    }
    if (!match) continue;
    bool left = pos == 0 || !is_word_char(message[pos - 1]);
    bool right = pos + 4 == message.size() || !is_word_char(message[pos + 4]);
    if (left && right) return true;
  }
  return false;
}

Verdict review_instructions(const InstructionSet& final_set, const scenario::Scenario& scenario,
                            const sgl::SceneGraph& full_graph, llm::Gateway& gateway, const llm::AgentConfig& config) {
  std::string request = fmt::format("{}{}\n{}{}\n{}{}", mf::kScenario, scenario.description, mf::kInstructions,
                                    final_set.to_json_text(), mf::kCompleteSceneGraph, sgl::serialize_sgl(full_graph));
  std::string reply = gateway.chat(config, {{"user", request}}).response;
  Verdict verdict;
  auto block = json_extract::first_balanced_object(reply);
  auto doc = block ? json_extract::parse_lenient(*block) : nlohmann::ordered_json(nlohmann::ordered_json::value_t::discarded);
  std::string kind;
  if (!doc.is_discarded() && doc.is_object() && doc.contains("verdict") && doc["verdict"].is_string()) {
    kind = doc["verdict"].get<std::string>();
  }
  if (kind == "accept") return verdict;
  if (kind == "revise" && doc.contains("feedback") && doc["feedback"].is_string() &&
      !util::trim(doc["feedback"].get<std::string>()).empty()) {
    verdict.accept = false;
    verdict.feedback = std::string(util::trim(doc["feedback"].get<std::string>()));
    return verdict;
  }
  spdlog::warn("reviewer reply unreadable, treating as accept: {}", reply.substr(0, 120));
  verdict.unparsed = true;
  return verdict;
}

DialogueResult run_dialogue(const sgl::SceneGraph& pruned_graph, const sgl::SceneGraph& full_graph,
                            const scenario::Scenario& scenario, llm::Gateway& gateway, const DialogueConfig& config,
                            const TurnObserver& on_turn) {
  if (pruned_graph.objects.empty()) throw DialogueError(ErrorKind::Precondition, "pruned graph is empty");
  if (config.max_rounds < 1) throw DialogueError(ErrorKind::Precondition, "max_rounds must be at least 1");
  if (config.json_retry_budget < 0) throw DialogueError(ErrorKind::Precondition, "json_retry_budget must be non-negative");

  Session session(gateway, config, on_turn);
  DialogueResult& result = session.result;

  std::vector<llm::ChatMessage> oracle_history{
      {"user", fmt::format("{}{}\n{}{}", mf::kScenario, scenario.description, mf::kSceneGraph,
                           sgl::serialize_sgl(pruned_graph))}};
  InstructionSet current = session.ask_instructions(config.oracle, Role::Oracle, oracle_history);

  std::vector<llm::ChatMessage> humanoid_history{
      {"user", fmt::format("{}{}\n{}\n{}", mf::kScenario, scenario.description, mf::kInitialInstructions, current.numbered())}};

  bool done = false;
  while (result.rounds < config.max_rounds) {
    std::string message = gateway.chat(config.humanoid, humanoid_history).response;
    session.record(Role::Humanoid, message);
    if (detect_done(message)) {
      done = true;
      break;
    }
    humanoid_history.push_back({"assistant", message});
    oracle_history.push_back({"user", message});
    current = session.ask_instructions(config.oracle, Role::Oracle, oracle_history);
    humanoid_history.push_back({"user", fmt::format("{}\n{}", mf::kUpdatedInstructions, current.numbered())});
    ++result.rounds;
  }
  if (!done) {
    result.truncated = true;
    result.warnings.push_back(fmt::format("humanoid did not finish within {} rounds", config.max_rounds));
  }

  result.final_instructions = session.summarize();

  if (config.reviewer_enabled) {
    result.reviewer_used = true;
    Verdict verdict = review_instructions(result.final_instructions, scenario, full_graph, gateway, config.reviewer);
    if (verdict.unparsed) {
      result.warnings.push_back("reviewer reply unreadable; accepted");
      session.record(Role::Reviewer, "accept (unreadable reply)");
    } else if (verdict.accept) {
      session.record(Role::Reviewer, "accept");
    } else {
      session.record(Role::Reviewer, verdict.feedback);
      oracle_history.push_back({"user", fmt::format("{}{}", mf::kReviewerFeedback, verdict.feedback)});
      session.ask_instructions(config.oracle, Role::Oracle, oracle_history);
      result.final_instructions = session.summarize();
      result.revised = true;
    }
  }
  return std::move(result);
}

json to_json(const DialogueTurn& turn) {
  json out = {{"turn_index", turn.turn_index}, {"role", to_string(turn.role)}, {"content", turn.content}, {"failed", turn.failed}};
  out["instructions"] = turn.instructions ? json::parse(turn.instructions->to_json_text()) : json(nullptr);
  return out;
}

InstructionSet instructions_from_json(const json& doc) {
  std::vector<std::pair<std::uint64_t, std::string>> entries;
  for (const auto& [k, v] : doc.items()) entries.emplace_back(std::stoull(k), v.get<std::string>());
  std::sort(entries.begin(), entries.end());
  std::vector<std::string> steps;
  for (auto& [_, s] : entries) steps.push_back(std::move(s));
  return InstructionSet(std::move(steps));
}

DialogueTurn turn_from_json(const json& doc) {
  DialogueTurn turn;
  turn.turn_index = doc.at("turn_index").get<int>();
  turn.role = parse_role(doc.at("role").get<std::string>());
  turn.content = doc.at("content").get<std::string>();
  turn.failed = doc.value("failed", false);
  if (auto it = doc.find("instructions"); it != doc.end() && it->is_object()) turn.instructions = instructions_from_json(*it);
  return turn;
}

}  // namespace sadforge::dialogue
