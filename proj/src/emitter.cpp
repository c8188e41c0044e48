#include "sadforge/emitter.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <tuple>

namespace sadforge::emit {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

constexpr std::string_view kPreamble =
    "You are a robot assistant with situational awareness. You help a person carry out tasks in the environment "
    "described by the scene graph below, one object per obj- statement and one relation per rel- statement. "
    "Answer with short, concrete steps grounded in that environment.";
constexpr std::string_view kPrunePreamble =
    "You are a robot assistant with situational awareness. Scene graphs list objects as obj-<label>-<id>:[attributes]; "
    "and relations as rel-<id>:(<subject>,<predicate>,<object>);.";

std::string system_message(const sgl::SceneGraph& graph) {
  return fmt::format("{}\nScene graph: {}", kPreamble, sgl::serialize_sgl(graph));
}

std::string task_request(const scenario::Scenario& scenario) {
  return fmt::format("{} What should I do, step by step?", scenario.description);
}

InstructSample make_sample(const SadRecord& record, Family family, std::size_t index) {
  InstructSample s;
  s.family = family;
  s.scan_id = record.scan_id;
  s.scenario_index = record.scenario_index;
  s.sample_index = index;
  return s;
}

std::uint64_t record_seed(std::uint64_t seed, const std::string& scan_id, std::size_t scenario_index) {
  return util::fnv1a64(fmt::format("{}\n{}\n{}", seed, scan_id, scenario_index));
}

std::vector<sgl::ObjectId> sample_without_replacement(std::vector<sgl::ObjectId> ids, std::size_t m,
                                                      util::SplitMix64& rng) {
  rng.shuffle(ids);
  ids.resize(std::min(m, ids.size()));
  std::sort(ids.begin(), ids.end());
  return ids;
}

bool has_string(const json& doc, const char* key) {
  auto it = doc.find(key);
  return it != doc.end() && it->is_string();
}

}  // namespace

EmitError::EmitError(ErrorKind kind, std::string message) : Error(std::move(message)), kind_(kind) {}

std::string_view to_string(Family family) {
  switch (family) {
    case Family::Conversation: return "conversation";
    case Family::Steps: return "steps";
    case Family::PruneGraph: return "prune_graph";
    case Family::PruneMembership: return "prune_membership";
  }
  return "steps";
}

std::optional<Family> parse_family(std::string_view name) {
  for (auto f : {Family::Conversation, Family::Steps, Family::PruneGraph, Family::PruneMembership}) {
    if (to_string(f) == name) return f;
  }
  return std::nullopt;
}

json to_json(const SadRecord& record) {
  json transcript = json::array();
  for (const auto& turn : record.transcript) transcript.push_back(dialogue::to_json(turn));
  return {{"scan_id", record.scan_id},
          {"scenario_index", record.scenario_index},
          {"scenario", scenario::to_json(record.scenario)},
          {"pruned_graph", sgl::serialize_sgl(record.pruned_graph)},
          {"full_graph_ref", record.full_graph_ref},
          {"transcript", transcript},
          {"final_instructions", json::parse(record.final_instructions.to_json_text())},
          {"flags",
           {{"truncated", record.truncated},
            {"reviewer_used", record.reviewer_used},
            {"revised", record.revised},
            {"failed", record.failed}}},
          {"failure", record.failure}};
}

SadRecord record_from_json(const json& doc) {
  SadRecord r;
  r.scan_id = doc.at("scan_id").get<std::string>();
  r.scenario_index = doc.at("scenario_index").get<std::size_t>();
  r.scenario = scenario::scenario_from_json(doc.at("scenario"));
  r.pruned_graph = sgl::parse_sgl(doc.at("pruned_graph").get<std::string>());
  r.full_graph_ref = doc.value("full_graph_ref", "");
  for (const auto& t : doc.at("transcript")) r.transcript.push_back(dialogue::turn_from_json(t));
  r.final_instructions = dialogue::instructions_from_json(doc.at("final_instructions"));
  const auto& flags = doc.at("flags");
  r.truncated = flags.value("truncated", false);
  r.reviewer_used = flags.value("reviewer_used", false);
  r.revised = flags.value("revised", false);
  r.failed = flags.value("failed", false);
  r.failure = doc.value("failure", "");
  return r;
}

ordered_json InstructSample::to_json() const {
  ordered_json msgs = ordered_json::array();
  for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
  ordered_json meta = {{"scan_id", scan_id}, {"scenario_index", scenario_index}, {"sample_index", sample_index}};
  if (object_id) meta["object_id"] = *object_id;
  if (positive) meta["polarity"] = *positive ? "positive" : "negative";
  return {{"messages", msgs}, {"family", emit::to_string(family)}, {"meta", meta}};
}

std::vector<std::string> validate_sample_json(const json& line) {
  std::vector<std::string> problems;
  if (!line.is_object()) return {"line is not a JSON object"};
  auto msgs = line.find("messages");
  if (msgs == line.end() || !msgs->is_array() || msgs->size() < 3) {
    problems.push_back("messages must be an array of at least three entries");
  } else {
    for (std::size_t i = 0; i < msgs->size(); ++i) {
      const auto& m = (*msgs)[i];
      if (!m.is_object() || !has_string(m, "role") || !has_string(m, "content")) {
        problems.push_back(fmt::format("message {} lacks string role/content", i));
        continue;
      }
      std::string expected = i == 0 ? "system" : (i % 2 == 1 ? "user" : "assistant");
      if (m["role"] != expected) problems.push_back(fmt::format("message {} has role {}, expected {}", i, m["role"].dump(), expected));
      const auto& content = m["content"].get_ref<const std::string&>();
      if (std::all_of(content.begin(), content.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); })) {
        problems.push_back(fmt::format("message {} has empty content", i));
      }
    }
    if (msgs->size() % 2 == 0) problems.push_back("last message must come from the assistant");
  }
  std::optional<Family> family;
  if (has_string(line, "family")) family = parse_family(line["family"].get<std::string>());
  if (!family) problems.push_back("family missing or unknown");
  auto meta = line.find("meta");
  if (meta == line.end() || !meta->is_object()) {
    problems.push_back("meta missing");
  } else {
    if (!has_string(*meta, "scan_id") || (*meta)["scan_id"].get<std::string>().empty()) problems.push_back("meta.scan_id missing");
    for (const char* key : {"scenario_index", "sample_index"}) {
      if (!meta->contains(key) || !(*meta)[key].is_number_unsigned()) problems.push_back(fmt::format("meta.{} missing", key));
    }
    if (family == Family::PruneMembership) {
      bool polarity_ok = has_string(*meta, "polarity") &&
                         ((*meta)["polarity"] == "positive" || (*meta)["polarity"] == "negative");
      if (!polarity_ok) problems.push_back("meta.polarity missing");
      if (!meta->contains("object_id") || !(*meta)["object_id"].is_number_unsigned()) problems.push_back("meta.object_id missing");
    }
  }
  return problems;
}

InstructSample sample_from_json(const json& line) {
  auto problems = validate_sample_json(line);
  if (!problems.empty()) throw EmitError(ErrorKind::Precondition, fmt::format("invalid sample: {}", problems.front()));
  InstructSample s;
  for (const auto& m : line["messages"]) s.messages.push_back({m["role"].get<std::string>(), m["content"].get<std::string>()});
  s.family = *parse_family(line["family"].get<std::string>());
  const auto& meta = line["meta"];
  s.scan_id = meta["scan_id"].get<std::string>();
  s.scenario_index = meta["scenario_index"].get<std::size_t>();
  s.sample_index = meta["sample_index"].get<std::size_t>();
  if (meta.contains("object_id")) s.object_id = meta["object_id"].get<sgl::ObjectId>();
  if (meta.contains("polarity")) s.positive = meta["polarity"] == "positive";
  return s;
}

std::string render_steps(const dialogue::InstructionSet& steps) { return steps.numbered(); }

std::vector<InstructSample> emit_conversation_samples(const SadRecord& record) {
  std::vector<const dialogue::DialogueTurn*> oracle;
  std::vector<const dialogue::DialogueTurn*> questions;
  for (const auto& turn : record.transcript) {
    if (turn.failed) continue;
    if (turn.role == dialogue::Role::Oracle && turn.instructions) oracle.push_back(&turn);
    if (turn.role == dialogue::Role::Humanoid && !dialogue::detect_done(turn.content)) questions.push_back(&turn);
  }
  if (oracle.empty()) {
    throw EmitError(ErrorKind::EmptyTranscript,
                    fmt::format("scan '{}' scenario {} has no oracle turn", record.scan_id, record.scenario_index));
  }
  // A reviewer revision adds an Oracle turn that answers feedback, not a question.
  std::size_t rounds = std::min(questions.size(), oracle.size() - 1);

  InstructSample s = make_sample(record, Family::Conversation, 0);
  s.messages.push_back({"system", system_message(record.pruned_graph)});
  s.messages.push_back({"user", task_request(record.scenario)});
  for (std::size_t i = 0; i < rounds; ++i) {
    s.messages.push_back({"assistant", oracle[i]->instructions->numbered()});
    s.messages.push_back({"user", questions[i]->content});
  }
  s.messages.push_back({"assistant", render_steps(record.final_instructions)});
  return {std::move(s)};
}

std::vector<InstructSample> emit_step_samples(const SadRecord& record) {
  if (record.final_instructions.empty()) {
    throw EmitError(ErrorKind::Precondition,
                    fmt::format("scan '{}' scenario {} has no final instructions", record.scan_id, record.scenario_index));
  }
  InstructSample s = make_sample(record, Family::Steps, 0);
  s.messages = {{"system", system_message(record.pruned_graph)},
                {"user", task_request(record.scenario)},
                {"assistant", render_steps(record.final_instructions)}};
  return {std::move(s)};
}

std::vector<InstructSample> emit_pruning_samples(const SadRecord& record, const sgl::SceneGraph& full_graph,
                                                 util::SplitMix64& rng, std::size_t membership_cap) {
  std::vector<sgl::ObjectId> kept;
  std::vector<sgl::ObjectId> dropped;
  for (const auto& obj : record.pruned_graph.objects) {
    if (full_graph.find_object(obj.id) == nullptr) {
      throw EmitError(ErrorKind::Precondition,
                      fmt::format("scan '{}': pruned object {} missing from the full graph", record.scan_id, obj.id));
    }
  }
  for (const auto& obj : full_graph.objects) {
    (record.pruned_graph.find_object(obj.id) ? kept : dropped).push_back(obj.id);
  }

  std::vector<InstructSample> out;
  InstructSample whole = make_sample(record, Family::PruneGraph, 0);
  whole.messages = {
      {"system", std::string(kPrunePreamble)},
      {"user", fmt::format("Prune the scene graph to get only the objects and relations needed for this scenario: {}\n"
                           "Scene graph: {}",
                           record.scenario.description, sgl::serialize_sgl(full_graph))},
      {"assistant", sgl::serialize_sgl(record.pruned_graph)}};
  out.push_back(std::move(whole));

  auto positives = sample_without_replacement(kept, membership_cap, rng);
  auto negatives = sample_without_replacement(dropped, membership_cap, rng);
  std::string system = fmt::format("{}\nScene graph: {}", kPreamble, sgl::serialize_sgl(full_graph));
  std::size_t index = 0;
  auto ask = [&](sgl::ObjectId id, bool positive) {
    const auto* obj = full_graph.find_object(id);
    InstructSample s = make_sample(record, Family::PruneMembership, index++);
    s.object_id = id;
    s.positive = positive;
    std::string answer = positive
                             ? fmt::format("Yes, the {} ({}) is needed for this scenario.", obj->label, obj->ref())
                             : fmt::format("No, the {} ({}) is not needed for this scenario.", obj->label, obj->ref());
    s.messages = {{"system", system},
                  {"user", fmt::format("{} Do I need the object {}?", record.scenario.description, obj->ref())},
                  {"assistant", std::move(answer)}};
    out.push_back(std::move(s));
  };
  for (auto id : positives) ask(id, true);
  for (auto id : negatives) ask(id, false);
  return out;
}

std::optional<std::string> SplitManifest::split_of(const std::string& scan_id) const {
  if (std::binary_search(train_scan_ids.begin(), train_scan_ids.end(), scan_id)) return "train";
  if (std::binary_search(test_scan_ids.begin(), test_scan_ids.end(), scan_id)) return "test";
  return std::nullopt;
}

ordered_json to_json(const SplitManifest& manifest) {
  return {{"seed", manifest.seed},
          {"ratio", manifest.ratio},
          {"train_scan_ids", manifest.train_scan_ids},
          {"test_scan_ids", manifest.test_scan_ids}};
}

SplitManifest split_manifest_from_json(const json& doc) {
  SplitManifest m;
  m.seed = doc.at("seed").get<std::uint64_t>();
  m.ratio = doc.at("ratio").get<double>();
  m.train_scan_ids = doc.at("train_scan_ids").get<std::vector<std::string>>();
  m.test_scan_ids = doc.at("test_scan_ids").get<std::vector<std::string>>();
  std::sort(m.train_scan_ids.begin(), m.train_scan_ids.end());
  std::sort(m.test_scan_ids.begin(), m.test_scan_ids.end());
  return m;
}

SplitManifest split(std::vector<std::string> scan_ids, double ratio, std::uint64_t seed) {
  if (scan_ids.empty()) throw EmitError(ErrorKind::EmptyInput, "no scans to split");
  if (!(ratio > 0.0 && ratio < 1.0)) throw EmitError(ErrorKind::InvalidRatio, fmt::format("ratio {} not in (0, 1)", ratio));
  std::sort(scan_ids.begin(), scan_ids.end());
  if (auto dup = std::adjacent_find(scan_ids.begin(), scan_ids.end()); dup != scan_ids.end()) {
    throw EmitError(ErrorKind::DuplicateScanId, fmt::format("scan id '{}' listed twice", *dup));
  }
  util::SplitMix64 rng(seed);
  rng.shuffle(scan_ids);
  // The epsilon keeps ratios such as 0.8 from losing a scan to binary rounding.
  auto n_train = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(scan_ids.size()) + 1e-9));
  SplitManifest m;
  m.seed = seed;
  m.ratio = ratio;
  m.train_scan_ids.assign(scan_ids.begin(), scan_ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  m.test_scan_ids.assign(scan_ids.begin() + static_cast<std::ptrdiff_t>(n_train), scan_ids.end());
  std::sort(m.train_scan_ids.begin(), m.train_scan_ids.end());
  std::sort(m.test_scan_ids.begin(), m.test_scan_ids.end());
  return m;
}

std::size_t count_tokens(std::string_view text) {
  std::size_t count = 0;
  bool in_token = false;
  for (char c : text) {
    bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
    if (!space && !in_token) ++count;
    in_token = !space;
  }
  return count;
}

ordered_json to_json(const DatasetStats& stats) {
  auto row = [](const StatsRow& r) {
    return ordered_json{{"scans", r.scans},
                        {"scenarios", r.scenarios},
                        {"task_steps", r.task_steps},
                        {"input_tokens", r.input_tokens},
                        {"output_tokens", r.output_tokens},
                        {"total_tokens", r.total_tokens}};
  };
  return {{"train", row(stats.train)}, {"test", row(stats.test)}, {"total", row(stats.total)}};
}

DatasetStats compute_stats(const std::vector<InstructSample>& samples, const std::vector<SadRecord>& records,
                           const SplitManifest& manifest, const TokenCounter& counter) {
  DatasetStats stats;
  stats.train.scans = manifest.train_scan_ids.size();
  stats.test.scans = manifest.test_scan_ids.size();
  auto row_for = [&](const std::string& scan_id) -> StatsRow& {
    auto split_name = manifest.split_of(scan_id);
    if (!split_name) throw EmitError(ErrorKind::UnknownScan, fmt::format("scan '{}' is not in the split manifest", scan_id));
    return *split_name == "train" ? stats.train : stats.test;
  };

  std::set<std::pair<std::string, std::size_t>> scenarios;
  for (const auto& s : samples) {
    StatsRow& row = row_for(s.scan_id);
    if (scenarios.emplace(s.scan_id, s.scenario_index).second) ++row.scenarios;
    for (const auto& m : s.messages) {
      (m.role == "assistant" ? row.output_tokens : row.input_tokens) += counter(m.content);
    }
  }
  for (const auto& r : records) {
    if (!r.failed) row_for(r.scan_id).task_steps += r.final_instructions.size();
  }
  for (StatsRow* row : {&stats.train, &stats.test}) {
    row->total_tokens = row->input_tokens + row->output_tokens;
    stats.total.scans += row->scans;
    stats.total.scenarios += row->scenarios;
    stats.total.task_steps += row->task_steps;
    stats.total.input_tokens += row->input_tokens;
    stats.total.output_tokens += row->output_tokens;
    stats.total.total_tokens += row->total_tokens;
  }
  return stats;
}

ordered_json emit_training_manifest(const json& overrides, const std::string& train_file, const std::string& test_file) {
  ordered_json manifest = {{"base_model", "llama-3-8b-instruct"},
                           {"adapter", "lora"},
                           {"lora_rank", 64},
                           {"lora_alpha", 32},
                           {"lora_dropout", 0.05},
                           {"quantization", "4-bit"},
                           {"learning_rate", 2e-4},
                           {"sequence_length", 8192},
                           {"epochs", 10},
                           {"warmup_steps", 10},
                           {"optimizer", "paged-adamw"},
                           {"train_file", train_file},
                           {"test_file", test_file}};
  if (!overrides.is_null() && !overrides.is_object()) {
    throw ConfigError("training manifest overrides must be a JSON object");
  }
  if (overrides.is_object()) {
    for (const auto& [key, value] : overrides.items()) manifest[key] = value;
  }
  return manifest;
}

Dataset build_dataset(const std::vector<SadRecord>& records, const std::map<std::string, sgl::SceneGraph>& full_graphs,
                      const SplitManifest& manifest, std::uint64_t seed, std::size_t membership_cap) {
  Dataset data;
  for (const auto& record : records) {
    if (record.failed) {
      ++data.skipped_records;
      continue;
    }
    auto split_name = manifest.split_of(record.scan_id);
    if (!split_name) {
      throw EmitError(ErrorKind::UnknownScan, fmt::format("scan '{}' is not in the split manifest", record.scan_id));
    }
    auto full = full_graphs.find(record.scan_id);
    if (full == full_graphs.end()) {
      throw EmitError(ErrorKind::Precondition, fmt::format("no full graph for scan '{}'", record.scan_id));
    }
    auto& target = *split_name == "train" ? data.train : data.test;
    util::SplitMix64 rng(record_seed(seed, record.scan_id, record.scenario_index));
    for (auto& s : emit_conversation_samples(record)) target.push_back(std::move(s));
    for (auto& s : emit_step_samples(record)) target.push_back(std::move(s));
    for (auto& s : emit_pruning_samples(record, full->second, rng, membership_cap)) target.push_back(std::move(s));
  }
  auto key = [](const InstructSample& s) {
    return std::tuple<std::string_view, std::size_t, int, std::size_t>(s.scan_id, s.scenario_index,
                                                                       static_cast<int>(s.family), s.sample_index);
  };
  for (auto* list : {&data.train, &data.test}) {
    std::sort(list->begin(), list->end(), [&](const auto& a, const auto& b) { return key(a) < key(b); });
  }
  if (data.skipped_records > 0) spdlog::info("skipped {} failed record(s)", data.skipped_records);
  return data;
}

std::string to_jsonl(const std::vector<InstructSample>& samples) {
  std::string out;
  for (const auto& s : samples) {
    out += s.to_json().dump();
    out += '\n';
  }
  return out;
}

}  // namespace sadforge::emit
