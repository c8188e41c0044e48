#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <csignal>
#include <pthread.h>
#include <thread>

#include "sadforge/pipeline.hpp"
#include "sadforge/review_service.hpp"

namespace sadforge::pipeline {
namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;
constexpr int kExitGate = 4;

struct Flags {
  std::string config;
  std::string workspace;
  std::optional<std::uint64_t> seed;
  std::string mode;
  std::optional<int> parallelism;
  bool resume = true;
  bool reviewer = false;
  std::string log_level = "info";
  std::string host;
  std::optional<int> port;
  std::string static_dir;
  std::string token;
};

PipelineConfig make_config(const Flags& flags) {
  PipelineConfig config = flags.config.empty()
                              ? parse_config(nlohmann::json::object(), std::filesystem::current_path())
                              : load_config(flags.config);
  if (!flags.workspace.empty()) config.workspace = std::filesystem::absolute(flags.workspace);
  if (flags.seed) config.seed = flags.seed;
  if (!flags.mode.empty()) config.review.mode = pruning::parse_review_mode(flags.mode);
  if (flags.parallelism) config.parallelism = *flags.parallelism;
  if (flags.reviewer) config.reviewer_enabled = true;
  if (!flags.host.empty()) config.review.host = flags.host;
  if (flags.port) config.review.port = *flags.port;
  if (!flags.static_dir.empty()) config.review.static_dir = std::filesystem::absolute(flags.static_dir);
  if (!flags.token.empty()) config.review.token = flags.token;
  return config;
}

void print_report(const StageReport& r) {
  fmt::print("{:<14} ran {:>4}  skipped {:>4}  failed {:>4}  pending {:>4}\n", r.stage, r.ran, r.skipped, r.failed,
             r.pending);
}

void print_status(const std::vector<StatusRow>& rows) {
  fmt::print("{:<14} {:>6} {:>7} {:>8}  {}\n", "stage", "done", "failed", "pending", "state");
  for (const auto& row : rows) {
    fmt::print("{:<14} {:>6} {:>7} {:>8}  {}\n", row.stage, row.done, row.failed, row.pending, row.state);
  }
}

int serve(const PipelineConfig& config) {
  if (config.workspace.empty()) throw ConfigError("review-serve needs a workspace");
  // SIGINT/SIGTERM are consumed by a waiter thread so the server can shut
  // down cleanly instead of from inside a signal handler.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  ReviewService service(Workspace(config.workspace), config.review);
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    spdlog::info("signal {} received, stopping", sig);
    service.stop();
  });
  bool ok = service.listen(config.review.host, config.review.port);
  if (!ok) {
    spdlog::error("cannot listen on {}:{}", config.review.host, config.review.port);
    pthread_kill(waiter.native_handle(), SIGTERM);
  }
  waiter.join();
  return ok ? kExitOk : kExitConfig;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Builds situational-awareness instruction datasets from scene graph catalogs."};
  app.fallthrough();
  app.require_subcommand(1);

  Flags flags;
  app.add_option("--config", flags.config, "Pipeline config (JSON)");
  app.add_option("--workspace", flags.workspace, "Workspace directory");
  app.add_option("--seed", flags.seed, "Seed for every randomized step");
  app.add_option("--mode", flags.mode, "Review mode")->check(CLI::IsMember({"auto", "cli", "interactive-cli", "web"}));
  app.add_option("--parallelism", flags.parallelism, "Concurrent units per stage")->check(CLI::PositiveNumber);
  app.add_flag("--resume,!--fresh", flags.resume, "Skip units whose artifacts are current (default) or redo all");
  app.add_flag("--reviewer", flags.reviewer, "Enable the reviewer pass in the dialogue stage");
  app.add_option("--log-level", flags.log_level, "trace|debug|info|warn|error|off");

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"ingest", "Load the scan catalog into the workspace"},
      {"scenarios", "Generate and select scenarios per scan"},
      {"prune-propose", "Propose an object subset per scenario"},
      {"review", "Decide pending proposals (auto or interactive mode)"},
      {"review-serve", "Serve the review HTTP API"},
      {"prune-apply", "Prune graphs according to review decisions"},
      {"dialogue", "Run the instruction dialogues"},
      {"split", "Assign scans to train and test"},
      {"emit", "Write the instruction-tuning JSONL files"},
      {"stats", "Compute dataset statistics"},
      {"run-all", "Run every stage in order"},
      {"status", "Show per-stage progress"},
  };
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, help] : commands) subs[name] = app.add_subcommand(name, help);
  auto* serve_cmd = subs["review-serve"];
  serve_cmd->add_option("--host", flags.host, "Bind address");
  serve_cmd->add_option("--port", flags.port, "Port");
  serve_cmd->add_option("--static-dir", flags.static_dir, "Built review UI assets");
  serve_cmd->add_option("--token", flags.token, "Bearer token required on /api routes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  spdlog::drop("sadforge");
  auto logger = spdlog::stderr_color_mt("sadforge");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::from_str(flags.log_level));

  std::string command;
  for (const auto& [name, sub] : subs) {
    if (sub->parsed()) command = name;
  }

  try {
    if (command == "status") {
      std::string ws = flags.workspace;
      if (ws.empty() && !flags.config.empty()) ws = load_config(flags.config).workspace.string();
      if (ws.empty()) throw ConfigError("status needs --workspace or --config");
      print_status(workspace_status(Workspace(ws)));
      return kExitOk;
    }
    PipelineConfig config = make_config(flags);
    if (command == "review-serve") return serve(config);

    Pipeline pipeline(config, RunOptions{!flags.resume});
    std::vector<StageReport> reports;
    bool paused = false;
    if (command == "ingest") reports.push_back(pipeline.ingest());
    else if (command == "scenarios") reports.push_back(pipeline.scenarios());
    else if (command == "prune-propose") reports.push_back(pipeline.prune_propose());
    else if (command == "review") reports.push_back(pipeline.review());
    else if (command == "prune-apply") reports.push_back(pipeline.prune_apply());
    else if (command == "dialogue") reports.push_back(pipeline.dialogue());
    else if (command == "split") reports.push_back(pipeline.split());
    else if (command == "emit") reports.push_back(pipeline.emit());
    else if (command == "stats") reports.push_back(pipeline.stats());
    else if (command == "run-all") reports = pipeline.run_all(&paused);

    bool failed = false;
    for (const auto& r : reports) {
      print_report(r);
      failed = failed || r.failed > 0;
    }
    if (paused) fmt::print("paused: decide the pending items (review-serve or review --mode cli), then re-run\n");
    return failed ? kExitStage : kExitOk;
  } catch (const ConfigError& e) {
    spdlog::error("config: {}", e.what());
    return kExitConfig;
  } catch (const GateError& e) {
    spdlog::error("{}", e.what());
    return kExitGate;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitStage;
  }
}

}  // namespace sadforge::pipeline
