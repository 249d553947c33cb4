#include "dialnav/commands.hpp"

#include <algorithm>
#include <csignal>
#include <fstream>
#include <iostream>
#include <memory>
#include <thread>

#include <pthread.h>

#include <CLI11.hpp>
#include <json.hpp>

#include "dialnav/benchmark.hpp"
#include "dialnav/error.hpp"
#include "dialnav/server.hpp"

namespace dialnav {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

void error_record(std::ostream& err, std::string_view code, std::string_view message, std::string_view locus = {}) {
  json j{{"error", code}, {"message", message}};
  if (!locus.empty()) j["locus"] = locus;
  err << j.dump(-1, ' ', false, json::error_handler_t::replace) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io, "cannot open file", path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(Errc::malformed, std::string("syntax error: ") + e.what(), path.string());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io, "cannot write file", path.string());
  out << text;
}

std::vector<Split> parse_splits(const std::vector<std::string>& names) {
  if (names.empty()) return {kAllSplits.begin(), kAllSplits.end()};
  std::vector<Split> out;
  for (const auto& n : names) {
    auto s = parse_split(n);
    if (!s) throw Error(Errc::invalid_argument, "unknown split '" + n + "'");
    out.push_back(*s);
  }
  return out;
}

std::vector<Episode> filter(const std::vector<Episode>& episodes, const std::vector<Split>& splits) {
  std::vector<Episode> out;
  for (const auto& e : episodes) {
    if (std::find(splits.begin(), splits.end(), e.split) != splits.end()) out.push_back(e);
  }
  return out;
}

ValidationMode parse_mode(const std::string& mode) {
  if (mode == "strict") return ValidationMode::strict;
  if (mode == "lenient") return ValidationMode::lenient;
  throw Error(Errc::invalid_argument, "mode must be strict or lenient");
}

std::string file_key(std::string key) {
  for (char& c : key) {
    if (c == '/' || c == '\\' || c == '#' || c == ' ') c = '_';
  }
  return key;
}

// -- subcommands ------------------------------------------------------------

struct RunArgs {
  std::string config;
  std::optional<int> jobs;
  std::optional<std::string> output;
};

int cmd_run(const RunArgs& a, std::ostream& out) {
  RunConfig config = load_run_config(a.config);
  if (a.jobs) config.jobs = *a.jobs;
  if (a.output) config.output_dir = *a.output;
  config.validate();
  const BenchmarkResult result = run_benchmark(config);
  std::ifstream summary(config.output_dir / "summary.csv");
  out << summary.rdbuf();
  return kExitOk;
}

struct SweepArgs {
  std::string config;
  std::string spec;
  std::optional<std::string> output;
  std::optional<int> jobs;
};

int cmd_sweep(const SweepArgs& a, std::ostream& out) {
  RunConfig config = load_run_config(a.config);
  if (a.jobs) config.jobs = *a.jobs;
  const SweepSpec spec = sweep_spec_from_json(read_json(a.spec));
  const LoadedDataset data = load_validated_dataset(config.manifest, config.validation);
  const auto tasks = make_tasks(data.episodes, *data.graphs, config);
  const std::string csv = sweep_csv(sweep_wta(spec, config, tasks));
  if (a.output) write_text(*a.output, csv);
  out << csv;
  return kExitOk;
}

struct StatsArgs {
  std::string manifest;
  std::vector<std::string> splits;
  bool as_json = false;
  std::optional<std::string> output;
};

int cmd_stats(const StatsArgs& a, std::ostream& out) {
  const LoadedDataset data = load_validated_dataset(a.manifest, ValidationMode::lenient);
  const auto episodes = filter(data.episodes, parse_splits(a.splits));
  if (episodes.empty()) throw Error(Errc::invalid_argument, "no episodes in the selected splits");
  const StatsReport report = compute_statistics(episodes, *data.graphs);
  const SplitTable table = split_table(episodes);
  std::string text;
  if (a.as_json) {
    text = json{{"statistics", to_json(report)}, {"splits", to_json(table)}}.dump(2) + "\n";
  } else {
    text = render_text(report);
    text += "segments: " + std::to_string(table.total.segments) + " (" + std::to_string(table.total.with_dialog) +
            " with dialog)\n";
    for (const auto& [split, c] : table.by_split) {
      text += "  " + std::string(split_name(split)) + ": " + std::to_string(c.segments) + " / " +
              std::to_string(c.with_dialog) + "\n";
    }
  }
  if (a.output) write_text(*a.output, text);
  out << text;
  return kExitOk;
}

struct ValidateArgs {
  std::string manifest;
  std::string mode = "strict";
};

int cmd_validate(const ValidateArgs& a, std::ostream& out) {
  const LoadedDataset data = load_dataset(load_manifest(a.manifest), parse_mode(a.mode));
  std::size_t warnings = 0;
  for (const Issue& i : data.issues) {
    if (!i.fatal) ++warnings;
    out << json{{"severity", i.fatal ? "error" : "warning"}, {"code", i.code}, {"message", i.message}, {"locus", i.locus}}
               .dump()
        << '\n';
  }
  const std::size_t errors = data.error_count();
  out << json{{"episodes", data.episodes.size()}, {"errors", errors}, {"warnings", warnings}, {"mode", a.mode}}.dump()
      << '\n';
  return errors == 0 ? kExitOk : kExitFailure;
}

struct SegmentsArgs {
  std::string manifest;
  std::string output;
  std::vector<std::string> splits;
};

int cmd_segments(const SegmentsArgs& a, std::ostream& out) {
  const LoadedDataset data = load_validated_dataset(a.manifest, ValidationMode::lenient);
  std::size_t total = 0, with_dialog = 0;
  for (const Episode& e : filter(data.episodes, parse_splits(a.splits))) {
    for (const SegmentInstance& s : to_segments(e)) {
      const fs::path file = fs::path(a.output) / std::string(split_name(s.split)) /
                            (file_key(s.episode_id) + "_" + std::to_string(s.segment_index) + ".json");
      write_text(file, serialize_segment(s).dump(2) + "\n");
      ++total;
      with_dialog += s.has_dialog ? 1 : 0;
    }
  }
  out << json{{"segments", total}, {"with_dialog", with_dialog}, {"output", a.output}}.dump() << '\n';
  return kExitOk;
}

struct ReplayArgs {
  std::string log;
  std::optional<std::string> graph_dir;
  std::optional<std::string> manifest;
};

int cmd_replay(const ReplayArgs& a, std::ostream& out) {
  fs::path graphs_dir;
  if (a.graph_dir) {
    graphs_dir = *a.graph_dir;
  } else if (a.manifest) {
    graphs_dir = load_manifest(*a.manifest).graph_dir;
  } else {
    throw Error(Errc::invalid_argument, "replay needs --graph-dir or --manifest");
  }
  std::ifstream in(a.log);
  if (!in) throw Error(Errc::io, "cannot open event log", a.log);
  const GraphStore graphs(graphs_dir);
  const EpisodeState state = replay_events(read_event_log(in), graphs);
  if (state.phase != Phase::terminal) {
    throw Error(Errc::malformed, "event log ends before the episode terminates", a.log);
  }
  const EpisodeOutcome outcome = finalize(state);
  out << json{{"outcome", to_json(outcome)}, {"report", to_json(score_episode(outcome, state.graph()))}}.dump(2)
      << '\n';
  return kExitOk;
}

struct ServeArgs {
  std::string listen = "127.0.0.1:7777";
  std::string manifest;
  std::optional<std::string> engine_config;
  std::optional<std::string> wta_config;
  double timeout = 120.0;
  std::optional<std::string> static_dir;
  std::string navigator;
  std::string guide;
  std::optional<std::string> log_dir;
  std::vector<std::string> splits;
  std::string unit = "episode";
  int threads = 2;
  double max_seconds = 0.0;
};

int cmd_serve(const ServeArgs& a, std::ostream& out) {
  const auto colon = a.listen.rfind(':');
  if (colon == std::string::npos) throw Error(Errc::invalid_argument, "listen address must be host:port");
  ServeOptions options;
  options.address = a.listen.substr(0, colon);
  try {
    const int port = std::stoi(a.listen.substr(colon + 1));
    if (port < 0 || port > 65535) throw std::out_of_range("port");
    options.port = static_cast<unsigned short>(port);
  } catch (const std::exception&) {
    throw Error(Errc::invalid_argument, "bad port in listen address '" + a.listen + "'");
  }
  if (a.timeout <= 0) throw Error(Errc::invalid_argument, "timeout must be positive");
  options.threads = a.threads;
  if (a.static_dir) options.static_dir = *a.static_dir;

  ServerConfig sc;
  if (a.engine_config) sc.host.engine = engine_config_from_json(read_json(*a.engine_config));
  if (a.wta_config) sc.host.wta = wta_config_from_json(read_json(*a.wta_config));
  sc.host.builtin_navigator = a.navigator;
  sc.host.builtin_guide = a.guide;
  sc.host.turn_timeout = std::chrono::milliseconds(static_cast<long long>(a.timeout * 1000.0));
  if (a.log_dir) sc.host.log_dir = *a.log_dir;
  sc.host.validate();

  RunConfig rc;
  rc.manifest = a.manifest;
  rc.splits = parse_splits(a.splits);
  if (a.unit == "segment") {
    rc.unit = TaskUnit::segment;
  } else if (a.unit != "episode") {
    throw Error(Errc::invalid_argument, "unit must be episode or segment");
  }
  auto data = std::make_shared<LoadedDataset>(load_validated_dataset(rc.manifest, ValidationMode::lenient));
  std::vector<Task> queue;
  for (const BenchTask& t : make_tasks(data->episodes, *data->graphs, rc)) queue.push_back(t.task);
  options.graphs = data->graphs;

  // Workers inherit the blocked mask; only this thread takes the signal.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  auto core = std::make_shared<ServerCore>(sc, std::move(queue));
  Server server(options, core);
  const unsigned short port = server.start();
  out << json{{"listening", options.address + ":" + std::to_string(port)}, {"episodes", core->pending_tasks()}}.dump()
      << std::endl;

  if (a.max_seconds > 0) {
    timespec limit{};
    limit.tv_sec = static_cast<time_t>(a.max_seconds);
    limit.tv_nsec = static_cast<long>((a.max_seconds - static_cast<double>(limit.tv_sec)) * 1e9);
    sigtimedwait(&signals, nullptr, &limit);
  } else {
    int sig = 0;
    sigwait(&signals, &sig);
  }
  server.stop();
  pthread_sigmask(SIG_UNBLOCK, &signals, nullptr);
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dialog-guided navigation benchmark and game server", "dialnav"};
  app.require_subcommand(1);

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "Run a benchmark from a run config");
  run_cmd->add_option("--config", run.config, "Run config file")->required();
  run_cmd->add_option("--jobs", run.jobs, "Worker threads");
  run_cmd->add_option("--output", run.output, "Output directory (overrides the config)");

  SweepArgs sweep;
  auto* sweep_cmd = app.add_subcommand("sweep", "Sweep an ask strategy parameter");
  sweep_cmd->add_option("--config", sweep.config, "Run config file")->required();
  sweep_cmd->add_option("--spec", sweep.spec, "Sweep spec file")->required();
  sweep_cmd->add_option("--output", sweep.output, "Write the sweep CSV here");
  sweep_cmd->add_option("--jobs", sweep.jobs, "Worker threads");

  StatsArgs stats;
  auto* stats_cmd = app.add_subcommand("stats", "Dataset statistics");
  stats_cmd->add_option("--manifest", stats.manifest, "Dataset manifest")->required();
  stats_cmd->add_option("--split", stats.splits, "Restrict to split (repeatable)");
  stats_cmd->add_flag("--json", stats.as_json, "Emit JSON");
  stats_cmd->add_option("--output", stats.output, "Also write the report here");

  ValidateArgs validate;
  auto* validate_cmd = app.add_subcommand("validate", "Validate a dataset");
  validate_cmd->add_option("--manifest", validate.manifest, "Dataset manifest")->required();
  validate_cmd->add_option("--mode", validate.mode, "strict or lenient")->check(CLI::IsMember({"strict", "lenient"}));

  SegmentsArgs segments;
  auto* segments_cmd = app.add_subcommand("segments", "Write one file per segment instance");
  segments_cmd->add_option("--manifest", segments.manifest, "Dataset manifest")->required();
  segments_cmd->add_option("--output", segments.output, "Output directory")->required();
  segments_cmd->add_option("--split", segments.splits, "Restrict to split (repeatable)");

  ReplayArgs replay;
  auto* replay_cmd = app.add_subcommand("replay", "Re-drive an event log and score it");
  replay_cmd->add_option("--log", replay.log, "Event log (JSONL)")->required();
  replay_cmd->add_option("--graph-dir", replay.graph_dir, "Directory of <scan_id>.json graphs");
  replay_cmd->add_option("--manifest", replay.manifest, "Take the graph directory from a manifest");

  ServeArgs serve;
  auto* serve_cmd = app.add_subcommand("serve", "Host networked episodes");
  serve_cmd->add_option("--listen", serve.listen, "host:port (port 0 picks one)");
  serve_cmd->add_option("--manifest", serve.manifest, "Dataset manifest")->required();
  serve_cmd->add_option("--engine-config", serve.engine_config, "Engine config file");
  serve_cmd->add_option("--wta-config", serve.wta_config, "Ask strategy for the built-in navigator");
  serve_cmd->add_option("--timeout", serve.timeout, "Turn timeout in seconds");
  serve_cmd->add_option("--static-dir", serve.static_dir, "Directory of web assets");
  serve_cmd->add_option("--navigator", serve.navigator, "Built-in navigator: oracle or random")
      ->check(CLI::IsMember({"oracle", "random"}));
  serve_cmd->add_option("--guide", serve.guide, "Built-in guide: template or random")
      ->check(CLI::IsMember({"template", "random"}));
  serve_cmd->add_option("--log-dir", serve.log_dir, "Write each finished episode's event log here");
  serve_cmd->add_option("--split", serve.splits, "Restrict to split (repeatable)");
  serve_cmd->add_option("--unit", serve.unit, "episode or segment")->check(CLI::IsMember({"episode", "segment"}));
  serve_cmd->add_option("--threads", serve.threads, "I/O threads");
  serve_cmd->add_option("--max-seconds", serve.max_seconds, "Stop after this many seconds (0 = until signalled)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    error_record(err, "usage", e.what());
    return kExitUsage;
  }

  try {
    if (*run_cmd) return cmd_run(run, out);
    if (*sweep_cmd) return cmd_sweep(sweep, out);
    if (*stats_cmd) return cmd_stats(stats, out);
    if (*validate_cmd) return cmd_validate(validate, out);
    if (*segments_cmd) return cmd_segments(segments, out);
    if (*replay_cmd) return cmd_replay(replay, out);
    if (*serve_cmd) return cmd_serve(serve, out);
  } catch (const Error& e) {
    error_record(err, errc_name(e.code()), e.what(), e.locus());
    return kExitFailure;
  } catch (const std::filesystem::filesystem_error& e) {
    error_record(err, "io", e.what(), e.path1().string());
    return kExitFailure;
  } catch (const std::exception& e) {
    error_record(err, "internal", e.what());
    return kExitFailure;
  }
  error_record(err, "usage", "no subcommand");
  return kExitUsage;
}

}  // namespace dialnav
