#include "dialnav/benchmark.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "dialnav/error.hpp"
#include "dialnav/rollout.hpp"

namespace dialnav {

using json = nlohmann::json;

namespace {

const std::set<std::string> kNavigators{"oracle", "random", "replay"};
const std::set<std::string> kGuides{"template", "random", "replay"};

template <typename Fn>
void parallel_for(std::size_t n, int jobs, Fn&& fn) {
  const auto workers = static_cast<std::size_t>(std::max(1, jobs));
  if (workers == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, n); ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

std::string summary_csv(const std::map<Split, SummaryRow>& by_split, const std::optional<SummaryRow>& overall) {
  std::string out = summary_csv_header() + "\n";
  for (const auto& [split, row] : by_split) out += summary_csv_row(std::string(split_name(split)), row) + "\n";
  if (overall) out += summary_csv_row("all", *overall) + "\n";
  return out;
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io, "cannot write file", path.string());
  out << content;
}

std::string sanitize(std::string key) {
  for (char& c : key) {
    if (c == '/' || c == '\\' || c == '#' || c == ' ') c = '_';
  }
  return key;
}

}  // namespace

void RunConfig::validate() const {
  if (!kNavigators.contains(navigator)) throw Error(Errc::invalid_argument, "unknown navigator policy '" + navigator + "'");
  if (!kGuides.contains(guide)) throw Error(Errc::invalid_argument, "unknown guide policy '" + guide + "'");
  if (navigator == "replay" && unit != TaskUnit::episode) {
    throw Error(Errc::invalid_argument, "the replay navigator runs whole episodes only");
  }
  if (guide == "replay" && navigator != "replay") {
    throw Error(Errc::invalid_argument, "the replay guide requires the replay navigator");
  }
  if (seeds.empty()) throw Error(Errc::invalid_argument, "at least one seed is required");
  if (splits.empty()) throw Error(Errc::invalid_argument, "at least one split is required");
  if (jobs < 1) throw Error(Errc::invalid_argument, "jobs must be >= 1");
  wta.validate();
  if (engine.max_nav_steps < 1 || engine.max_dialog_turns < 1) {
    throw Error(Errc::invalid_argument, "engine budgets must be >= 1");
  }
}

RunConfig run_config_from_json(const json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) throw Error(Errc::malformed, "run config must be an object");
  RunConfig c;
  try {
    if (!j.contains("manifest") || !j["manifest"].is_string()) {
      throw Error(Errc::malformed, "run config needs a 'manifest' path");
    }
    c.manifest = base_dir / j["manifest"].get<std::string>();
    if (auto s = j.find("splits"); s != j.end()) {
      c.splits.clear();
      for (const auto& v : *s) {
        auto split = parse_split(v.get<std::string>());
        if (!split) throw Error(Errc::invalid_argument, "unknown split '" + v.get<std::string>() + "'");
        c.splits.push_back(*split);
      }
    }
    const std::string unit = j.value("unit", std::string("episode"));
    if (unit == "segment") {
      c.unit = TaskUnit::segment;
    } else if (unit != "episode") {
      throw Error(Errc::invalid_argument, "unit must be 'episode' or 'segment'");
    }
    c.navigator = j.value("navigator", c.navigator);
    c.guide = j.value("guide", c.guide);
    if (auto w = j.find("wta"); w != j.end()) c.wta = wta_config_from_json(*w);
    if (auto e = j.find("engine"); e != j.end()) c.engine = engine_config_from_json(*e);
    if (auto s = j.find("seeds"); s != j.end()) c.seeds = s->get<std::vector<std::uint64_t>>();
    c.output_dir = base_dir / j.value("output_dir", std::string("out"));
    c.jobs = j.value("jobs", 1);
    const std::string mode = j.value("validation", std::string("lenient"));
    if (mode == "strict") {
      c.validation = ValidationMode::strict;
    } else if (mode != "lenient") {
      throw Error(Errc::invalid_argument, "validation must be 'strict' or 'lenient'");
    }
    c.write_event_logs = j.value("write_event_logs", false);
  } catch (const json::exception& e) {
    throw Error(Errc::malformed, std::string("run config: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io, "cannot open run config", path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(Errc::malformed, std::string("run config syntax error: ") + e.what(), path.string());
  }
  return run_config_from_json(j, path.parent_path());
}

std::vector<BenchTask> make_tasks(const std::vector<Episode>& episodes, const GraphStore& graphs,
                                  const RunConfig& config) {
  std::vector<BenchTask> tasks;
  for (const Episode& e : episodes) {
    if (std::find(config.splits.begin(), config.splits.end(), e.split) == config.splits.end()) continue;
    auto g = graphs.get(e.scan_id);
    if (config.unit == TaskUnit::episode) {
      tasks.push_back(BenchTask{e.episode_id, e.split, Task{e.episode_id, g, e.start, e.goal, e.instruction}, &e, -1});
      continue;
    }
    for (const SegmentInstance& s : to_segments(e)) {
      const std::string key = e.episode_id + "#" + std::to_string(s.segment_index);
      tasks.push_back(BenchTask{key, e.split, Task{key, g, s.trajectory_prefix.back(), s.goal, s.instruction}, &e,
                                s.segment_index});
    }
  }
  return tasks;
}

EpisodeRun run_task(const BenchTask& bt, const RunConfig& config, std::uint64_t seed) {
  const std::uint64_t task_seed = derive_seed(seed, bt.key);
  EngineConfig engine = config.engine;
  engine.seed = task_seed;
  WtaConfig wta = config.wta;
  const EnvironmentGraph& g = *bt.task.graph;

  std::unique_ptr<NavigatorPolicy> navigator;
  if (config.navigator == "oracle") {
    navigator = std::make_unique<OracleNavigator>(g, bt.task.goal);
  } else if (config.navigator == "random") {
    navigator = std::make_unique<RandomNavigator>(derive_seed(task_seed, "navigator"));
  } else {
    if (!bt.episode) throw Error(Errc::invalid_argument, "replay needs a recorded episode", bt.key);
    navigator = std::make_unique<ReplayNavigator>(*bt.episode);
    wta.strategy = WtaStrategy::external;
    const int steps = static_cast<int>(bt.episode->trajectory.size()) - 1;
    engine.max_nav_steps = std::max(engine.max_nav_steps, steps + 1);
    engine.max_dialog_turns = std::max(engine.max_dialog_turns, static_cast<int>(bt.episode->dialog.size()));
  }

  std::unique_ptr<GuidePolicy> guide;
  if (config.guide == "template") {
    guide = std::make_unique<TemplateGuide>();
  } else if (config.guide == "random") {
    guide = std::make_unique<RandomLocalizerGuide>(derive_seed(task_seed, "guide"));
  } else {
    guide = std::make_unique<ReplayGuide>(bt.episode ? bt.episode->dialog : std::vector<DialogTurn>{});
  }

  EpisodeRun run{{}, run_episode(bt.task, engine, *navigator, *guide, wta)};
  run.report = score_episode(finalize(run.state), g);
  return run;
}

SummaryRow mean_rows(const std::vector<SummaryRow>& rows) {
  if (rows.empty()) throw Error(Errc::invalid_argument, "no rows to average");
  SummaryRow m;
  double le = 0.0, a3 = 0.0;
  std::size_t le_n = 0;
  for (const auto& r : rows) {
    m.episodes = r.episodes;
    m.sr += r.sr;
    m.osr += r.osr;
    m.spl += r.spl;
    m.ne += r.ne;
    m.nsc += r.nsc;
    m.dtc += r.dtc;
    m.gp += r.gp;
    if (r.le) {
      le += *r.le;
      a3 += r.a3.value_or(0.0);
      ++le_n;
    }
  }
  const double n = static_cast<double>(rows.size());
  m.sr /= n;
  m.osr /= n;
  m.spl /= n;
  m.ne /= n;
  m.nsc /= n;
  m.dtc /= n;
  m.gp /= n;
  if (le_n) {
    m.le = le / static_cast<double>(le_n);
    m.a3 = a3 / static_cast<double>(le_n);
  }
  return m;
}

BenchmarkResult run_benchmark(const RunConfig& config, const std::vector<BenchTask>& tasks,
                              std::vector<std::vector<EngineEvent>>* logs) {
  config.validate();
  const std::size_t n_tasks = tasks.size();
  const std::size_t total = n_tasks * config.seeds.size();
  std::vector<MetricReport> reports(total);
  if (logs) logs->assign(total, {});
  parallel_for(total, config.jobs, [&](std::size_t i) {
    EpisodeRun run = run_task(tasks[i % n_tasks], config, config.seeds[i / n_tasks]);
    reports[i] = std::move(run.report);
    if (logs) (*logs)[i] = std::move(run.state.event_log);
  });

  BenchmarkResult result;
  std::map<Split, std::vector<SummaryRow>> per_split;
  std::vector<SummaryRow> overall;
  for (std::size_t s = 0; s < config.seeds.size(); ++s) {
    SeedResult sr;
    sr.seed = config.seeds[s];
    std::vector<MetricReport> all;
    for (std::size_t t = 0; t < n_tasks; ++t) {
      const MetricReport& r = reports[s * n_tasks + t];
      sr.reports[tasks[t].split].push_back(r);
      all.push_back(r);
    }
    for (const auto& [split, list] : sr.reports) {
      sr.summary[split] = aggregate(list);
      per_split[split].push_back(sr.summary[split]);
    }
    if (!all.empty()) {
      sr.overall = aggregate(all);
      overall.push_back(*sr.overall);
    }
    result.seeds.push_back(std::move(sr));
  }
  for (const auto& [split, rows] : per_split) result.summary[split] = mean_rows(rows);
  if (!overall.empty()) result.overall = mean_rows(overall);
  return result;
}

void write_benchmark_outputs(const RunConfig& config, const std::vector<BenchTask>& tasks,
                             const BenchmarkResult& result, const std::vector<std::vector<EngineEvent>>* logs) {
  const auto& out = config.output_dir;
  json seeds = json::array();
  for (const SeedResult& sr : result.seeds) {
    for (const auto& [split, list] : sr.reports) {
      std::string csv = csv_header() + "\n";
      for (const auto& r : list) csv += csv_row(r) + "\n";
      write_file(out / std::string(split_name(split)) / ("seed_" + std::to_string(sr.seed) + ".csv"), csv);
    }
    json js{{"seed", sr.seed}, {"splits", json::object()}};
    for (const auto& [split, row] : sr.summary) js["splits"][std::string(split_name(split))] = to_json(row);
    if (sr.overall) js["all"] = to_json(*sr.overall);
    seeds.push_back(std::move(js));
  }
  write_file(out / "summary.csv", summary_csv(result.summary, result.overall));

  json summary{{"navigator", config.navigator},
               {"guide", config.guide},
               {"unit", config.unit == TaskUnit::episode ? "episode" : "segment"},
               {"wta", to_json(config.wta)},
               {"engine", to_json(config.engine)},
               {"seeds", config.seeds},
               {"conventions",
                {{"nav_error", kNavErrorConvention},
                 {"goal_progress", kGoalProgressConvention},
                 {"localization_error", kLocalizationConvention}}},
               {"splits", json::object()},
               {"per_seed", seeds}};
  for (const auto& [split, row] : result.summary) summary["splits"][std::string(split_name(split))] = to_json(row);
  if (result.overall) summary["all"] = to_json(*result.overall);
  write_file(out / "summary.json", summary.dump(2) + "\n");

  if (logs && config.write_event_logs) {
    const std::size_t n_tasks = tasks.size();
    for (std::size_t i = 0; i < logs->size(); ++i) {
      std::ostringstream s;
      write_event_log(s, (*logs)[i]);
      write_file(out / "logs" / ("seed_" + std::to_string(config.seeds[i / n_tasks])) /
                     (sanitize(tasks[i % n_tasks].key) + ".jsonl"),
                 s.str());
    }
  }
}

LoadedDataset load_validated_dataset(const std::filesystem::path& manifest, ValidationMode mode) {
  LoadedDataset data = load_dataset(load_manifest(manifest), mode);
  if (data.error_count() > 0) {
    const Issue& first = *std::find_if(data.issues.begin(), data.issues.end(), [](const Issue& i) { return i.fatal; });
    throw Error(Errc::invalid_argument,
                std::to_string(data.error_count()) + " episode(s) failed validation; first: " + first.message,
                first.locus);
  }
  return data;
}

BenchmarkResult run_benchmark(const RunConfig& config) {
  config.validate();
  const LoadedDataset data = load_validated_dataset(config.manifest, config.validation);
  const std::vector<BenchTask> tasks = make_tasks(data.episodes, *data.graphs, config);
  std::vector<std::vector<EngineEvent>> logs;
  BenchmarkResult result = run_benchmark(config, tasks, config.write_event_logs ? &logs : nullptr);
  write_benchmark_outputs(config, tasks, result, config.write_event_logs ? &logs : nullptr);
  return result;
}

SweepSpec sweep_spec_from_json(const json& j) {
  if (!j.is_object()) throw Error(Errc::malformed, "sweep spec must be an object");
  SweepSpec s;
  try {
    const std::string name = j.value("strategy", std::string("fixed_interval"));
    auto strategy = parse_wta_strategy(name);
    if (!strategy || (*strategy != WtaStrategy::fixed_interval && *strategy != WtaStrategy::confidence_threshold)) {
      throw Error(Errc::invalid_argument, "sweeps support fixed_interval and confidence_threshold");
    }
    s.strategy = *strategy;
    s.grid = j.value("grid", std::vector<double>{});
    if (j.contains("seeds")) s.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    if (j.value("statistic", std::string("max_probability")) == "entropy") s.statistic = ConfidenceStatistic::entropy;
  } catch (const json::exception& e) {
    throw Error(Errc::malformed, std::string("sweep spec: ") + e.what());
  }
  if (s.grid.empty()) throw Error(Errc::invalid_argument, "sweep grid must be non-empty");
  return s;
}

std::vector<SweepRow> sweep_wta(const SweepSpec& spec, const RunConfig& base, const std::vector<BenchTask>& tasks) {
  if (spec.grid.empty()) throw Error(Errc::invalid_argument, "sweep grid must be non-empty");
  if (tasks.empty()) throw Error(Errc::invalid_argument, "sweep has no tasks");
  std::vector<double> grid = spec.grid;
  std::sort(grid.begin(), grid.end());
  std::vector<SweepRow> rows;
  for (double value : grid) {
    RunConfig cfg = base;
    if (spec.seeds) cfg.seeds = *spec.seeds;
    cfg.wta.strategy = spec.strategy;
    cfg.wta.statistic = spec.statistic;
    if (spec.strategy == WtaStrategy::fixed_interval) {
      if (value < 1 || value != static_cast<int>(value)) {
        throw Error(Errc::invalid_argument, "fixed-interval grid values must be positive integers");
      }
      cfg.wta.k = static_cast<int>(value);
    } else {
      cfg.wta.tau = value;
    }
    const BenchmarkResult r = run_benchmark(cfg, tasks);
    const SummaryRow& all = *r.overall;
    rows.push_back(SweepRow{value, all.sr, all.dtc, all.spl, all.gp});
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "parameter,SR,DTC,SPL,GP\n";
  for (const auto& r : rows) {
    out += format_number(r.parameter) + "," + format_number(r.sr) + "," + format_number(r.dtc) + "," +
           format_number(r.spl) + "," + format_number(r.gp) + "\n";
  }
  return out;
}

}  // namespace dialnav
