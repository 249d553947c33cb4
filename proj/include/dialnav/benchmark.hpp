#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dialnav/agents.hpp"
#include "dialnav/dataset.hpp"
#include "dialnav/engine.hpp"
#include "dialnav/metrics.hpp"

namespace dialnav {

enum class TaskUnit { episode, segment };

struct RunConfig {
  std::filesystem::path manifest;
  std::vector<Split> splits{kAllSplits.begin(), kAllSplits.end()};
  TaskUnit unit = TaskUnit::episode;
  std::string navigator = "oracle";  // oracle | random | replay
  std::string guide = "template";    // template | random | replay
  WtaConfig wta;
  EngineConfig engine;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::filesystem::path output_dir;
  int jobs = 1;
  ValidationMode validation = ValidationMode::lenient;
  bool write_event_logs = false;

  void validate() const;
};

/// Relative paths resolve against `base_dir`.
RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

struct BenchTask {
  std::string key;  // episode_id, or episode_id#segment for segment units
  Split split = Split::train;
  Task task;
  const Episode* episode = nullptr;
  int segment_index = -1;
};

std::vector<BenchTask> make_tasks(const std::vector<Episode>& episodes, const GraphStore& graphs,
                                  const RunConfig& config);

struct EpisodeRun {
  MetricReport report;
  EpisodeState state;
};

/// One task under one seed. Policy randomness derives from (seed, task key).
EpisodeRun run_task(const BenchTask& task, const RunConfig& config, std::uint64_t seed);

struct SeedResult {
  std::uint64_t seed = 0;
  std::map<Split, std::vector<MetricReport>> reports;
  std::map<Split, SummaryRow> summary;
  std::optional<SummaryRow> overall;
};

struct BenchmarkResult {
  std::vector<SeedResult> seeds;
  std::map<Split, SummaryRow> summary;  // field-wise mean over seeds
  std::optional<SummaryRow> overall;
};

SummaryRow mean_rows(const std::vector<SummaryRow>& rows);

/// Runs every task under every seed; results do not depend on `jobs`.
BenchmarkResult run_benchmark(const RunConfig& config, const std::vector<BenchTask>& tasks,
                              std::vector<std::vector<EngineEvent>>* logs = nullptr);
/// Loads a manifest; throws if any episode failed validation.
LoadedDataset load_validated_dataset(const std::filesystem::path& manifest, ValidationMode mode);

/// Loads the manifest, runs, and writes CSV/JSON outputs to config.output_dir.
BenchmarkResult run_benchmark(const RunConfig& config);

void write_benchmark_outputs(const RunConfig& config, const std::vector<BenchTask>& tasks,
                             const BenchmarkResult& result,
                             const std::vector<std::vector<EngineEvent>>* logs);

struct SweepSpec {
  WtaStrategy strategy = WtaStrategy::fixed_interval;
  std::vector<double> grid;
  std::optional<std::vector<std::uint64_t>> seeds;
  ConfidenceStatistic statistic = ConfidenceStatistic::max_probability;
};

SweepSpec sweep_spec_from_json(const nlohmann::json& j);

struct SweepRow {
  double parameter = 0.0;
  double sr = 0.0;
  double dtc = 0.0;
  double spl = 0.0;
  double gp = 0.0;
};

/// One row per grid point, averaged over seeds, sorted by parameter.
std::vector<SweepRow> sweep_wta(const SweepSpec& spec, const RunConfig& base, const std::vector<BenchTask>& tasks);
std::string sweep_csv(const std::vector<SweepRow>& rows);

}  // namespace dialnav
