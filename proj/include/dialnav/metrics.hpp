#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dialnav/env_graph.hpp"

namespace dialnav {

struct LocalizationRecord {
  int turn_index = 0;
  NodeId true_node;
  NodeId estimated_node;

  friend bool operator==(const LocalizationRecord&, const LocalizationRecord&) = default;
};

/// How the episode ended. Only `stop` and `guess` count as an explicit stop.
enum class Termination { stop, guess, budget, disconnect, timeout };

std::string_view termination_name(Termination t);
std::optional<Termination> parse_termination(std::string_view name);

struct EpisodeOutcome {
  std::string episode_id;
  std::string scan_id;
  NodeId start;
  GoalRegion goal;
  NodePath visited;
  bool stopped = false;
  Termination termination = Termination::stop;
  int dialog_turns = 0;
  std::vector<LocalizationRecord> localization_records;

  friend bool operator==(const EpisodeOutcome&, const EpisodeOutcome&) = default;
};

nlohmann::json to_json(const EpisodeOutcome& o);

inline constexpr double kLocalizationMargin = 3.0;  // meters

struct LocalizationSummary {
  std::optional<double> mean_error;
  std::optional<double> accuracy;  // fraction within kLocalizationMargin
  std::size_t count = 0;
};

/// Straight-line error between estimated and true node positions.
LocalizationSummary localization_error(std::span<const LocalizationRecord> records,
                                       const EnvironmentGraph& g);

struct MetricReport {
  std::string episode_id;
  int success = 0;
  int oracle_success = 0;
  double spl = 0.0;
  double nav_error = 0.0;
  int nsc = 0;
  int dtc = 0;
  std::optional<double> le_mean;
  std::optional<double> le_accuracy;
  std::size_t le_count = 0;
  double goal_progress = 0.0;
  double path_length = 0.0;
  double shortest_length = 0.0;
  double nav_error_euclidean = 0.0;
};

/// Distance conventions, recorded alongside every serialized report.
inline constexpr const char* kNavErrorConvention = "geodesic";
inline constexpr const char* kGoalProgressConvention = "geodesic";
inline constexpr const char* kLocalizationConvention = "euclidean";

MetricReport score_episode(const EpisodeOutcome& o, const EnvironmentGraph& g);

nlohmann::json to_json(const MetricReport& r);

struct SummaryRow {
  std::size_t episodes = 0;
  double sr = 0.0;   // percent
  double osr = 0.0;  // percent
  double spl = 0.0;  // percent
  double ne = 0.0;
  double nsc = 0.0;
  double dtc = 0.0;
  std::optional<double> le;   // pooled over localization records
  std::optional<double> a3;   // percent, pooled
  double gp = 0.0;
};

/// Throws Error(invalid_argument) on empty input.
SummaryRow aggregate(std::span<const MetricReport> reports);

nlohmann::json to_json(const SummaryRow& row);

/// Column order: episode_id, SR, OSR, SPL, NE, NSC, DTC, LE, GP.
std::string csv_header();
std::string csv_row(const MetricReport& r);
std::string summary_csv_header();
std::string summary_csv_row(const std::string& label, const SummaryRow& row);

std::string format_number(double v);

}  // namespace dialnav
