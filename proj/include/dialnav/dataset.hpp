#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <istream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dialnav/env_graph.hpp"

namespace dialnav {

enum class Split { train, val_seen, val_unseen, test };

inline constexpr std::array<Split, 4> kAllSplits{Split::train, Split::val_seen, Split::val_unseen,
                                                 Split::test};

std::string_view split_name(Split s);
std::optional<Split> parse_split(std::string_view name);

struct DialogTurn {
  std::string question;
  std::string answer;
  NodeId node;                          // navigator's last visited node when asking
  std::optional<NodeId> estimated_node; // guide's localization
  int turn_index = 0;                   // 1-based
  std::size_t trajectory_index = 0;     // 0-based position of `node` in the trajectory

  friend bool operator==(const DialogTurn&, const DialogTurn&) = default;
};

struct Scores {
  std::optional<int> navigator;
  std::optional<int> guide;

  friend bool operator==(const Scores&, const Scores&) = default;
};

struct Episode {
  std::string episode_id;
  std::string scan_id;
  NodeId start;
  GoalRegion goal;
  std::string instruction;
  NodePath trajectory;
  std::vector<DialogTurn> dialog;
  Split split = Split::train;
  std::optional<Scores> scores;
};

bool operator==(const Episode& a, const Episode& b);

enum class ValidationMode { strict, lenient };

struct Issue {
  std::string code;
  std::string message;
  std::string locus;
  bool fatal = false;
};

struct ParsedEpisode {
  Episode episode;
  std::vector<Issue> warnings;  // lenient-mode downgrades
};

/// Validates a canonical episode document against its scan graph.
ParsedEpisode parse_episode(const nlohmann::json& doc, const EnvironmentGraph& g,
                            ValidationMode mode = ValidationMode::strict);
ParsedEpisode parse_episode(std::istream& source, const EnvironmentGraph& g,
                            ValidationMode mode = ValidationMode::strict);
nlohmann::json serialize_episode(const Episode& e);

struct SegmentInstance {
  std::string episode_id;
  std::string scan_id;
  std::string instruction;
  GoalRegion goal;
  NodePath trajectory_prefix;
  std::vector<DialogTurn> dialog_prefix;
  int segment_index = 0;
  bool has_dialog = false;
  Split split = Split::train;
};

/// One instance before any dialog plus one per dialog turn.
std::vector<SegmentInstance> to_segments(const Episode& e);
nlohmann::json serialize_segment(const SegmentInstance& s);

struct LengthStats {
  double min = 0.0;
  double mean = 0.0;
  double max = 0.0;
  double mean_nodes = 0.0;
};

struct StatsReport {
  std::size_t episode_count = 0;
  std::map<Split, std::size_t> split_counts;
  LengthStats shortest;
  LengthStats human;
  double mean_detour_ratio = 0.0;
  std::size_t detour_excluded = 0;
  std::map<int, std::size_t> qa_histogram;
  double mean_qa = 0.0;
  int max_qa = 0;
  std::size_t zero_dialog = 0;
  double mean_question_words = 0.0;
  double mean_answer_words = 0.0;
};

nlohmann::json to_json(const StatsReport& r);
std::string render_text(const StatsReport& r);

std::size_t count_words(std::string_view text);

/// Resolves scan ids to graphs, loading `<graph_dir>/<scan_id>.json` on demand.
/// Safe for concurrent use.
class GraphStore {
 public:
  GraphStore() = default;
  explicit GraphStore(std::filesystem::path graph_dir) : dir_(std::move(graph_dir)) {}

  void add(std::shared_ptr<const EnvironmentGraph> g);
  /// Throws Error(missing_graph) when the scan cannot be resolved.
  std::shared_ptr<const EnvironmentGraph> get(const std::string& scan_id) const;
  const std::filesystem::path& directory() const noexcept { return dir_; }

 private:
  std::filesystem::path dir_;
  mutable std::mutex mutex_;
  mutable std::map<std::string, std::shared_ptr<const EnvironmentGraph>> cache_;
};

StatsReport compute_statistics(std::span<const Episode> episodes, const GraphStore& graphs);

struct ManifestEntry {
  std::filesystem::path file;
  Split split = Split::train;
};

struct DatasetManifest {
  std::filesystem::path graph_dir;
  std::vector<ManifestEntry> entries;
  std::string format = "canonical";
};

DatasetManifest load_manifest(const std::filesystem::path& path);
DatasetManifest parse_manifest(const nlohmann::json& doc, const std::filesystem::path& base_dir);

/// Maps a foreign episode document onto the canonical schema.
using EpisodeAdapter = std::function<nlohmann::json(const nlohmann::json&)>;
void register_episode_adapter(const std::string& format, EpisodeAdapter adapter);
const EpisodeAdapter& episode_adapter(const std::string& format);

struct LoadedDataset {
  std::vector<Episode> episodes;  // sorted by episode_id
  std::vector<Issue> issues;      // fatal issues dropped their episode
  std::shared_ptr<GraphStore> graphs;

  std::size_t error_count() const;
};

LoadedDataset load_dataset(const DatasetManifest& manifest, ValidationMode mode);

struct SplitCounts {
  std::size_t episodes = 0;
  std::size_t segments = 0;
  std::size_t with_dialog = 0;
};

struct SplitTable {
  std::map<Split, SplitCounts> by_split;
  SplitCounts total;
};

SplitTable split_table(std::span<const Episode> episodes);
/// Throws when any manifest entry cannot be resolved.
SplitTable split_table(const DatasetManifest& manifest);
nlohmann::json to_json(const SplitTable& t);

}  // namespace dialnav
