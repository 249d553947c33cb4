#pragma once

#include <cstdint>
#include <istream>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dialnav/dataset.hpp"
#include "dialnav/env_graph.hpp"
#include "dialnav/metrics.hpp"

namespace dialnav {

struct EngineConfig {
  int max_nav_steps = 80;
  int max_dialog_turns = 20;
  bool interactive_guess_mode = false;
  std::uint64_t seed = 0;

  friend bool operator==(const EngineConfig&, const EngineConfig&) = default;
};

nlohmann::json to_json(const EngineConfig& c);
/// Missing keys keep their defaults.
EngineConfig engine_config_from_json(const nlohmann::json& j);

struct Task {
  std::string episode_id;
  std::shared_ptr<const EnvironmentGraph> graph;
  NodeId start;
  GoalRegion goal;
  std::string instruction;
};

enum class Phase { navigator_turn, await_localization, await_answer, terminal };

std::string_view phase_name(Phase p);

enum class EventKind { start, move, ask, localize, answer, guess, stop, budget_stop };

std::string_view event_kind_name(EventKind k);
std::optional<EventKind> parse_event_kind(std::string_view name);

struct EngineEvent {
  std::uint64_t seq = 0;
  EventKind kind = EventKind::start;
  nlohmann::json payload = nlohmann::json::object();

  friend bool operator==(const EngineEvent&, const EngineEvent&) = default;
};

struct NavAction {
  enum class Kind { move, ask, stop, guess };
  Kind kind = Kind::stop;
  NodeId node;       // move target
  std::string text;  // ask question

  static NavAction move(NodeId n) { return {Kind::move, std::move(n), {}}; }
  static NavAction ask(std::string q) { return {Kind::ask, {}, std::move(q)}; }
  static NavAction stop() { return {Kind::stop, {}, {}}; }
  static NavAction guess() { return {Kind::guess, {}, {}}; }

  friend bool operator==(const NavAction&, const NavAction&) = default;
};

std::string to_string(const NavAction& a);

struct EpisodeState {
  Task task;
  EngineConfig config;
  NodeId current_node;
  NodePath visited;
  std::vector<DialogTurn> dialog;
  Phase phase = Phase::navigator_turn;
  int nav_steps_used = 0;
  int dialog_turns_used = 0;
  std::optional<std::string> pending_question;
  std::optional<NodeId> pending_estimate;
  std::vector<LocalizationRecord> localization_records;
  std::vector<EngineEvent> event_log;
  bool stopped = false;
  std::optional<Termination> termination;
  int failed_guesses = 0;

  const EnvironmentGraph& graph() const { return *task.graph; }
};

// Every transition validates before touching anything: on error the input
// state is returned to the caller untouched and an Error is thrown.

EpisodeState start_episode(Task task, const EngineConfig& config);
EpisodeState navigator_step(const EpisodeState& state, const NavAction& action);
EpisodeState guide_localize(const EpisodeState& state, const NodeId& estimate);
EpisodeState guide_answer(const EpisodeState& state, const std::string& answer);
/// Ends a running episode from any phase (lost peer, turn timeout).
EpisodeState abort_episode(const EpisodeState& state, Termination reason);
EpisodeOutcome finalize(const EpisodeState& state);

nlohmann::json to_json(const EngineEvent& e);
EngineEvent event_from_json(const nlohmann::json& j);
void write_event_log(std::ostream& out, const std::vector<EngineEvent>& events);
std::vector<EngineEvent> read_event_log(std::istream& in);

/// Re-drives a fresh engine with the actions recorded in `events`.
EpisodeState replay_events(const std::vector<EngineEvent>& events, const GraphStore& graphs);

}  // namespace dialnav
