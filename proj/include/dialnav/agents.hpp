#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dialnav/dataset.hpp"
#include "dialnav/engine.hpp"
#include "dialnav/env_graph.hpp"

namespace dialnav {

/// Deterministic PRNG used by every stochastic policy. The sampling helpers
/// avoid std::*_distribution so streams are identical across standard
/// libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1) with 53 bits of precision.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  /// Uniform in [0, n); n must be positive.
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)); }

 private:
  std::mt19937_64 engine_;
};

/// Stable per-task seed from a run seed and a task key (FNV-1a + splitmix64).
std::uint64_t derive_seed(std::uint64_t base, std::string_view key);

struct ActionDistribution {
  std::vector<std::pair<NavAction, double>> entries;

  double max_probability() const;
  /// 1 - H(p)/log(n); 1 for a single outcome.
  double entropy_confidence() const;
  /// Throws unless probabilities are nonnegative and sum to 1 within 1e-9.
  void validate() const;
  /// Highest-probability action, earliest entry on ties.
  const NavAction& argmax() const;
  const NavAction& sample(Rng& rng) const;
};

struct NeighborView {
  NodeId id;
  Position position;
  NodeAnnotation annotation;
  std::string room_type;
  double distance = 0.0;
};

struct DialogExchange {
  std::string question;
  std::string answer;
};

/// What a navigator may see: its own node, its neighbors, the instruction and
/// the conversation so far. No goal, no map.
struct Observation {
  NodeId current;
  Position position;
  NodeAnnotation annotation;
  std::string room_type;
  int floor = 0;
  std::vector<NeighborView> neighbors;
  std::string instruction;
  std::vector<DialogExchange> dialog;
  int nav_steps_used = 0;
  int dialog_turns_used = 0;
};

Observation observe(const EnvironmentGraph& g, const NodeId& current, std::string instruction = {},
                    std::vector<DialogExchange> dialog = {});
Observation observe(const EpisodeState& state);

ActionDistribution oracle_navigator_act(const EnvironmentGraph& g, const NodeId& current, const GoalRegion& goal);
/// Uniform over neighbors plus Stop.
ActionDistribution random_navigator_act(const EnvironmentGraph& g, const NodeId& current);
ActionDistribution random_navigator_act(const Observation& obs);

enum class WtaStrategy { never, always, fixed_interval, confidence_threshold, external };
enum class ConfidenceStatistic { max_probability, entropy };

std::string_view wta_strategy_name(WtaStrategy s);
std::optional<WtaStrategy> parse_wta_strategy(std::string_view name);

struct WtaConfig {
  WtaStrategy strategy = WtaStrategy::never;
  int k = 5;
  double tau = 0.5;
  ConfidenceStatistic statistic = ConfidenceStatistic::max_probability;

  void validate() const;
};

nlohmann::json to_json(const WtaConfig& c);
WtaConfig wta_config_from_json(const nlohmann::json& j);

/// Navigation steps since the last answered turn.
struct WtaState {
  int steps_since_dialog = 0;

  void on_move() { ++steps_since_dialog; }
  void on_answer() { steps_since_dialog = 0; }
};

bool wta_decide(const WtaConfig& config, const WtaState& state, const ActionDistribution& dist,
                std::optional<bool> external_vote = std::nullopt);

inline constexpr std::size_t kMaxQuestionObjects = 5;

std::string template_question(const Observation& obs);

std::vector<std::string> tokenize(std::string_view text);
/// All nodes ranked by token overlap with the question, best first.
std::vector<NodeId> lexical_localize(std::string_view question, const EnvironmentGraph& g);
std::size_t lexical_score(std::string_view question, const EnvironmentGraph& g, const NodeId& node);

inline constexpr std::string_view kAlreadyThere = "You are already in the goal room.";
inline constexpr std::string_view kGoalRoomSuffix = "that is the goal room.";

std::string template_answer(const EnvironmentGraph& g, const NodeId& estimated, const GoalRegion& goal);

// ---------------------------------------------------------------------------
// Policies

class NavigatorPolicy {
 public:
  virtual ~NavigatorPolicy() = default;

  virtual ActionDistribution act(const Observation& obs) = 0;
  /// Picks the action to execute; stateful policies advance here.
  virtual NavAction choose(const ActionDistribution& dist) { return dist.argmax(); }
  /// Vote consulted by the External ask strategy.
  virtual std::optional<bool> ask_vote(const Observation&) { return std::nullopt; }
  virtual std::string question(const Observation& obs) { return template_question(obs); }
};

class OracleNavigator : public NavigatorPolicy {
 public:
  OracleNavigator(const EnvironmentGraph& g, GoalRegion goal) : graph_(g), goal_(std::move(goal)) {}
  ActionDistribution act(const Observation& obs) override;

 private:
  const EnvironmentGraph& graph_;
  GoalRegion goal_;
};

class RandomNavigator : public NavigatorPolicy {
 public:
  explicit RandomNavigator(std::uint64_t seed) : rng_(seed) {}
  ActionDistribution act(const Observation& obs) override { return random_navigator_act(obs); }
  NavAction choose(const ActionDistribution& dist) override { return dist.sample(rng_); }

 private:
  Rng rng_;
};

/// Re-drives a recorded episode: its moves, its questions at the recorded
/// trajectory positions, then Stop.
class ReplayNavigator : public NavigatorPolicy {
 public:
  explicit ReplayNavigator(Episode episode);
  ActionDistribution act(const Observation& obs) override;
  NavAction choose(const ActionDistribution& dist) override;
  std::optional<bool> ask_vote(const Observation& obs) override;
  std::string question(const Observation& obs) override;

 private:
  Episode episode_;
  std::size_t position_ = 0;
  std::size_t next_turn_ = 0;
};

struct GuideDialogEntry {
  int turn_index = 0;
  std::string question;
  std::string answer;
  std::optional<NodeId> estimated_node;
};

/// Everything a guide is allowed to know when a question arrives.
struct GuideView {
  const EnvironmentGraph& graph;
  const GoalRegion& goal;
  std::string_view instruction;
  std::vector<GuideDialogEntry> history;
  std::string question;
  int turn_index = 0;
};

GuideView guide_view(const EpisodeState& state);

class GuidePolicy {
 public:
  virtual ~GuidePolicy() = default;
  virtual NodeId localize(const GuideView& view) = 0;
  virtual std::string answer(const GuideView& view, const NodeId& estimate) = 0;
};

class TemplateGuide : public GuidePolicy {
 public:
  NodeId localize(const GuideView& view) override;
  std::string answer(const GuideView& view, const NodeId& estimate) override;
};

/// Uniform-random localization; template answers.
class RandomLocalizerGuide : public GuidePolicy {
 public:
  explicit RandomLocalizerGuide(std::uint64_t seed) : rng_(seed) {}
  NodeId localize(const GuideView& view) override;
  std::string answer(const GuideView& view, const NodeId& estimate) override;

 private:
  Rng rng_;
};

/// Plays back recorded estimates and answers; lexical/template fallback when
/// a recording lacks them.
class ReplayGuide : public GuidePolicy {
 public:
  explicit ReplayGuide(std::vector<DialogTurn> dialog) : dialog_(std::move(dialog)) {}
  NodeId localize(const GuideView& view) override;
  std::string answer(const GuideView& view, const NodeId& estimate) override;

 private:
  std::vector<DialogTurn> dialog_;
};

}  // namespace dialnav
