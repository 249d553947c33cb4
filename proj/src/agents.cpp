#include "dialnav/agents.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

#include "dialnav/error.hpp"

namespace dialnav {

using json = nlohmann::json;

std::uint64_t derive_seed(std::uint64_t base, std::string_view key) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : key) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::uint64_t z = base ^ h;
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------
// ActionDistribution

double ActionDistribution::max_probability() const {
  double best = 0.0;
  for (const auto& [a, p] : entries) best = std::max(best, p);
  return best;
}

double ActionDistribution::entropy_confidence() const {
  if (entries.size() <= 1) return 1.0;
  double h = 0.0;
  for (const auto& [a, p] : entries) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return 1.0 - h / std::log(static_cast<double>(entries.size()));
}

void ActionDistribution::validate() const {
  if (entries.empty()) throw Error(Errc::invalid_argument, "empty action distribution");
  double sum = 0.0;
  for (const auto& [a, p] : entries) {
    if (!(p >= 0.0)) throw Error(Errc::invalid_argument, "negative action probability");
    if (a.kind != NavAction::Kind::move && a.kind != NavAction::Kind::stop) {
      throw Error(Errc::invalid_argument, "distributions hold only move and stop actions");
    }
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw Error(Errc::invalid_argument, "action probabilities must sum to 1");
}

const NavAction& ActionDistribution::argmax() const {
  if (entries.empty()) throw Error(Errc::invalid_argument, "empty action distribution");
  const auto* best = &entries.front();
  for (const auto& e : entries) {
    if (e.second > best->second) best = &e;
  }
  return best->first;
}

const NavAction& ActionDistribution::sample(Rng& rng) const {
  if (entries.empty()) throw Error(Errc::invalid_argument, "empty action distribution");
  const double u = rng.uniform();
  double acc = 0.0;
  for (const auto& e : entries) {
    acc += e.second;
    if (u < acc) return e.first;
  }
  return entries.back().first;
}

// ---------------------------------------------------------------------------
// Observations

Observation observe(const EnvironmentGraph& g, const NodeId& current, std::string instruction,
                    std::vector<DialogExchange> dialog) {
  Observation obs;
  const auto& node = g.node(current);
  const Room& room = g.room(node.annotation.room_id);
  obs.current = current;
  obs.position = node.position;
  obs.annotation = node.annotation;
  obs.room_type = room.room_type;
  obs.floor = room.floor;
  const std::size_t idx = g.index_of(current);
  for (const auto& nb : g.neighbors(idx)) {
    const auto& n = g.node(nb.index);
    obs.neighbors.push_back(
        NeighborView{n.id, n.position, n.annotation, g.room(n.annotation.room_id).room_type, nb.length});
  }
  obs.instruction = std::move(instruction);
  obs.dialog = std::move(dialog);
  return obs;
}

Observation observe(const EpisodeState& state) {
  std::vector<DialogExchange> dialog;
  for (const auto& t : state.dialog) dialog.push_back({t.question, t.answer});
  Observation obs = observe(state.graph(), state.current_node, state.task.instruction, std::move(dialog));
  obs.nav_steps_used = state.nav_steps_used;
  obs.dialog_turns_used = state.dialog_turns_used;
  return obs;
}

// ---------------------------------------------------------------------------
// Navigators

ActionDistribution oracle_navigator_act(const EnvironmentGraph& g, const NodeId& current, const GoalRegion& goal) {
  if (goal.contains(current)) return ActionDistribution{{{NavAction::stop(), 1.0}}};
  const NodePath path = g.shortest_path_to_region(current, goal);
  return ActionDistribution{{{NavAction::move(path.at(1)), 1.0}}};
}

ActionDistribution random_navigator_act(const Observation& obs) {
  ActionDistribution dist;
  const double p = 1.0 / static_cast<double>(obs.neighbors.size() + 1);
  for (const auto& nb : obs.neighbors) dist.entries.emplace_back(NavAction::move(nb.id), p);
  dist.entries.emplace_back(NavAction::stop(), p);
  return dist;
}

ActionDistribution random_navigator_act(const EnvironmentGraph& g, const NodeId& current) {
  return random_navigator_act(observe(g, current));
}

ActionDistribution OracleNavigator::act(const Observation& obs) {
  return oracle_navigator_act(graph_, obs.current, goal_);
}

ReplayNavigator::ReplayNavigator(Episode episode) : episode_(std::move(episode)) {
  if (episode_.trajectory.empty()) throw Error(Errc::invalid_argument, "episode has no trajectory");
}

ActionDistribution ReplayNavigator::act(const Observation& obs) {
  if (obs.current != episode_.trajectory.at(position_)) {
    throw Error(Errc::inconsistent_dialog, "replay diverged from the recorded trajectory",
                "episode " + episode_.episode_id + " index " + std::to_string(position_));
  }
  if (position_ + 1 < episode_.trajectory.size()) {
    return ActionDistribution{{{NavAction::move(episode_.trajectory[position_ + 1]), 1.0}}};
  }
  return ActionDistribution{{{NavAction::stop(), 1.0}}};
}

NavAction ReplayNavigator::choose(const ActionDistribution& dist) {
  NavAction a = dist.argmax();
  if (a.kind == NavAction::Kind::move) ++position_;
  return a;
}

std::optional<bool> ReplayNavigator::ask_vote(const Observation&) {
  return next_turn_ < episode_.dialog.size() && episode_.dialog[next_turn_].trajectory_index == position_;
}

std::string ReplayNavigator::question(const Observation& obs) {
  if (next_turn_ >= episode_.dialog.size()) return template_question(obs);
  return episode_.dialog[next_turn_++].question;
}

// ---------------------------------------------------------------------------
// Whether-to-ask

std::string_view wta_strategy_name(WtaStrategy s) {
  switch (s) {
    case WtaStrategy::never: return "never";
    case WtaStrategy::always: return "always";
    case WtaStrategy::fixed_interval: return "fixed_interval";
    case WtaStrategy::confidence_threshold: return "confidence_threshold";
    case WtaStrategy::external: return "external";
  }
  return "never";
}

std::optional<WtaStrategy> parse_wta_strategy(std::string_view name) {
  for (auto s : {WtaStrategy::never, WtaStrategy::always, WtaStrategy::fixed_interval,
                 WtaStrategy::confidence_threshold, WtaStrategy::external}) {
    if (wta_strategy_name(s) == name) return s;
  }
  return std::nullopt;
}

void WtaConfig::validate() const {
  if (k < 1) throw Error(Errc::invalid_argument, "fixed-interval k must be >= 1");
  if (!(tau >= 0.0 && tau <= 1.0)) throw Error(Errc::invalid_argument, "confidence threshold must lie in [0, 1]");
}

json to_json(const WtaConfig& c) {
  return json{{"strategy", wta_strategy_name(c.strategy)},
              {"k", c.k},
              {"tau", c.tau},
              {"statistic", c.statistic == ConfidenceStatistic::entropy ? "entropy" : "max_probability"}};
}

WtaConfig wta_config_from_json(const json& j) {
  if (!j.is_object()) throw Error(Errc::malformed, "wta config must be an object");
  WtaConfig c;
  try {
    const std::string name = j.value("strategy", std::string("never"));
    auto s = parse_wta_strategy(name);
    if (!s) throw Error(Errc::invalid_argument, "unknown wta strategy '" + name + "'");
    c.strategy = *s;
    c.k = j.value("k", c.k);
    c.tau = j.value("tau", c.tau);
    const std::string stat = j.value("statistic", std::string("max_probability"));
    if (stat == "entropy") {
      c.statistic = ConfidenceStatistic::entropy;
    } else if (stat != "max_probability") {
      throw Error(Errc::invalid_argument, "unknown confidence statistic '" + stat + "'");
    }
  } catch (const json::exception& e) {
    throw Error(Errc::malformed, std::string("wta config: ") + e.what());
  }
  c.validate();
  return c;
}

bool wta_decide(const WtaConfig& config, const WtaState& state, const ActionDistribution& dist,
                std::optional<bool> external_vote) {
  switch (config.strategy) {
    case WtaStrategy::never: return false;
    case WtaStrategy::always: return true;
    case WtaStrategy::fixed_interval: return state.steps_since_dialog >= config.k;
    case WtaStrategy::confidence_threshold: {
      const double confidence = config.statistic == ConfidenceStatistic::entropy ? dist.entropy_confidence()
                                                                                 : dist.max_probability();
      return confidence < config.tau;
    }
    case WtaStrategy::external: return external_vote.value_or(false);
  }
  return false;
}

// ---------------------------------------------------------------------------
// Templates and lexical localization

std::string template_question(const Observation& obs) {
  const auto& objects = obs.annotation.objects;
  if (obs.room_type.empty() && objects.empty()) return "I'm not sure where I am.";
  std::string q;
  if (!obs.room_type.empty()) q = "I'm in a " + obs.room_type + ".";
  if (!objects.empty()) {
    if (!q.empty()) q += " ";
    q += "I can see ";
    const std::size_t n = std::min(objects.size(), kMaxQuestionObjects);
    for (std::size_t i = 0; i < n; ++i) {
      if (i > 0) q += ", ";
      q += objects[i];
    }
    q += ".";
  }
  return q;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

namespace {

std::set<std::string> node_tokens(const EnvironmentGraph& g, const EnvironmentGraph::Node& n) {
  std::set<std::string> out;
  auto add = [&](std::string_view text) {
    for (auto& t : tokenize(text)) out.insert(std::move(t));
  };
  add(g.room(n.annotation.room_id).room_type);
  for (const auto& o : n.annotation.objects) add(o);
  if (n.annotation.caption) add(*n.annotation.caption);
  return out;
}

std::size_t overlap(const std::set<std::string>& question, const std::set<std::string>& node) {
  std::size_t n = 0;
  for (const auto& t : question) n += node.count(t);
  return n;
}

}  // namespace

std::size_t lexical_score(std::string_view question, const EnvironmentGraph& g, const NodeId& node) {
  const auto q = tokenize(question);
  return overlap(std::set<std::string>(q.begin(), q.end()), node_tokens(g, g.node(node)));
}

std::vector<NodeId> lexical_localize(std::string_view question, const EnvironmentGraph& g) {
  const auto qt = tokenize(question);
  const std::set<std::string> q(qt.begin(), qt.end());
  std::vector<std::pair<std::size_t, std::size_t>> scored;  // (score, index)
  for (std::size_t i = 0; i < g.node_count(); ++i) scored.emplace_back(overlap(q, node_tokens(g, g.node(i))), i);
  // Indices follow NodeId order, so the secondary key is the lexicographic tie-break.
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<NodeId> ranking;
  ranking.reserve(scored.size());
  for (const auto& [score, idx] : scored) ranking.push_back(g.node(idx).id);
  return ranking;
}

std::string template_answer(const EnvironmentGraph& g, const NodeId& estimated, const GoalRegion& goal) {
  if (goal.contains(estimated)) return std::string(kAlreadyThere);
  const NodePath path = g.shortest_path_to_region(estimated, goal);
  std::vector<std::string> rooms;
  std::string last_room;
  for (const auto& id : path) {
    const std::string& room_id = g.node(id).annotation.room_id;
    if (!rooms.empty() && room_id == last_room) continue;
    last_room = room_id;
    rooms.push_back(g.room(room_id).room_type);
  }
  std::string out;
  if (rooms.size() == 1) {
    out = "Stay in the " + rooms[0] + "; ";
  } else {
    out = "Go from the " + rooms[0] + " to the " + rooms[1];
    for (std::size_t i = 2; i < rooms.size(); ++i) out += ", then to the " + rooms[i];
    out += "; ";
  }
  return out + std::string(kGoalRoomSuffix);
}

// ---------------------------------------------------------------------------
// Guides

GuideView guide_view(const EpisodeState& state) {
  GuideView view{state.graph(), state.task.goal, state.task.instruction, {}, {}, state.dialog_turns_used + 1};
  for (const auto& t : state.dialog) view.history.push_back({t.turn_index, t.question, t.answer, t.estimated_node});
  view.question = state.pending_question.value_or(std::string());
  return view;
}

NodeId TemplateGuide::localize(const GuideView& view) { return lexical_localize(view.question, view.graph).front(); }

std::string TemplateGuide::answer(const GuideView& view, const NodeId& estimate) {
  return template_answer(view.graph, estimate, view.goal);
}

NodeId RandomLocalizerGuide::localize(const GuideView& view) {
  return view.graph.node(rng_.index(view.graph.node_count())).id;
}

std::string RandomLocalizerGuide::answer(const GuideView& view, const NodeId& estimate) {
  return template_answer(view.graph, estimate, view.goal);
}

NodeId ReplayGuide::localize(const GuideView& view) {
  const auto i = static_cast<std::size_t>(view.turn_index - 1);
  if (i < dialog_.size() && dialog_[i].estimated_node) return *dialog_[i].estimated_node;
  return lexical_localize(view.question, view.graph).front();
}

std::string ReplayGuide::answer(const GuideView& view, const NodeId& estimate) {
  const auto i = static_cast<std::size_t>(view.turn_index - 1);
  if (i < dialog_.size() && dialog_[i].answer.find_first_not_of(" \t\r\n") != std::string::npos) {
    return dialog_[i].answer;
  }
  return template_answer(view.graph, estimate, view.goal);
}

}  // namespace dialnav
