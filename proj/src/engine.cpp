#include "dialnav/engine.hpp"

#include <string>

#include "dialnav/error.hpp"

namespace dialnav {

using json = nlohmann::json;

namespace {

bool blank(const std::string& s) { return s.find_first_not_of(" \t\r\n") == std::string::npos; }

void require_phase(const EpisodeState& state, Phase expected, const char* op) {
  if (state.phase != expected) {
    throw Error(Errc::wrong_phase,
                std::string(op) + " requires phase " + std::string(phase_name(expected)) + ", current phase is " +
                    std::string(phase_name(state.phase)));
  }
}

void log(EpisodeState& state, EventKind kind, json payload) {
  state.event_log.push_back(EngineEvent{state.event_log.size(), kind, std::move(payload)});
}

void terminate(EpisodeState& state, Termination how) {
  state.phase = Phase::terminal;
  state.termination = how;
  state.stopped = how == Termination::stop || how == Termination::guess;
  state.pending_question.reset();
  state.pending_estimate.reset();
}

}  // namespace

json to_json(const EngineConfig& c) {
  return json{{"max_nav_steps", c.max_nav_steps},
              {"max_dialog_turns", c.max_dialog_turns},
              {"interactive_guess_mode", c.interactive_guess_mode},
              {"seed", c.seed}};
}

EngineConfig engine_config_from_json(const json& j) {
  EngineConfig c;
  if (!j.is_object()) throw Error(Errc::malformed, "engine config must be an object");
  try {
    c.max_nav_steps = j.value("max_nav_steps", c.max_nav_steps);
    c.max_dialog_turns = j.value("max_dialog_turns", c.max_dialog_turns);
    c.interactive_guess_mode = j.value("interactive_guess_mode", c.interactive_guess_mode);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw Error(Errc::malformed, std::string("engine config: ") + e.what());
  }
  if (c.max_nav_steps < 1 || c.max_dialog_turns < 1) {
    throw Error(Errc::invalid_argument, "engine budgets must be >= 1");
  }
  return c;
}

std::string_view phase_name(Phase p) {
  switch (p) {
    case Phase::navigator_turn: return "navigator_turn";
    case Phase::await_localization: return "await_localization";
    case Phase::await_answer: return "await_answer";
    case Phase::terminal: return "terminal";
  }
  return "terminal";
}

std::string_view event_kind_name(EventKind k) {
  switch (k) {
    case EventKind::start: return "start";
    case EventKind::move: return "move";
    case EventKind::ask: return "ask";
    case EventKind::localize: return "localize";
    case EventKind::answer: return "answer";
    case EventKind::guess: return "guess";
    case EventKind::stop: return "stop";
    case EventKind::budget_stop: return "budget_stop";
  }
  return "start";
}

std::optional<EventKind> parse_event_kind(std::string_view name) {
  for (auto k : {EventKind::start, EventKind::move, EventKind::ask, EventKind::localize, EventKind::answer,
                 EventKind::guess, EventKind::stop, EventKind::budget_stop}) {
    if (event_kind_name(k) == name) return k;
  }
  return std::nullopt;
}

std::string to_string(const NavAction& a) {
  switch (a.kind) {
    case NavAction::Kind::move: return "move(" + a.node.str() + ")";
    case NavAction::Kind::ask: return "ask(" + a.text + ")";
    case NavAction::Kind::stop: return "stop";
    case NavAction::Kind::guess: return "guess";
  }
  return "stop";
}

EpisodeState start_episode(Task task, const EngineConfig& config) {
  if (!task.graph) throw Error(Errc::invalid_argument, "task has no graph", task.episode_id);
  if (config.max_nav_steps < 1 || config.max_dialog_turns < 1) {
    throw Error(Errc::invalid_argument, "engine budgets must be >= 1", task.episode_id);
  }
  task.graph->index_of(task.start);
  task.graph->validate_region(task.goal);

  EpisodeState s;
  s.config = config;
  s.current_node = task.start;
  s.visited = {task.start};
  json goal{{"nodes", task.goal.node_ids}};
  if (task.goal.region_room_id) goal["room"] = *task.goal.region_room_id;
  json payload{{"episode_id", task.episode_id},
               {"scan_id", task.graph->scan_id()},
               {"start", task.start.str()},
               {"goal", goal},
               {"instruction", task.instruction},
               {"config", to_json(config)}};
  s.task = std::move(task);
  log(s, EventKind::start, std::move(payload));
  return s;
}

EpisodeState navigator_step(const EpisodeState& state, const NavAction& action) {
  require_phase(state, Phase::navigator_turn, "navigator action");
  const EnvironmentGraph& g = state.graph();
  switch (action.kind) {
    case NavAction::Kind::move: {
      if (!g.has_node(action.node)) {
        throw Error(Errc::unknown_node, "unknown node '" + action.node.str() + "'", action.node.str());
      }
      if (!g.adjacent(state.current_node, action.node)) {
        throw Error(Errc::not_adjacent,
                    "'" + action.node.str() + "' is not a neighbor of '" + state.current_node.str() + "'",
                    action.node.str());
      }
      EpisodeState next = state;
      next.visited.push_back(action.node);
      next.current_node = action.node;
      ++next.nav_steps_used;
      log(next, EventKind::move, json{{"node", action.node.str()}});
      if (next.nav_steps_used >= next.config.max_nav_steps) {
        terminate(next, Termination::budget);
        log(next, EventKind::budget_stop, json{{"reason", "budget"}, {"node", next.current_node.str()}});
      }
      return next;
    }
    case NavAction::Kind::ask: {
      if (blank(action.text)) throw Error(Errc::invalid_argument, "question must be non-empty");
      if (state.dialog_turns_used >= state.config.max_dialog_turns) {
        throw Error(Errc::budget_exhausted, "dialog budget exhausted");
      }
      EpisodeState next = state;
      next.pending_question = action.text;
      next.phase = Phase::await_localization;
      log(next, EventKind::ask, json{{"question", action.text}, {"node", state.current_node.str()}});
      return next;
    }
    case NavAction::Kind::stop: {
      EpisodeState next = state;
      terminate(next, Termination::stop);
      log(next, EventKind::stop, json{{"node", state.current_node.str()}});
      return next;
    }
    case NavAction::Kind::guess: {
      if (!state.config.interactive_guess_mode) {
        throw Error(Errc::guess_disabled, "guess is only available in interactive mode");
      }
      EpisodeState next = state;
      const bool correct = state.task.goal.contains(state.current_node);
      log(next, EventKind::guess, json{{"node", state.current_node.str()}, {"correct", correct}});
      if (correct) {
        terminate(next, Termination::guess);
      } else {
        ++next.failed_guesses;
      }
      return next;
    }
  }
  throw Error(Errc::invalid_argument, "unknown action");
}

EpisodeState guide_localize(const EpisodeState& state, const NodeId& estimate) {
  require_phase(state, Phase::await_localization, "localize");
  if (!state.graph().has_node(estimate)) {
    throw Error(Errc::unknown_node, "unknown node '" + estimate.str() + "'", estimate.str());
  }
  EpisodeState next = state;
  next.pending_estimate = estimate;
  next.localization_records.push_back(
      LocalizationRecord{state.dialog_turns_used + 1, state.current_node, estimate});
  next.phase = Phase::await_answer;
  log(next, EventKind::localize, json{{"node", estimate.str()}});
  return next;
}

EpisodeState guide_answer(const EpisodeState& state, const std::string& answer) {
  require_phase(state, Phase::await_answer, "answer");
  if (blank(answer)) throw Error(Errc::invalid_argument, "answer must be non-empty");
  EpisodeState next = state;
  DialogTurn turn;
  turn.question = *state.pending_question;
  turn.answer = answer;
  turn.node = state.current_node;
  turn.estimated_node = state.pending_estimate;
  turn.turn_index = state.dialog_turns_used + 1;
  turn.trajectory_index = state.visited.size() - 1;
  next.dialog.push_back(std::move(turn));
  ++next.dialog_turns_used;
  next.pending_question.reset();
  next.pending_estimate.reset();
  next.phase = Phase::navigator_turn;
  log(next, EventKind::answer, json{{"text", answer}});
  return next;
}

EpisodeState abort_episode(const EpisodeState& state, Termination reason) {
  if (state.phase == Phase::terminal) throw Error(Errc::wrong_phase, "episode already terminated");
  if (reason == Termination::stop || reason == Termination::guess) {
    throw Error(Errc::invalid_argument, "abort reason must be budget, disconnect or timeout");
  }
  EpisodeState next = state;
  terminate(next, reason);
  log(next, EventKind::budget_stop,
      json{{"reason", termination_name(reason)}, {"node", state.current_node.str()}});
  return next;
}

EpisodeOutcome finalize(const EpisodeState& state) {
  if (state.phase != Phase::terminal) {
    throw Error(Errc::wrong_phase, "finalize requires a terminal episode");
  }
  EpisodeOutcome o;
  o.episode_id = state.task.episode_id;
  o.scan_id = state.graph().scan_id();
  o.start = state.task.start;
  o.goal = state.task.goal;
  o.visited = state.visited;
  o.stopped = state.stopped;
  o.termination = state.termination.value_or(Termination::stop);
  o.dialog_turns = state.dialog_turns_used;
  o.localization_records = state.localization_records;
  return o;
}

json to_json(const EngineEvent& e) {
  return json{{"seq", e.seq}, {"kind", event_kind_name(e.kind)}, {"payload", e.payload}};
}

EngineEvent event_from_json(const json& j) {
  if (!j.is_object() || !j.contains("seq") || !j.contains("kind") || !j["kind"].is_string() ||
      !j["seq"].is_number_unsigned()) {
    throw Error(Errc::malformed, "event must carry seq and kind");
  }
  auto kind = parse_event_kind(j["kind"].get<std::string>());
  if (!kind) throw Error(Errc::malformed, "unknown event kind '" + j["kind"].get<std::string>() + "'");
  EngineEvent e;
  e.seq = j["seq"].get<std::uint64_t>();
  e.kind = *kind;
  e.payload = j.value("payload", json::object());
  return e;
}

void write_event_log(std::ostream& out, const std::vector<EngineEvent>& events) {
  for (const auto& e : events) out << to_json(e).dump() << '\n';
}

std::vector<EngineEvent> read_event_log(std::istream& in) {
  std::vector<EngineEvent> events;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (blank(line)) continue;
    try {
      events.push_back(event_from_json(json::parse(line)));
    } catch (const json::parse_error& e) {
      throw Error(Errc::malformed, std::string("event log syntax error: ") + e.what(),
                  "line " + std::to_string(lineno));
    } catch (const Error& e) {
      throw Error(e.code(), e.what(), "line " + std::to_string(lineno));
    }
    if (events.back().seq != events.size() - 1) {
      throw Error(Errc::malformed, "event sequence numbers must be contiguous from 0",
                  "line " + std::to_string(lineno));
    }
  }
  return events;
}

EpisodeState replay_events(const std::vector<EngineEvent>& events, const GraphStore& graphs) {
  if (events.empty() || events.front().kind != EventKind::start) {
    throw Error(Errc::malformed, "event log must begin with a start event");
  }
  const json& p = events.front().payload;
  Task task;
  try {
    task.episode_id = p.at("episode_id").get<std::string>();
    task.graph = graphs.get(p.at("scan_id").get<std::string>());
    task.start = NodeId(p.at("start").get<std::string>());
    std::optional<std::string> room;
    if (p.at("goal").contains("room")) room = p["goal"]["room"].get<std::string>();
    task.goal = make_goal(p.at("goal").at("nodes").get<std::vector<NodeId>>(), room);
    task.instruction = p.value("instruction", std::string());
  } catch (const json::exception& e) {
    throw Error(Errc::malformed, std::string("bad start event: ") + e.what(), "seq 0");
  }
  EpisodeState state = start_episode(std::move(task), engine_config_from_json(p.value("config", json::object())));

  for (std::size_t i = 1; i < events.size(); ++i) {
    const EngineEvent& e = events[i];
    try {
      switch (e.kind) {
        case EventKind::start:
          throw Error(Errc::malformed, "duplicate start event");
        case EventKind::move:
          state = navigator_step(state, NavAction::move(NodeId(e.payload.at("node").get<std::string>())));
          break;
        case EventKind::ask:
          state = navigator_step(state, NavAction::ask(e.payload.at("question").get<std::string>()));
          break;
        case EventKind::localize:
          state = guide_localize(state, NodeId(e.payload.at("node").get<std::string>()));
          break;
        case EventKind::answer:
          state = guide_answer(state, e.payload.at("text").get<std::string>());
          break;
        case EventKind::guess:
          state = navigator_step(state, NavAction::guess());
          break;
        case EventKind::stop:
          state = navigator_step(state, NavAction::stop());
          break;
        case EventKind::budget_stop: {
          const auto reason = parse_termination(e.payload.value("reason", std::string("budget")));
          if (!reason) throw Error(Errc::malformed, "unknown budget_stop reason");
          // Budget exhaustion is produced by the engine itself after a move.
          if (*reason == Termination::budget && state.phase == Phase::terminal) break;
          state = abort_episode(state, *reason);
          break;
        }
      }
    } catch (const json::exception& ex) {
      throw Error(Errc::malformed, std::string("bad event payload: ") + ex.what(), "seq " + std::to_string(e.seq));
    } catch (const Error& ex) {
      throw Error(ex.code(), ex.what(), "seq " + std::to_string(e.seq));
    }
  }
  return state;
}

}  // namespace dialnav
