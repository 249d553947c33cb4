#include "dialnav/episode_host.hpp"

#include <algorithm>
#include <fstream>

#include "dialnav/error.hpp"

namespace dialnav {

using json = nlohmann::json;
using protocol::Envelope;
using protocol::MessageKind;
using protocol::Role;

namespace {

Envelope make(MessageKind kind, json payload) {
  Envelope e;
  e.kind = kind;
  e.payload = std::move(payload);
  return e;
}

json position_json(const Position& p) { return json{{"x", p.x}, {"y", p.y}, {"z", p.z}}; }

json annotation_json(const NodeAnnotation& a, const std::string& room_type) {
  json j{{"room_id", a.room_id}, {"room_type", room_type}, {"objects", a.objects}};
  j["caption"] = a.caption ? json(*a.caption) : json(nullptr);
  j["image_ref"] = a.image_ref ? json(*a.image_ref) : json(nullptr);
  return j;
}

void send_to(const std::shared_ptr<Session>& s, const Envelope& e) {
  if (s) s->send(e);
}

void send_error(const std::shared_ptr<Session>& s, std::string_view code, std::string_view message) {
  send_to(s, protocol::make_error(code, message));
}

std::string sanitize(std::string key) {
  for (char& c : key) {
    if (c == '/' || c == '\\' || c == '#' || c == ' ') c = '_';
  }
  return key;
}

}  // namespace

// ---------------------------------------------------------------------------
// Session

Session::Session(std::string id, SessionSink sink, Clock::time_point now)
    : last_inbound(now), last_heartbeat(now), id_(std::move(id)), sink_(std::move(sink)) {}

void Session::send(Envelope e) {
  std::lock_guard lock(mutex);
  if (closed) return;
  e.seq = next_seq++;
  e.session_id = id_;
  if (sink_.send) sink_.send(protocol::encode(e));
}

void Session::send_heartbeat() {
  std::lock_guard lock(mutex);
  if (closed) return;
  if (sink_.send) sink_.send("\n");
}

void Session::close_transport() {
  std::function<void()> close;
  {
    std::lock_guard lock(mutex);
    if (closed) return;
    closed = true;
    close = sink_.close;
  }
  if (close) close();
}

// ---------------------------------------------------------------------------
// Payloads

json observation_json(const EpisodeState& state) {
  const EnvironmentGraph& g = state.graph();
  const auto& node = g.node(state.current_node);
  const Room& room = g.room(node.annotation.room_id);
  json neighbors = json::array();
  for (const auto& nb : g.neighbors(g.index_of(state.current_node))) {
    const auto& n = g.node(nb.index);
    neighbors.push_back({{"node", n.id.str()},
                         {"position", position_json(n.position)},
                         {"annotation", annotation_json(n.annotation, g.room(n.annotation.room_id).room_type)},
                         {"distance", nb.length}});
  }
  json dialog = json::array();
  for (const auto& t : state.dialog) {
    dialog.push_back({{"turn_index", t.turn_index}, {"question", t.question}, {"answer", t.answer}});
  }
  return json{{"node", state.current_node.str()},
              {"position", position_json(node.position)},
              {"annotation", annotation_json(node.annotation, room.room_type)},
              {"floor", room.floor},
              {"neighbors", std::move(neighbors)},
              {"phase", phase_name(state.phase)},
              {"counters",
               {{"nav_steps_used", state.nav_steps_used},
                {"max_nav_steps", state.config.max_nav_steps},
                {"dialog_turns_used", state.dialog_turns_used},
                {"max_dialog_turns", state.config.max_dialog_turns},
                {"failed_guesses", state.failed_guesses}}},
              {"dialog", std::move(dialog)}};
}

json shortest_path_json(const EnvironmentGraph& g, const NodeId& from, const GoalRegion& goal) {
  const NodePath path = g.shortest_path_to_region(from, goal);
  json nodes = json::array();
  for (const NodeId& id : path) {
    const auto& n = g.node(id);
    const Room& room = g.room(n.annotation.room_id);
    nodes.push_back({{"node", id.str()},
                     {"room_id", room.room_id},
                     {"room_type", room.room_type},
                     {"floor", room.floor},
                     {"position", position_json(n.position)}});
  }
  return json{{"nodes", std::move(nodes)}, {"length", g.path_length(path)}};
}

json metrics_json(const MetricReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  return json{{"SR", r.success}, {"OSR", r.oracle_success}, {"SPL", r.spl},       {"NE", r.nav_error},
              {"NSC", r.nsc},    {"DTC", r.dtc},            {"LE", opt(r.le_mean)}, {"A@3", opt(r.le_accuracy)},
              {"GP", r.goal_progress}};
}

// ---------------------------------------------------------------------------
// HostConfig

void HostConfig::validate() const {
  if (engine.max_nav_steps < 1 || engine.max_dialog_turns < 1) {
    throw Error(Errc::invalid_argument, "engine budgets must be >= 1");
  }
  wta.validate();
  if (!builtin_navigator.empty() && builtin_navigator != "oracle" && builtin_navigator != "random") {
    throw Error(Errc::invalid_argument, "built-in navigator must be oracle or random");
  }
  if (!builtin_guide.empty() && builtin_guide != "template" && builtin_guide != "random") {
    throw Error(Errc::invalid_argument, "built-in guide must be template or random");
  }
  if (!builtin_navigator.empty() && !builtin_guide.empty()) {
    throw Error(Errc::invalid_argument, "at least one role must be played by a remote client");
  }
  if (turn_timeout.count() <= 0) throw Error(Errc::invalid_argument, "turn timeout must be positive");
}

// ---------------------------------------------------------------------------
// EpisodeHost

EpisodeHost::EpisodeHost(Task task, HostConfig config) : task_(std::move(task)), config_(std::move(config)) {
  config_.validate();
  if (!task_.graph) throw Error(Errc::invalid_argument, "task has no graph", task_.episode_id);
  const std::uint64_t seed = derive_seed(config_.engine.seed, task_.episode_id);
  if (config_.builtin_navigator == "oracle") {
    builtin_nav_ = std::make_unique<OracleNavigator>(*task_.graph, task_.goal);
  } else if (config_.builtin_navigator == "random") {
    builtin_nav_ = std::make_unique<RandomNavigator>(derive_seed(seed, "navigator"));
  }
  if (config_.builtin_guide == "template") {
    builtin_guide_ = std::make_unique<TemplateGuide>();
  } else if (config_.builtin_guide == "random") {
    builtin_guide_ = std::make_unique<RandomLocalizerGuide>(derive_seed(seed, "guide"));
  }
}

bool EpisodeHost::role_free(Role role) const {
  std::lock_guard lock(mutex_);
  if (finished_) return false;
  switch (role) {
    case Role::navigator: return !navigator_ && !builtin_nav();
    case Role::guide: return !guide_ && !builtin_guide();
    case Role::observer: return true;
  }
  return false;
}

bool EpisodeHost::started() const {
  std::lock_guard lock(mutex_);
  return state_.has_value();
}

bool EpisodeHost::finished() const {
  std::lock_guard lock(mutex_);
  return finished_;
}

std::optional<EpisodeState> EpisodeHost::snapshot() const {
  std::lock_guard lock(mutex_);
  return state_;
}

std::optional<json> EpisodeHost::end_payload() const {
  std::lock_guard lock(mutex_);
  return end_payload_;
}

json EpisodeHost::observation_payload() const {
  json obs = observation_json(*state_);
  if (last_answer_) obs["answer"] = *last_answer_;
  return obs;
}

json EpisodeHost::navigator_start_payload() const {
  return json{{"episode_id", task_.episode_id},
              {"scan_id", task_.graph->scan_id()},
              {"role", "navigator"},
              {"instruction", task_.instruction},
              {"config", to_json(state_->config)},
              {"observation", observation_payload()}};
}

void EpisodeHost::to_viewers(const Envelope& e) {
  send_to(navigator_, e);
  for (const auto& o : observers_) send_to(o, e);
}

std::optional<std::string> EpisodeHost::attach(const std::shared_ptr<Session>& session, Role role,
                                               Clock::time_point now) {
  std::lock_guard lock(mutex_);
  if (finished_) return std::string("episode_over");
  switch (role) {
    case Role::navigator:
      if (navigator_ || builtin_nav()) return std::string("role_taken");
      navigator_ = session;
      break;
    case Role::guide:
      if (guide_ || builtin_guide()) return std::string("role_taken");
      guide_ = session;
      break;
    case Role::observer:
      observers_.push_back(session);
      break;
  }
  {
    std::lock_guard slock(session->mutex);
    session->role = role;
    session->host = shared_from_this();
  }
  json ack{{"role", protocol::role_name(role)}, {"episode_id", task_.episode_id}, {"scan_id", scan_id()},
           {"started", state_.has_value()}};
  send_to(session, make(MessageKind::hello, std::move(ack)));

  if (role == Role::observer) {
    if (state_) send_to(session, make(MessageKind::episode_start, navigator_start_payload()));
    return std::nullopt;
  }
  const bool nav_ready = navigator_ || builtin_nav();
  const bool guide_ready = guide_ || builtin_guide();
  if (!state_ && nav_ready && guide_ready) start(now);
  return std::nullopt;
}

void EpisodeHost::start(Clock::time_point now) {
  state_ = start_episode(task_, config_.engine);
  const json nav_start = navigator_start_payload();
  send_to(navigator_, make(MessageKind::episode_start, nav_start));
  for (const auto& o : observers_) send_to(o, make(MessageKind::episode_start, nav_start));
  // The guide learns the task, never where the navigator stands.
  json goal{{"nodes", task_.goal.node_ids}};
  if (task_.goal.region_room_id) goal["room"] = *task_.goal.region_room_id;
  send_to(guide_, make(MessageKind::episode_start, json{{"episode_id", task_.episode_id},
                                                        {"scan_id", task_.graph->scan_id()},
                                                        {"role", "guide"},
                                                        {"instruction", task_.instruction},
                                                        {"goal", std::move(goal)},
                                                        {"config", to_json(state_->config)}}));
  rearm(now);
  run_builtins(now);
}

void EpisodeHost::rearm(Clock::time_point now) {
  deadline_.reset();
  if (!state_ || state_->phase == Phase::terminal) return;
  const bool remote_turn = state_->phase == Phase::navigator_turn ? !builtin_nav() : !builtin_guide();
  if (remote_turn) deadline_ = now + config_.turn_timeout;
}

void EpisodeHost::apply(EpisodeState next, EventKind what, Clock::time_point now) {
  state_ = std::move(next);
  const EpisodeState& s = *state_;
  switch (what) {
    case EventKind::ask: {
      GuideView view = guide_view(s);
      json history = json::array();
      for (const auto& h : view.history) {
        history.push_back({{"turn_index", h.turn_index},
                           {"question", h.question},
                           {"answer", h.answer},
                           {"estimated_node", h.estimated_node ? json(h.estimated_node->str()) : json(nullptr)}});
      }
      send_to(guide_, make(MessageKind::localize_request,
                           json{{"turn_index", view.turn_index},
                                {"question", view.question},
                                {"house_summary", to_json(s.graph().house_summary(s.task.goal))},
                                {"history", std::move(history)}}));
      break;
    }
    case EventKind::localize:
      send_to(guide_, make(MessageKind::answer_request,
                           json{{"turn_index", s.dialog_turns_used + 1},
                                {"question", *s.pending_question},
                                {"estimate", s.pending_estimate->str()},
                                {"shortest_path", shortest_path_json(s.graph(), *s.pending_estimate, s.task.goal)}}));
      break;
    case EventKind::answer:
      last_answer_ = s.dialog.back().answer;
      if (builtin_nav()) counter_.on_answer();
      to_viewers(make(MessageKind::observation, observation_payload()));
      break;
    case EventKind::move:
      last_answer_.reset();
      asked_here_ = false;
      if (builtin_nav()) counter_.on_move();
      if (s.phase != Phase::terminal) to_viewers(make(MessageKind::observation, observation_payload()));
      break;
    case EventKind::guess:
      if (s.phase != Phase::terminal) {
        json obs = observation_payload();
        obs["guess"] = "incorrect";
        to_viewers(make(MessageKind::observation, std::move(obs)));
      }
      break;
    default:
      break;
  }
  if (s.phase == Phase::terminal) {
    end(nullptr);
    return;
  }
  rearm(now);
}

void EpisodeHost::run_builtins(Clock::time_point now) {
  while (state_ && state_->phase != Phase::terminal) {
    const EpisodeState& s = *state_;
    if (s.phase == Phase::navigator_turn && builtin_nav()) {
      const Observation obs = observe(s);
      const ActionDistribution dist = builtin_nav_->act(obs);
      const bool may_ask = (!asked_here_ || config_.wta.strategy == WtaStrategy::external) &&
                           s.dialog_turns_used < s.config.max_dialog_turns;
      if (may_ask && wta_decide(config_.wta, counter_, dist, builtin_nav_->ask_vote(obs))) {
        asked_here_ = true;
        apply(navigator_step(s, NavAction::ask(builtin_nav_->question(obs))), EventKind::ask, now);
        continue;
      }
      const NavAction action = builtin_nav_->choose(dist);
      const EventKind what = action.kind == NavAction::Kind::move   ? EventKind::move
                             : action.kind == NavAction::Kind::stop ? EventKind::stop
                             : action.kind == NavAction::Kind::ask  ? EventKind::ask
                                                                    : EventKind::guess;
      apply(navigator_step(s, action), what, now);
    } else if (s.phase == Phase::await_localization && builtin_guide()) {
      apply(guide_localize(s, builtin_guide_->localize(guide_view(s))), EventKind::localize, now);
    } else if (s.phase == Phase::await_answer && builtin_guide()) {
      apply(guide_answer(s, builtin_guide_->answer(guide_view(s), *s.pending_estimate)), EventKind::answer, now);
    } else {
      break;
    }
  }
}

void EpisodeHost::on_message(const std::shared_ptr<Session>& session, const Envelope& msg, Clock::time_point now) {
  std::lock_guard lock(mutex_);
  if (finished_) return send_error(session, "episode_over", "the episode has ended");
  const bool is_nav = session == navigator_;
  const bool is_guide = session == guide_;
  if (!is_nav && !is_guide) return send_error(session, "read_only", "observers cannot act");
  if (!state_) return send_error(session, "not_started", "waiting for the other player");

  const EpisodeState& s = *state_;
  try {
    if (msg.kind == MessageKind::action && is_nav) {
      const std::string& type = msg.payload["type"].get_ref<const std::string&>();
      if (type == "move") {
        apply(navigator_step(s, NavAction::move(NodeId(msg.payload["node"].get<std::string>()))), EventKind::move,
              now);
      } else if (type == "ask") {
        apply(navigator_step(s, NavAction::ask(msg.payload["question"].get<std::string>())), EventKind::ask, now);
      } else if (type == "stop") {
        apply(navigator_step(s, NavAction::stop()), EventKind::stop, now);
      } else {
        apply(navigator_step(s, NavAction::guess()), EventKind::guess, now);
      }
    } else if (msg.kind == MessageKind::localize_response && is_guide) {
      apply(guide_localize(s, NodeId(msg.payload["node"].get<std::string>())), EventKind::localize, now);
    } else if (msg.kind == MessageKind::answer_response && is_guide) {
      apply(guide_answer(s, msg.payload["text"].get<std::string>()), EventKind::answer, now);
    } else {
      return send_error(session, "unexpected_kind",
                        std::string(protocol::kind_name(msg.kind)) + " is not accepted from this role");
    }
  } catch (const Error& e) {
    return send_error(session, errc_name(e.code()), e.what());
  }
  run_builtins(now);
}

void EpisodeHost::detach(const std::shared_ptr<Session>& session, Clock::time_point) {
  std::lock_guard lock(mutex_);
  std::erase(observers_, session);
  const bool player = session == navigator_ || session == guide_;
  if (!player) return;
  if (session == navigator_) navigator_.reset();
  if (session == guide_) guide_.reset();
  {
    std::lock_guard slock(session->mutex);
    session->host.reset();
    session->role.reset();
  }
  if (state_ && !finished_) {
    state_ = abort_episode(*state_, Termination::disconnect);
    end("session_closed");
  }
}

void EpisodeHost::tick(Clock::time_point now) {
  std::lock_guard lock(mutex_);
  if (finished_ || !state_ || !deadline_ || now < *deadline_) return;
  state_ = abort_episode(*state_, Termination::disconnect);
  end("turn_timeout");
}

void EpisodeHost::end(const char* cause) {
  const EpisodeState& s = *state_;
  const EpisodeOutcome outcome = finalize(s);
  const MetricReport report = score_episode(outcome, s.graph());
  json full{{"episode_id", task_.episode_id},
            {"scan_id", task_.graph->scan_id()},
            {"termination", termination_name(outcome.termination)},
            {"stopped", outcome.stopped},
            {"nav_steps", s.nav_steps_used},
            {"dialog_turns", s.dialog_turns_used},
            {"metrics", metrics_json(report)},
            {"report", to_json(report)},
            {"outcome", to_json(outcome)}};
  if (cause) full["cause"] = cause;
  end_payload_ = full;
  finished_ = true;
  deadline_.reset();

  to_viewers(make(MessageKind::episode_end, full));
  // Trajectory-dependent fields stay with the navigator side.
  send_to(guide_, make(MessageKind::episode_end,
                       json{{"episode_id", task_.episode_id}, {"dialog_turns", s.dialog_turns_used}}));

  auto release = [](const std::shared_ptr<Session>& sess) {
    if (!sess) return;
    std::lock_guard slock(sess->mutex);
    sess->host.reset();
    sess->role.reset();
  };
  release(navigator_);
  release(guide_);
  for (const auto& o : observers_) release(o);
  navigator_.reset();
  guide_.reset();
  observers_.clear();

  if (config_.log_dir) {
    try {
      std::filesystem::create_directories(*config_.log_dir);
      std::ofstream out(*config_.log_dir / (sanitize(task_.episode_id) + ".jsonl"), std::ios::binary);
      write_event_log(out, s.event_log);
    } catch (const std::exception&) {
      // A failed log write must not take the episode's players down with it.
    }
  }
}

}  // namespace dialnav
