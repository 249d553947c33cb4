#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dialnav/agents.hpp"
#include "dialnav/engine.hpp"
#include "dialnav/protocol.hpp"

namespace dialnav {

using Clock = std::chrono::steady_clock;

/// Transport hooks for one connection. Both must be safe to call from any
/// thread and must not block on the peer.
struct SessionSink {
  std::function<void(std::string)> send;  // one encoded frame, newline included
  std::function<void()> close;
};

class EpisodeHost;

/// One attached client. Outbound seq is gapless from 0; all sends go through
/// `mutex` so seq order equals delivery order.
class Session {
 public:
  Session(std::string id, SessionSink sink, Clock::time_point now);

  const std::string& id() const noexcept { return id_; }

  void send(protocol::Envelope e);
  void send_heartbeat();
  void close_transport();

  std::mutex mutex;
  std::optional<protocol::Role> role;
  std::shared_ptr<EpisodeHost> host;
  std::optional<std::uint64_t> last_client_seq;
  Clock::time_point last_inbound;
  Clock::time_point last_heartbeat;
  std::uint64_t next_seq = 0;
  bool closed = false;

 private:
  std::string id_;
  SessionSink sink_;
};

struct HostConfig {
  EngineConfig engine;
  WtaConfig wta;                  // used by the built-in navigator only
  std::string builtin_navigator;  // "", oracle, random
  std::string builtin_guide;      // "", template, random
  std::chrono::milliseconds turn_timeout{std::chrono::seconds(120)};
  std::optional<std::filesystem::path> log_dir;

  void validate() const;
};

/// Owns the engine for one episode and serializes every mutation through its
/// own mutex. Built-in agents are driven by a loop inside the host, never by
/// re-entrant message handling.
class EpisodeHost : public std::enable_shared_from_this<EpisodeHost> {
 public:
  EpisodeHost(Task task, HostConfig config);

  const std::string& episode_id() const noexcept { return task_.episode_id; }
  const std::string& scan_id() const noexcept { return task_.graph->scan_id(); }

  /// Returns an error code ("role_taken", "episode_over") on refusal.
  std::optional<std::string> attach(const std::shared_ptr<Session>& session, protocol::Role role,
                                    Clock::time_point now);
  /// Losing a player aborts a running episode as `disconnect`.
  void detach(const std::shared_ptr<Session>& session, Clock::time_point now);
  void on_message(const std::shared_ptr<Session>& session, const protocol::Envelope& msg, Clock::time_point now);
  /// Aborts the episode when the party on turn has missed its deadline.
  void tick(Clock::time_point now);

  bool role_free(protocol::Role role) const;
  bool started() const;
  bool finished() const;
  std::optional<EpisodeState> snapshot() const;
  std::optional<nlohmann::json> end_payload() const;

 private:
  bool builtin_nav() const { return builtin_nav_ != nullptr; }
  bool builtin_guide() const { return builtin_guide_ != nullptr; }
  void start(Clock::time_point now);
  void apply(EpisodeState next, EventKind what, Clock::time_point now);
  void run_builtins(Clock::time_point now);
  void rearm(Clock::time_point now);
  void end(const char* cause);
  void to_viewers(const protocol::Envelope& e);
  nlohmann::json observation_payload() const;
  nlohmann::json navigator_start_payload() const;

  mutable std::mutex mutex_;
  Task task_;
  HostConfig config_;
  std::optional<EpisodeState> state_;
  std::shared_ptr<Session> navigator_;
  std::shared_ptr<Session> guide_;
  std::vector<std::shared_ptr<Session>> observers_;
  std::unique_ptr<NavigatorPolicy> builtin_nav_;
  std::unique_ptr<GuidePolicy> builtin_guide_;
  WtaState counter_;
  bool asked_here_ = false;
  std::optional<std::string> last_answer_;
  std::optional<Clock::time_point> deadline_;
  std::optional<nlohmann::json> end_payload_;
  bool finished_ = false;
};

// Payload builders, exposed for tests and for clients that want to mirror them.
nlohmann::json observation_json(const EpisodeState& state);
nlohmann::json shortest_path_json(const EnvironmentGraph& g, const NodeId& from, const GoalRegion& goal);
nlohmann::json metrics_json(const MetricReport& r);

}  // namespace dialnav
