#pragma once

#include <chrono>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "dialnav/episode_host.hpp"

namespace dialnav {

struct ServerConfig {
  HostConfig host;
  std::chrono::milliseconds liveness{std::chrono::seconds(90)};
  std::chrono::milliseconds heartbeat{std::chrono::seconds(protocol::kHeartbeatSeconds)};
};

/// Transport-agnostic session multiplexer: pairing, queueing, seq checks,
/// liveness and heartbeats. Time is injected so tests drive it directly.
///
/// Lock order: core, then host, then session.
class ServerCore {
 public:
  ServerCore(ServerConfig config, std::vector<Task> queue);

  std::string open_session(SessionSink sink, Clock::time_point now);
  void on_frame(const std::string& session_id, std::string_view frame, Clock::time_point now);
  /// Transport went away; a player's running episode is aborted.
  void close_session(const std::string& session_id, Clock::time_point now);
  /// Turn deadlines, session liveness, heartbeats.
  void tick(Clock::time_point now);

  std::size_t session_count() const;
  std::size_t pending_tasks() const;
  /// Hosts created so far, in creation order (finished ones included).
  std::vector<std::shared_ptr<EpisodeHost>> hosts() const;
  std::shared_ptr<EpisodeHost> host(const std::string& episode_id) const;

 private:
  std::shared_ptr<Session> find(const std::string& session_id) const;
  void handle_hello(const std::shared_ptr<Session>& session, const protocol::Envelope& msg, Clock::time_point now);
  std::shared_ptr<EpisodeHost> take_task(const std::optional<std::string>& episode_id);

  ServerConfig config_;
  mutable std::mutex mutex_;
  std::deque<Task> queue_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::vector<std::shared_ptr<EpisodeHost>> hosts_;
  std::uint64_t next_session_ = 1;
};

}  // namespace dialnav
