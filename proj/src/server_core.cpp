#include "dialnav/server_core.hpp"

#include <algorithm>

namespace dialnav {

using protocol::Envelope;
using protocol::MessageKind;
using protocol::Role;

ServerCore::ServerCore(ServerConfig config, std::vector<Task> queue)
    : config_(std::move(config)), queue_(std::make_move_iterator(queue.begin()), std::make_move_iterator(queue.end())) {
  config_.host.validate();
}

std::string ServerCore::open_session(SessionSink sink, Clock::time_point now) {
  std::lock_guard lock(mutex_);
  std::string id = "s" + std::to_string(next_session_++);
  sessions_.emplace(id, std::make_shared<Session>(id, std::move(sink), now));
  return id;
}

std::shared_ptr<Session> ServerCore::find(const std::string& session_id) const {
  std::lock_guard lock(mutex_);
  auto it = sessions_.find(session_id);
  return it == sessions_.end() ? nullptr : it->second;
}

std::size_t ServerCore::session_count() const {
  std::lock_guard lock(mutex_);
  return sessions_.size();
}

std::size_t ServerCore::pending_tasks() const {
  std::lock_guard lock(mutex_);
  return queue_.size();
}

std::vector<std::shared_ptr<EpisodeHost>> ServerCore::hosts() const {
  std::lock_guard lock(mutex_);
  return hosts_;
}

std::shared_ptr<EpisodeHost> ServerCore::host(const std::string& episode_id) const {
  std::lock_guard lock(mutex_);
  for (auto it = hosts_.rbegin(); it != hosts_.rend(); ++it) {
    if ((*it)->episode_id() == episode_id) return *it;
  }
  return nullptr;
}

void ServerCore::on_frame(const std::string& session_id, std::string_view frame, Clock::time_point now) {
  auto session = find(session_id);
  if (!session) return;
  {
    std::lock_guard slock(session->mutex);
    if (session->closed) return;
    session->last_inbound = now;
  }
  if (protocol::is_heartbeat(frame)) return;

  auto decoded = protocol::decode(frame);
  if (auto* err = std::get_if<protocol::DecodeError>(&decoded)) {
    session->send(protocol::make_error(err->code, err->message));
    return;
  }
  const Envelope& msg = std::get<Envelope>(decoded);

  std::shared_ptr<EpisodeHost> host;
  std::optional<std::string> refusal;
  {
    std::lock_guard slock(session->mutex);
    if (session->last_client_seq && msg.seq <= *session->last_client_seq) {
      refusal = "seq " + std::to_string(msg.seq) + " is not greater than " + std::to_string(*session->last_client_seq);
    } else {
      session->last_client_seq = msg.seq;
    }
    host = session->host;
  }
  if (refusal) return session->send(protocol::make_error("bad_seq", *refusal));
  if (!msg.session_id.empty() && msg.session_id != session->id()) {
    return session->send(protocol::make_error("bad_session", "session_id does not match this connection"));
  }

  if (msg.kind == MessageKind::hello) return handle_hello(session, msg, now);
  if (!host) return session->send(protocol::make_error("not_attached", "send hello first"));
  host->on_message(session, msg, now);
}

std::shared_ptr<EpisodeHost> ServerCore::take_task(const std::optional<std::string>& episode_id) {
  auto it = queue_.begin();
  if (episode_id) {
    it = std::find_if(queue_.begin(), queue_.end(), [&](const Task& t) { return t.episode_id == *episode_id; });
  }
  if (it == queue_.end()) return nullptr;
  auto host = std::make_shared<EpisodeHost>(std::move(*it), config_.host);
  queue_.erase(it);
  hosts_.push_back(host);
  return host;
}

void ServerCore::handle_hello(const std::shared_ptr<Session>& session, const Envelope& msg, Clock::time_point now) {
  std::lock_guard lock(mutex_);
  bool attached = false;
  {
    std::lock_guard slock(session->mutex);
    attached = session->host != nullptr;
  }
  if (attached) return session->send(protocol::make_error("duplicate_hello", "session is already attached"));
  const Role role = *protocol::parse_role(msg.payload["role"].get<std::string>());
  std::optional<std::string> episode_id;
  if (msg.payload.contains("episode_id")) episode_id = msg.payload["episode_id"].get<std::string>();

  std::shared_ptr<EpisodeHost> target;
  for (auto it = hosts_.rbegin(); it != hosts_.rend() && !target; ++it) {
    const auto& h = *it;
    if (h->finished()) continue;
    if (episode_id) {
      if (h->episode_id() == *episode_id) target = h;
    } else if (role == Role::observer) {
      if (h->started()) target = h;
    } else if (!h->started() && h->role_free(role)) {
      target = h;
    }
  }
  if (!target && role != Role::observer) target = take_task(episode_id);
  if (!target) {
    session->send(protocol::make_error("no_episode", "no episode is available for this role"));
    return;
  }
  if (auto refusal = target->attach(session, role, now)) {
    session->send(protocol::make_error(*refusal, "cannot attach as " + std::string(protocol::role_name(role))));
  }
}

void ServerCore::close_session(const std::string& session_id, Clock::time_point now) {
  std::shared_ptr<Session> session;
  std::lock_guard lock(mutex_);
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) return;
  session = it->second;
  sessions_.erase(it);
  std::shared_ptr<EpisodeHost> host;
  {
    std::lock_guard slock(session->mutex);
    session->closed = true;
    host = session->host;
  }
  if (host) host->detach(session, now);
}

void ServerCore::tick(Clock::time_point now) {
  std::vector<std::shared_ptr<Session>> expired;
  {
    std::lock_guard lock(mutex_);
    for (const auto& h : hosts_) h->tick(now);
    for (auto it = sessions_.begin(); it != sessions_.end();) {
      const auto& s = it->second;
      bool stale = false, beat = false;
      {
        std::lock_guard slock(s->mutex);
        stale = now - s->last_inbound >= config_.liveness;
        if (!stale && now - s->last_heartbeat >= config_.heartbeat) {
          s->last_heartbeat = now;
          beat = true;
        }
      }
      if (stale) {
        expired.push_back(s);
        it = sessions_.erase(it);
        continue;
      }
      if (beat) s->send_heartbeat();
      ++it;
    }
    for (const auto& s : expired) {
      std::shared_ptr<EpisodeHost> host;
      {
        std::lock_guard slock(s->mutex);
        host = s->host;
      }
      if (host) host->detach(s, now);
    }
    // Finished hosts hold no sessions; keep only the most recent ones for inspection.
    constexpr std::size_t kKeepFinished = 256;
    std::size_t finished = 0;
    for (const auto& h : hosts_) finished += h->finished() ? 1 : 0;
    for (auto it = hosts_.begin(); it != hosts_.end() && finished > kKeepFinished;) {
      if ((*it)->finished()) {
        it = hosts_.erase(it);
        --finished;
      } else {
        ++it;
      }
    }
  }
  for (const auto& s : expired) s->close_transport();
}

}  // namespace dialnav
