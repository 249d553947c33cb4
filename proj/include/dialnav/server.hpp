#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "dialnav/dataset.hpp"
#include "dialnav/server_core.hpp"

namespace dialnav {

struct ServeOptions {
  std::string address = "127.0.0.1";
  unsigned short port = 7777;  // 0 picks an ephemeral port
  std::optional<std::filesystem::path> static_dir;
  std::shared_ptr<GraphStore> graphs;
  int threads = 2;
  std::chrono::milliseconds tick_interval{250};
};

/// One listening port, two transports. A connection whose first byte is an
/// uppercase letter speaks HTTP: `GET /session` upgrades to a WebSocket
/// carrying one envelope per text message, `GET /graph/<scan_id>` returns the
/// graph document, anything else is a static file. Every other connection is
/// newline-delimited envelopes.
class Server {
 public:
  Server(ServeOptions options, std::shared_ptr<ServerCore> core);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds and starts worker threads; returns the bound port.
  unsigned short start();
  void stop();
  /// Blocks until stop() is called from another thread or a signal handler.
  void wait();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Maps a request target under `root` to a file path; rejects escapes.
std::optional<std::filesystem::path> resolve_static(const std::filesystem::path& root, std::string_view target);
std::string content_type_for(const std::filesystem::path& file);

}  // namespace dialnav
