#include "dialnav/server.hpp"

#include <cctype>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <sstream>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "dialnav/error.hpp"

namespace dialnav {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;

std::optional<std::filesystem::path> resolve_static(const std::filesystem::path& root, std::string_view target) {
  if (auto q = target.find_first_of("?#"); q != std::string_view::npos) target = target.substr(0, q);
  if (target.empty() || target.front() != '/') return std::nullopt;
  std::string rel(target.substr(1));
  if (rel.empty() || rel.back() == '/') rel += "index.html";
  std::filesystem::path p(rel);
  for (const auto& part : p) {
    if (part == ".." || part == "." || part.has_root_name() || part.has_root_directory()) return std::nullopt;
  }
  if (rel.find('\\') != std::string::npos || rel.find('\0') != std::string::npos) return std::nullopt;
  return root / p;
}

std::string content_type_for(const std::filesystem::path& file) {
  const std::string ext = file.extension().string();
  if (ext == ".html" || ext == ".htm") return "text/html; charset=utf-8";
  if (ext == ".js" || ext == ".mjs") return "text/javascript; charset=utf-8";
  if (ext == ".css") return "text/css; charset=utf-8";
  if (ext == ".json" || ext == ".map") return "application/json";
  if (ext == ".svg") return "image/svg+xml";
  if (ext == ".png") return "image/png";
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".ico") return "image/x-icon";
  if (ext == ".wasm") return "application/wasm";
  if (ext == ".txt") return "text/plain; charset=utf-8";
  return "application/octet-stream";
}

namespace {

struct Shared {
  std::shared_ptr<ServerCore> core;
  ServeOptions options;
};

// ---------------------------------------------------------------------------
// WebSocket transport: one envelope per text message.

class WsConnection : public std::enable_shared_from_this<WsConnection> {
 public:
  WsConnection(beast::tcp_stream stream, std::shared_ptr<Shared> shared)
      : ws_(std::move(stream)), shared_(std::move(shared)) {}

  void accept(http::request<http::string_body> req) {
    ws_.read_message_max(protocol::kMaxFrameBytes * 4);
    ws_.text(true);
    beast::get_lowest_layer(ws_).expires_never();
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) {
      if (ec) return;
      self->open();
    });
  }

 private:
  void open() {
    std::weak_ptr<WsConnection> weak = weak_from_this();
    SessionSink sink{
        [weak](std::string frame) {
          if (auto self = weak.lock()) asio::post(self->ws_.get_executor(), [self, f = std::move(frame)]() mutable {
              self->enqueue(std::move(f));
            });
        },
        [weak] {
          if (auto self = weak.lock()) asio::post(self->ws_.get_executor(), [self] { self->close_after_writes(); });
        }};
    session_id_ = shared_->core->open_session(std::move(sink), Clock::now());
    read();
  }

  void read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return self->finish();
      const std::string text = beast::buffers_to_string(self->buffer_.data());
      self->buffer_.consume(self->buffer_.size());
      self->shared_->core->on_frame(self->session_id_, text, Clock::now());
      self->read();
    });
  }

  void enqueue(std::string frame) {
    if (!frame.empty() && frame.back() == '\n') frame.pop_back();
    queue_.push_back(std::move(frame));
    if (queue_.size() == 1) write();
  }

  void write() {
    ws_.async_write(asio::buffer(queue_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return self->finish();
      self->queue_.pop_front();
      if (!self->queue_.empty()) return self->write();
      if (self->closing_) self->do_close();
    });
  }

  void close_after_writes() {
    closing_ = true;
    if (queue_.empty()) do_close();
  }

  void do_close() {
    ws_.async_close(websocket::close_code::normal, [self = shared_from_this()](beast::error_code) {});
  }

  void finish() {
    if (finished_) return;
    finished_ = true;
    if (!session_id_.empty()) shared_->core->close_session(session_id_, Clock::now());
    beast::error_code ignored;
    beast::get_lowest_layer(ws_).socket().close(ignored);
  }

  websocket::stream<beast::tcp_stream> ws_;
  std::shared_ptr<Shared> shared_;
  beast::flat_buffer buffer_;
  std::deque<std::string> queue_;
  std::string session_id_;
  bool closing_ = false;
  bool finished_ = false;
};

// ---------------------------------------------------------------------------
// Sniffing connection: HTTP (static files, graphs, upgrade) or NDJSON.

class Connection : public std::enable_shared_from_this<Connection> {
 public:
  Connection(tcp::socket socket, std::shared_ptr<Shared> shared)
      : stream_(std::move(socket)), shared_(std::move(shared)) {}

  void start() { sniff(); }

 private:
  void sniff() {
    stream_.async_read_some(buffer_.prepare(4096), [self = shared_from_this()](beast::error_code ec, std::size_t n) {
      if (ec) return;
      self->buffer_.commit(n);
      const auto* data = static_cast<const char*>(self->buffer_.data().data());
      const std::size_t size = self->buffer_.size();
      if (size == 0) return self->sniff();
      if (std::isupper(static_cast<unsigned char>(data[0]))) return self->read_http();
      self->open_stream();
    });
  }

  // -- HTTP --------------------------------------------------------------

  void read_http() {
    req_ = {};
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, req_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return self->shutdown();
      self->handle_http();
    });
  }

  void handle_http() {
    const std::string target(req_.target());
    if (websocket::is_upgrade(req_)) {
      if (target == "/session" || target.rfind("/session?", 0) == 0) {
        stream_.expires_never();
        std::make_shared<WsConnection>(std::move(stream_), shared_)->accept(std::move(req_));
        return;
      }
      return respond(http::status::not_found, "text/plain", "no such socket endpoint\n");
    }
    if (req_.method() != http::verb::get && req_.method() != http::verb::head) {
      return respond(http::status::method_not_allowed, "text/plain", "method not allowed\n");
    }
    const std::string graph_prefix = "/graph/";
    if (target.rfind(graph_prefix, 0) == 0) {
      std::string scan = target.substr(graph_prefix.size());
      if (auto q = scan.find('?'); q != std::string::npos) scan.resize(q);
      const bool safe = !scan.empty() && scan.find_first_of("/\\") == std::string::npos && scan != ".." && scan != ".";
      if (!safe || !shared_->options.graphs) return respond(http::status::not_found, "text/plain", "unknown scan\n");
      try {
        return respond(http::status::ok, "application/json", shared_->options.graphs->get(scan)->to_json().dump());
      } catch (const Error&) {
        return respond(http::status::not_found, "text/plain", "unknown scan\n");
      }
    }
    if (!shared_->options.static_dir) return respond(http::status::not_found, "text/plain", "not found\n");
    auto file = resolve_static(*shared_->options.static_dir, target);
    std::error_code fec;
    if (!file || !std::filesystem::is_regular_file(*file, fec)) {
      return respond(http::status::not_found, "text/plain", "not found\n");
    }
    std::ifstream in(*file, std::ios::binary);
    std::ostringstream body;
    body << in.rdbuf();
    respond(http::status::ok, content_type_for(*file), body.str());
  }

  void respond(http::status status, const std::string& type, std::string body) {
    auto res = std::make_shared<http::response<http::string_body>>(status, req_.version());
    res->set(http::field::server, "dialnav");
    res->set(http::field::content_type, type);
    res->keep_alive(req_.keep_alive());
    if (req_.method() == http::verb::head) {
      res->content_length(body.size());
    } else {
      res->body() = std::move(body);
      res->prepare_payload();
    }
    http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code ec, std::size_t) {
      if (ec || !res->keep_alive()) return self->shutdown();
      self->read_http();
    });
  }

  void shutdown() {
    beast::error_code ignored;
    stream_.socket().shutdown(tcp::socket::shutdown_both, ignored);
    stream_.socket().close(ignored);
  }

  // -- NDJSON ------------------------------------------------------------

  void open_stream() {
    stream_.expires_never();
    std::weak_ptr<Connection> weak = weak_from_this();
    SessionSink sink{
        [weak](std::string frame) {
          if (auto self = weak.lock()) asio::post(self->stream_.get_executor(), [self, f = std::move(frame)]() mutable {
              self->enqueue(std::move(f));
            });
        },
        [weak] {
          if (auto self = weak.lock()) asio::post(self->stream_.get_executor(), [self] { self->close_after_writes(); });
        }};
    session_id_ = shared_->core->open_session(std::move(sink), Clock::now());
    drain_lines();
    read_stream();
  }

  void read_stream() {
    stream_.async_read_some(buffer_.prepare(64 * 1024), [self = shared_from_this()](beast::error_code ec, std::size_t n) {
      if (ec) return self->finish();
      self->buffer_.commit(n);
      self->drain_lines();
      self->read_stream();
    });
  }

  // Frames longer than the limit are reported once and skipped up to the
  // next newline; the session stays up.
  void drain_lines() {
    for (;;) {
      const auto* data = static_cast<const char*>(buffer_.data().data());
      const std::string_view view(data, buffer_.size());
      const auto nl = view.find('\n');
      if (nl == std::string_view::npos) {
        if (!discarding_ && view.size() > protocol::kMaxFrameBytes) {
          shared_->core->on_frame(session_id_, view, Clock::now());
          discarding_ = true;
        }
        if (discarding_) buffer_.consume(buffer_.size());
        return;
      }
      if (discarding_) {
        discarding_ = false;
      } else {
        shared_->core->on_frame(session_id_, view.substr(0, nl), Clock::now());
      }
      buffer_.consume(nl + 1);
    }
  }

  void enqueue(std::string frame) {
    queue_.push_back(std::move(frame));
    if (queue_.size() == 1) write();
  }

  void write() {
    asio::async_write(stream_, asio::buffer(queue_.front()),
                      [self = shared_from_this()](beast::error_code ec, std::size_t) {
                        if (ec) return self->finish();
                        self->queue_.pop_front();
                        if (!self->queue_.empty()) return self->write();
                        if (self->closing_) self->shutdown();
                      });
  }

  void close_after_writes() {
    closing_ = true;
    if (queue_.empty()) shutdown();
  }

  void finish() {
    if (finished_) return;
    finished_ = true;
    shared_->core->close_session(session_id_, Clock::now());
    shutdown();
  }

  beast::tcp_stream stream_;
  std::shared_ptr<Shared> shared_;
  beast::flat_buffer buffer_{protocol::kMaxFrameBytes * 2 + 64 * 1024};
  http::request<http::string_body> req_;
  std::deque<std::string> queue_;
  std::string session_id_;
  bool discarding_ = false;
  bool closing_ = false;
  bool finished_ = false;
};

}  // namespace

struct Server::Impl {
  std::shared_ptr<Shared> shared;
  asio::io_context ioc;
  tcp::acceptor acceptor{ioc};
  asio::steady_timer ticker{ioc};
  std::vector<std::thread> threads;
  std::mutex mutex;
  std::condition_variable stopped_cv;
  bool stopped = false;

  void accept() {
    acceptor.async_accept(asio::make_strand(ioc), [this](beast::error_code ec, tcp::socket socket) {
      if (ec == asio::error::operation_aborted) return;
      if (!ec) std::make_shared<Connection>(std::move(socket), shared)->start();
      accept();
    });
  }

  void tick() {
    ticker.expires_after(shared->options.tick_interval);
    ticker.async_wait([this](beast::error_code ec) {
      if (ec) return;
      shared->core->tick(Clock::now());
      tick();
    });
  }
};

Server::Server(ServeOptions options, std::shared_ptr<ServerCore> core) : impl_(std::make_unique<Impl>()) {
  impl_->shared = std::make_shared<Shared>(Shared{std::move(core), std::move(options)});
}

Server::~Server() { stop(); }

unsigned short Server::start() {
  const auto& opt = impl_->shared->options;
  beast::error_code ec;
  const auto address = asio::ip::make_address(opt.address, ec);
  if (ec) throw Error(Errc::invalid_argument, "bad listen address '" + opt.address + "'");
  const tcp::endpoint endpoint(address, opt.port);
  impl_->acceptor.open(endpoint.protocol(), ec);
  if (!ec) impl_->acceptor.set_option(asio::socket_base::reuse_address(true), ec);
  if (!ec) impl_->acceptor.bind(endpoint, ec);
  if (!ec) impl_->acceptor.listen(asio::socket_base::max_listen_connections, ec);
  if (ec) throw Error(Errc::io, "cannot listen: " + ec.message(), opt.address + ":" + std::to_string(opt.port));
  const unsigned short port = impl_->acceptor.local_endpoint().port();
  impl_->accept();
  impl_->tick();
  for (int i = 0; i < std::max(1, opt.threads); ++i) {
    impl_->threads.emplace_back([this] { impl_->ioc.run(); });
  }
  return port;
}

void Server::stop() {
  if (!impl_) return;
  {
    std::lock_guard lock(impl_->mutex);
    if (impl_->stopped) return;
    impl_->stopped = true;
  }
  impl_->ioc.stop();
  for (auto& t : impl_->threads) {
    if (t.joinable()) t.join();
  }
  impl_->stopped_cv.notify_all();
}

void Server::wait() {
  std::unique_lock lock(impl_->mutex);
  impl_->stopped_cv.wait(lock, [this] { return impl_->stopped; });
}

}  // namespace dialnav
