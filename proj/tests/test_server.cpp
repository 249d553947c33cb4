#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <gtest/gtest.h>

#include "dialnav/server.hpp"
#include "support/oracles.hpp"

using namespace dialnav;
using nlohmann::json;
namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;

namespace {

Task task(const std::string& id) {
  Task t;
  t.episode_id = id;
  t.graph = oracle::house_a();
  t.start = NodeId("n01");
  t.goal = make_goal({NodeId("n09"), NodeId("n10")}, "bath");
  t.instruction = "find the towel";
  return t;
}

std::string hello(std::uint64_t seq, const char* role) {
  return json{{"seq", seq}, {"session_id", ""}, {"kind", "hello"}, {"payload", {{"role", role}}}}.dump();
}

struct Fixture {
  std::filesystem::path web = std::filesystem::temp_directory_path() / "dialnav_web";
  std::shared_ptr<ServerCore> core;
  std::unique_ptr<Server> server;
  unsigned short port = 0;

  explicit Fixture(std::vector<Task> tasks, HostConfig host = {}) {
    std::filesystem::remove_all(web);
    std::filesystem::create_directories(web / "js");
    std::ofstream(web / "index.html") << "<html>dialnav</html>";
    std::ofstream(web / "js" / "app.js") << "console.log(1);";
    std::ofstream(web.parent_path() / "dialnav_secret.txt") << "secret";

    ServerConfig cfg;
    cfg.host = std::move(host);
    core = std::make_shared<ServerCore>(cfg, std::move(tasks));
    ServeOptions opt;
    opt.port = 0;
    opt.static_dir = web;
    opt.graphs = std::make_shared<GraphStore>();
    opt.graphs->add(oracle::house_a());
    opt.tick_interval = std::chrono::milliseconds(20);
    server = std::make_unique<Server>(opt, core);
    port = server->start();
  }
  ~Fixture() {
    server->stop();
    std::filesystem::remove_all(web);
  }
};

struct LineClient {
  asio::io_context ioc;
  tcp::socket socket{ioc};
  asio::streambuf buf;

  explicit LineClient(unsigned short port) { socket.connect({asio::ip::make_address("127.0.0.1"), port}); }
  void send(const std::string& s) { asio::write(socket, asio::buffer(s)); }
  // Next non-heartbeat frame.
  protocol::Envelope next() {
    for (;;) {
      asio::read_until(socket, buf, '\n');
      std::istream is(&buf);
      std::string line;
      std::getline(is, line);
      if (protocol::is_heartbeat(line)) continue;
      return std::get<protocol::Envelope>(protocol::decode(line));
    }
  }
};

http::response<http::string_body> request(unsigned short port, http::verb verb, const std::string& target) {
  asio::io_context ioc;
  beast::tcp_stream stream(ioc);
  stream.connect(tcp::endpoint(asio::ip::make_address("127.0.0.1"), port));
  http::request<http::empty_body> req{verb, target, 11};
  req.set(http::field::host, "localhost");
  http::write(stream, req);
  beast::flat_buffer buffer;
  http::response_parser<http::string_body> parser;
  parser.body_limit(8u << 20);
  if (verb == http::verb::head) parser.skip(true);
  http::read(stream, buffer, parser);
  beast::error_code ec;
  stream.socket().shutdown(tcp::socket::shutdown_both, ec);
  return parser.release();
}

}  // namespace

TEST(StaticFiles, ResolveRejectsEscapes) {
  const std::filesystem::path root = "/srv/web";
  EXPECT_EQ(resolve_static(root, "/"), root / "index.html");
  EXPECT_EQ(resolve_static(root, "/js/app.js?v=2"), root / "js/app.js");
  EXPECT_EQ(resolve_static(root, "/docs/"), root / "docs/index.html");
  EXPECT_FALSE(resolve_static(root, "/../etc/passwd"));
  EXPECT_FALSE(resolve_static(root, "/js/../../x"));
  EXPECT_FALSE(resolve_static(root, "/./x"));
  EXPECT_FALSE(resolve_static(root, "relative"));
  EXPECT_FALSE(resolve_static(root, "/a\\..\\b"));
  EXPECT_FALSE(resolve_static(root, ""));
}

TEST(StaticFiles, ContentTypes) {
  EXPECT_EQ(content_type_for("a.html"), "text/html; charset=utf-8");
  EXPECT_EQ(content_type_for("a.js"), "text/javascript; charset=utf-8");
  EXPECT_EQ(content_type_for("a.css"), "text/css; charset=utf-8");
  EXPECT_EQ(content_type_for("a.json"), "application/json");
  EXPECT_EQ(content_type_for("a.wasm"), "application/wasm");
  EXPECT_EQ(content_type_for("a.bin"), "application/octet-stream");
}

TEST(Server, HttpRoutes) {
  Fixture f({});
  auto res = request(f.port, http::verb::get, "/");
  EXPECT_EQ(res.result(), http::status::ok);
  EXPECT_EQ(res.body(), "<html>dialnav</html>");
  EXPECT_EQ(res[http::field::content_type], "text/html; charset=utf-8");

  res = request(f.port, http::verb::get, "/js/app.js");
  EXPECT_EQ(res.result(), http::status::ok);
  EXPECT_EQ(res[http::field::content_type], "text/javascript; charset=utf-8");

  res = request(f.port, http::verb::head, "/js/app.js");
  EXPECT_EQ(res.result(), http::status::ok);
  EXPECT_EQ(res[http::field::content_length], "15");

  res = request(f.port, http::verb::get, "/graph/house_a");
  EXPECT_EQ(res.result(), http::status::ok);
  const auto g = json::parse(res.body());
  EXPECT_EQ(g["scan_id"], "house_a");
  EXPECT_EQ(g["nodes"].size(), 10u);
  EXPECT_EQ(load_graph(g).edge_count(), oracle::house_a()->edge_count());

  EXPECT_EQ(request(f.port, http::verb::get, "/graph/house_z").result(), http::status::not_found);
  EXPECT_EQ(request(f.port, http::verb::get, "/graph/..").result(), http::status::not_found);
  EXPECT_EQ(request(f.port, http::verb::get, "/missing.js").result(), http::status::not_found);
  EXPECT_EQ(request(f.port, http::verb::get, "/../dialnav_secret.txt").result(), http::status::not_found);
  EXPECT_EQ(request(f.port, http::verb::get, "/js/../../dialnav_secret.txt").result(), http::status::not_found);
  EXPECT_EQ(request(f.port, http::verb::post, "/").result(), http::status::method_not_allowed);
  EXPECT_EQ(request(f.port, http::verb::delete_, "/graph/house_a").result(), http::status::method_not_allowed);
}

TEST(Server, LineTransportEpisode) {
  Fixture f({task("t1")});
  LineClient nav(f.port), guide(f.port);
  nav.send(hello(0, "navigator") + "\n");
  auto ack = nav.next();
  EXPECT_EQ(ack.kind, protocol::MessageKind::hello);
  EXPECT_EQ(ack.seq, 0u);
  const std::string nav_id = ack.session_id;

  guide.send(hello(0, "guide") + "\r\n");
  EXPECT_EQ(guide.next().kind, protocol::MessageKind::hello);
  EXPECT_EQ(guide.next().kind, protocol::MessageKind::episode_start);
  const auto start = nav.next();
  EXPECT_EQ(start.kind, protocol::MessageKind::episode_start);
  EXPECT_EQ(start.seq, 1u);

  // two frames in one write, plus an oversized line in between
  std::string burst = json{{"seq", 1}, {"session_id", nav_id}, {"kind", "action"}, {"payload", {{"type", "move"}, {"node", "n06"}}}}.dump() + "\n";
  burst += std::string(protocol::kMaxFrameBytes + 10, 'x') + "\n";
  burst += json{{"seq", 2}, {"session_id", nav_id}, {"kind", "action"}, {"payload", {{"type", "move"}, {"node", "n07"}}}}.dump() + "\n";
  nav.send(burst);
  EXPECT_EQ(nav.next().payload["node"], "n06");
  const auto too_big = nav.next();
  EXPECT_EQ(too_big.kind, protocol::MessageKind::error);
  EXPECT_EQ(too_big.payload["code"], "frame_too_large");
  EXPECT_EQ(nav.next().payload["node"], "n07");

  nav.send("not json\n\n");
  EXPECT_EQ(nav.next().payload["code"], "malformed");
  nav.send(json{{"seq", 3}, {"session_id", nav_id}, {"kind", "action"}, {"payload", {{"type", "move"}, {"node", "n10"}}}}.dump() + "\n");
  EXPECT_EQ(nav.next().payload["node"], "n10");
  nav.send(json{{"seq", 4}, {"session_id", nav_id}, {"kind", "action"}, {"payload", {{"type", "stop"}}}}.dump() + "\n");
  const auto end = nav.next();
  EXPECT_EQ(end.kind, protocol::MessageKind::episode_end);
  EXPECT_EQ(end.payload["metrics"]["SR"], 1);
  EXPECT_EQ(end.seq, 7u);
  EXPECT_EQ(guide.next().kind, protocol::MessageKind::episode_end);
}

TEST(Server, WebSocketSession) {
  HostConfig host;
  host.builtin_guide = "template";
  Fixture f({task("t1")}, host);
  asio::io_context ioc;
  websocket::stream<tcp::socket> ws(ioc);
  ws.next_layer().connect({asio::ip::make_address("127.0.0.1"), f.port});
  ws.handshake("localhost", "/session");
  auto next = [&] {
    for (;;) {
      beast::flat_buffer b;
      ws.read(b);
      const auto text = beast::buffers_to_string(b.data());
      if (protocol::is_heartbeat(text)) continue;
      EXPECT_EQ(text.find('\n'), std::string::npos);
      return std::get<protocol::Envelope>(protocol::decode(text));
    }
  };
  ws.write(asio::buffer(hello(0, "navigator")));
  const auto ack = next();
  EXPECT_EQ(ack.kind, protocol::MessageKind::hello);
  EXPECT_EQ(next().kind, protocol::MessageKind::episode_start);
  ws.write(asio::buffer(json{{"seq", 1}, {"session_id", ack.session_id}, {"kind", "action"}, {"payload", {{"type", "ask"}, {"question", "coat rack"}}}}.dump()));
  const auto obs = next();
  EXPECT_EQ(obs.kind, protocol::MessageKind::observation);
  EXPECT_TRUE(obs.payload["answer"].is_string());
  ws.write(asio::buffer(std::string("{\"seq\":")));
  EXPECT_EQ(next().payload["code"], "malformed");
  ws.write(asio::buffer(json{{"seq", 2}, {"session_id", ack.session_id}, {"kind", "teleport"}, {"payload", json::object()}}.dump()));
  EXPECT_EQ(next().payload["code"], "unknown_kind");
  ws.write(asio::buffer(json{{"seq", 3}, {"session_id", ack.session_id}, {"kind", "action"}, {"payload", {{"type", "stop"}}}}.dump()));
  EXPECT_EQ(next().kind, protocol::MessageKind::episode_end);
  ws.close(websocket::close_code::normal);
}

TEST(Server, WebSocketOtherPathsRefused) {
  Fixture f({});
  asio::io_context ioc;
  websocket::stream<tcp::socket> ws(ioc);
  ws.next_layer().connect({asio::ip::make_address("127.0.0.1"), f.port});
  EXPECT_THROW(ws.handshake("localhost", "/elsewhere"), boost::system::system_error);
}

TEST(Server, ClosedSocketEndsEpisode) {
  Fixture f({task("t1")});
  auto nav = std::make_unique<LineClient>(f.port);
  LineClient guide(f.port);
  nav->send(hello(0, "navigator") + "\n");
  nav->next();
  guide.send(hello(0, "guide") + "\n");
  guide.next();
  guide.next();
  nav.reset();
  EXPECT_EQ(guide.next().kind, protocol::MessageKind::episode_end);
  const auto end = f.core->host("t1")->end_payload();
  ASSERT_TRUE(end);
  EXPECT_EQ((*end)["cause"], "session_closed");
}

TEST(Cli, ServeSmoke) {
  const std::string cmd = std::string(DIALNAV_CLI_PATH) + " serve --listen 127.0.0.1:0 --manifest " +
                          oracle::fixture_dir() + "/manifest.json --guide template --max-seconds 2";
  FILE* pipe = popen(cmd.c_str(), "r");
  ASSERT_NE(pipe, nullptr);
  char line[512] = {};
  ASSERT_NE(fgets(line, sizeof line, pipe), nullptr);
  const auto banner = json::parse(line);
  EXPECT_EQ(banner["episodes"], 4);
  const std::string listening = banner["listening"];
  const auto port = static_cast<unsigned short>(std::stoi(listening.substr(listening.rfind(':') + 1)));
  {
    LineClient nav(port);
    nav.send(hello(0, "navigator") + "\n");
    EXPECT_EQ(nav.next().kind, protocol::MessageKind::hello);
    EXPECT_EQ(nav.next().kind, protocol::MessageKind::episode_start);
  }
  const int status = pclose(pipe);
  EXPECT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), 0);
}
