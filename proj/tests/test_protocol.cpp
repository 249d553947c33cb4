#include <random>
#include <string>

#include <gtest/gtest.h>

#include "dialnav/protocol.hpp"

using namespace dialnav::protocol;
using nlohmann::json;

namespace {

json valid_payload(MessageKind k) {
  switch (k) {
    case MessageKind::hello: return {{"role", "guide"}, {"episode_id", "a1"}};
    case MessageKind::episode_start: return {{"episode_id", "a1"}, {"scan_id", "house_a"}};
    case MessageKind::observation: return {{"node", "n01"}, {"neighbors", json::array({"n02"})}};
    case MessageKind::action: return {{"type", "move"}, {"node", "n02"}};
    case MessageKind::localize_request: return {{"question", "where?"}};
    case MessageKind::localize_response: return {{"node", "n03"}};
    case MessageKind::answer_request:
      return {{"question", "where?"}, {"estimate", "n03"}, {"shortest_path", {{"nodes", json::array()}}}};
    case MessageKind::answer_response: return {{"text", "go left"}};
    case MessageKind::episode_end: return {{"episode_id", "a1"}};
    case MessageKind::error: return {{"code", "x"}, {"message", "y"}};
  }
  return {};
}

std::string frame(std::string_view kind, const json& payload, json seq = 1u, json sid = "s1") {
  return json{{"seq", seq}, {"session_id", sid}, {"kind", kind}, {"payload", payload}}.dump();
}

std::string error_code(std::string_view f) {
  const auto r = decode(f);
  if (const auto* e = std::get_if<DecodeError>(&r)) return e->code;
  return "ok";
}

}  // namespace

TEST(Protocol, EveryKindRoundTrips) {
  std::uint64_t seq = 0;
  for (MessageKind k : kAllKinds) {
    Envelope e;
    e.seq = seq++;
    e.session_id = "s7";
    e.kind = k;
    e.payload = valid_payload(k);
    const auto wire = encode(e);
    ASSERT_EQ(wire.back(), '\n');
    EXPECT_EQ(wire.find('\n'), wire.size() - 1);
    const auto back = decode(wire);
    ASSERT_TRUE(std::holds_alternative<Envelope>(back)) << kind_name(k);
    EXPECT_EQ(std::get<Envelope>(back), e);
    EXPECT_EQ(parse_kind(kind_name(k)), k);
  }
}

TEST(Protocol, UnknownPayloadFieldsSurvive) {
  Envelope e;
  e.kind = MessageKind::answer_response;
  e.payload = {{"text", "hi"}, {"x_extra", {{"nested", json::array({1, 2, 3})}}}};
  const auto back = std::get<Envelope>(decode(encode(e)));
  EXPECT_EQ(back.payload["x_extra"]["nested"][2], 3);
  EXPECT_EQ(encode(back), encode(e));
}

TEST(Protocol, CarriageReturnsTolerated) {
  const auto f = frame("hello", valid_payload(MessageKind::hello)) + "\r\n";
  EXPECT_EQ(error_code(f), "ok");
}

TEST(Protocol, Heartbeats) {
  EXPECT_TRUE(is_heartbeat(""));
  EXPECT_TRUE(is_heartbeat("\n"));
  EXPECT_TRUE(is_heartbeat(" \t\r\n"));
  EXPECT_FALSE(is_heartbeat("{}"));
}

TEST(Protocol, EnvelopeErrors) {
  EXPECT_EQ(error_code(frame("teleport", json::object())), kUnknownKind);
  EXPECT_EQ(error_code("{not json"), kMalformed);
  EXPECT_EQ(error_code(""), kMalformed);
  EXPECT_EQ(error_code("[1,2]"), kBadEnvelope);
  EXPECT_EQ(error_code("42"), kBadEnvelope);
  EXPECT_EQ(error_code(R"({"seq":1,"session_id":"s","payload":{}})"), kBadEnvelope);
  EXPECT_EQ(error_code(R"({"session_id":"s","kind":"hello","payload":{"role":"guide"}})"), kBadEnvelope);
  EXPECT_EQ(error_code(R"({"seq":1,"kind":"hello","payload":{"role":"guide"}})"), kBadEnvelope);
  EXPECT_EQ(error_code(frame("hello", {{"role", "guide"}}, -1)), kBadEnvelope);
  EXPECT_EQ(error_code(frame("hello", {{"role", "guide"}}, 1.5)), kBadEnvelope);
  EXPECT_EQ(error_code(frame("hello", {{"role", "guide"}}, 1u, 3)), kBadEnvelope);
}

TEST(Protocol, SizeAndDepthLimits) {
  std::string big = frame("answer_response", {{"text", std::string(kMaxFrameBytes, 'a')}});
  EXPECT_EQ(error_code(big), kFrameTooLarge);
  std::string deep(kMaxNesting + 1, '[');
  deep += std::string(kMaxNesting + 1, ']');
  EXPECT_EQ(error_code(deep), kMalformed);
  json nested = 1;
  for (int i = 0; i < kMaxNesting - 3; ++i) nested = json::array({nested});
  EXPECT_EQ(error_code(frame("answer_response", {{"text", "t"}, {"n", nested}})), "ok");
  // brackets inside strings do not count
  EXPECT_EQ(error_code(frame("answer_response", {{"text", std::string(200, '[')}})), "ok");
}

TEST(Protocol, PayloadSchemas) {
  const std::pair<const char*, json> bad[] = {
      {"hello", {{"role", "pilot"}}},
      {"hello", {{"role", "guide"}, {"episode_id", 5}}},
      {"episode_start", json::object()},
      {"observation", {{"node", "n01"}}},
      {"observation", {{"node", "n01"}, {"neighbors", "n02"}}},
      {"action", {{"type", "fly"}}},
      {"action", {{"type", "move"}}},
      {"action", {{"type", "move"}, {"node", ""}}},
      {"action", {{"type", "ask"}}},
      {"localize_request", json::object()},
      {"localize_response", {{"node", ""}}},
      {"answer_request", {{"question", "q"}, {"estimate", "n1"}}},
      {"answer_response", {{"text", 3}}},
      {"episode_end", json::object()},
      {"error", {{"code", "x"}}},
      {"hello", json::array()},
  };
  for (const auto& [kind, payload] : bad) EXPECT_EQ(error_code(frame(kind, payload)), kBadPayload) << kind << payload;
  EXPECT_EQ(error_code(frame("action", {{"type", "stop"}})), "ok");
  EXPECT_EQ(error_code(frame("action", {{"type", "guess"}})), "ok");
  EXPECT_EQ(error_code(frame("action", {{"type", "ask"}, {"question", "q"}})), "ok");
}

TEST(Protocol, MissingPayloadMeansEmptyObject) {
  const auto r = decode(R"({"seq":0,"session_id":"","kind":"action"})");
  ASSERT_TRUE(std::holds_alternative<DecodeError>(r));
  EXPECT_EQ(std::get<DecodeError>(r).code, kBadPayload);
}

TEST(Protocol, ErrorEnvelopeIsValid) {
  const auto e = make_error(kMalformed, "bad");
  EXPECT_EQ(e.kind, MessageKind::error);
  EXPECT_FALSE(validate_payload(e.kind, e.payload));
  EXPECT_EQ(error_code(encode(e)), "ok");
}

TEST(Protocol, FuzzNeverThrows) {
  std::mt19937_64 rng(5);
  std::vector<std::string> seeds;
  for (MessageKind k : kAllKinds) seeds.push_back(frame(kind_name(k), valid_payload(k)));
  const std::string alphabet = "{}[]\":,0123456789abcdefghijklmnopqrstuvwxyz \\-.\x01\xff";
  std::uniform_int_distribution<int> op(0, 3);
  for (int i = 0; i < 5000; ++i) {
    std::string f = seeds[rng() % seeds.size()];
    const int edits = 1 + static_cast<int>(rng() % 8);
    for (int k = 0; k < edits && !f.empty(); ++k) {
      const std::size_t at = rng() % f.size();
      switch (op(rng)) {
        case 0: f[at] = alphabet[rng() % alphabet.size()]; break;
        case 1: f.erase(at, 1 + rng() % 4); break;
        case 2: f.insert(at, 1, alphabet[rng() % alphabet.size()]); break;
        default: f = f.substr(0, at); break;
      }
    }
    EXPECT_NO_THROW({
      const auto r = decode(f);
      if (const auto* e = std::get_if<Envelope>(&r)) (void)encode(*e);
    });
  }
  for (int i = 0; i < 2000; ++i) {
    std::string f(rng() % 64, '\0');
    for (auto& c : f) c = static_cast<char>(rng());
    EXPECT_NO_THROW((void)decode(f));
  }
}
