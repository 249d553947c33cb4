#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>

#include <json.hpp>

namespace dialnav::protocol {

inline constexpr std::size_t kMaxFrameBytes = std::size_t{1} << 20;
inline constexpr int kMaxNesting = 64;
inline constexpr int kHeartbeatSeconds = 30;

enum class MessageKind {
  hello,
  episode_start,
  observation,
  action,
  localize_request,
  localize_response,
  answer_request,
  answer_response,
  episode_end,
  error,
};

inline constexpr MessageKind kAllKinds[] = {
    MessageKind::hello,          MessageKind::episode_start,    MessageKind::observation,
    MessageKind::action,         MessageKind::localize_request, MessageKind::localize_response,
    MessageKind::answer_request, MessageKind::answer_response,  MessageKind::episode_end,
    MessageKind::error,
};

std::string_view kind_name(MessageKind k);
std::optional<MessageKind> parse_kind(std::string_view name);

enum class Role { navigator, guide, observer };

std::string_view role_name(Role r);
std::optional<Role> parse_role(std::string_view name);

/// One wire message. `payload` is kept as a JSON object so fields this
/// version does not know about survive a decode/encode cycle.
struct Envelope {
  std::uint64_t seq = 0;
  std::string session_id;
  MessageKind kind = MessageKind::hello;
  nlohmann::json payload = nlohmann::json::object();

  friend bool operator==(const Envelope&, const Envelope&) = default;
};

// Error codes carried by error envelopes.
inline constexpr std::string_view kFrameTooLarge = "frame_too_large";
inline constexpr std::string_view kMalformed = "malformed";
inline constexpr std::string_view kUnknownKind = "unknown_kind";
inline constexpr std::string_view kBadEnvelope = "bad_envelope";
inline constexpr std::string_view kBadPayload = "bad_payload";

struct DecodeError {
  std::string code;
  std::string message;
};

using DecodeResult = std::variant<Envelope, DecodeError>;

/// Serialized envelope plus the terminating newline.
std::string encode(const Envelope& e);
/// Decodes one frame (trailing CR/LF tolerated). Never throws.
DecodeResult decode(std::string_view frame);

/// Empty (whitespace-only) frames are keep-alives, not envelopes.
bool is_heartbeat(std::string_view frame);

/// Checks the kind-specific payload schema; returns a message on failure.
std::optional<std::string> validate_payload(MessageKind kind, const nlohmann::json& payload);

Envelope make_error(std::string_view code, std::string_view message);

}  // namespace dialnav::protocol
