#include "dialnav/protocol.hpp"

namespace dialnav::protocol {

using json = nlohmann::json;

namespace {

bool has_string(const json& p, const char* key) {
  auto it = p.find(key);
  return it != p.end() && it->is_string();
}

bool has_nonempty_string(const json& p, const char* key) {
  return has_string(p, key) && !p[key].get_ref<const std::string&>().empty();
}

// Bracket depth outside string literals. Guards the parser against frames
// built to exhaust the stack.
int nesting_depth(std::string_view s) {
  int depth = 0, max_depth = 0;
  bool in_string = false, escaped = false;
  for (char c : s) {
    if (in_string) {
      if (escaped) {
        escaped = false;
      } else if (c == '\\') {
        escaped = true;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    switch (c) {
      case '"': in_string = true; break;
      case '[':
      case '{': max_depth = std::max(max_depth, ++depth); break;
      case ']':
      case '}': --depth; break;
      default: break;
    }
  }
  return max_depth;
}

}  // namespace

std::string_view kind_name(MessageKind k) {
  switch (k) {
    case MessageKind::hello: return "hello";
    case MessageKind::episode_start: return "episode_start";
    case MessageKind::observation: return "observation";
    case MessageKind::action: return "action";
    case MessageKind::localize_request: return "localize_request";
    case MessageKind::localize_response: return "localize_response";
    case MessageKind::answer_request: return "answer_request";
    case MessageKind::answer_response: return "answer_response";
    case MessageKind::episode_end: return "episode_end";
    case MessageKind::error: return "error";
  }
  return "error";
}

std::optional<MessageKind> parse_kind(std::string_view name) {
  for (MessageKind k : kAllKinds) {
    if (kind_name(k) == name) return k;
  }
  return std::nullopt;
}

std::string_view role_name(Role r) {
  switch (r) {
    case Role::navigator: return "navigator";
    case Role::guide: return "guide";
    case Role::observer: return "observer";
  }
  return "observer";
}

std::optional<Role> parse_role(std::string_view name) {
  for (Role r : {Role::navigator, Role::guide, Role::observer}) {
    if (role_name(r) == name) return r;
  }
  return std::nullopt;
}

std::string encode(const Envelope& e) {
  json j{{"seq", e.seq}, {"session_id", e.session_id}, {"kind", kind_name(e.kind)}, {"payload", e.payload}};
  std::string out = j.dump(-1, ' ', false, json::error_handler_t::replace);
  out.push_back('\n');
  return out;
}

bool is_heartbeat(std::string_view frame) {
  return frame.find_first_not_of(" \t\r\n") == std::string_view::npos;
}

std::optional<std::string> validate_payload(MessageKind kind, const json& p) {
  if (!p.is_object()) return "payload must be an object";
  switch (kind) {
    case MessageKind::hello:
      if (!has_string(p, "role") || !parse_role(p["role"].get<std::string>())) {
        return "hello.role must be navigator, guide or observer";
      }
      if (p.contains("episode_id") && !p["episode_id"].is_string()) return "hello.episode_id must be a string";
      return std::nullopt;
    case MessageKind::episode_start:
      if (!has_string(p, "episode_id")) return "episode_start.episode_id must be a string";
      return std::nullopt;
    case MessageKind::observation:
      if (!has_string(p, "node")) return "observation.node must be a string";
      if (!p.contains("neighbors") || !p["neighbors"].is_array()) return "observation.neighbors must be an array";
      return std::nullopt;
    case MessageKind::action: {
      if (!has_string(p, "type")) return "action.type must be a string";
      const auto& type = p["type"].get_ref<const std::string&>();
      if (type == "move") return has_nonempty_string(p, "node") ? std::nullopt : std::optional<std::string>("action.node required for move");
      if (type == "ask") return has_string(p, "question") ? std::nullopt : std::optional<std::string>("action.question required for ask");
      if (type == "stop" || type == "guess") return std::nullopt;
      return "action.type must be move, ask, stop or guess";
    }
    case MessageKind::localize_request:
      if (!has_string(p, "question")) return "localize_request.question must be a string";
      return std::nullopt;
    case MessageKind::localize_response:
      if (!has_nonempty_string(p, "node")) return "localize_response.node must be a non-empty string";
      return std::nullopt;
    case MessageKind::answer_request:
      if (!has_string(p, "question") || !has_string(p, "estimate")) {
        return "answer_request needs question and estimate";
      }
      if (!p.contains("shortest_path") || !p["shortest_path"].is_object()) {
        return "answer_request.shortest_path must be an object";
      }
      return std::nullopt;
    case MessageKind::answer_response:
      if (!has_string(p, "text")) return "answer_response.text must be a string";
      return std::nullopt;
    case MessageKind::episode_end:
      if (!has_string(p, "episode_id")) return "episode_end.episode_id must be a string";
      return std::nullopt;
    case MessageKind::error:
      if (!has_string(p, "code") || !has_string(p, "message")) return "error needs code and message";
      return std::nullopt;
  }
  return "unknown kind";
}

DecodeResult decode(std::string_view frame) {
  if (frame.size() > kMaxFrameBytes) {
    return DecodeError{std::string(kFrameTooLarge), "frame exceeds 1 MiB"};
  }
  while (!frame.empty() && (frame.back() == '\n' || frame.back() == '\r')) frame.remove_suffix(1);
  if (frame.empty()) return DecodeError{std::string(kMalformed), "empty frame"};
  if (nesting_depth(frame) > kMaxNesting) return DecodeError{std::string(kMalformed), "frame nested too deeply"};

  json j = json::parse(frame.begin(), frame.end(), nullptr, false);
  if (j.is_discarded()) return DecodeError{std::string(kMalformed), "frame is not valid JSON"};
  if (!j.is_object()) return DecodeError{std::string(kBadEnvelope), "frame must be a JSON object"};

  auto kind_it = j.find("kind");
  if (kind_it == j.end() || !kind_it->is_string()) {
    return DecodeError{std::string(kBadEnvelope), "envelope.kind must be a string"};
  }
  auto kind = parse_kind(kind_it->get_ref<const std::string&>());
  if (!kind) return DecodeError{std::string(kUnknownKind), "unknown message kind"};

  auto seq_it = j.find("seq");
  if (seq_it == j.end() || !seq_it->is_number_unsigned()) {
    return DecodeError{std::string(kBadEnvelope), "envelope.seq must be a non-negative integer"};
  }
  auto sid_it = j.find("session_id");
  if (sid_it == j.end() || !sid_it->is_string()) {
    return DecodeError{std::string(kBadEnvelope), "envelope.session_id must be a string"};
  }
  json payload = json::object();
  if (auto p = j.find("payload"); p != j.end()) payload = std::move(*p);
  if (auto problem = validate_payload(*kind, payload)) return DecodeError{std::string(kBadPayload), *problem};

  Envelope e;
  e.seq = seq_it->get<std::uint64_t>();
  e.session_id = sid_it->get<std::string>();
  e.kind = *kind;
  e.payload = std::move(payload);
  return e;
}

Envelope make_error(std::string_view code, std::string_view message) {
  Envelope e;
  e.kind = MessageKind::error;
  e.payload = json{{"code", code}, {"message", message}};
  return e;
}

}  // namespace dialnav::protocol
