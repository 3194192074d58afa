#include "xri/wire.hpp"

#include "xri/sync_engine.hpp"

#include <array>
#include <initializer_list>
#include <set>

namespace xri {

using json = nlohmann::json;

namespace {

constexpr std::array<std::string_view, 8> kTypeNames{"hello", "subscribe",        "state_update", "command",
                                                     "event", "coherence_report", "error",        "ack"};

// Keys of `obj` must be a subset of required ∪ optional and contain all of required.
std::optional<std::string> check_keys(const json& obj, std::initializer_list<std::string_view> required,
                                      std::initializer_list<std::string_view> optional = {}) {
  for (auto key : required) {
    if (!obj.contains(std::string(key))) return "missing key '" + std::string(key) + "'";
  }
  for (const auto& [key, _] : obj.items()) {
    bool known = false;
    for (auto k : required) known = known || k == key;
    for (auto k : optional) known = known || k == key;
    if (!known) return "unknown key '" + key + "'";
  }
  return std::nullopt;
}

bool non_empty_string(const json& j) { return j.is_string() && !j.get_ref<const std::string&>().empty(); }

bool is_uint(const json& j) { return j.is_number_unsigned() || (j.is_number_integer() && j.get<std::int64_t>() >= 0); }

std::optional<std::string> validate_payload(FrameType type, const std::optional<std::string>& agent,
                                            const json& p) {
  if (!p.is_object()) return "payload must be an object";
  switch (type) {
    case FrameType::hello: {
      if (auto e = check_keys(p, {"client"})) return e;
      if (!non_empty_string(p["client"])) return "hello.client must be a non-empty string";
      return std::nullopt;
    }
    case FrameType::subscribe: {
      if (auto e = check_keys(p, {"agents"}, {"classes"})) return e;
      const auto& agents = p["agents"];
      if (!agents.is_array() || agents.empty()) return "subscribe.agents must be a non-empty array";
      for (const auto& a : agents) {
        if (!non_empty_string(a)) return "subscribe.agents entries must be non-empty strings";
      }
      if (p.contains("classes")) {
        const auto& classes = p["classes"];
        if (!classes.is_array()) return "subscribe.classes must be an array";
        for (const auto& c : classes) {
          if (!c.is_string() || !parse_relationship(c.get<std::string>())) return "subscribe.classes: unknown class";
        }
      }
      return std::nullopt;
    }
    case FrameType::state_update: {
      if (!agent || agent->empty()) return "state_update requires an agent";
      if (auto e = check_keys(p, {"var", "value"})) return e;
      if (!non_empty_string(p["var"])) return "state_update.var must be a non-empty string";
      if (!value_from_json(p["value"])) return "state_update.value is not a valid value";
      return std::nullopt;
    }
    case FrameType::command: {
      if (auto e = check_keys(p, {"target", "var", "value"}, {"device"})) return e;
      const auto& target = p["target"];
      if (!target.is_string() || (target != "device" && target != "scene")) {
        return "command.target must be 'device' or 'scene'";
      }
      if (target == "device" && (!p.contains("device") || !non_empty_string(p["device"]))) {
        return "device command requires a device id";
      }
      if (p.contains("device") && !non_empty_string(p["device"])) return "command.device must be a non-empty string";
      if (!non_empty_string(p["var"])) return "command.var must be a non-empty string";
      if (!value_from_json(p["value"])) return "command.value is not a valid value";
      return std::nullopt;
    }
    case FrameType::event: {
      if (auto e = check_keys(p, {"class", "kind", "data"})) return e;
      if (!p["class"].is_string() || !parse_relationship(p["class"].get<std::string>())) {
        return "event.class is not a relationship class";
      }
      if (!non_empty_string(p["kind"])) return "event.kind must be a non-empty string";
      if (!p["data"].is_object()) return "event.data must be an object";
      return std::nullopt;
    }
    case FrameType::coherence_report: {
      if (auto e = check_keys(p, {"link", "window", "spans", "noise"})) return e;
      if (!non_empty_string(p["link"])) return "coherence_report.link must be a non-empty string";
      auto is_range = [](const json& r) {
        return r.is_array() && r.size() == 2 && r[0].is_number_integer() && r[1].is_number_integer() &&
               r[0].get<std::int64_t>() <= r[1].get<std::int64_t>();
      };
      if (!is_range(p["window"])) return "coherence_report.window must be [start, end]";
      if (!p["spans"].is_array()) return "coherence_report.spans must be an array";
      for (const auto& s : p["spans"]) {
        if (!is_range(s)) return "coherence_report.spans entries must be [start, end]";
      }
      const auto& noise = p["noise"];
      if (!noise.is_number() || noise.get<double>() < 0.0 || noise.get<double>() > 1.0) {
        return "coherence_report.noise must be in [0, 1]";
      }
      return std::nullopt;
    }
    case FrameType::error: {
      if (auto e = check_keys(p, {"code", "message"})) return e;
      if (!non_empty_string(p["code"]) || !p["message"].is_string()) return "error needs a code and a message";
      return std::nullopt;
    }
    case FrameType::ack: {
      if (auto e = check_keys(p, {"ack_seq"})) return e;
      if (!is_uint(p["ack_seq"])) return "ack.ack_seq must be a non-negative integer";
      return std::nullopt;
    }
  }
  return "unknown frame type";
}

}  // namespace

std::string_view to_string(FrameType t) {
  const auto i = static_cast<std::size_t>(t);
  return i < kTypeNames.size() ? kTypeNames[i] : std::string_view("?");
}

std::optional<FrameType> parse_frame_type(std::string_view s) {
  for (std::size_t i = 0; i < kTypeNames.size(); ++i) {
    if (kTypeNames[i] == s) return static_cast<FrameType>(i);
  }
  return std::nullopt;
}

json value_to_json(const Value& v) {
  return std::visit(
      [](const auto& x) -> json {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, bool> || std::is_same_v<T, double>) {
          return json(x);
        } else if constexpr (std::is_same_v<T, ColorRGB>) {
          return json{{"r", x.r}, {"g", x.g}, {"b", x.b}};
        } else {
          return json{{"x", x.x}, {"y", x.y}, {"z", x.z}};
        }
      },
      v);
}

std::optional<Value> value_from_json(const json& j) {
  if (j.is_boolean()) return Value{j.get<bool>()};
  if (j.is_number()) {
    const double d = j.get<double>();
    if (!std::isfinite(d)) return std::nullopt;
    return Value{d};
  }
  if (!j.is_object() || j.size() != 3) return std::nullopt;
  auto number = [&](const char* key) -> std::optional<double> {
    auto it = j.find(key);
    if (it == j.end() || !it->is_number()) return std::nullopt;
    return it->get<double>();
  };
  if (j.contains("r")) {
    auto r = number("r"), g = number("g"), b = number("b");
    if (!r || !g || !b) return std::nullopt;
    ColorRGB c{*r, *g, *b};
    if (!is_valid(c)) return std::nullopt;
    return Value{c};
  }
  auto x = number("x"), y = number("y"), z = number("z");
  if (!x || !y || !z) return std::nullopt;
  Vector3 p{*x, *y, *z};
  if (!is_finite(p)) return std::nullopt;
  return Value{p};
}

std::optional<std::string> validate_frame(const Frame& f) {
  if (f.v != kProtocolVersion) return "unsupported protocol version " + std::to_string(f.v);
  if (static_cast<std::size_t>(f.type) >= kTypeNames.size()) return "unknown frame type";
  if (f.ts < 0) return "ts must be non-negative";
  if (f.agent && f.agent->empty()) return "agent must not be empty";
  return validate_payload(f.type, f.agent, f.payload);
}

std::string encode_frame(const Frame& f) {
  if (auto problem = validate_frame(f)) throw WireFault("encode_frame: " + *problem);
  std::string out = "{\"v\":" + std::to_string(f.v);
  out += ",\"type\":" + json(std::string(to_string(f.type))).dump();
  out += ",\"seq\":" + std::to_string(f.seq);
  out += ",\"ts\":" + std::to_string(f.ts);
  if (f.agent) out += ",\"agent\":" + json(*f.agent).dump();
  out += ",\"payload\":" + f.payload.dump();
  out += "}";
  return out;
}

std::variant<Frame, WireError> decode_frame(std::string_view text) {
  auto bad = [](std::string message) { return WireError{std::string(wire_error::kBadFrame), std::move(message)}; };

  json j = json::parse(text.begin(), text.end(), nullptr, false);
  if (j.is_discarded()) return bad("malformed JSON");
  if (!j.is_object()) return bad("frame must be a JSON object");
  if (auto e = check_keys(j, {"v", "type", "seq", "ts", "payload"}, {"agent"})) return bad(*e);

  Frame f;
  if (!j["v"].is_number_integer()) return bad("v must be an integer");
  f.v = j["v"].get<int>();
  if (f.v != kProtocolVersion) return bad("unsupported protocol version " + std::to_string(f.v));

  if (!j["type"].is_string()) return bad("type must be a string");
  auto type = parse_frame_type(j["type"].get<std::string>());
  if (!type) return bad("unknown frame type '" + j["type"].get<std::string>() + "'");
  f.type = *type;

  if (!is_uint(j["seq"])) return bad("seq must be a non-negative integer");
  f.seq = j["seq"].get<std::uint64_t>();
  if (!j["ts"].is_number_integer() || j["ts"].get<std::int64_t>() < 0) return bad("ts must be a non-negative integer");
  f.ts = j["ts"].get<std::int64_t>();

  if (j.contains("agent")) {
    if (!non_empty_string(j["agent"])) return bad("agent must be a non-empty string");
    f.agent = j["agent"].get<std::string>();
  }
  f.payload = std::move(j["payload"]);
  if (auto problem = validate_payload(f.type, f.agent, f.payload)) return bad(*problem);
  return f;
}

Frame make_error_frame(std::uint64_t seq, std::int64_t ts, std::string_view code, std::string_view message) {
  Frame f;
  f.type = FrameType::error;
  f.seq = seq;
  f.ts = ts;
  f.payload = json{{"code", std::string(code)}, {"message", std::string(message)}};
  return f;
}

Frame make_ack_frame(std::uint64_t seq, std::int64_t ts, std::uint64_t ack_seq) {
  Frame f;
  f.type = FrameType::ack;
  f.seq = seq;
  f.ts = ts;
  f.payload = json{{"ack_seq", ack_seq}};
  return f;
}

}  // namespace xri
