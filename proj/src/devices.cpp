#include "xri/devices.hpp"

#include <algorithm>

namespace xri {

using ojson = nlohmann::ordered_json;

namespace {

std::vector<std::string> split_path(std::string_view path) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < path.size()) {
    if (path[i] == '/') {
      ++i;
      continue;
    }
    std::size_t j = path.find('/', i);
    if (j == std::string_view::npos) j = path.size();
    out.emplace_back(path.substr(i, j - i));
    i = j;
  }
  return out;
}

ojson hue_error(int type, const std::string& address, const std::string& description) {
  ojson inner;
  inner["type"] = type;
  inner["address"] = address;
  inner["description"] = description;
  ojson entry;
  entry["error"] = std::move(inner);
  return entry;
}

HttpResponse json_response(int status, const ojson& body) { return {status, body.dump()}; }

HttpResponse bridge_unavailable() {
  return json_response(503, ojson::array({hue_error(901, "/", "Internal error, 503")}));
}

}  // namespace

void FaultSchedule::add_outage(std::int64_t start_ms, std::int64_t duration_ms) {
  std::lock_guard lock(mutex_);
  windows_.emplace_back(start_ms, start_ms + duration_ms);
}

bool FaultSchedule::down(std::int64_t now_ms) const {
  std::lock_guard lock(mutex_);
  return std::any_of(windows_.begin(), windows_.end(),
                     [&](const auto& w) { return now_ms >= w.first && now_ms < w.second; });
}

void FaultSchedule::clear() {
  std::lock_guard lock(mutex_);
  windows_.clear();
}

std::string_view to_string(DeviceKind k) { return k == DeviceKind::ColorBulb ? "bulb" : "plug"; }

std::optional<DeviceKind> parse_device_kind(std::string_view s) {
  if (s == "bulb") return DeviceKind::ColorBulb;
  if (s == "plug") return DeviceKind::Plug;
  return std::nullopt;
}

std::map<std::string, ValueType> device_schema(DeviceKind kind) {
  if (kind == DeviceKind::ColorBulb) return {{"color", ValueType::Color}};
  return {{"power", ValueType::Bool}};
}

// ---------------------------------------------------------------------------
// Bridge

BridgeEmulator::BridgeEmulator(std::string username, int bulb_count, const Clock& clock)
    : username_(std::move(username)), clock_(clock) {
  for (int i = 1; i <= bulb_count; ++i) lights_.emplace(std::to_string(i), BulbState{});
}

ojson BridgeEmulator::put_state(std::string_view light_id, const ojson& body) {
  const std::string base = "/lights/" + std::string(light_id) + "/state";
  std::lock_guard lock(mutex_);
  auto it = lights_.find(std::string(light_id));
  if (it == lights_.end()) {
    return ojson::array({hue_error(3, base, "resource, " + base + ", not available")});
  }
  if (!body.is_object()) return ojson::array({hue_error(2, base, "body contains invalid json")});

  ojson out = ojson::array();
  BulbState& s = it->second;
  for (const auto& [field, value] : body.items()) {
    const std::string address = base + "/" + field;
    auto invalid = [&] {
      out.push_back(hue_error(7, address, "invalid value, " + value.dump() + ", for parameter, " + field));
    };
    auto ranged = [&](long long lo, long long hi) -> std::optional<long long> {
      if (!value.is_number_integer()) return std::nullopt;
      const long long v = value.get<long long>();
      if (v < lo || v > hi) return std::nullopt;
      return v;
    };

    ojson success;
    if (field == "on") {
      if (!value.is_boolean()) {
        invalid();
        continue;
      }
      s.on = value.get<bool>();
      success[address] = s.on;
    } else if (field == "hue") {
      auto v = ranged(0, kHueMax);
      if (!v) {
        invalid();
        continue;
      }
      s.hue = static_cast<std::uint16_t>(*v);
      success[address] = *v;
    } else if (field == "sat") {
      auto v = ranged(0, kSatMax);
      if (!v) {
        invalid();
        continue;
      }
      s.sat = static_cast<std::uint8_t>(*v);
      success[address] = *v;
    } else if (field == "bri") {
      auto v = ranged(kBriMin, kBriMax);
      if (!v) {
        invalid();
        continue;
      }
      s.bri = static_cast<std::uint8_t>(*v);
      success[address] = *v;
    } else {
      out.push_back(hue_error(6, address, "parameter, " + field + ", not available"));
      continue;
    }
    ojson entry;
    entry["success"] = std::move(success);
    out.push_back(std::move(entry));
  }
  return out;
}

std::map<std::string, BulbState> BridgeEmulator::get_lights() const {
  if (faults_.down(clock_.now_ms())) throw DeviceUnavailable("bridge unavailable");
  std::lock_guard lock(mutex_);
  return lights_;
}

std::optional<BulbState> BridgeEmulator::get_light(std::string_view light_id) const {
  std::lock_guard lock(mutex_);
  auto it = lights_.find(std::string(light_id));
  if (it == lights_.end()) return std::nullopt;
  return it->second;
}

ojson BridgeEmulator::light_json(std::string_view id, const BulbState& s) const {
  ojson state;
  state["on"] = s.on;
  state["bri"] = s.bri;
  state["hue"] = s.hue;
  state["sat"] = s.sat;
  state["colormode"] = "hs";
  state["reachable"] = true;
  ojson light;
  light["state"] = std::move(state);
  light["type"] = "Extended color light";
  light["name"] = "Hue color lamp " + std::string(id);
  return light;
}

HttpResponse BridgeEmulator::handle(const HttpRequest& req) {
  if (faults_.down(clock_.now_ms())) return bridge_unavailable();

  const auto parts = split_path(req.path);
  if (parts.size() < 3 || parts[0] != "api" || parts[2] != "lights") {
    return json_response(404, ojson::array({hue_error(4, req.path, "method, " + req.method + ", not available for resource, " + req.path)}));
  }
  if (parts[1] != username_) return json_response(200, ojson::array({hue_error(1, "/", "unauthorized user")}));

  if (req.method == "GET" && parts.size() == 3) {
    ojson all = ojson::object();
    for (const auto& [id, s] : get_lights()) all[id] = light_json(id, s);
    return json_response(200, all);
  }
  if (req.method == "GET" && parts.size() == 4) {
    auto s = get_light(parts[3]);
    if (!s) {
      const std::string address = "/lights/" + parts[3];
      return json_response(200, ojson::array({hue_error(3, address, "resource, " + address + ", not available")}));
    }
    return json_response(200, light_json(parts[3], *s));
  }
  if (req.method == "PUT" && parts.size() == 5 && parts[4] == "state") {
    ojson body = ojson::parse(req.body, nullptr, false);
    if (body.is_discarded()) {
      const std::string address = "/lights/" + parts[3] + "/state";
      return json_response(200, ojson::array({hue_error(2, address, "body contains invalid json")}));
    }
    return json_response(200, put_state(parts[3], body));
  }
  return json_response(404, ojson::array({hue_error(4, req.path, "method, " + req.method + ", not available for resource, " + req.path)}));
}

// ---------------------------------------------------------------------------
// Plug

ojson to_json(const DeviceEvent& e) {
  ojson j;
  j["device"] = e.device;
  j["var"] = e.var;
  if (const auto* b = std::get_if<bool>(&e.value)) {
    j["value"] = *b;
  } else if (const auto* d = std::get_if<double>(&e.value)) {
    j["value"] = *d;
  } else {
    j["value"] = format_value(e.value);
  }
  j["press_seq"] = e.press_seq;
  return j;
}

std::optional<DeviceEvent> device_event_from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.size() != 4) return std::nullopt;
  if (!j.contains("device") || !j["device"].is_string()) return std::nullopt;
  if (!j.contains("var") || !j["var"].is_string()) return std::nullopt;
  if (!j.contains("press_seq") || !j["press_seq"].is_number_unsigned()) return std::nullopt;
  if (!j.contains("value")) return std::nullopt;
  DeviceEvent e;
  e.device = j["device"].get<std::string>();
  e.var = j["var"].get<std::string>();
  e.press_seq = j["press_seq"].get<std::uint64_t>();
  const auto& v = j["value"];
  if (v.is_boolean()) {
    e.value = v.get<bool>();
  } else if (v.is_number()) {
    e.value = v.get<double>();
  } else if (v.is_string()) {
    auto parsed = parse_value(v.get<std::string>());
    if (!parsed) return std::nullopt;
    e.value = *parsed;
  } else {
    return std::nullopt;
  }
  return e;
}

PlugEmulator::PlugEmulator(std::string id, std::string key, const Clock& clock)
    : id_(std::move(id)), key_(std::move(key)), clock_(clock) {}

void PlugEmulator::set_sink(EventSink sink) {
  std::lock_guard lock(delivery_mutex_);
  sink_ = std::move(sink);
}

PlugEmulator::TriggerStatus PlugEmulator::trigger(std::string_view event, std::string_view key) {
  if (faults_.down(clock_.now_ms())) return TriggerStatus::Unavailable;
  if (key != key_) return TriggerStatus::AuthError;
  std::lock_guard lock(mutex_);
  if (event == "lamp_on") {
    state_.on = true;
  } else if (event == "lamp_off") {
    state_.on = false;
  } else {
    return TriggerStatus::NotFound;
  }
  state_.last_event = std::string(event);
  return TriggerStatus::Ok;
}

PlugState PlugEmulator::press() {
  PlugState after;
  DeviceEvent event;
  {
    std::lock_guard lock(mutex_);
    state_.on = !state_.on;
    state_.last_event = "button";
    ++state_.press_seq;
    after = state_;
    event = DeviceEvent{id_, "power", state_.on, state_.press_seq};
  }
  {
    std::lock_guard lock(delivery_mutex_);
    outbox_.push_back(std::move(event));
  }
  flush();
  return after;
}

void PlugEmulator::poll() { flush(); }

void PlugEmulator::flush() {
  std::lock_guard lock(delivery_mutex_);
  const std::int64_t now = clock_.now_ms();
  while (!outbox_.empty()) {
    if (now < next_attempt_ms_) return;
    const bool delivered = !faults_.down(now) && sink_ && sink_(outbox_.front());
    if (!delivered) {
      ++attempts_;
      const int shift = std::min(attempts_ - 1, 16);
      next_attempt_ms_ = now + std::min(kBackoffBaseMs << shift, kBackoffMaxMs);
      return;
    }
    outbox_.pop_front();
    attempts_ = 0;
    next_attempt_ms_ = 0;
  }
}

PlugState PlugEmulator::state() const {
  std::lock_guard lock(mutex_);
  return state_;
}

std::size_t PlugEmulator::pending_events() const {
  std::lock_guard lock(delivery_mutex_);
  return outbox_.size();
}

ojson PlugEmulator::state_json(const PlugState& s) const {
  ojson j;
  j["device"] = id_;
  j["on"] = s.on;
  j["last_event"] = s.last_event ? ojson(*s.last_event) : ojson(nullptr);
  j["press_seq"] = s.press_seq;
  return j;
}

HttpResponse PlugEmulator::handle(const HttpRequest& req) {
  auto failure = [](int status, std::string_view error, const std::string& message) {
    ojson j;
    j["ok"] = false;
    j["error"] = error;
    j["message"] = message;
    return json_response(status, j);
  };

  const auto parts = split_path(req.path);
  if (req.method == "POST" && parts.size() == 5 && parts[0] == "trigger" && parts[2] == "with" && parts[3] == "key") {
    switch (trigger(parts[1], parts[4])) {
      case TriggerStatus::Ok: {
        ojson j;
        j["ok"] = true;
        j["event"] = parts[1];
        j["on"] = state().on;
        return json_response(200, j);
      }
      case TriggerStatus::AuthError: return failure(401, "auth", "invalid key");
      case TriggerStatus::NotFound: return failure(404, "not_found", "no such event: " + parts[1]);
      case TriggerStatus::Unavailable: return failure(503, "unavailable", "device offline");
    }
  }
  if (req.method == "GET" && parts.size() == 1 && parts[0] == "state") {
    if (faults_.down(clock_.now_ms())) return failure(503, "unavailable", "device offline");
    return json_response(200, state_json(state()));
  }
  if (req.method == "POST" && parts.size() == 1 && parts[0] == "press") {
    return json_response(200, state_json(press()));
  }
  return failure(404, "not_found", "no route: " + req.method + " " + req.path);
}

// ---------------------------------------------------------------------------
// Adapters

namespace {

Delivery classify_http(const HttpResponse& r) {
  if (r.status == 503) return {false, true, "device unavailable"};
  if (r.status != 200) return {false, false, "HTTP " + std::to_string(r.status) + ": " + r.body};
  return {true, false, ""};
}

}  // namespace

Delivery adapter_send(const DeviceDescriptor& device, DeviceTransport& transport, const Command& command,
                      const AdapterOptions& options) {
  if (command.target != CommandTarget::Device) throw SyncError("adapter_send: not a device command");

  HttpRequest req;
  if (device.kind == DeviceKind::Plug) {
    const auto* on = std::get_if<bool>(&command.value);
    if (command.var != "power" || !on) {
      throw SyncError("device '" + device.id + "' (plug) cannot take '" + command.var + "' = " +
                      format_value(command.value));
    }
    req = {"POST", "/trigger/" + std::string(*on ? "lamp_on" : "lamp_off") + "/with/key/" + options.plug_key, ""};
  } else {
    const auto* rgb = std::get_if<ColorRGB>(&command.value);
    if (command.var != "color" || !rgb) {
      throw SyncError("device '" + device.id + "' (bulb) cannot take '" + command.var + "' = " +
                      format_value(command.value));
    }
    const ColorHSB hsb = command.hsb ? *command.hsb : rgb_to_hsb(*rgb);
    ojson body;
    body["on"] = hsb.on;
    body["hue"] = hsb.hue;
    body["sat"] = hsb.sat;
    body["bri"] = hsb.bri;
    req = {"PUT", "/api/" + options.bridge_user + "/lights/" + device.resource + "/state", body.dump()};
  }

  HttpResponse resp;
  try {
    resp = transport.request(req);
  } catch (const DeviceUnavailable& e) {
    return {false, true, e.what()};
  }
  Delivery d = classify_http(resp);
  if (!d.ok || device.kind == DeviceKind::Plug) return d;

  auto parsed = ojson::parse(resp.body, nullptr, false);
  if (parsed.is_discarded() || !parsed.is_array()) return {false, false, "malformed bridge response"};
  for (const auto& entry : parsed) {
    if (!entry.contains("success")) return {false, false, entry.dump()};
  }
  return d;
}

std::map<std::string, Value> adapter_read(const DeviceDescriptor& device, DeviceTransport& transport,
                                          const AdapterOptions& options) {
  HttpRequest req{"GET", device.kind == DeviceKind::Plug ? "/state"
                                                         : "/api/" + options.bridge_user + "/lights/" + device.resource,
                  ""};
  const HttpResponse resp = transport.request(req);
  if (resp.status != 200) throw DeviceUnavailable("device '" + device.id + "' read failed: HTTP " + std::to_string(resp.status));
  const auto j = nlohmann::json::parse(resp.body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw DeviceUnavailable("device '" + device.id + "' read: malformed body");

  try {
    if (device.kind == DeviceKind::Plug) return {{"power", j.at("on").get<bool>()}};
    const auto& st = j.at("state");
    ColorHSB hsb{st.at("on").get<bool>(), st.at("hue").get<std::uint16_t>(), st.at("sat").get<std::uint8_t>(),
                 st.at("bri").get<std::uint8_t>()};
    return {{"color", hsb_to_rgb(hsb)}};
  } catch (const nlohmann::json::exception& e) {
    throw DeviceUnavailable("device '" + device.id + "' read: " + e.what());
  }
}

}  // namespace xri
