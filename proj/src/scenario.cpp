#include "xri/scenario.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace xri {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Geometry

bool socket_test(const Vector3& bulb, const Vector3& socket, double radius) {
  return distance(bulb, socket) < radius;
}

bool collision_test(const Vector3& a, double radius_a, const Vector3& b, double radius_b) {
  return distance(a, b) < radius_a + radius_b;
}

Vector3 rotate_about_y(const Vector3& offset, double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  return {offset.x * c + offset.z * s, offset.y, -offset.x * s + offset.z * c};
}

std::vector<Vector3> orbit_step(std::span<const Planet> planets, const Vector3& sun, double dt) {
  std::vector<Vector3> out;
  out.reserve(planets.size());
  for (const auto& p : planets) out.push_back(sun + rotate_about_y(p.pos - sun, p.omega * dt));
  return out;
}

std::vector<LampEmission> lamp_transition(bool prev_seated, bool now_seated, int button_events, bool current_power) {
  std::vector<LampEmission> out;
  bool power = current_power;
  if (!prev_seated && now_seated) {
    out.push_back({Origin::Virtual, true});
    power = true;
  } else if (prev_seated && !now_seated) {
    out.push_back({Origin::Virtual, false});
    power = false;
  }
  for (int i = 0; i < button_events; ++i) {
    power = !power;
    out.push_back({Origin::Physical, power});
  }
  return out;
}

ColorRGB pick_color(const Planet& planet, Rocket& rocket) {
  rocket.color = planet.color;
  return rocket.color;
}

std::vector<Command> propagate_ambient(SyncEngine& engine, const GalaxySpec& galaxy, const ColorRGB& color,
                                       Timestamp ts) {
  return engine.apply_virtual(galaxy.rocket_agent, "color", color, ts).commands;
}

// ---------------------------------------------------------------------------
// Configuration

std::int64_t ScenarioConfig::tick_ms() const { return std::max<std::int64_t>(1, std::llround(1000.0 / tick_rate)); }

const DeviceSpec* ScenarioConfig::device(std::string_view id) const {
  for (const auto& d : devices) {
    if (d.id == id) return &d;
  }
  return nullptr;
}

std::string_view to_string(ScenarioKind k) { return k == ScenarioKind::Lamp ? "lamp" : "galaxy"; }

namespace {

std::vector<std::string> tokenize(std::string_view line) {
  if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
  std::vector<std::string> out;
  std::istringstream in{std::string(line)};
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

double number(const std::string& tok, int line, std::string_view what) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc{} || ptr != tok.data() + tok.size() || !std::isfinite(v)) {
    throw ConfigError(line, "expected a number for " + std::string(what) + ", got '" + tok + "'");
  }
  return v;
}

std::uint64_t unsigned_number(const std::string& tok, int line, std::string_view what) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc{} || ptr != tok.data() + tok.size()) {
    throw ConfigError(line, "expected a non-negative integer for " + std::string(what) + ", got '" + tok + "'");
  }
  return v;
}

Vector3 vec_at(const std::vector<std::string>& t, std::size_t i, int line, std::string_view what) {
  if (t.size() < i + 3) throw ConfigError(line, std::string(what) + " needs three coordinates");
  return {number(t[i], line, what), number(t[i + 1], line, what), number(t[i + 2], line, what)};
}

void expect_arity(const std::vector<std::string>& t, std::size_t n, int line, std::string_view usage) {
  if (t.size() != n) throw ConfigError(line, "usage: " + std::string(usage));
}

std::string join(const std::vector<std::string>& t, std::size_t from) {
  std::string out;
  for (std::size_t i = from; i < t.size(); ++i) {
    if (!out.empty()) out += ' ';
    out += t[i];
  }
  return out;
}

struct Lines {
  std::map<std::string, int> agents;
  std::map<std::string, int> links;
  int lamp = 0;
  int galaxy = 0;
  int scenario = 0;
};

SyncEngine build_engine_impl(const ScenarioConfig& config, const Lines* lines) {
  auto line_of = [&](const std::map<std::string, int> Lines::*table, const std::string& id) {
    if (!lines) return 0;
    auto it = (lines->*table).find(id);
    return it == (lines->*table).end() ? 0 : it->second;
  };

  SyncEngine engine;
  for (const auto& d : config.devices) engine.set_device_schema(d.id, device_schema(d.kind));
  for (const auto& a : config.agents) {
    if (a.device && !config.device(*a.device)) {
      throw ConfigError(line_of(&Lines::agents, a.id), "agent '" + a.id + "' bound to unknown device '" + *a.device + "'");
    }
    try {
      engine.add_agent(a);
    } catch (const SyncError& e) {
      throw ConfigError(line_of(&Lines::agents, a.id), e.what());
    }
  }
  for (const auto& l : config.links) {
    if (!config.device(l.device_id)) {
      throw ConfigError(line_of(&Lines::links, l.id), "link '" + l.id + "' references unknown device '" + l.device_id + "'");
    }
    try {
      engine.add_link(l);
    } catch (const SyncError& e) {
      throw ConfigError(line_of(&Lines::links, l.id), e.what());
    }
  }
  return engine;
}

const ExtendedMetaverseAgent* find_agent(const ScenarioConfig& c, std::string_view id) {
  for (const auto& a : c.agents) {
    if (a.id == id) return &a;
  }
  return nullptr;
}

void require_var(const ScenarioConfig& c, const std::string& agent, std::string_view var, ValueType type, int line) {
  const auto* a = find_agent(c, agent);
  if (!a) throw ConfigError(line, "unknown agent '" + agent + "'");
  const auto* v = a->virtual_state.find(var);
  if (!v || type_of(v->value) != type) {
    throw ConfigError(line, "agent '" + agent + "' needs a " + std::string(to_string(type)) + " variable '" +
                                std::string(var) + "'");
  }
}

void validate_scenario(const ScenarioConfig& c, const Lines& lines) {
  if (c.kind == ScenarioKind::Lamp) {
    if (!c.lamp) throw ConfigError(lines.scenario, "lamp scenario needs a 'lamp' line");
    const auto& l = *c.lamp;
    require_var(c, l.lamp_agent, "power", ValueType::Bool, lines.lamp);
    require_var(c, l.bulb_agent, "pos", ValueType::Vector, lines.lamp);
    const auto* plug = c.device(l.plug);
    if (!plug || plug->kind != DeviceKind::Plug) throw ConfigError(lines.lamp, "'" + l.plug + "' is not a plug device");
    if (!(l.socket_radius > 0.0)) throw ConfigError(lines.lamp, "socket radius must be positive");
  } else {
    if (!c.galaxy) throw ConfigError(lines.scenario, "galaxy scenario needs sun, planet, rocket and bulbs lines");
    const auto& g = *c.galaxy;
    if (g.planets.empty()) throw ConfigError(lines.galaxy, "galaxy scenario needs at least one planet");
    for (const auto& p : g.planets) {
      require_var(c, p.agent, "pos", ValueType::Vector, lines.galaxy);
      require_var(c, p.agent, "color", ValueType::Color, lines.galaxy);
    }
    if (g.rocket_agent.empty()) throw ConfigError(lines.galaxy, "galaxy scenario needs a 'rocket' line");
    require_var(c, g.rocket_agent, "pos", ValueType::Vector, lines.galaxy);
    require_var(c, g.rocket_agent, "color", ValueType::Color, lines.galaxy);
    if (g.bulbs.size() != 4) throw ConfigError(lines.galaxy, "galaxy scenario needs exactly 4 bulbs");
    for (const auto& b : g.bulbs) {
      const auto* d = c.device(b);
      if (!d || d->kind != DeviceKind::ColorBulb) throw ConfigError(lines.galaxy, "'" + b + "' is not a bulb device");
    }
  }
}

}  // namespace

ScenarioConfig parse_scenario(std::string_view text) {
  ScenarioConfig c;
  Lines lines;
  bool have_kind = false;
  bool have_sun = false;
  std::set<std::string> device_ids;

  auto galaxy = [&]() -> GalaxySpec& {
    if (!c.galaxy) c.galaxy.emplace();
    return *c.galaxy;
  };
  auto agent_mut = [&](const std::string& id, int line) -> ExtendedMetaverseAgent& {
    for (auto& a : c.agents) {
      if (a.id == id) return a;
    }
    throw ConfigError(line, "unknown agent '" + id + "'");
  };

  std::istringstream in{std::string(text)};
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto t = tokenize(raw);
    if (t.empty()) continue;
    const std::string& d = t[0];

    if (d == "scenario") {
      expect_arity(t, 2, line, "scenario <lamp|galaxy>");
      if (t[1] == "lamp") {
        c.kind = ScenarioKind::Lamp;
      } else if (t[1] == "galaxy") {
        c.kind = ScenarioKind::Galaxy;
      } else {
        throw ConfigError(line, "unknown scenario '" + t[1] + "'");
      }
      have_kind = true;
      lines.scenario = line;
    } else if (d == "tick_rate") {
      expect_arity(t, 2, line, "tick_rate <hz>");
      c.tick_rate = number(t[1], line, "tick_rate");
      if (!(c.tick_rate > 0.0)) throw ConfigError(line, "tick_rate must be positive");
    } else if (d == "grace_ms") {
      expect_arity(t, 2, line, "grace_ms <ms>");
      c.grace_ms = static_cast<std::int64_t>(unsigned_number(t[1], line, "grace_ms"));
    } else if (d == "seed") {
      expect_arity(t, 2, line, "seed <n>");
      c.seed = unsigned_number(t[1], line, "seed");
    } else if (d == "bridge_user") {
      expect_arity(t, 2, line, "bridge_user <name>");
      c.bridge_user = t[1];
    } else if (d == "plug_key") {
      expect_arity(t, 2, line, "plug_key <key>");
      c.plug_key = t[1];
    } else if (d == "device") {
      if (t.size() < 3) throw ConfigError(line, "usage: device <id> plug | device <id> bulb <light>");
      auto kind = parse_device_kind(t[2]);
      if (!kind) throw ConfigError(line, "unknown device kind '" + t[2] + "'");
      if (!device_ids.insert(t[1]).second) throw ConfigError(line, "duplicate device id '" + t[1] + "'");
      DeviceSpec spec{t[1], *kind, ""};
      if (*kind == DeviceKind::ColorBulb) {
        expect_arity(t, 4, line, "device <id> bulb <light 1..16>");
        const auto light = unsigned_number(t[3], line, "light id");
        if (light < 1 || light > 16) throw ConfigError(line, "light id must be in 1..16");
        spec.resource = std::to_string(light);
      } else {
        expect_arity(t, 3, line, "device <id> plug");
      }
      c.devices.push_back(std::move(spec));
    } else if (d == "agent") {
      if (t.size() != 5 && t.size() != 6) {
        throw ConfigError(line, "usage: agent <id> <embodiment> <interaction> <agency> [device=<id>]");
      }
      ExtendedMetaverseAgent a;
      a.id = t[1];
      auto e = parse_embodiment(t[2]);
      auto i = parse_interaction(t[3]);
      auto g = parse_agency(t[4]);
      if (!e) throw ConfigError(line, "unknown embodiment '" + t[2] + "'");
      if (!i) throw ConfigError(line, "unknown interaction '" + t[3] + "'");
      if (!g) throw ConfigError(line, "unknown agency '" + t[4] + "'");
      a.criteria = {*e, *i, *g};
      if (t.size() == 6) {
        if (t[5].rfind("device=", 0) != 0) throw ConfigError(line, "expected device=<id>, got '" + t[5] + "'");
        a.device = t[5].substr(7);
      }
      if (lines.agents.contains(a.id)) throw ConfigError(line, "duplicate agent id '" + a.id + "'");
      lines.agents[a.id] = line;
      c.agents.push_back(std::move(a));
    } else if (d == "var") {
      if (t.size() < 5) throw ConfigError(line, "usage: var <agent> <name> <bool|scalar|rgb|vec3> <value>");
      auto& a = agent_mut(t[1], line);
      auto type = parse_value_type(t[3]);
      if (!type) throw ConfigError(line, "unknown value type '" + t[3] + "'");
      auto value = parse_value(join(t, 4), type);
      if (!value) throw ConfigError(line, "invalid " + t[3] + " value '" + join(t, 4) + "'");
      a.virtual_state.set(t[2], VersionedValue{*value, Timestamp{0}, Origin::Virtual, 0});
    } else if (d == "link") {
      if (t.size() < 6) throw ConfigError(line, "usage: link <id> <agent> <device> <mode> <virtual:physical[:transform]>...");
      SyncLink l;
      l.id = t[1];
      l.agent_id = t[2];
      l.device_id = t[3];
      auto mode = parse_interaction(t[4]);
      if (!mode) throw ConfigError(line, "unknown link mode '" + t[4] + "'");
      l.mode = *mode;
      for (std::size_t i = 5; i < t.size(); ++i) {
        const auto& m = t[i];
        const auto c1 = m.find(':');
        if (c1 == std::string::npos) throw ConfigError(line, "mapping '" + m + "' must be virtual:physical[:transform]");
        const auto c2 = m.find(':', c1 + 1);
        VarMapping vm;
        vm.virtual_var = m.substr(0, c1);
        vm.physical_var = m.substr(c1 + 1, c2 == std::string::npos ? std::string::npos : c2 - c1 - 1);
        if (c2 != std::string::npos) {
          auto tr = parse_transform(m.substr(c2 + 1));
          if (!tr) throw ConfigError(line, "unknown transform in '" + m + "'");
          vm.transform = *tr;
        }
        if (vm.virtual_var.empty() || vm.physical_var.empty()) throw ConfigError(line, "empty variable in '" + m + "'");
        l.mappings.push_back(std::move(vm));
      }
      if (lines.links.contains(l.id)) throw ConfigError(line, "duplicate link id '" + l.id + "'");
      lines.links[l.id] = line;
      c.links.push_back(std::move(l));
    } else if (d == "lamp") {
      // lamp <lamp_agent> <bulb_agent> <plug> socket <x> <y> <z> radius <r>
      expect_arity(t, 10, line, "lamp <lamp_agent> <bulb_agent> <plug> socket <x> <y> <z> radius <r>");
      if (t[4] != "socket" || t[8] != "radius") {
        throw ConfigError(line, "usage: lamp <lamp_agent> <bulb_agent> <plug> socket <x> <y> <z> radius <r>");
      }
      LampSpec l{t[1], t[2], t[3], vec_at(t, 5, line, "socket"), number(t[9], line, "radius")};
      c.lamp = l;
      lines.lamp = line;
    } else if (d == "sun") {
      expect_arity(t, 4, line, "sun <x> <y> <z>");
      galaxy().sun = vec_at(t, 1, line, "sun");
      have_sun = true;
      if (!lines.galaxy) lines.galaxy = line;
    } else if (d == "planet") {
      expect_arity(t, 6, line, "planet <agent> radius <r> omega <rad/s>");
      if (t[2] != "radius" || t[4] != "omega") throw ConfigError(line, "usage: planet <agent> radius <r> omega <rad/s>");
      PlanetSpec p{t[1], number(t[3], line, "radius"), number(t[5], line, "omega")};
      if (!(p.radius > 0.0)) throw ConfigError(line, "planet radius must be positive");
      galaxy().planets.push_back(p);
      if (!lines.galaxy) lines.galaxy = line;
    } else if (d == "rocket") {
      expect_arity(t, 4, line, "rocket <agent> radius <r>");
      if (t[2] != "radius") throw ConfigError(line, "usage: rocket <agent> radius <r>");
      galaxy().rocket_agent = t[1];
      galaxy().rocket_radius = number(t[3], line, "radius");
      if (!(galaxy().rocket_radius > 0.0)) throw ConfigError(line, "rocket radius must be positive");
      if (!lines.galaxy) lines.galaxy = line;
    } else if (d == "bulbs") {
      if (t.size() < 2) throw ConfigError(line, "usage: bulbs <device>...");
      galaxy().bulbs.assign(t.begin() + 1, t.end());
      if (!lines.galaxy) lines.galaxy = line;
    } else {
      throw ConfigError(line, "unknown directive '" + d + "'");
    }
  }

  if (!have_kind) throw ConfigError(0, "missing 'scenario' line");
  if (c.kind == ScenarioKind::Galaxy && c.galaxy && !have_sun) throw ConfigError(lines.galaxy, "galaxy scenario needs a 'sun' line");
  validate_scenario(c, lines);
  build_engine_impl(c, &lines);
  return c;
}

ScenarioConfig load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(0, "cannot open scenario file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return parse_scenario(buf.str());
  } catch (const ConfigError& e) {
    throw ConfigError(e.line(), path + ": " + (e.line() > 0 ? std::string(e.what()).substr(std::string(e.what()).find(':') + 2) : e.what()));
  }
}

SyncEngine build_engine(const ScenarioConfig& config) { return build_engine_impl(config, nullptr); }

// ---------------------------------------------------------------------------
// Local devices

LocalDevices::LocalDevices(const ScenarioConfig& config, const Clock& clock) {
  int lights = 0;
  for (const auto& d : config.devices) {
    if (d.kind == DeviceKind::ColorBulb) {
      lights = std::max(lights, std::stoi(d.resource));
    } else {
      plugs_.emplace(d.id, std::make_unique<PlugEmulator>(d.id, config.plug_key, clock));
    }
  }
  bridge_ = std::make_unique<BridgeEmulator>(config.bridge_user, lights, clock);
}

PlugEmulator* LocalDevices::plug(std::string_view id) {
  auto it = plugs_.find(id);
  return it == plugs_.end() ? nullptr : it->second.get();
}

std::map<std::string, DeviceBinding> LocalDevices::bindings(const ScenarioConfig& config) {
  std::map<std::string, DeviceBinding> out;
  for (const auto& d : config.devices) {
    DeviceBinding b;
    b.descriptor = {d.id, d.kind, "", d.resource, "inproc://hub"};
    if (d.kind == DeviceKind::ColorBulb) {
      b.descriptor.endpoint = "inproc://bridge";
      BridgeEmulator* bridge = bridge_.get();
      b.transport = std::make_unique<InProcessTransport>([bridge](const HttpRequest& r) { return bridge->handle(r); });
    } else {
      b.descriptor.endpoint = "inproc://plug/" + d.id;
      PlugEmulator* plug = plugs_.at(d.id).get();
      b.transport = std::make_unique<InProcessTransport>([plug](const HttpRequest& r) { return plug->handle(r); });
    }
    out.emplace(d.id, std::move(b));
  }
  return out;
}

void LocalDevices::set_sink(EventSink sink) {
  for (auto& [id, plug] : plugs_) plug->set_sink(sink);
}

void LocalDevices::poll() {
  for (auto& [id, plug] : plugs_) plug->poll();
}

// ---------------------------------------------------------------------------
// Log

std::string csv_field(std::string_view s) {
  std::string out(s);
  for (char& ch : out) {
    if (ch == ',' || ch == '\n' || ch == '\r') ch = ';';
  }
  return out;
}

std::string EventLog::to_csv() const {
  std::string out(kLogHeader);
  out += '\n';
  for (const auto& r : rows_) {
    out += std::to_string(r.tick) + ',' + std::to_string(r.ts_ms) + ',' + csv_field(r.kind) + ',' + csv_field(r.link) +
           ',' + csv_field(r.agent) + ',' + csv_field(r.device) + ',' + csv_field(r.var) + ',' + csv_field(r.value) +
           ',' + csv_field(r.origin) + ',' + csv_field(r.seq) + ',' + csv_field(r.detail) + '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// World

World::World(ScenarioConfig config, std::map<std::string, DeviceBinding> devices)
    : config_(std::move(config)), engine_(build_engine(config_)), devices_(std::move(devices)) {
  adapter_options_ = {config_.bridge_user, config_.plug_key};
  for (const auto& a : config_.agents) topology_.add(a.id, SourceKind::Agent);
  for (const auto& d : config_.devices) topology_.add(d.id, SourceKind::EnvironmentDevice);

  if (config_.galaxy) {
    const auto& g = *config_.galaxy;
    for (const auto& p : g.planets) {
      const auto* a = engine_.agent(p.agent);
      Planet planet;
      planet.agent = p.agent;
      planet.pos = std::get<Vector3>(a->virtual_state.find("pos")->value);
      planet.color = std::get<ColorRGB>(a->virtual_state.find("color")->value);
      planet.radius = p.radius;
      planet.omega = p.omega;
      initial_planets_.push_back(planet);
    }
    planets_ = initial_planets_;
    inside_.assign(planets_.size(), false);
    const auto* r = engine_.agent(g.rocket_agent);
    rocket_ = Rocket{g.rocket_agent, std::get<Vector3>(r->virtual_state.find("pos")->value), g.rocket_radius,
                     std::get<ColorRGB>(r->virtual_state.find("color")->value)};
  }
  if (config_.lamp) {
    const auto* bulb = engine_.agent(config_.lamp->bulb_agent);
    seated_ = socket_test(std::get<Vector3>(bulb->virtual_state.find("pos")->value), config_.lamp->socket,
                          config_.lamp->socket_radius);
  }

  log_.add({0, 0, "meta", "", "", "", "scenario", std::string(to_string(config_.kind)), "", "", ""});
  log_.add({0, 0, "meta", "", "", "", "tick_ms", std::to_string(config_.tick_ms()), "", "", ""});
  log_.add({0, 0, "meta", "", "", "", "grace_ms", std::to_string(config_.effective_grace_ms()), "", "", ""});
  log_.add({0, 0, "meta", "", "", "", "seed", std::to_string(config_.seed), "", "", ""});
}

void World::initialize() {
  for (auto& [id, binding] : devices_) {
    try {
      for (const auto& [var, value] : adapter_read(binding.descriptor, *binding.transport, adapter_options_)) {
        engine_.observe_physical(id, var, value);
      }
    } catch (const DeviceUnavailable&) {
      // Unknown until the first successful delivery.
    }
  }
}

void World::submit_client_update(std::string source, std::string agent, std::string var, Value value) {
  inbound_.push_back({false, std::move(source), std::move(agent), std::move(var), std::move(value), 0});
}

void World::submit_device_event(DeviceEvent event) {
  inbound_.push_back({true, event.device, event.device, std::move(event.var), std::move(event.value), event.press_seq});
}

std::size_t World::device_commands_sent(std::string_view device) const {
  if (device == "*") {
    std::size_t n = 0;
    for (const auto& [id, count] : commands_sent_) n += count;
    return n;
  }
  auto it = commands_sent_.find(device);
  return it == commands_sent_.end() ? 0 : it->second;
}

void World::publish(RelationshipClass cls, std::string kind, std::optional<std::string> agent, json data,
                    Timestamp ts) {
  if (publish_) publish_(BusEvent{cls, std::move(kind), std::move(agent), std::move(data), ts});
}

void World::run_tick(std::int64_t tick, Timestamp start) {
  while (!inbound_.empty()) {
    Inbound in = std::move(inbound_.front());
    inbound_.pop_front();
    ingest(in, tick, start);
  }
  advance_orbits(tick, start);
  evaluate_triggers(tick, start);
  emit_commands(tick, start);
  sample_coherence(tick, start);
}

void World::apply_agent_virtual(const std::string& source, const std::string& agent, const std::string& var,
                                Value value, std::int64_t tick, Timestamp now) {
  SyncEngine::Applied applied;
  try {
    applied = engine_.apply_virtual(agent, var, value, now);
  } catch (const SyncError& e) {
    log_.add({tick, now.ms, "reject", "", agent, "", var, format_value(value), "virtual", "", e.what()});
    return;
  }
  const auto* stored = engine_.agent(agent)->virtual_state.find(var);
  const std::string seq = std::to_string(stored->seq);
  if (applied.won_links.empty() && applied.lost_links.empty()) {
    log_.add({tick, now.ms, "update", "", agent, "", var, format_value(value), "virtual", seq, "unlinked"});
  }
  for (const auto& l : applied.won_links) {
    log_.add({tick, now.ms, "update", l, agent, "", var, format_value(value), "virtual", seq, "won"});
  }
  for (const auto& l : applied.lost_links) {
    log_.add({tick, now.ms, "update", l, agent, "", var, format_value(value), "virtual", "", "lost"});
  }
  if (applied.changed) {
    const auto cls = classify_event(source, topology_);
    publish(cls, "state", agent, json{{"var", var}, {"value", format_value(value)}, {"origin", "virtual"}}, now);
  }
}

void World::ingest(const Inbound& in, std::int64_t tick, Timestamp now) {
  if (!in.from_device) {
    apply_agent_virtual(in.source, in.agent_or_device, in.var, in.value, tick, now);
    return;
  }

  SyncEngine::Applied applied;
  try {
    applied = engine_.apply_physical(in.agent_or_device, in.var, in.value, now, in.seq);
  } catch (const SyncError& e) {
    log_.add({tick, now.ms, "reject", "", "", in.agent_or_device, in.var, format_value(in.value), "physical",
              std::to_string(in.seq), e.what()});
    return;
  }
  const std::string seq = std::to_string(in.seq);
  for (const auto& l : applied.won_links) {
    log_.add({tick, now.ms, "update", l, "", in.agent_or_device, in.var, format_value(in.value), "physical", seq, "won"});
  }
  for (const auto& l : applied.lost_links) {
    log_.add({tick, now.ms, "update", l, "", in.agent_or_device, in.var, format_value(in.value), "physical", seq,
              "lost_or_duplicate"});
  }
  if (applied.changed) {
    publish(classify_event(in.source, topology_), "device_state", std::nullopt,
            json{{"device", in.agent_or_device}, {"var", in.var}, {"value", format_value(in.value)}}, now);
  }
}

void World::advance_orbits(std::int64_t tick, Timestamp now) {
  if (!config_.galaxy) return;
  const double dt = 1.0 / config_.tick_rate;
  const double elapsed = static_cast<double>(tick + 1) * dt;
  const Vector3& sun = config_.galaxy->sun;
  for (std::size_t i = 0; i < planets_.size(); ++i) {
    const auto& p0 = initial_planets_[i];
    planets_[i].pos = sun + rotate_about_y(p0.pos - sun, p0.omega * elapsed);
    if (p0.omega == 0.0) continue;
    engine_.apply_virtual(p0.agent, "pos", planets_[i].pos, now);
    publish(RelationshipClass::ObjectAgentToObjectAgent, "state", p0.agent,
            json{{"var", "pos"}, {"value", format_value(planets_[i].pos)}, {"origin", "virtual"}}, now);
  }
}

void World::evaluate_triggers(std::int64_t tick, Timestamp now) {
  if (config_.lamp) {
    const auto& l = *config_.lamp;
    const auto* bulb = engine_.agent(l.bulb_agent);
    const bool now_seated =
        socket_test(std::get<Vector3>(bulb->virtual_state.find("pos")->value), l.socket, l.socket_radius);
    const bool power = std::get<bool>(engine_.agent(l.lamp_agent)->virtual_state.find("power")->value);
    for (const auto& e : lamp_transition(seated_, now_seated, 0, power)) {
      apply_agent_virtual(l.lamp_agent, l.lamp_agent, "power", e.power, tick, now);
    }
    if (now_seated != seated_) {
      log_.add({tick, now.ms, "trigger", "", l.bulb_agent, "", "seated", now_seated ? "true" : "false", "virtual", "",
                now_seated ? "seat" : "unseat"});
    }
    seated_ = now_seated;
  }

  if (config_.galaxy && rocket_) {
    const auto& g = *config_.galaxy;
    const auto* r = engine_.agent(g.rocket_agent);
    rocket_->pos = std::get<Vector3>(r->virtual_state.find("pos")->value);
    rocket_->color = std::get<ColorRGB>(r->virtual_state.find("color")->value);

    std::optional<std::size_t> entered;
    for (std::size_t i = 0; i < planets_.size(); ++i) {
      const bool inside = collision_test(rocket_->pos, rocket_->radius, planets_[i].pos, planets_[i].radius);
      if (inside && !inside_[i] && !entered) entered = i;
      inside_[i] = inside;
    }
    if (entered) {
      const ColorRGB color = pick_color(planets_[*entered], *rocket_);
      log_.add({tick, now.ms, "trigger", "", g.rocket_agent, "", "collision", format_value(color), "virtual", "",
                "enter " + planets_[*entered].agent});
      apply_agent_virtual(g.rocket_agent, g.rocket_agent, "color", color, tick, now);
    }
  }
}

void World::emit_commands(std::int64_t tick, Timestamp now) {
  for (const auto& c : engine_.resync()) {
    const std::string seq = std::to_string(c.seq);
    const std::string origin(to_string(c.origin));
    log_.add({tick, now.ms, "command", c.link_id, c.agent_id, c.target == CommandTarget::Device ? c.device_id : "",
              c.var, format_value(c.value), origin, seq, std::string(to_string(c.target))});

    if (c.target == CommandTarget::SceneClients) {
      engine_.acknowledge(c, true);
      publish(RelationshipClass::EnvironmentToHuman, "command", c.agent_id,
              json{{"var", c.var}, {"value", format_value(c.value)}, {"origin", origin}}, now);
      continue;
    }

    auto it = devices_.find(c.device_id);
    Delivery d;
    if (it == devices_.end()) {
      d = {false, false, "no binding for device"};
    } else {
      engine_.mark_sent(c);
      try {
        d = adapter_send(it->second.descriptor, *it->second.transport, c, adapter_options_);
      } catch (const SyncError& e) {
        d = {false, false, e.what()};
      }
    }
    ++commands_sent_[c.device_id];
    engine_.acknowledge(c, d.ok);
    log_.add({tick, now.ms, "delivery", c.link_id, c.agent_id, c.device_id, c.var, format_value(c.value), origin, seq,
              d.ok ? "ok" : (d.retriable ? "retry: " : "fail: ") + d.detail});

    json data{{"device", c.device_id}, {"var", c.var}, {"value", format_value(c.value)}, {"delivered", d.ok}};
    if (c.hsb) data["hsb"] = json{{"on", c.hsb->on}, {"hue", c.hsb->hue}, {"sat", c.hsb->sat}, {"bri", c.hsb->bri}};
    publish(RelationshipClass::ObjectAgentToObjectAgent, "device_command", c.agent_id, std::move(data), now);
  }
}

void World::sample_coherence(std::int64_t tick, Timestamp now) {
  const std::int64_t dt = config_.tick_ms();
  for (const auto& [id, state] : engine_.links()) {
    const bool coherent = state.coherent();
    const bool was = state.history().empty() || state.history().back().coherent;
    engine_.link(id)->record({now, dt, coherent});
    log_.add({tick, now.ms, "sample", id, "", "", "", coherent ? "1" : "0", "", "", ""});
    if (was != coherent) {
      publish(RelationshipClass::EnvironmentToHuman, "coherence", state.link().agent_id,
              json{{"link", id}, {"coherent", coherent}}, now);
    }
  }
}

json World::snapshot() const {
  json agents = json::object();
  for (const auto& [id, a] : engine_.agents()) {
    json vars = json::object();
    for (const auto& [name, vv] : a.virtual_state.vars()) vars[name] = format_value(vv.value);
    agents[id] = json{{"embodiment", to_string(a.criteria.embodiment)},
                      {"interaction", to_string(a.criteria.interaction)},
                      {"agency", to_string(a.criteria.agency)},
                      {"vars", vars}};
  }
  json devices = json::array();
  for (const auto& d : config_.devices) devices.push_back(json{{"id", d.id}, {"kind", to_string(d.kind)}});
  json links = json::object();
  for (const auto& [id, s] : engine_.links()) {
    links[id] = json{{"agent", s.link().agent_id}, {"device", s.link().device_id}, {"coherent", s.coherent()}};
  }
  json out{{"scenario", to_string(config_.kind)},
           {"tick_ms", config_.tick_ms()},
           {"agents", agents},
           {"devices", devices},
           {"links", links}};
  if (config_.lamp) {
    const auto& l = *config_.lamp;
    out["lamp"] = json{{"lamp", l.lamp_agent},
                       {"bulb", l.bulb_agent},
                       {"plug", l.plug},
                       {"socket", format_value(l.socket)},
                       {"radius", l.socket_radius},
                       {"seated", seated_}};
  }
  if (config_.galaxy) {
    const auto& g = *config_.galaxy;
    json planets = json::array();
    for (const auto& p : planets_) {
      planets.push_back(json{{"agent", p.agent}, {"radius", p.radius}, {"omega", p.omega}, {"pos", format_value(p.pos)},
                             {"color", format_value(p.color)}});
    }
    out["galaxy"] = json{{"sun", format_value(g.sun)},
                         {"planets", planets},
                         {"rocket", g.rocket_agent},
                         {"rocket_radius", g.rocket_radius},
                         {"bulbs", g.bulbs}};
  }
  return out;
}

}  // namespace xri
