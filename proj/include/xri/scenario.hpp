#pragma once

// Scenario configuration, the scene geometry used by the two prototypes
// (lamp socket and orbiting planets), and the fixed-order tick loop that
// drives them through the sync engine.

#include "xri/devices.hpp"
#include "xri/model.hpp"
#include "xri/sync_engine.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace xri {

/// Parse or validation failure in a text file, with a 1-based line number
/// (0 when the problem is not tied to one line).
class ConfigError : public std::runtime_error {
 public:
  ConfigError(int line, const std::string& message)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + message : message), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

// ---------------------------------------------------------------------------
// Geometry

/// Strictly inside: distance < radius.
bool socket_test(const Vector3& bulb, const Vector3& socket, double radius);

/// Strict sphere overlap.
bool collision_test(const Vector3& a, double radius_a, const Vector3& b, double radius_b);

/// Rotation about +Y; a positive angle takes +X toward -Z.
Vector3 rotate_about_y(const Vector3& offset, double angle);

struct Planet {
  std::string agent;
  Vector3 pos;
  double radius = 0.1;
  /// rad/s, signed.
  double omega = 0.0;
  ColorRGB color;
};

/// Each planet rotated about the vertical axis through `sun` by omega * dt.
std::vector<Vector3> orbit_step(std::span<const Planet> planets, const Vector3& sun, double dt);

struct LampEmission {
  Origin origin = Origin::Virtual;
  bool power = false;

  friend bool operator==(const LampEmission&, const LampEmission&) = default;
};

/// Edge-triggered lamp rule: seating emits power on, unseating power off
/// (virtual origin); each button event toggles the running power value
/// (physical origin).
std::vector<LampEmission> lamp_transition(bool prev_seated, bool now_seated, int button_events, bool current_power);

struct Rocket {
  std::string agent;
  Vector3 pos;
  double radius = 0.05;
  ColorRGB color;
};

/// Adopts the planet colour.
ColorRGB pick_color(const Planet& planet, Rocket& rocket);

// ---------------------------------------------------------------------------
// Configuration

enum class ScenarioKind { Lamp, Galaxy };

struct DeviceSpec {
  std::string id;
  DeviceKind kind = DeviceKind::Plug;
  std::string resource;
};

struct LampSpec {
  std::string lamp_agent;
  std::string bulb_agent;
  std::string plug;
  Vector3 socket;
  double socket_radius = 0.1;
};

struct PlanetSpec {
  std::string agent;
  double radius = 0.1;
  double omega = 0.0;
};

struct GalaxySpec {
  Vector3 sun;
  std::vector<PlanetSpec> planets;
  std::string rocket_agent;
  double rocket_radius = 0.05;
  std::vector<std::string> bulbs;
};

/// Sets the rocket colour and returns one colour command per bulb link
/// whose bulb does not already show it.
std::vector<Command> propagate_ambient(SyncEngine& engine, const GalaxySpec& galaxy, const ColorRGB& color,
                                       Timestamp ts);

struct ScenarioConfig {
  ScenarioKind kind = ScenarioKind::Lamp;
  double tick_rate = 20.0;
  /// Defaults to two ticks when absent.
  std::optional<std::int64_t> grace_ms;
  std::uint64_t seed = 1;
  std::string bridge_user = "xri";
  std::string plug_key = "xri-key";
  std::vector<DeviceSpec> devices;
  std::vector<ExtendedMetaverseAgent> agents;
  std::vector<SyncLink> links;
  std::optional<LampSpec> lamp;
  std::optional<GalaxySpec> galaxy;

  std::int64_t tick_ms() const;
  std::int64_t effective_grace_ms() const { return grace_ms.value_or(2 * tick_ms()); }
  const DeviceSpec* device(std::string_view id) const;
};

std::string_view to_string(ScenarioKind k);

/// Throws ConfigError with the offending line.
ScenarioConfig parse_scenario(std::string_view text);
ScenarioConfig load_scenario(const std::string& path);

/// Builds a sync engine holding every agent, device schema and link.
/// Throws ConfigError when the engine rejects part of the configuration.
SyncEngine build_engine(const ScenarioConfig& config);

// ---------------------------------------------------------------------------
// Devices owned by a run

struct DeviceBinding {
  DeviceDescriptor descriptor;
  std::unique_ptr<DeviceTransport> transport;
};

/// In-process emulators for every device in a scenario: one bridge holding
/// all bulbs, one plug emulator per plug.
class LocalDevices {
 public:
  LocalDevices(const ScenarioConfig& config, const Clock& clock);

  BridgeEmulator& bridge() { return *bridge_; }
  PlugEmulator* plug(std::string_view id);
  const std::map<std::string, std::unique_ptr<PlugEmulator>, std::less<>>& plugs() const { return plugs_; }

  /// In-process transports for every device.
  std::map<std::string, DeviceBinding> bindings(const ScenarioConfig& config);

  void set_sink(EventSink sink);
  void poll();

 private:
  std::unique_ptr<BridgeEmulator> bridge_;
  std::map<std::string, std::unique_ptr<PlugEmulator>, std::less<>> plugs_;
};

// ---------------------------------------------------------------------------
// Run log

struct LogRow {
  std::int64_t tick = 0;
  std::int64_t ts_ms = 0;
  std::string kind;
  std::string link;
  std::string agent;
  std::string device;
  std::string var;
  std::string value;
  std::string origin;
  std::string seq;
  std::string detail;
};

inline constexpr std::string_view kLogHeader = "tick,ts_ms,kind,link,agent,device,var,value,origin,seq,detail";

class EventLog {
 public:
  void add(LogRow row) { rows_.push_back(std::move(row)); }
  const std::vector<LogRow>& rows() const { return rows_; }
  std::string to_csv() const;

 private:
  std::vector<LogRow> rows_;
};

std::string csv_field(std::string_view s);

// ---------------------------------------------------------------------------
// Tick loop

/// Something the scene clients should see, tagged with its relationship class.
struct BusEvent {
  RelationshipClass cls = RelationshipClass::EnvironmentToHuman;
  /// "state", "device_state", "device_command", "command", "coherence".
  std::string kind;
  std::optional<std::string> agent;
  nlohmann::json data = nlohmann::json::object();
  Timestamp ts;
};

class World {
 public:
  World(ScenarioConfig config, std::map<std::string, DeviceBinding> devices);

  /// Reads each device's current state so the first coherence samples
  /// reflect reality.
  void initialize();

  /// Queued until the next tick's ingest step. `source` must be known to
  /// the topology (scene sessions register as human clients).
  void submit_client_update(std::string source, std::string agent, std::string var, Value value);
  void submit_device_event(DeviceEvent event);

  /// One tick in fixed order: ingest, orbits, triggers, commands, coherence.
  void run_tick(std::int64_t tick, Timestamp start);

  const ScenarioConfig& config() const { return config_; }
  SyncEngine& engine() { return engine_; }
  const SyncEngine& engine() const { return engine_; }
  Topology& topology() { return topology_; }
  EventLog& log() { return log_; }
  const EventLog& log() const { return log_; }

  bool seated() const { return seated_; }
  const std::vector<Planet>& planets() const { return planets_; }
  const std::optional<Rocket>& rocket() const { return rocket_; }
  std::size_t device_commands_sent(std::string_view device = "*") const;

  void set_publisher(std::function<void(const BusEvent&)> publish) { publish_ = std::move(publish); }

  /// Everything a newly subscribed client needs to render the scene.
  nlohmann::json snapshot() const;

 private:
  struct Inbound {
    bool from_device = false;
    std::string source;
    std::string agent_or_device;
    std::string var;
    Value value;
    std::uint64_t seq = 0;
  };

  void ingest(const Inbound& in, std::int64_t tick, Timestamp now);
  void advance_orbits(std::int64_t tick, Timestamp now);
  void evaluate_triggers(std::int64_t tick, Timestamp now);
  void emit_commands(std::int64_t tick, Timestamp now);
  void sample_coherence(std::int64_t tick, Timestamp now);

  void apply_agent_virtual(const std::string& source, const std::string& agent, const std::string& var, Value value,
                           std::int64_t tick, Timestamp now);
  void publish(RelationshipClass cls, std::string kind, std::optional<std::string> agent, nlohmann::json data,
               Timestamp ts);

  ScenarioConfig config_;
  SyncEngine engine_;
  Topology topology_;
  std::map<std::string, DeviceBinding> devices_;
  AdapterOptions adapter_options_;
  std::deque<Inbound> inbound_;
  EventLog log_;
  std::function<void(const BusEvent&)> publish_;
  std::map<std::string, std::size_t, std::less<>> commands_sent_;

  bool seated_ = false;
  std::vector<Planet> initial_planets_;
  std::vector<Planet> planets_;
  std::vector<bool> inside_;
  std::optional<Rocket> rocket_;
};

}  // namespace xri
