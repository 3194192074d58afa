#pragma once

// Protocol-faithful stand-ins for the physical endpoints (a colour-bulb
// bridge speaking a subset of the Hue REST API, and a webhook smart plug
// with a physical button) plus the hub-side adapters that talk to them.
//
// Emulators are transport-agnostic: `handle()` maps one HTTP request to one
// HTTP response, and the same function backs both the in-process transport
// used by deterministic runs and the real HTTP servers.

#include "xri/model.hpp"
#include "xri/sync_engine.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <chrono>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace xri {

class Clock {
 public:
  virtual ~Clock() = default;
  virtual std::int64_t now_ms() const = 0;
};

/// Driven explicitly; used by the deterministic tick loop and tests.
class ManualClock : public Clock {
 public:
  std::int64_t now_ms() const override { return now_.load(); }
  void set(std::int64_t ms) { now_.store(ms); }
  void advance(std::int64_t ms) { now_ += ms; }

 private:
  std::atomic<std::int64_t> now_{0};
};

/// Milliseconds since construction.
class SteadyClock : public Clock {
 public:
  SteadyClock() : start_(std::chrono::steady_clock::now()) {}
  std::int64_t now_ms() const override {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

/// Scripted outage windows, [start, start + duration).
class FaultSchedule {
 public:
  void add_outage(std::int64_t start_ms, std::int64_t duration_ms);
  bool down(std::int64_t now_ms) const;
  void clear();

 private:
  mutable std::mutex mutex_;
  std::vector<std::pair<std::int64_t, std::int64_t>> windows_;
};

struct HttpRequest {
  std::string method;
  std::string path;
  std::string body;
};

struct HttpResponse {
  int status = 200;
  std::string body;
};

struct BulbState {
  bool on = false;
  std::uint16_t hue = 0;
  std::uint8_t sat = 0;
  std::uint8_t bri = 254;

  friend bool operator==(const BulbState&, const BulbState&) = default;
};

inline ColorHSB to_hsb(const BulbState& s) { return {s.on, s.hue, s.sat, s.bri}; }

struct PlugState {
  bool on = false;
  std::optional<std::string> last_event;
  std::uint64_t press_seq = 0;
};

enum class DeviceKind { ColorBulb, Plug };

std::string_view to_string(DeviceKind k);
std::optional<DeviceKind> parse_device_kind(std::string_view s);

/// Variables the hub sees for each device kind.
std::map<std::string, ValueType> device_schema(DeviceKind kind);

struct DeviceDescriptor {
  std::string id;
  DeviceKind kind = DeviceKind::Plug;
  /// `http://host:port` or `inproc://<name>`.
  std::string endpoint;
  /// Bridge light id ("1".."4"); unused for plugs.
  std::string resource;
  /// Hub webhook base for device-originated events.
  std::string callback;
};

class DeviceUnavailable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Hue-style bridge with `bulb_count` lights keyed "1".."N".
class BridgeEmulator {
 public:
  BridgeEmulator(std::string username, int bulb_count, const Clock& clock);

  /// Applies the fields of `body` in request order and returns the
  /// response array (one success or error entry per field).
  nlohmann::ordered_json put_state(std::string_view light_id, const nlohmann::ordered_json& body);
  /// Throws DeviceUnavailable during an outage.
  std::map<std::string, BulbState> get_lights() const;
  std::optional<BulbState> get_light(std::string_view light_id) const;

  HttpResponse handle(const HttpRequest& req);

  FaultSchedule& faults() { return faults_; }
  const std::string& username() const { return username_; }

 private:
  nlohmann::ordered_json light_json(std::string_view id, const BulbState& s) const;

  std::string username_;
  const Clock& clock_;
  FaultSchedule faults_;
  mutable std::mutex mutex_;
  std::map<std::string, BulbState> lights_;
};

struct DeviceEvent {
  std::string device;
  std::string var;
  Value value;
  std::uint64_t press_seq = 0;
};

nlohmann::ordered_json to_json(const DeviceEvent& e);
std::optional<DeviceEvent> device_event_from_json(const nlohmann::json& j);

/// Returns true when the hub accepted the event.
using EventSink = std::function<bool(const DeviceEvent&)>;

/// Webhook-triggered smart plug with a physical toggle button. Button
/// presses are pushed to the hub with retry and exponential backoff;
/// undelivered presses stay queued in order.
class PlugEmulator {
 public:
  enum class TriggerStatus { Ok, AuthError, NotFound, Unavailable };

  PlugEmulator(std::string id, std::string key, const Clock& clock);

  void set_sink(EventSink sink);

  TriggerStatus trigger(std::string_view event, std::string_view key);
  /// Physical press: toggles, queues one event, tries to deliver.
  PlugState press();
  /// Retries queued deliveries whose backoff has elapsed.
  void poll();

  PlugState state() const;
  std::size_t pending_events() const;

  HttpResponse handle(const HttpRequest& req);

  FaultSchedule& faults() { return faults_; }
  const std::string& id() const { return id_; }

  static constexpr std::int64_t kBackoffBaseMs = 50;
  static constexpr std::int64_t kBackoffMaxMs = 800;

 private:
  nlohmann::ordered_json state_json(const PlugState& s) const;
  void flush();

  std::string id_;
  std::string key_;
  const Clock& clock_;
  FaultSchedule faults_;

  mutable std::mutex mutex_;
  PlugState state_;

  mutable std::mutex delivery_mutex_;
  EventSink sink_;
  std::deque<DeviceEvent> outbox_;
  int attempts_ = 0;
  std::int64_t next_attempt_ms_ = 0;
};

/// Request/response carrier between an adapter and an emulator. Throws
/// DeviceUnavailable when the endpoint cannot be reached at all.
class DeviceTransport {
 public:
  virtual ~DeviceTransport() = default;
  virtual HttpResponse request(const HttpRequest& req) = 0;
};

class InProcessTransport : public DeviceTransport {
 public:
  explicit InProcessTransport(std::function<HttpResponse(const HttpRequest&)> handler)
      : handler_(std::move(handler)) {}
  HttpResponse request(const HttpRequest& req) override { return handler_(req); }

 private:
  std::function<HttpResponse(const HttpRequest&)> handler_;
};

class HttpTransport : public DeviceTransport {
 public:
  explicit HttpTransport(std::string base_url, std::chrono::milliseconds timeout = std::chrono::milliseconds(300));
  HttpResponse request(const HttpRequest& req) override;

 private:
  std::string base_url_;
  std::chrono::milliseconds timeout_;
};

struct AdapterOptions {
  std::string bridge_user = "xri";
  std::string plug_key = "xri-key";
};

struct Delivery {
  bool ok = false;
  /// Transport-level failures are retriable; protocol rejections are not.
  bool retriable = false;
  std::string detail;
};

/// Translates one hub command into the device's protocol. Throws SyncError
/// when the command does not fit the device kind's schema.
Delivery adapter_send(const DeviceDescriptor& device, DeviceTransport& transport, const Command& command,
                      const AdapterOptions& options);

/// Reads the current device state as hub-level values.
/// Throws DeviceUnavailable on failure.
std::map<std::string, Value> adapter_read(const DeviceDescriptor& device, DeviceTransport& transport,
                                          const AdapterOptions& options);

}  // namespace xri
