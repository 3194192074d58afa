#pragma once

// Session handling for scene clients: frame validation and dispatch into
// the world, subscription-filtered fan-out of bus events, periodic
// coherence reports. Transport-agnostic; the network layer hands in text
// frames and a sender per connection.

#include "xri/scenario.hpp"
#include "xri/wire.hpp"

#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <string>

namespace xri {

class Hub {
 public:
  /// Sends one encoded frame. Called with the hub lock held; must not block
  /// and must not call back into the hub.
  using Sender = std::function<void(std::string)>;

  static constexpr std::int64_t kReportIntervalMs = 1000;
  static constexpr std::int64_t kReportWindowMs = 10000;

  Hub(ScenarioConfig config, std::map<std::string, DeviceBinding> devices);

  /// Reads initial device state.
  void initialize();

  std::uint64_t open_session(Sender send);
  void close_session(std::uint64_t id);
  std::size_t session_count() const;

  /// Handles one inbound text frame from a session.
  void on_text(std::uint64_t session, std::string_view text);

  /// Device webhook. Returns false while the hub is in a scripted outage.
  bool on_device_event(const DeviceEvent& event, std::int64_t now_ms);
  FaultSchedule& faults() { return faults_; }

  /// Runs tick `k` (start time k * tick_ms) and, on report boundaries,
  /// pushes coherence reports to subscribed sessions.
  void tick(std::int64_t k);

  std::int64_t tick_ms() const { return tick_ms_; }
  std::int64_t ticks_run() const;

  /// Runs `fn` under the hub lock.
  template <typename Fn>
  auto with_world(Fn&& fn) {
    std::lock_guard lock(mutex_);
    return fn(world_);
  }

  /// Metrics summary CSV of the run so far (header only before any tick).
  std::string metrics_csv() const;
  std::string log_csv() const;

 private:
  struct Session {
    Sender send;
    std::string source;
    bool hello = false;
    std::string client;
    std::optional<std::uint64_t> last_seq;
    bool subscribed = false;
    bool all_agents = false;
    std::set<std::string, std::less<>> agents;
    std::set<RelationshipClass> classes;
    std::uint64_t out_seq = 0;
  };

  void send(Session& s, Frame f);
  void send_error(Session& s, std::string_view code, std::string_view message, std::int64_t ts);
  bool wants(const Session& s, const std::optional<std::string>& agent, RelationshipClass cls) const;
  void fan_out(const BusEvent& e, std::optional<std::uint64_t> except = std::nullopt);
  void send_reports(std::int64_t end_ms);
  std::int64_t now_ms() const;

  mutable std::mutex mutex_;
  World world_;
  std::int64_t tick_ms_;
  std::int64_t next_tick_ = 0;
  std::map<std::uint64_t, Session> sessions_;
  std::uint64_t next_session_ = 1;
  FaultSchedule faults_;
};

/// Serve-mode fault script: "outage <device|hub> <start_ms> <duration_ms>"
/// per line, times relative to hub start.
struct FaultEntry {
  std::string target;
  std::int64_t start_ms = 0;
  std::int64_t duration_ms = 0;
};

/// Throws ConfigError.
std::vector<FaultEntry> parse_faults(std::string_view text);

}  // namespace xri
