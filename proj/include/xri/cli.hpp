#pragma once

// Operator entry points behind the xri-hub executable.
//
// Run settings come from, in increasing priority: built-in defaults, a
// config file (--config or XRI_CONFIG; "key = value" lines), XRI_<KEY>
// environment variables, command-line flags.

#include "xri/scenario.hpp"

#include <atomic>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace xri {

namespace exit_code {
inline constexpr int kOk = 0;
inline constexpr int kAssertion = 1;
inline constexpr int kConfig = 2;
}  // namespace exit_code

struct RunConfig {
  std::string listen = "127.0.0.1";
  int ws_port = 8765;
  int tcp_port = 8766;
  /// Device-event webhook.
  int callback_port = 8767;
  int bridge_port = 8081;
  /// First plug; further plugs take the following ports.
  int plug_port = 8082;
  std::string scenario;
  std::optional<double> tick_rate;
  std::optional<std::uint64_t> seed;
  std::string faults;
  std::string metrics;
  std::string log;
  /// Use already running emulators at device_host instead of spawning them.
  bool attach = false;
  std::string device_host = "127.0.0.1";
};

/// Setting names, as used in config files; flags use dashes, environment
/// variables are XRI_ plus the upper-cased name.
const std::vector<std::string>& run_config_keys();

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

/// Merges defaults, file, environment and flags (keyed by setting name).
/// Throws ConfigError for unknown keys, unparsable values, or a RunConfig
/// that violates its invariants (ports distinct unless 0, tick rate > 0).
RunConfig resolve_run_config(const std::map<std::string, std::string>& flags, const EnvLookup& env);

void validate(const RunConfig& config);

struct ServeInfo {
  int ws_port = 0;
  int tcp_port = 0;
  int callback_port = 0;
  int bridge_port = 0;
  std::map<std::string, int> plug_ports;
};

/// Runs the hub until `stop` is set, then writes metrics (and the log when
/// configured). `on_ready` fires once everything is listening.
int cmd_serve(const RunConfig& config, const std::atomic<bool>& stop, std::ostream& out, std::ostream& err,
              const std::function<void(const ServeInfo&)>& on_ready = {});

/// Standalone emulators for the scenario's devices, pushing plug events to
/// device_host:callback_port.
int cmd_sim_devices(const RunConfig& config, const std::atomic<bool>& stop, std::ostream& out, std::ostream& err,
                    const std::function<void(const ServeInfo&)>& on_ready = {});

struct DemoOutputs {
  std::string log_path;
  std::string reports_path;
};

int cmd_demo(const std::string& script_path, std::optional<std::uint64_t> seed, const DemoOutputs& outputs,
             std::ostream& out, std::ostream& err);

int cmd_metrics(const std::string& log_path, std::ostream& out, std::ostream& err);

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err, const EnvLookup& env,
            const std::atomic<bool>& stop);

}  // namespace xri
