#pragma once

// Scripted headless runs and the metrics computed from their logs.
//
// Demo script format, one directive per line, '#' starts a comment:
//
//   scenario <path>              scenario file, relative to the script
//   end <ms>                     run length
//   grace_ms <ms>                override the scenario's grace period
//   seed <n>                     override the scenario's seed
//   at <ms> update <agent> <var> <value>
//   at <ms> press <plug>
//   at <ms> outage <device|hub> <duration_ms>
//   at <ms> wander <agent> <var> <count> <radius>
//   at <ms> expect <assertion>
//
// An event at time T is applied just before the first tick starting at or
// after T; expectations at T are checked after that tick. Assertions:
//
//   device <id> <var> <value>
//   bulb <id> <on|off> <hue> <sat> <bri>       (+-1 per channel)
//   bulbs rgb <r> <g> <b>                       every galaxy bulb shows the colour
//   agent <id> <var> <value>
//   seated <true|false>
//   commands <device|*> <n>                     device commands sent so far
//   noise <link> <start> <end> <score> <tol> [grace_ms]
//   latency <link> <max_ms>                     every update so far converged in time
//   coherent <link> <true|false>

#include "xri/scenario.hpp"

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace xri {

struct DemoEvent {
  enum class Kind { Update, Press, Outage, Wander, Expect };

  int line = 0;
  std::int64_t at_ms = 0;
  Kind kind = Kind::Update;
  /// Tokens after the kind keyword.
  std::vector<std::string> args;
  /// Original directive text, for diagnostics.
  std::string text;
};

struct DemoScript {
  std::filesystem::path scenario_path;
  std::int64_t end_ms = 0;
  std::optional<std::int64_t> grace_ms;
  std::optional<std::uint64_t> seed;
  /// Stable-sorted by time.
  std::vector<DemoEvent> events;
};

/// Throws ConfigError. Relative scenario paths resolve against `base_dir`.
DemoScript parse_demo(std::string_view text, const std::filesystem::path& base_dir);
DemoScript load_demo(const std::filesystem::path& path);

struct AssertionResult {
  int line = 0;
  std::int64_t at_ms = 0;
  std::string text;
  bool passed = false;
  std::string detail;
};

struct DemoResult {
  std::vector<AssertionResult> assertions;
  std::string log_csv;
  std::string reports_csv;

  bool passed() const;
  const AssertionResult* first_failure() const;
};

/// Runs `script` against `config` on a manual clock with in-process
/// emulators. `seed` overrides both script and scenario. Throws ConfigError
/// for events that do not fit the scenario.
DemoResult run_demo(const DemoScript& script, ScenarioConfig config, std::optional<std::uint64_t> seed = std::nullopt);

inline constexpr std::string_view kReportHeader = "link,window_start_ms,window_end_ms,grace_ms,noise_score,spans";

/// One reports CSV row, without the trailing newline.
std::string report_row(const CoherenceReport& report, std::int64_t grace_ms);

// ---------------------------------------------------------------------------
// Metrics

class MetricsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Throws MetricsError on a malformed log.
std::vector<LogRow> parse_log_csv(std::string_view text);

struct LinkMetrics {
  std::string link;
  std::size_t samples = 0;
  Window window;
  double noise_score = 0.0;
  std::int64_t incoherent_ms = 0;
  /// Won updates that converged, in log order.
  std::vector<std::int64_t> latencies_ms;
  std::size_t updates = 0;
  std::size_t commands = 0;
};

struct MetricsSummary {
  std::int64_t tick_ms = 0;
  std::int64_t grace_ms = 0;
  std::vector<LinkMetrics> links;
  std::map<std::string, std::size_t> device_commands;
};

/// Nearest-rank percentile, p in (0, 100]. Empty input gives nullopt.
std::optional<std::int64_t> nearest_rank(std::vector<std::int64_t> values, double p);

/// Throws MetricsError("no samples") when the log holds no coherence samples.
MetricsSummary compute_metrics(const std::vector<LogRow>& rows);

inline constexpr std::string_view kMetricsHeader =
    "link,samples,window_start_ms,window_end_ms,noise_score,incoherent_ms,latency_p50_ms,latency_p95_ms,updates,"
    "commands";

/// Per-link CSV followed by a blank line and a device,commands table.
std::string format_metrics(const MetricsSummary& summary);

}  // namespace xri
