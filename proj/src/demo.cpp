#include "xri/demo.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

namespace xri {

namespace {

std::vector<std::string> tokenize(std::string_view line) {
  if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
  std::vector<std::string> out;
  std::istringstream in{std::string(line)};
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

std::string join(const std::vector<std::string>& t, std::size_t from, std::size_t to = std::string::npos) {
  std::string out;
  for (std::size_t i = from; i < std::min(to, t.size()); ++i) {
    if (!out.empty()) out += ' ';
    out += t[i];
  }
  return out;
}

template <typename T>
std::optional<T> parse_int(std::string_view s) {
  T v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::optional<double> parse_num(std::string_view s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::int64_t need_ms(const std::string& tok, int line, std::string_view what) {
  auto v = parse_int<std::int64_t>(tok);
  if (!v || *v < 0) throw ConfigError(line, "expected a non-negative integer for " + std::string(what) + ", got '" + tok + "'");
  return *v;
}

double need_num(const std::string& tok, int line, std::string_view what) {
  auto v = parse_num(tok);
  if (!v) throw ConfigError(line, "expected a number for " + std::string(what) + ", got '" + tok + "'");
  return *v;
}

std::optional<bool> parse_bool(std::string_view s) {
  if (s == "true" || s == "on") return true;
  if (s == "false" || s == "off") return false;
  return std::nullopt;
}

void check_expect(const std::vector<std::string>& a, int line) {
  auto usage = [&](std::string_view u) { throw ConfigError(line, "usage: expect " + std::string(u)); };
  if (a.empty()) usage("<assertion>");
  const auto& k = a[0];
  if (k == "device") {
    if (a.size() < 4) usage("device <id> <var> <value>");
  } else if (k == "bulb") {
    if (a.size() != 6 || !parse_bool(a[2])) usage("bulb <id> <on|off> <hue> <sat> <bri>");
    for (int i = 3; i < 6; ++i) need_ms(a[i], line, "bulb channel");
  } else if (k == "bulbs") {
    if (a.size() != 5 || a[1] != "rgb") usage("bulbs rgb <r> <g> <b>");
    for (int i = 2; i < 5; ++i) need_num(a[i], line, "colour channel");
  } else if (k == "agent") {
    if (a.size() < 4) usage("agent <id> <var> <value>");
  } else if (k == "seated") {
    if (a.size() != 2 || !parse_bool(a[1])) usage("seated <true|false>");
  } else if (k == "commands") {
    if (a.size() != 3) usage("commands <device|*> <n>");
    need_ms(a[2], line, "command count");
  } else if (k == "noise") {
    if (a.size() != 6 && a.size() != 7) usage("noise <link> <start> <end> <score> <tol> [grace_ms]");
    const auto s = need_ms(a[2], line, "window start");
    const auto e = need_ms(a[3], line, "window end");
    if (e <= s) throw ConfigError(line, "noise window must not be empty");
    need_num(a[4], line, "noise score");
    need_num(a[5], line, "tolerance");
    if (a.size() == 7) need_ms(a[6], line, "grace_ms");
  } else if (k == "latency") {
    if (a.size() != 3) usage("latency <link> <max_ms>");
    need_ms(a[2], line, "max latency");
  } else if (k == "coherent") {
    if (a.size() != 3 || !parse_bool(a[2])) usage("coherent <link> <true|false>");
  } else {
    throw ConfigError(line, "unknown assertion '" + k + "'");
  }
}

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

int hue_distance(int a, int b) {
  const int d = std::abs(a - b);
  return std::min(d, 65536 - d);
}

/// Per link, convergence latency of every won update: end of the first
/// coherent tick at or after the update, minus the update time. Updates
/// still unresolved at the end of `rows` are returned separately.
struct Latencies {
  std::map<std::string, std::vector<std::int64_t>> resolved;
  std::map<std::string, std::vector<std::int64_t>> pending;
  std::map<std::string, std::size_t> updates;
};

Latencies compute_latencies(const std::vector<LogRow>& rows, std::int64_t tick_ms) {
  Latencies out;
  for (const auto& r : rows) {
    if (r.link.empty()) continue;
    if (r.kind == "update" && r.detail == "won") {
      out.pending[r.link].push_back(r.ts_ms);
      ++out.updates[r.link];
    } else if (r.kind == "sample" && r.value == "1") {
      auto& p = out.pending[r.link];
      auto& done = out.resolved[r.link];
      std::erase_if(p, [&](std::int64_t ts) {
        if (ts > r.ts_ms) return false;
        done.push_back(r.ts_ms + tick_ms - ts);
        return true;
      });
    }
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Script parsing

DemoScript parse_demo(std::string_view text, const std::filesystem::path& base_dir) {
  DemoScript s;
  bool have_scenario = false;
  bool have_end = false;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto t = tokenize(raw);
    if (t.empty()) continue;
    const auto& d = t[0];
    if (d == "scenario") {
      if (t.size() != 2) throw ConfigError(line, "usage: scenario <path>");
      std::filesystem::path p(t[1]);
      s.scenario_path = p.is_absolute() ? p : base_dir / p;
      have_scenario = true;
    } else if (d == "end") {
      if (t.size() != 2) throw ConfigError(line, "usage: end <ms>");
      s.end_ms = need_ms(t[1], line, "end");
      if (s.end_ms <= 0) throw ConfigError(line, "end must be positive");
      have_end = true;
    } else if (d == "grace_ms") {
      if (t.size() != 2) throw ConfigError(line, "usage: grace_ms <ms>");
      s.grace_ms = need_ms(t[1], line, "grace_ms");
    } else if (d == "seed") {
      if (t.size() != 2) throw ConfigError(line, "usage: seed <n>");
      auto v = parse_int<std::uint64_t>(t[1]);
      if (!v) throw ConfigError(line, "expected a non-negative integer for seed, got '" + t[1] + "'");
      s.seed = *v;
    } else if (d == "at") {
      if (t.size() < 3) throw ConfigError(line, "usage: at <ms> <update|press|outage|wander|expect> ...");
      DemoEvent e;
      e.line = line;
      e.at_ms = need_ms(t[1], line, "event time");
      e.args.assign(t.begin() + 3, t.end());
      e.text = join(t, 2);
      const auto& k = t[2];
      if (k == "update") {
        e.kind = DemoEvent::Kind::Update;
        if (e.args.size() < 3) throw ConfigError(line, "usage: at <ms> update <agent> <var> <value>");
      } else if (k == "press") {
        e.kind = DemoEvent::Kind::Press;
        if (e.args.size() != 1) throw ConfigError(line, "usage: at <ms> press <plug>");
      } else if (k == "outage") {
        e.kind = DemoEvent::Kind::Outage;
        if (e.args.size() != 2) throw ConfigError(line, "usage: at <ms> outage <device|hub> <duration_ms>");
        if (need_ms(e.args[1], line, "outage duration") == 0) throw ConfigError(line, "outage duration must be positive");
      } else if (k == "wander") {
        e.kind = DemoEvent::Kind::Wander;
        if (e.args.size() != 4) throw ConfigError(line, "usage: at <ms> wander <agent> <var> <count> <radius>");
        if (need_ms(e.args[2], line, "wander count") == 0) throw ConfigError(line, "wander count must be positive");
        if (need_num(e.args[3], line, "wander radius") < 0.0) throw ConfigError(line, "wander radius must not be negative");
      } else if (k == "expect") {
        e.kind = DemoEvent::Kind::Expect;
        check_expect(e.args, line);
      } else {
        throw ConfigError(line, "unknown event '" + k + "'");
      }
      s.events.push_back(std::move(e));
    } else {
      throw ConfigError(line, "unknown directive '" + d + "'");
    }
  }
  if (!have_scenario) throw ConfigError(0, "missing 'scenario' line");
  if (!have_end) throw ConfigError(0, "missing 'end' line");
  for (const auto& e : s.events) {
    if (e.at_ms >= s.end_ms) throw ConfigError(e.line, "event time is not before end");
  }
  std::stable_sort(s.events.begin(), s.events.end(),
                   [](const DemoEvent& a, const DemoEvent& b) { return a.at_ms < b.at_ms; });
  return s;
}

DemoScript load_demo(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(0, "cannot open demo script '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_demo(buf.str(), path.parent_path());
}

bool DemoResult::passed() const { return first_failure() == nullptr; }

const AssertionResult* DemoResult::first_failure() const {
  for (const auto& a : assertions) {
    if (!a.passed) return &a;
  }
  return nullptr;
}

std::string report_row(const CoherenceReport& report, std::int64_t grace_ms) {
  std::string spans;
  for (const auto& s : report.incoherent_spans) {
    if (!spans.empty()) spans += ';';
    spans += std::to_string(s.start.ms) + '-' + std::to_string(s.end.ms);
  }
  return csv_field(report.link_id) + ',' + std::to_string(report.window.start.ms) + ',' +
         std::to_string(report.window.end.ms) + ',' + std::to_string(grace_ms) + ',' + fixed6(report.noise_score) +
         ',' + spans;
}

// ---------------------------------------------------------------------------
// Running

namespace {

class DemoRun {
 public:
  DemoRun(const DemoScript& script, ScenarioConfig config)
      : script_(script),
        config_(std::move(config)),
        devices_(config_, clock_),
        world_(config_, devices_.bindings(config_)),
        rng_(config_.seed) {
    world_.topology().add(kSource, SourceKind::HumanClient);
    devices_.set_sink([this](const DeviceEvent& e) {
      if (hub_faults_.down(clock_.now_ms())) return false;
      world_.submit_device_event(e);
      return true;
    });
    for (const auto& e : script_.events) check(e);
    for (const auto& e : script_.events) queue_.emplace(e.at_ms, e);
  }

  DemoResult run() {
    world_.initialize();
    const std::int64_t tm = config_.tick_ms();
    for (std::int64_t k = 0; k * tm < script_.end_ms; ++k) {
      const std::int64_t t = k * tm;
      std::vector<DemoEvent> expects;
      while (!queue_.empty() && queue_.begin()->first <= t) {
        DemoEvent e = std::move(queue_.begin()->second);
        queue_.erase(queue_.begin());
        if (e.kind == DemoEvent::Kind::Expect) {
          expects.push_back(std::move(e));
          continue;
        }
        clock_.set(std::max(clock_.now_ms(), e.at_ms));
        apply(e, k);
      }
      clock_.set(t);
      devices_.poll();
      world_.run_tick(k, Timestamp{t});
      for (const auto& e : expects) evaluate(e, k, t);
    }

    for (const auto& [id, state] : world_.engine().links()) {
      const auto r = coherence_check(state, Window{Timestamp{0}, Timestamp{script_.end_ms}}, config_.effective_grace_ms());
      reports_ += report_row(r, config_.effective_grace_ms()) + '\n';
    }
    result_.log_csv = world_.log().to_csv();
    result_.reports_csv = std::string(kReportHeader) + '\n' + reports_;
    return std::move(result_);
  }

 private:
  static constexpr const char* kSource = "demo";

  const ExtendedMetaverseAgent& agent(const std::string& id, int line) const {
    const auto* a = world_.engine().agent(id);
    if (!a) throw ConfigError(line, "unknown agent '" + id + "'");
    return *a;
  }

  const VersionedValue& agent_var(const std::string& id, const std::string& var, int line) const {
    const auto* v = agent(id, line).virtual_state.find(var);
    if (!v) throw ConfigError(line, "agent '" + id + "' has no variable '" + var + "'");
    return *v;
  }

  const DeviceSpec& device(const std::string& id, int line) const {
    const auto* d = config_.device(id);
    if (!d) throw ConfigError(line, "unknown device '" + id + "'");
    return *d;
  }

  void need_link(const std::string& id, int line) const {
    if (!world_.engine().link(id)) throw ConfigError(line, "unknown link '" + id + "'");
  }

  Value typed_value(const std::vector<std::string>& a, std::size_t from, ValueType type, int line) const {
    const std::string text = join(a, from);
    auto v = parse_value(text, type);
    if (!v) throw ConfigError(line, "invalid " + std::string(to_string(type)) + " value '" + text + "'");
    return *v;
  }

  // Reject anything that does not fit the scenario before the run starts.
  void check(const DemoEvent& e) const {
    const auto& a = e.args;
    switch (e.kind) {
      case DemoEvent::Kind::Update:
        typed_value(a, 2, type_of(agent_var(a[0], a[1], e.line).value), e.line);
        return;
      case DemoEvent::Kind::Press:
        if (device(a[0], e.line).kind != DeviceKind::Plug) throw ConfigError(e.line, "'" + a[0] + "' is not a plug");
        return;
      case DemoEvent::Kind::Outage:
        if (a[0] != "hub") device(a[0], e.line);
        return;
      case DemoEvent::Kind::Wander:
        if (type_of(agent_var(a[0], a[1], e.line).value) != ValueType::Vector) {
          throw ConfigError(e.line, "wander needs a vec3 variable");
        }
        return;
      case DemoEvent::Kind::Expect:
        break;
    }
    const auto& k = a[0];
    if (k == "device") {
      const auto& d = device(a[1], e.line);
      const auto schema = device_schema(d.kind);
      auto it = schema.find(a[2]);
      if (it == schema.end()) throw ConfigError(e.line, "device '" + a[1] + "' has no variable '" + a[2] + "'");
      typed_value(a, 3, it->second, e.line);
    } else if (k == "bulb") {
      if (device(a[1], e.line).kind != DeviceKind::ColorBulb) throw ConfigError(e.line, "'" + a[1] + "' is not a bulb");
    } else if (k == "bulbs") {
      if (!config_.galaxy) throw ConfigError(e.line, "'bulbs' needs a galaxy scenario");
    } else if (k == "agent") {
      typed_value(a, 3, type_of(agent_var(a[1], a[2], e.line).value), e.line);
    } else if (k == "seated") {
      if (!config_.lamp) throw ConfigError(e.line, "'seated' needs a lamp scenario");
    } else if (k == "commands") {
      if (a[1] != "*") device(a[1], e.line);
    } else if (k == "noise" || k == "latency" || k == "coherent") {
      need_link(a[1], e.line);
    }
  }

  void apply(const DemoEvent& e, std::int64_t tick) {
    const auto& a = e.args;
    switch (e.kind) {
      case DemoEvent::Kind::Update: {
        const auto type = type_of(agent_var(a[0], a[1], e.line).value);
        world_.submit_client_update(kSource, a[0], a[1], typed_value(a, 2, type, e.line));
        return;
      }
      case DemoEvent::Kind::Press: {
        const auto s = devices_.plug(a[0])->press();
        world_.log().add({tick, e.at_ms, "press", "", "", a[0], "power", s.on ? "true" : "false", "physical",
                          std::to_string(s.press_seq), ""});
        return;
      }
      case DemoEvent::Kind::Outage: {
        const auto dur = *parse_int<std::int64_t>(a[1]);
        if (a[0] == "hub") {
          hub_faults_.add_outage(e.at_ms, dur);
        } else if (device(a[0], e.line).kind == DeviceKind::ColorBulb) {
          devices_.bridge().faults().add_outage(e.at_ms, dur);
        } else {
          devices_.plug(a[0])->faults().add_outage(e.at_ms, dur);
        }
        world_.log().add({tick, e.at_ms, "fault", "", "", a[0], "", "", "", "", "outage " + a[1] + "ms"});
        return;
      }
      case DemoEvent::Kind::Wander: {
        const auto base = std::get<Vector3>(agent_var(a[0], a[1], e.line).value);
        const auto count = *parse_int<std::int64_t>(a[2]);
        const double radius = *parse_num(a[3]);
        std::uniform_real_distribution<double> jitter(-radius, radius);
        for (std::int64_t i = 0; i < count; ++i) {
          Vector3 p{base.x + jitter(rng_), base.y + jitter(rng_), base.z + jitter(rng_)};
          DemoEvent u;
          u.line = e.line;
          u.at_ms = e.at_ms + i * config_.tick_ms();
          u.kind = DemoEvent::Kind::Update;
          u.args = {a[0], a[1], format_value(p)};
          u.text = "update " + join(u.args, 0);
          queue_.emplace(u.at_ms, std::move(u));
        }
        return;
      }
      case DemoEvent::Kind::Expect:
        return;
    }
  }

  void evaluate(const DemoEvent& e, std::int64_t tick, std::int64_t now) {
    auto [ok, detail] = assess(e.args, e.line, now);
    result_.assertions.push_back({e.line, e.at_ms, e.text, ok, detail});
    world_.log().add({tick, now, "assert", "", "", "", "", ok ? "pass" : "fail", "", "", e.text + (ok ? "" : ": " + detail)});
  }

  std::pair<bool, std::string> assess(const std::vector<std::string>& a, int line, std::int64_t now) {
    const auto& k = a[0];
    auto bool_text = [](bool b) { return std::string(b ? "true" : "false"); };

    if (k == "device") {
      const auto& d = device(a[1], line);
      const auto expected = typed_value(a, 3, device_schema(d.kind).at(a[2]), line);
      std::map<std::string, Value> vals;
      try {
        InProcessTransport tr([&](const HttpRequest& r) {
          return d.kind == DeviceKind::Plug ? devices_.plug(d.id)->handle(r) : devices_.bridge().handle(r);
        });
        vals = adapter_read({d.id, d.kind, "inproc", d.resource, ""}, tr, {config_.bridge_user, config_.plug_key});
      } catch (const DeviceUnavailable& ex) {
        return {false, std::string("device unreadable: ") + ex.what()};
      }
      const Value& got = vals.at(a[2]);
      if (!values_agree(got, expected)) return {false, "got " + format_value(got)};
      return {true, ""};
    }

    if (k == "bulb" || k == "bulbs") {
      std::vector<std::string> ids;
      ColorHSB want;
      if (k == "bulb") {
        ids = {a[1]};
        want.on = *parse_bool(a[2]);
        want.hue = static_cast<std::uint16_t>(*parse_int<int>(a[3]));
        want.sat = static_cast<std::uint8_t>(*parse_int<int>(a[4]));
        want.bri = static_cast<std::uint8_t>(*parse_int<int>(a[5]));
      } else {
        ids = config_.galaxy->bulbs;
        want = rgb_to_hsb({*parse_num(a[2]), *parse_num(a[3]), *parse_num(a[4])});
      }
      for (const auto& id : ids) {
        const auto got = devices_.bridge().get_light(device(id, line).resource);
        if (!got) return {false, id + ": no such light"};
        const auto g = to_hsb(*got);
        const std::string shown = id + " shows on=" + bool_text(g.on) + " hue=" + std::to_string(g.hue) +
                                  " sat=" + std::to_string(g.sat) + " bri=" + std::to_string(g.bri);
        if (g.on != want.on) return {false, shown};
        if (!want.on) continue;
        if (hue_distance(g.hue, want.hue) > 1 || std::abs(int(g.sat) - int(want.sat)) > 1 ||
            std::abs(int(g.bri) - int(want.bri)) > 1) {
          return {false, shown};
        }
      }
      return {true, ""};
    }

    if (k == "agent") {
      const auto& got = agent_var(a[1], a[2], line).value;
      const auto expected = typed_value(a, 3, type_of(got), line);
      if (!values_agree(got, expected)) return {false, "got " + format_value(got)};
      return {true, ""};
    }

    if (k == "seated") {
      const bool want = *parse_bool(a[1]);
      if (world_.seated() != want) return {false, "seated is " + bool_text(world_.seated())};
      return {true, ""};
    }

    if (k == "commands") {
      const auto want = *parse_int<std::size_t>(a[2]);
      const auto got = world_.device_commands_sent(a[1]);
      if (got != want) return {false, std::to_string(got) + " commands sent"};
      return {true, ""};
    }

    if (k == "noise") {
      const Window w{Timestamp{*parse_int<std::int64_t>(a[2])}, Timestamp{*parse_int<std::int64_t>(a[3])}};
      const auto grace = a.size() == 7 ? *parse_int<std::int64_t>(a[6]) : config_.effective_grace_ms();
      const auto r = coherence_check(*world_.engine().link(a[1]), w, grace);
      reports_ += report_row(r, grace) + '\n';
      const double want = *parse_num(a[4]);
      const double tol = *parse_num(a[5]);
      if (std::abs(r.noise_score - want) > tol) return {false, "noise_score " + fixed6(r.noise_score)};
      return {true, ""};
    }

    if (k == "latency") {
      const auto max_ms = *parse_int<std::int64_t>(a[2]);
      const auto lat = compute_latencies(world_.log().rows(), config_.tick_ms());
      if (auto it = lat.pending.find(a[1]); it != lat.pending.end() && !it->second.empty()) {
        return {false, "update at " + std::to_string(it->second.front()) + " ms has not converged"};
      }
      if (auto it = lat.resolved.find(a[1]); it != lat.resolved.end()) {
        for (auto v : it->second) {
          if (v > max_ms) return {false, "latency " + std::to_string(v) + " ms"};
        }
      }
      return {true, ""};
    }

    // coherent
    const bool want = *parse_bool(a[2]);
    const bool got = world_.engine().link(a[1])->coherent();
    (void)now;
    if (got != want) return {false, "link is " + std::string(got ? "coherent" : "incoherent")};
    return {true, ""};
  }

  const DemoScript& script_;
  ScenarioConfig config_;
  ManualClock clock_;
  FaultSchedule hub_faults_;
  LocalDevices devices_;
  World world_;
  std::mt19937_64 rng_;
  std::multimap<std::int64_t, DemoEvent> queue_;
  std::string reports_;
  DemoResult result_;
};

}  // namespace

DemoResult run_demo(const DemoScript& script, ScenarioConfig config, std::optional<std::uint64_t> seed) {
  if (script.grace_ms) config.grace_ms = script.grace_ms;
  if (script.seed) config.seed = *script.seed;
  if (seed) config.seed = *seed;
  DemoRun run(script, std::move(config));
  return run.run();
}

// ---------------------------------------------------------------------------
// Metrics

std::vector<LogRow> parse_log_csv(std::string_view text) {
  std::vector<LogRow> rows;
  std::istringstream in{std::string(text)};
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (n == 1) {
      if (line != kLogHeader) throw MetricsError("line 1: not an event log (unexpected header)");
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t pos = 0;
    while (true) {
      const auto comma = line.find(',', pos);
      f.push_back(line.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    if (f.size() != 11) {
      throw MetricsError("line " + std::to_string(n) + ": expected 11 fields, got " + std::to_string(f.size()));
    }
    auto tick = parse_int<std::int64_t>(f[0]);
    auto ts = parse_int<std::int64_t>(f[1]);
    if (!tick || !ts) throw MetricsError("line " + std::to_string(n) + ": bad tick or timestamp");
    rows.push_back({*tick, *ts, f[2], f[3], f[4], f[5], f[6], f[7], f[8], f[9], f[10]});
  }
  return rows;
}

std::optional<std::int64_t> nearest_rank(std::vector<std::int64_t> values, double p) {
  if (values.empty()) return std::nullopt;
  std::sort(values.begin(), values.end());
  auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(values.size())));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

MetricsSummary compute_metrics(const std::vector<LogRow>& rows) {
  MetricsSummary m;
  std::optional<std::int64_t> tick_ms;
  std::optional<std::int64_t> grace_ms;
  std::map<std::string, std::vector<CoherenceSample>> samples;
  std::map<std::string, std::size_t> link_commands;

  for (const auto& r : rows) {
    if (r.kind == "meta") {
      if (r.var == "tick_ms") tick_ms = parse_int<std::int64_t>(r.value);
      if (r.var == "grace_ms") grace_ms = parse_int<std::int64_t>(r.value);
    } else if (r.kind == "sample") {
      if (!tick_ms) throw MetricsError("sample before tick_ms meta row");
      if (r.value != "0" && r.value != "1") throw MetricsError("bad sample value '" + r.value + "'");
      samples[r.link].push_back({Timestamp{r.ts_ms}, *tick_ms, r.value == "1"});
    } else if (r.kind == "command") {
      ++link_commands[r.link];
      if (!r.device.empty()) ++m.device_commands[r.device];
    }
  }
  if (samples.empty()) throw MetricsError("no samples");
  if (!grace_ms) throw MetricsError("log has no grace_ms meta row");
  m.tick_ms = *tick_ms;
  m.grace_ms = *grace_ms;

  const auto lat = compute_latencies(rows, m.tick_ms);
  for (const auto& [link, s] : samples) {
    LinkMetrics lm;
    lm.link = link;
    lm.samples = s.size();
    lm.window = {s.front().start, Timestamp{s.back().start.ms + m.tick_ms}};
    const auto r = coherence_check(link, s, lm.window, m.grace_ms);
    lm.noise_score = r.noise_score;
    for (const auto& sp : r.incoherent_spans) lm.incoherent_ms += sp.end.ms - sp.start.ms;
    if (auto it = lat.resolved.find(link); it != lat.resolved.end()) lm.latencies_ms = it->second;
    if (auto it = lat.updates.find(link); it != lat.updates.end()) lm.updates = it->second;
    if (auto it = link_commands.find(link); it != link_commands.end()) lm.commands = it->second;
    m.links.push_back(std::move(lm));
  }
  return m;
}

std::string format_metrics(const MetricsSummary& summary) {
  auto opt = [](std::optional<std::int64_t> v) { return v ? std::to_string(*v) : std::string(); };
  std::string out(kMetricsHeader);
  out += '\n';
  for (const auto& l : summary.links) {
    out += l.link + ',' + std::to_string(l.samples) + ',' + std::to_string(l.window.start.ms) + ',' +
           std::to_string(l.window.end.ms) + ',' + fixed6(l.noise_score) + ',' + std::to_string(l.incoherent_ms) + ',' +
           opt(nearest_rank(l.latencies_ms, 50)) + ',' + opt(nearest_rank(l.latencies_ms, 95)) + ',' +
           std::to_string(l.updates) + ',' + std::to_string(l.commands) + '\n';
  }
  out += "\ndevice,commands\n";
  for (const auto& [d, n] : summary.device_commands) out += d + ',' + std::to_string(n) + '\n';
  return out;
}

}  // namespace xri
