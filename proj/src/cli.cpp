#include "xri/cli.hpp"

#include "xri/demo.hpp"
#include "xri/http_server.hpp"
#include "xri/hub.hpp"
#include "xri/net.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

namespace xri {

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(0, "cannot open config file '" + path + "'");
  std::map<std::string, std::string> out;
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    if (auto hash = raw.find('#'); hash != std::string::npos) raw.resize(hash);
    raw = trim(raw);
    if (raw.empty()) continue;
    const auto eq = raw.find('=');
    if (eq == std::string::npos) throw ConfigError(line, path + ": expected key = value");
    std::string key = trim(raw.substr(0, eq));
    std::string value = trim(raw.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    const auto& keys = run_config_keys();
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
      throw ConfigError(line, path + ": unknown setting '" + key + "'");
    }
    out[key] = value;
  }
  return out;
}

int to_port(const std::string& key, const std::string& v) {
  int port = -1;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), port);
  if (ec != std::errc{} || p != v.data() + v.size() || port < 0 || port > 65535) {
    throw ConfigError(0, key + ": invalid port '" + v + "'");
  }
  return port;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off" || v.empty()) return false;
  throw ConfigError(0, key + ": expected true or false, got '" + v + "'");
}

std::string env_name(const std::string& key) {
  std::string out = "XRI_";
  for (char c : key) out += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(0, "cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

bool write_file(const std::string& path, const std::string& text, std::ostream& err) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) {
    err << "xri-hub: cannot write '" << path << "'\n";
    return false;
  }
  return true;
}

std::string connect_host(const std::string& listen) { return listen == "0.0.0.0" ? "127.0.0.1" : listen; }

ScenarioConfig load_for_run(const RunConfig& rc) {
  if (rc.scenario.empty()) throw ConfigError(0, "no scenario file given (--scenario or XRI_SCENARIO)");
  ScenarioConfig sc = load_scenario(rc.scenario);
  if (rc.tick_rate) sc.tick_rate = *rc.tick_rate;
  if (rc.seed) sc.seed = *rc.seed;
  return sc;
}

/// Emulators served over HTTP, one front for the bridge and one per plug.
struct EmulatorFleet {
  LocalDevices devices;
  std::unique_ptr<HttpFront> bridge;
  std::map<std::string, std::unique_ptr<HttpFront>> plugs;

  EmulatorFleet(const ScenarioConfig& sc, const Clock& clock) : devices(sc, clock) {}

  void start(const RunConfig& rc, const ScenarioConfig& sc) {
    bool any_bulb = false;
    for (const auto& d : sc.devices) any_bulb = any_bulb || d.kind == DeviceKind::ColorBulb;
    if (any_bulb) {
      bridge = std::make_unique<HttpFront>(rc.listen, rc.bridge_port,
                                           [this](const HttpRequest& r) { return devices.bridge().handle(r); });
      if (!bridge->start()) throw ConfigError(0, "cannot bind bridge emulator to port " + std::to_string(rc.bridge_port));
    }
    int next = rc.plug_port;
    for (const auto& [id, plug] : devices.plugs()) {
      PlugEmulator* p = plug.get();
      auto front = std::make_unique<HttpFront>(rc.listen, next, [p](const HttpRequest& r) { return p->handle(r); });
      if (!front->start()) throw ConfigError(0, "cannot bind plug emulator '" + id + "' to port " + std::to_string(next));
      if (next != 0) ++next;
      plugs.emplace(id, std::move(front));
    }
  }

  void stop() {
    if (bridge) bridge->stop();
    for (auto& [id, f] : plugs) f->stop();
  }

  void apply_faults(const std::vector<FaultEntry>& faults, const ScenarioConfig& sc) {
    for (const auto& f : faults) {
      const auto* d = sc.device(f.target);
      if (!d) continue;
      if (d->kind == DeviceKind::ColorBulb) {
        devices.bridge().faults().add_outage(f.start_ms, f.duration_ms);
      } else {
        devices.plug(f.target)->faults().add_outage(f.start_ms, f.duration_ms);
      }
    }
  }
};

std::vector<FaultEntry> load_faults(const RunConfig& rc, const ScenarioConfig& sc) {
  if (rc.faults.empty()) return {};
  std::vector<FaultEntry> faults;
  try {
    faults = parse_faults(read_file(rc.faults));
  } catch (const ConfigError& e) {
    throw ConfigError(e.line(), rc.faults + ": " + e.what());
  }
  for (const auto& f : faults) {
    if (f.target != "hub" && !sc.device(f.target)) throw ConfigError(0, rc.faults + ": unknown fault target '" + f.target + "'");
  }
  return faults;
}

}  // namespace

const std::vector<std::string>& run_config_keys() {
  static const std::vector<std::string> keys{"listen",  "ws_port",  "tcp_port", "callback_port", "bridge_port",
                                             "plug_port", "scenario", "tick_rate", "seed",         "faults",
                                             "metrics", "log",      "attach",   "device_host"};
  return keys;
}

void validate(const RunConfig& c) {
  if (c.tick_rate && !(*c.tick_rate > 0.0)) throw ConfigError(0, "tick_rate must be positive");
  std::map<int, std::string> used;
  const std::pair<const char*, int> ports[] = {{"ws_port", c.ws_port},
                                               {"tcp_port", c.tcp_port},
                                               {"callback_port", c.callback_port},
                                               {"bridge_port", c.bridge_port},
                                               {"plug_port", c.plug_port}};
  for (const auto& [name, port] : ports) {
    if (port == 0) continue;
    auto [it, fresh] = used.emplace(port, name);
    if (!fresh) throw ConfigError(0, std::string(name) + " and " + it->second + " both use port " + std::to_string(port));
  }
}

RunConfig resolve_run_config(const std::map<std::string, std::string>& flags, const EnvLookup& env) {
  std::map<std::string, std::string> merged;

  std::optional<std::string> file;
  if (auto it = flags.find("config"); it != flags.end()) {
    file = it->second;
  } else if (auto e = env("XRI_CONFIG")) {
    file = *e;
  }
  if (file) merged = read_config_file(*file);

  for (const auto& key : run_config_keys()) {
    if (auto e = env(env_name(key))) merged[key] = *e;
  }
  for (const auto& [key, value] : flags) {
    if (key == "config") continue;
    const auto& keys = run_config_keys();
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) throw ConfigError(0, "unknown setting '" + key + "'");
    merged[key] = value;
  }

  RunConfig c;
  for (const auto& [key, v] : merged) {
    if (key == "listen") {
      c.listen = v;
    } else if (key == "ws_port") {
      c.ws_port = to_port(key, v);
    } else if (key == "tcp_port") {
      c.tcp_port = to_port(key, v);
    } else if (key == "callback_port") {
      c.callback_port = to_port(key, v);
    } else if (key == "bridge_port") {
      c.bridge_port = to_port(key, v);
    } else if (key == "plug_port") {
      c.plug_port = to_port(key, v);
    } else if (key == "scenario") {
      c.scenario = v;
    } else if (key == "tick_rate") {
      double r = 0.0;
      auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), r);
      if (ec != std::errc{} || p != v.data() + v.size()) throw ConfigError(0, "tick_rate: invalid number '" + v + "'");
      c.tick_rate = r;
    } else if (key == "seed") {
      std::uint64_t s = 0;
      auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), s);
      if (ec != std::errc{} || p != v.data() + v.size()) throw ConfigError(0, "seed: invalid integer '" + v + "'");
      c.seed = s;
    } else if (key == "faults") {
      c.faults = v;
    } else if (key == "metrics") {
      c.metrics = v;
    } else if (key == "log") {
      c.log = v;
    } else if (key == "attach") {
      c.attach = to_bool(key, v);
    } else if (key == "device_host") {
      c.device_host = v;
    }
  }
  validate(c);
  return c;
}

// ---------------------------------------------------------------------------

int cmd_serve(const RunConfig& rc, const std::atomic<bool>& stop, std::ostream& out, std::ostream& err,
              const std::function<void(const ServeInfo&)>& on_ready) {
  SteadyClock clock;
  ScenarioConfig sc;
  std::vector<FaultEntry> faults;
  try {
    validate(rc);
    sc = load_for_run(rc);
    faults = load_faults(rc, sc);
  } catch (const ConfigError& e) {
    err << "xri-hub: " << e.what() << '\n';
    return exit_code::kConfig;
  }

  ServeInfo info;
  std::unique_ptr<EmulatorFleet> fleet;
  std::map<std::string, DeviceBinding> bindings;
  const std::string device_host = rc.attach ? rc.device_host : connect_host(rc.listen);
  try {
    if (!rc.attach) {
      fleet = std::make_unique<EmulatorFleet>(sc, clock);
      fleet->start(rc, sc);
      fleet->apply_faults(faults, sc);
      if (fleet->bridge) info.bridge_port = fleet->bridge->port();
      for (const auto& [id, f] : fleet->plugs) info.plug_ports[id] = f->port();
    } else {
      info.bridge_port = rc.bridge_port;
      int next = rc.plug_port;
      for (const auto& d : sc.devices) {
        if (d.kind == DeviceKind::Plug) info.plug_ports[d.id] = next++;
      }
    }
  } catch (const ConfigError& e) {
    err << "xri-hub: " << e.what() << '\n';
    return exit_code::kConfig;
  }

  for (const auto& d : sc.devices) {
    const int port = d.kind == DeviceKind::ColorBulb ? info.bridge_port : info.plug_ports.at(d.id);
    const std::string base = "http://" + device_host + ":" + std::to_string(port);
    DeviceBinding b;
    b.descriptor = {d.id, d.kind, base, d.resource, ""};
    b.transport = std::make_unique<HttpTransport>(base);
    bindings.emplace(d.id, std::move(b));
  }

  Hub hub(sc, std::move(bindings));
  for (const auto& f : faults) {
    if (f.target == "hub") hub.faults().add_outage(f.start_ms, f.duration_ms);
  }

  HttpFront callback(rc.listen, rc.callback_port, [&hub, &clock](const HttpRequest& req) -> HttpResponse {
    if (req.method != "POST" || req.path != "/events") {
      return {404, R"({"ok":false,"error":"not_found"})"};
    }
    auto j = nlohmann::json::parse(req.body, nullptr, false);
    auto event = j.is_discarded() ? std::nullopt : device_event_from_json(j);
    if (!event) return {400, R"({"ok":false,"error":"bad_event"})"};
    if (!hub.on_device_event(*event, clock.now_ms())) return {503, R"({"ok":false,"error":"unavailable"})"};
    return {200, R"({"ok":true})"};
  });
  if (!callback.start()) {
    err << "xri-hub: cannot bind device callback to port " << rc.callback_port << '\n';
    if (fleet) fleet->stop();
    return exit_code::kConfig;
  }
  info.callback_port = callback.port();
  if (fleet) fleet->devices.set_sink(http_event_sink("http://" + connect_host(rc.listen) + ":" + std::to_string(info.callback_port)));

  hub.initialize();

  NetServer net(hub, rc.listen, rc.ws_port, rc.tcp_port);
  try {
    net.start();
  } catch (const std::exception& e) {
    err << "xri-hub: " << e.what() << '\n';
    callback.stop();
    if (fleet) fleet->stop();
    return exit_code::kConfig;
  }
  info.ws_port = net.ws_port();
  info.tcp_port = net.tcp_port();

  out << "xri-hub: scenario " << to_string(sc.kind) << " (" << rc.scenario << "), tick " << sc.tick_ms() << " ms\n";
  out << "xri-hub: agents";
  for (const auto& a : sc.agents) out << ' ' << a.id;
  out << '\n';
  out << "xri-hub: websocket ws://" << rc.listen << ':' << info.ws_port << '\n';
  out << "xri-hub: ndjson tcp://" << rc.listen << ':' << info.tcp_port << '\n';
  out << "xri-hub: device callback http://" << rc.listen << ':' << info.callback_port << "/events\n";
  if (info.bridge_port) out << "xri-hub: bridge http://" << device_host << ':' << info.bridge_port << '\n';
  for (const auto& [id, port] : info.plug_ports) out << "xri-hub: plug " << id << " http://" << device_host << ':' << port << '\n';
  out.flush();
  if (on_ready) on_ready(info);

  const auto tick = std::chrono::milliseconds(hub.tick_ms());
  for (std::int64_t k = 0; !stop.load();) {
    const auto due = std::chrono::milliseconds(clock.now_ms()) - tick * k;
    if (due.count() < 0) {
      std::this_thread::sleep_for(std::min<std::chrono::milliseconds>(-due, std::chrono::milliseconds(20)));
      continue;
    }
    if (fleet) fleet->devices.poll();
    hub.tick(k++);
  }

  net.stop();
  callback.stop();
  if (fleet) fleet->stop();

  int rc_code = exit_code::kOk;
  if (!rc.metrics.empty() && !write_file(rc.metrics, hub.metrics_csv(), err)) rc_code = exit_code::kConfig;
  if (!rc.log.empty() && !write_file(rc.log, hub.log_csv(), err)) rc_code = exit_code::kConfig;
  out << "xri-hub: stopped after " << hub.ticks_run() << " ticks\n";
  return rc_code;
}

int cmd_sim_devices(const RunConfig& rc, const std::atomic<bool>& stop, std::ostream& out, std::ostream& err,
                    const std::function<void(const ServeInfo&)>& on_ready) {
  SteadyClock clock;
  ScenarioConfig sc;
  std::vector<FaultEntry> faults;
  try {
    validate(rc);
    sc = load_for_run(rc);
    faults = load_faults(rc, sc);
  } catch (const ConfigError& e) {
    err << "xri-hub: " << e.what() << '\n';
    return exit_code::kConfig;
  }

  EmulatorFleet fleet(sc, clock);
  try {
    fleet.start(rc, sc);
  } catch (const ConfigError& e) {
    err << "xri-hub: " << e.what() << '\n';
    return exit_code::kConfig;
  }
  fleet.apply_faults(faults, sc);
  const std::string hub_url = "http://" + rc.device_host + ":" + std::to_string(rc.callback_port);
  fleet.devices.set_sink(http_event_sink(hub_url));

  ServeInfo info;
  info.callback_port = rc.callback_port;
  if (fleet.bridge) {
    info.bridge_port = fleet.bridge->port();
    out << "xri-hub: bridge http://" << rc.listen << ':' << info.bridge_port << " user " << sc.bridge_user << '\n';
  }
  for (const auto& [id, f] : fleet.plugs) {
    info.plug_ports[id] = f->port();
    out << "xri-hub: plug " << id << " http://" << rc.listen << ':' << f->port() << '\n';
  }
  out << "xri-hub: plug events go to " << hub_url << "/events\n";
  out.flush();
  if (on_ready) on_ready(info);

  while (!stop.load()) {
    fleet.devices.poll();
    std::this_thread::sleep_for(std::chrono::milliseconds(25));
  }
  fleet.stop();
  return exit_code::kOk;
}

int cmd_demo(const std::string& script_path, std::optional<std::uint64_t> seed, const DemoOutputs& outputs,
             std::ostream& out, std::ostream& err) {
  DemoResult result;
  try {
    const DemoScript script = load_demo(script_path);
    ScenarioConfig sc = load_scenario(script.scenario_path.string());
    result = run_demo(script, std::move(sc), seed);
  } catch (const ConfigError& e) {
    err << "xri-hub: " << script_path << ": " << e.what() << '\n';
    return exit_code::kConfig;
  }

  if (!outputs.log_path.empty() && !write_file(outputs.log_path, result.log_csv, err)) return exit_code::kConfig;
  if (!outputs.reports_path.empty() && !write_file(outputs.reports_path, result.reports_csv, err)) {
    return exit_code::kConfig;
  }

  std::size_t passed = 0;
  for (const auto& a : result.assertions) passed += a.passed ? 1 : 0;
  out << "xri-hub: " << passed << '/' << result.assertions.size() << " assertions passed\n";
  if (const auto* f = result.first_failure()) {
    err << "xri-hub: assertion failed at line " << f->line << " (t=" << f->at_ms << " ms): " << f->text << ": "
        << f->detail << '\n';
    return exit_code::kAssertion;
  }
  return exit_code::kOk;
}

int cmd_metrics(const std::string& log_path, std::ostream& out, std::ostream& err) {
  std::ifstream in(log_path);
  if (!in) {
    err << "xri-hub: cannot open log '" << log_path << "'\n";
    return exit_code::kConfig;
  }
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    out << format_metrics(compute_metrics(parse_log_csv(buf.str())));
  } catch (const MetricsError& e) {
    err << "xri-hub: " << log_path << ": " << e.what() << '\n';
    return exit_code::kConfig;
  }
  return exit_code::kOk;
}

// ---------------------------------------------------------------------------

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err, const EnvLookup& env,
            const std::atomic<bool>& stop) {
  CLI::App app{"Hub for synchronised virtual and physical agents"};
  app.name("xri-hub");
  app.require_subcommand(1);

  // Run settings shared by serve and sim-devices. Values are kept as
  // strings so precedence can be resolved after parsing.
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> given;
  auto add_run_options = [&](CLI::App* sub) {
    sub->add_option("--config", values["config"], "Settings file (key = value lines)");
    for (const auto& key : run_config_keys()) {
      std::string flag = "--" + key;
      std::replace(flag.begin(), flag.end(), '_', '-');
      if (key == "attach") {
        sub->add_flag_callback(flag, [&values] { values["attach"] = "true"; }, "Use running emulators");
      } else {
        given[sub->get_name() + key] = sub->add_option(flag, values[key]);
      }
    }
    given[sub->get_name() + "config"] = sub->get_option("--config");
  };

  auto* serve = app.add_subcommand("serve", "Run the hub");
  add_run_options(serve);
  auto* sim = app.add_subcommand("sim-devices", "Run the device emulators on their own");
  add_run_options(sim);

  auto* demo = app.add_subcommand("demo", "Run a demo script headless");
  std::string script;
  std::optional<std::uint64_t> demo_seed;
  std::string out_dir = ".";
  DemoOutputs outputs;
  demo->add_option("script", script, "Demo script")->required();
  demo->add_option("--seed", demo_seed, "Override the seed");
  demo->add_option("--out-dir", out_dir, "Directory for <name>.log.csv and <name>.reports.csv");
  demo->add_option("--log", outputs.log_path, "Event log CSV path");
  demo->add_option("--reports", outputs.reports_path, "Coherence reports CSV path");

  auto* metrics = app.add_subcommand("metrics", "Summarise an event log");
  std::string log_path;
  metrics->add_option("log", log_path, "Event log CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return exit_code::kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return exit_code::kOk;
  } catch (const CLI::ParseError& e) {
    err << "xri-hub: " << e.what() << '\n';
    return exit_code::kConfig;
  }

  if (*demo) {
    const auto stem = std::filesystem::path(script).stem().string();
    if (outputs.log_path.empty()) outputs.log_path = (std::filesystem::path(out_dir) / (stem + ".log.csv")).string();
    if (outputs.reports_path.empty()) {
      outputs.reports_path = (std::filesystem::path(out_dir) / (stem + ".reports.csv")).string();
    }
    return cmd_demo(script, demo_seed, outputs, out, err);
  }
  if (*metrics) return cmd_metrics(log_path, out, err);

  CLI::App* sub = *serve ? serve : sim;
  std::map<std::string, std::string> flags;
  for (const auto& [key, value] : values) {
    if (key == "attach") {
      flags[key] = value;
      continue;
    }
    auto it = given.find(sub->get_name() + key);
    if (it != given.end() && it->second->count() > 0) flags[key] = value;
  }
  RunConfig rc;
  try {
    rc = resolve_run_config(flags, env);
  } catch (const ConfigError& e) {
    err << "xri-hub: " << e.what() << '\n';
    return exit_code::kConfig;
  }
  return *serve ? cmd_serve(rc, stop, out, err) : cmd_sim_devices(rc, stop, out, err);
}

}  // namespace xri
