#include "xri/hub.hpp"

#include "xri/demo.hpp"

#include <charconv>
#include <sstream>

namespace xri {

using json = nlohmann::json;

Hub::Hub(ScenarioConfig config, std::map<std::string, DeviceBinding> devices)
    : world_(std::move(config), std::move(devices)), tick_ms_(world_.config().tick_ms()) {
  world_.set_publisher([this](const BusEvent& e) { fan_out(e); });
}

void Hub::initialize() {
  std::lock_guard lock(mutex_);
  world_.initialize();
}

std::uint64_t Hub::open_session(Sender send) {
  std::lock_guard lock(mutex_);
  const auto id = next_session_++;
  Session s;
  s.send = std::move(send);
  s.source = "client:" + std::to_string(id);
  world_.topology().add(s.source, SourceKind::HumanClient);
  sessions_.emplace(id, std::move(s));
  return id;
}

void Hub::close_session(std::uint64_t id) {
  std::lock_guard lock(mutex_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) return;
  world_.topology().remove(it->second.source);
  sessions_.erase(it);
}

std::size_t Hub::session_count() const {
  std::lock_guard lock(mutex_);
  return sessions_.size();
}

std::int64_t Hub::ticks_run() const {
  std::lock_guard lock(mutex_);
  return next_tick_;
}

std::int64_t Hub::now_ms() const { return next_tick_ * tick_ms_; }

void Hub::send(Session& s, Frame f) {
  f.seq = ++s.out_seq;
  s.send(encode_frame(f));
}

void Hub::send_error(Session& s, std::string_view code, std::string_view message, std::int64_t ts) {
  send(s, make_error_frame(0, ts, code, message));
}

void Hub::on_text(std::uint64_t id, std::string_view text) {
  std::lock_guard lock(mutex_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) return;
  Session& s = it->second;
  const std::int64_t now = now_ms();

  auto decoded = decode_frame(text);
  if (auto* err = std::get_if<WireError>(&decoded)) {
    send_error(s, err->code, err->message, now);
    return;
  }
  Frame f = std::get<Frame>(std::move(decoded));

  if (s.last_seq && f.seq <= *s.last_seq) {
    send_error(s, wire_error::kStaleSeq,
               "seq " + std::to_string(f.seq) + " is not above " + std::to_string(*s.last_seq), now);
    return;
  }
  s.last_seq = f.seq;

  if (f.type != FrameType::hello && !s.hello) {
    send_error(s, wire_error::kNoHello, "send hello first", now);
    return;
  }

  switch (f.type) {
    case FrameType::hello:
      s.hello = true;
      s.client = f.payload["client"].get<std::string>();
      send(s, make_ack_frame(0, now, f.seq));
      return;

    case FrameType::subscribe: {
      std::set<std::string, std::less<>> agents;
      bool all = false;
      for (const auto& a : f.payload["agents"]) {
        const auto name = a.get<std::string>();
        if (name == "*") {
          all = true;
        } else if (!world_.engine().agent(name)) {
          send_error(s, wire_error::kUnknownAgent, "unknown agent '" + name + "'", now);
          return;
        }
        agents.insert(name);
      }
      std::set<RelationshipClass> classes;
      if (f.payload.contains("classes")) {
        for (const auto& c : f.payload["classes"]) classes.insert(*parse_relationship(c.get<std::string>()));
      }
      s.subscribed = true;
      s.all_agents = all;
      s.agents = std::move(agents);
      s.classes = std::move(classes);
      send(s, make_ack_frame(0, now, f.seq));

      Frame snap;
      snap.type = FrameType::event;
      snap.ts = now;
      snap.payload = json{{"class", to_string(RelationshipClass::EnvironmentToHuman)},
                          {"kind", "snapshot"},
                          {"data", world_.snapshot()}};
      send(s, std::move(snap));
      return;
    }

    case FrameType::state_update: {
      const auto* agent = world_.engine().agent(*f.agent);
      if (!agent) {
        send_error(s, wire_error::kUnknownAgent, "unknown agent '" + *f.agent + "'", now);
        return;
      }
      const auto var = f.payload["var"].get<std::string>();
      const auto* current = agent->virtual_state.find(var);
      if (!current) {
        send_error(s, wire_error::kUnknownVar, "agent '" + *f.agent + "' has no variable '" + var + "'", now);
        return;
      }
      auto value = value_from_json(f.payload["value"]);
      if (type_of(*value) != type_of(current->value)) {
        send_error(s, wire_error::kBadValue,
                   "'" + var + "' expects " + std::string(to_string(type_of(current->value))), now);
        return;
      }
      // Applied at the next tick, stamped with the hub's time.
      world_.submit_client_update(s.source, *f.agent, var, std::move(*value));
      send(s, make_ack_frame(0, now, f.seq));
      return;
    }

    case FrameType::event: {
      send(s, make_ack_frame(0, now, f.seq));
      BusEvent e;
      e.cls = classify_event(s.source, world_.topology());
      e.kind = f.payload["kind"].get<std::string>();
      e.agent = f.agent;
      e.data = f.payload["data"];
      e.data["from"] = s.client;
      e.ts = Timestamp{now};
      fan_out(e, id);
      return;
    }

    case FrameType::ack:
      return;

    case FrameType::command:
    case FrameType::coherence_report:
    case FrameType::error:
      send_error(s, wire_error::kUnsupported,
                 "clients may not send " + std::string(to_string(f.type)) + " frames", now);
      return;
  }
}

bool Hub::wants(const Session& s, const std::optional<std::string>& agent, RelationshipClass cls) const {
  if (!s.hello || !s.subscribed) return false;
  if (!s.classes.empty() && !s.classes.contains(cls)) return false;
  return s.all_agents || !agent || s.agents.contains(*agent);
}

void Hub::fan_out(const BusEvent& e, std::optional<std::uint64_t> except) {
  for (auto& [id, s] : sessions_) {
    if (id == except || !wants(s, e.agent, e.cls)) continue;
    Frame f;
    f.type = FrameType::event;
    f.ts = e.ts.ms;
    f.agent = e.agent;
    f.payload = json{{"class", to_string(e.cls)}, {"kind", e.kind}, {"data", e.data}};
    send(s, std::move(f));
  }
}

bool Hub::on_device_event(const DeviceEvent& event, std::int64_t now) {
  std::lock_guard lock(mutex_);
  if (faults_.down(now)) return false;
  world_.submit_device_event(event);
  return true;
}

void Hub::tick(std::int64_t k) {
  std::lock_guard lock(mutex_);
  world_.run_tick(k, Timestamp{k * tick_ms_});
  next_tick_ = k + 1;
  const std::int64_t end = next_tick_ * tick_ms_;
  if (end % kReportIntervalMs < tick_ms_) send_reports(end);
}

void Hub::send_reports(std::int64_t end) {
  const std::int64_t start = std::max<std::int64_t>(0, end - kReportWindowMs);
  if (end <= start) return;
  const auto grace = world_.config().effective_grace_ms();
  for (const auto& [link_id, state] : world_.engine().links()) {
    const auto r = coherence_check(state, Window{Timestamp{start}, Timestamp{end}}, grace);
    json spans = json::array();
    for (const auto& sp : r.incoherent_spans) spans.push_back(json::array({sp.start.ms, sp.end.ms}));
    for (auto& [id, s] : sessions_) {
      if (!wants(s, state.link().agent_id, RelationshipClass::EnvironmentToHuman)) continue;
      Frame f;
      f.type = FrameType::coherence_report;
      f.ts = end;
      f.agent = state.link().agent_id;
      f.payload = json{{"link", link_id}, {"window", json::array({start, end})}, {"spans", spans}, {"noise", r.noise_score}};
      send(s, std::move(f));
    }
  }
}

std::string Hub::metrics_csv() const {
  std::lock_guard lock(mutex_);
  try {
    return format_metrics(compute_metrics(world_.log().rows()));
  } catch (const MetricsError&) {
    return std::string(kMetricsHeader) + "\n\ndevice,commands\n";
  }
}

std::string Hub::log_csv() const {
  std::lock_guard lock(mutex_);
  return world_.log().to_csv();
}

std::vector<FaultEntry> parse_faults(std::string_view text) {
  std::vector<FaultEntry> out;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    if (auto hash = raw.find('#'); hash != std::string::npos) raw.resize(hash);
    std::istringstream ls(raw);
    std::vector<std::string> t;
    for (std::string tok; ls >> tok;) t.push_back(tok);
    if (t.empty()) continue;
    if (t.size() != 4 || t[0] != "outage") throw ConfigError(line, "usage: outage <device|hub> <start_ms> <duration_ms>");
    FaultEntry e{t[1], 0, 0};
    auto num = [&](const std::string& s, std::int64_t& v) {
      auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc{} || p != s.data() + s.size() || v < 0) {
        throw ConfigError(line, "expected a non-negative integer, got '" + s + "'");
      }
    };
    num(t[2], e.start_ms);
    num(t[3], e.duration_ms);
    if (e.duration_ms == 0) throw ConfigError(line, "outage duration must be positive");
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace xri
