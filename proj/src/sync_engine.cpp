#include "xri/sync_engine.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

namespace xri {

namespace {

constexpr double kScalarTolerance = 1e-6;
constexpr double kColorTolerance = 1.0 / 254.0 + 1e-12;

std::size_t idx(Origin o) { return o == Origin::Virtual ? 0 : 1; }
Origin opposite(Origin o) { return o == Origin::Virtual ? Origin::Physical : Origin::Virtual; }

int origin_rank(Origin o) { return o == Origin::Physical ? 1 : 0; }

// Strict weak order on values of the same type; only used to break exact
// version ties deterministically.
bool value_less(const Value& a, const Value& b) {
  if (a.index() != b.index()) return a.index() < b.index();
  return std::visit(
      [&](const auto& x) -> bool {
        using T = std::decay_t<decltype(x)>;
        const auto& y = std::get<T>(b);
        if constexpr (std::is_same_v<T, ColorRGB>) {
          return std::tie(x.r, x.g, x.b) < std::tie(y.r, y.g, y.b);
        } else if constexpr (std::is_same_v<T, Vector3>) {
          return std::tie(x.x, x.y, x.z) < std::tie(y.x, y.y, y.z);
        } else {
          return x < y;
        }
      },
      a);
}

// Whether the link lets updates originating on `side` drive the register.
bool drives(Interaction mode, Origin side) {
  switch (mode) {
    case Interaction::TwoWay: return true;
    case Interaction::VirtualToPhysical: return side == Origin::Virtual;
    case Interaction::PhysicalToVirtual: return side == Origin::Physical;
    case Interaction::None: return false;
  }
  return false;
}

bool follows(Interaction mode, Origin side) {
  switch (mode) {
    case Interaction::TwoWay: return true;
    case Interaction::VirtualToPhysical: return side == Origin::Physical;
    case Interaction::PhysicalToVirtual: return side == Origin::Virtual;
    case Interaction::None: return false;
  }
  return false;
}

Command make_command(const LinkState& state, const MappingState& m, Origin target_side, const VersionedValue& v) {
  Command c;
  c.target = target_side == Origin::Physical ? CommandTarget::Device : CommandTarget::SceneClients;
  c.link_id = state.link().id;
  c.agent_id = state.link().agent_id;
  c.device_id = state.link().device_id;
  c.var = target_side == Origin::Physical ? m.mapping.physical_var : m.mapping.virtual_var;
  c.value = v.value;
  c.transform = m.mapping.transform;
  if (c.target == CommandTarget::Device && c.transform == Transform::RgbToHsb) {
    if (const auto* rgb = std::get_if<ColorRGB>(&v.value)) c.hsb = rgb_to_hsb(*rgb);
  }
  c.ts = v.ts;
  c.origin = v.origin;
  c.seq = v.seq;
  return c;
}

}  // namespace

bool supersedes(const VersionedValue& a, const VersionedValue& b) {
  if (a.ts != b.ts) return a.ts > b.ts;
  if (a.origin != b.origin) return origin_rank(a.origin) > origin_rank(b.origin);
  if (a.seq != b.seq) return a.seq > b.seq;
  return value_less(b.value, a.value);
}

VersionedValue reconcile(const VersionedValue& a, const VersionedValue& b) {
  if (a.value.index() != b.value.index()) {
    throw SyncError("reconcile: value type mismatch (" + std::string(to_string(type_of(a.value))) + " vs " +
                    std::string(to_string(type_of(b.value))) + ")");
  }
  return supersedes(b, a) ? b : a;
}

bool values_agree(const Value& a, const Value& b) {
  if (a.index() != b.index()) return false;
  return std::visit(
      [&](const auto& x) -> bool {
        using T = std::decay_t<decltype(x)>;
        const auto& y = std::get<T>(b);
        if constexpr (std::is_same_v<T, bool>) {
          return x == y;
        } else if constexpr (std::is_same_v<T, double>) {
          return std::fabs(x - y) <= kScalarTolerance;
        } else if constexpr (std::is_same_v<T, ColorRGB>) {
          return std::fabs(x.r - y.r) <= kColorTolerance && std::fabs(x.g - y.g) <= kColorTolerance &&
                 std::fabs(x.b - y.b) <= kColorTolerance;
        } else {
          return std::fabs(x.x - y.x) <= kScalarTolerance && std::fabs(x.y - y.y) <= kScalarTolerance &&
                 std::fabs(x.z - y.z) <= kScalarTolerance;
        }
      },
      a);
}

std::string_view to_string(CommandTarget t) { return t == CommandTarget::Device ? "device" : "scene"; }

bool MappingState::coherent() const {
  const auto& v = seen[idx(Origin::Virtual)];
  const auto& p = seen[idx(Origin::Physical)];
  if (!v || !p) return false;
  return values_agree(*v, *p);
}

LinkState::LinkState(SyncLink link) : link_(std::move(link)) {
  for (const auto& m : link_.mappings) {
    MappingState s;
    s.mapping = m;
    mappings_.push_back(std::move(s));
  }
}

MappingState* LinkState::by_virtual(std::string_view var) {
  for (auto& m : mappings_) {
    if (m.mapping.virtual_var == var) return &m;
  }
  return nullptr;
}

MappingState* LinkState::by_physical(std::string_view var) {
  for (auto& m : mappings_) {
    if (m.mapping.physical_var == var) return &m;
  }
  return nullptr;
}

void LinkState::observe(Origin side, std::string_view var, Value value) {
  auto* m = for_side(side, var);
  if (!m) throw SyncError("link '" + link_.id + "': variable '" + std::string(var) + "' is not mapped");
  m->seen[idx(side)] = std::move(value);
}

void LinkState::seed(std::string_view virtual_var, VersionedValue value) {
  auto* m = by_virtual(virtual_var);
  if (!m) throw SyncError("link '" + link_.id + "': variable '" + std::string(virtual_var) + "' is not mapped");
  m->seen[idx(value.origin)] = value.value;
  m->last_seq[idx(value.origin)] = value.seq;
  m->reconciled = std::move(value);
}

bool LinkState::coherent() const {
  return std::all_of(mappings_.begin(), mappings_.end(), [](const MappingState& m) { return m.coherent(); });
}

std::vector<Command> ingest_update(LinkState& state, const UpdateEvent& e) {
  const Origin side = e.value.origin;
  MappingState* m = state.for_side(side, e.var);
  if (!m) {
    throw SyncError("link '" + state.id() + "': variable '" + e.var + "' is not mapped on the " +
                    std::string(to_string(side)) + " side");
  }
  if (m->reconciled && m->reconciled->value.index() != e.value.value.index()) {
    throw SyncError("link '" + state.id() + "': type mismatch for '" + e.var + "'");
  }

  auto& last = m->last_seq[idx(side)];
  if (last && e.value.seq <= *last) return {};

  std::vector<Command> out;
  const Interaction mode = state.link().mode;

  if (!drives(mode, side)) {
    // The reporting side only follows on this link; pull it back.
    last = e.value.seq;
    m->seen[idx(side)] = e.value.value;
    if (m->reconciled && !values_agree(e.value.value, m->reconciled->value)) {
      out.push_back(make_command(state, *m, side, *m->reconciled));
    }
    return out;
  }

  if (m->reconciled && !supersedes(e.value, *m->reconciled)) return out;

  last = e.value.seq;
  m->reconciled = e.value;
  m->seen[idx(side)] = e.value.value;

  const Origin other = opposite(side);
  const auto& held = m->seen[idx(other)];
  if (follows(mode, other) && (!held || !values_agree(*held, e.value.value))) {
    out.push_back(make_command(state, *m, other, e.value));
  }
  return out;
}

std::vector<Command> resync(LinkState& state) {
  std::vector<Command> out;
  const Interaction mode = state.link().mode;
  for (auto& m : state.mappings()) {
    if (!m.reconciled) continue;
    for (Origin side : {Origin::Virtual, Origin::Physical}) {
      if (!follows(mode, side) || m.in_flight[idx(side)]) continue;
      const auto& held = m.seen[idx(side)];
      if (!held || !values_agree(*held, m.reconciled->value)) {
        out.push_back(make_command(state, m, side, *m.reconciled));
      }
    }
  }
  return out;
}

namespace {

MappingState* target_mapping(LinkState& state, const Command& c) {
  const Origin side = c.target == CommandTarget::Device ? Origin::Physical : Origin::Virtual;
  return state.for_side(side, c.var);
}

}  // namespace

void mark_sent(LinkState& state, const Command& c) {
  if (auto* m = target_mapping(state, c)) {
    m->in_flight[idx(c.target == CommandTarget::Device ? Origin::Physical : Origin::Virtual)] = true;
  }
}

void acknowledge(LinkState& state, const Command& c, bool delivered) {
  MappingState* m = target_mapping(state, c);
  if (!m) throw SyncError("link '" + state.id() + "': acknowledged command for unmapped '" + c.var + "'");
  const Origin side = c.target == CommandTarget::Device ? Origin::Physical : Origin::Virtual;
  m->in_flight[idx(side)] = false;
  if (delivered) m->seen[idx(side)] = c.value;
}

CoherenceReport coherence_check(std::string link_id, std::span<const CoherenceSample> samples, Window window,
                                std::int64_t grace_ms) {
  if (window.end <= window.start) throw SyncError("coherence_check: empty window");

  CoherenceReport report;
  report.link_id = std::move(link_id);
  report.window = window;

  std::int64_t total = 0;
  auto close_run = [&](std::int64_t run_start, std::int64_t run_end) {
    if (run_end - run_start <= grace_ms) return;
    const std::int64_t s = std::max(run_start, window.start.ms);
    const std::int64_t e = std::min(run_end, window.end.ms);
    if (e <= s) return;
    report.incoherent_spans.push_back({Timestamp{s}, Timestamp{e}});
    total += e - s;
  };

  std::optional<std::int64_t> run_start;
  std::int64_t run_end = 0;
  for (const auto& s : samples) {
    const std::int64_t begin = s.start.ms;
    const std::int64_t end = s.start.ms + s.duration_ms;
    if (!s.coherent) {
      if (run_start && begin == run_end) {
        run_end = end;
      } else {
        if (run_start) close_run(*run_start, run_end);
        run_start = begin;
        run_end = end;
      }
    } else if (run_start) {
      close_run(*run_start, run_end);
      run_start.reset();
    }
  }
  if (run_start) close_run(*run_start, run_end);

  report.noise_score = static_cast<double>(total) / static_cast<double>(window.end.ms - window.start.ms);
  return report;
}

CoherenceReport coherence_check(const LinkState& state, Window window, std::int64_t grace_ms) {
  return coherence_check(state.id(), state.history(), window, grace_ms);
}

std::string_view to_string(RelationshipClass c) {
  switch (c) {
    case RelationshipClass::HumanToHuman: return "human_to_human";
    case RelationshipClass::EnvironmentToHuman: return "environment_to_human";
    case RelationshipClass::ObjectAgentToObjectAgent: return "object_agent_to_object_agent";
  }
  return "?";
}

std::optional<RelationshipClass> parse_relationship(std::string_view s) {
  for (auto c : {RelationshipClass::HumanToHuman, RelationshipClass::EnvironmentToHuman,
                 RelationshipClass::ObjectAgentToObjectAgent}) {
    if (to_string(c) == s) return c;
  }
  return std::nullopt;
}

std::optional<SourceKind> Topology::kind_of(std::string_view id) const {
  auto it = sources_.find(id);
  if (it == sources_.end()) return std::nullopt;
  return it->second;
}

RelationshipClass classify_event(std::string_view source_id, const Topology& topology) {
  const auto kind = topology.kind_of(source_id);
  if (!kind) throw SyncError("classify_event: unknown source '" + std::string(source_id) + "'");
  switch (*kind) {
    case SourceKind::HumanClient: return RelationshipClass::HumanToHuman;
    case SourceKind::EnvironmentDevice: return RelationshipClass::EnvironmentToHuman;
    case SourceKind::Agent: return RelationshipClass::ObjectAgentToObjectAgent;
  }
  throw SyncError("classify_event: unreachable");
}

void SyncEngine::add_agent(ExtendedMetaverseAgent agent) {
  if (agent.id.empty()) throw SyncError("agent id must not be empty");
  if (agents_.contains(agent.id)) throw SyncError("duplicate agent id '" + agent.id + "'");
  auto problems = validate_agent(agent, {});
  if (!problems.empty()) throw SyncError("agent '" + agent.id + "': " + problems.front());
  agent.links.clear();
  const std::string id = agent.id;
  agents_.emplace(id, std::move(agent));
}

void SyncEngine::add_link(SyncLink link) {
  if (link.id.empty()) throw SyncError("link id must not be empty");
  if (links_.contains(link.id)) throw SyncError("duplicate link id '" + link.id + "'");
  auto it = agents_.find(link.agent_id);
  if (it == agents_.end()) throw SyncError("link '" + link.id + "' references unknown agent '" + link.agent_id + "'");
  auto& agent = it->second;

  std::vector<SyncLink> all;
  for (const auto& lid : agent.links) all.push_back(links_.at(lid).link());
  all.push_back(link);
  auto problems = validate_agent(agent, all);
  if (!problems.empty()) throw SyncError(problems.front());

  if (const auto* schema = device_schema(link.device_id)) {
    for (const auto& m : link.mappings) {
      auto s = schema->find(m.physical_var);
      if (s == schema->end()) {
        throw SyncError("link '" + link.id + "': device '" + link.device_id + "' has no variable '" + m.physical_var +
                        "'");
      }
      const auto vtype = type_of(agent.virtual_state.find(m.virtual_var)->value);
      if (s->second != vtype) {
        throw SyncError("link '" + link.id + "': type mismatch between '" + m.virtual_var + "' and '" +
                        m.physical_var + "'");
      }
      if (m.transform == Transform::RgbToHsb && vtype != ValueType::Color) {
        throw SyncError("link '" + link.id + "': rgb_to_hsb needs a colour variable");
      }
    }
  }

  LinkState state(link);
  for (const auto& m : link.mappings) state.seed(m.virtual_var, *agent.virtual_state.find(m.virtual_var));
  agent.links.push_back(link.id);
  const std::string id = link.id;
  links_.emplace(id, std::move(state));
}

void SyncEngine::set_device_schema(const std::string& device_id, std::map<std::string, ValueType> vars) {
  device_schemas_.insert_or_assign(device_id, std::move(vars));
}

const ExtendedMetaverseAgent* SyncEngine::agent(std::string_view id) const {
  auto it = agents_.find(id);
  return it == agents_.end() ? nullptr : &it->second;
}

LinkState* SyncEngine::link(std::string_view id) {
  auto it = links_.find(id);
  return it == links_.end() ? nullptr : &it->second;
}

const LinkState* SyncEngine::link(std::string_view id) const {
  auto it = links_.find(id);
  return it == links_.end() ? nullptr : &it->second;
}

const std::map<std::string, ValueType>* SyncEngine::device_schema(std::string_view device_id) const {
  auto it = device_schemas_.find(device_id);
  return it == device_schemas_.end() ? nullptr : &it->second;
}

std::vector<Command> SyncEngine::ingest(const UpdateEvent& e) {
  auto* state = link(e.link_id);
  if (!state) throw SyncError("unknown link '" + e.link_id + "'");
  return ingest_update(*state, e);
}

SyncEngine::Applied SyncEngine::apply_virtual(std::string_view agent_id, std::string_view var, Value value,
                                              Timestamp ts) {
  auto it = agents_.find(agent_id);
  if (it == agents_.end()) throw SyncError("unknown agent '" + std::string(agent_id) + "'");
  auto& agent = it->second;
  const auto* current = agent.virtual_state.find(var);
  if (!current) throw SyncError("agent '" + agent.id + "' has no variable '" + std::string(var) + "'");
  if (current->value.index() != value.index()) {
    throw SyncError("agent '" + agent.id + "': variable '" + std::string(var) + "' expects " +
                    std::string(to_string(type_of(current->value))));
  }

  const std::uint64_t seq = ++virtual_seq_[agent.id + "/" + std::string(var)];
  const VersionedValue vv{value, ts, Origin::Virtual, seq};

  Applied out;
  bool linked = false;
  bool won = false;
  for (const auto& lid : agent.links) {
    auto& state = links_.at(lid);
    auto* m = state.by_virtual(var);
    if (!m) continue;
    linked = true;
    auto cmds = ingest_update(state, UpdateEvent{lid, std::string(var), vv});
    if (m->reconciled && *m->reconciled == vv) {
      won = true;
      out.won_links.push_back(lid);
    } else {
      out.lost_links.push_back(lid);
    }
    out.commands.insert(out.commands.end(), cmds.begin(), cmds.end());
  }

  if (!linked || won) {
    out.changed = !(current->value == value);
    agent.virtual_state.set(std::string(var), vv);
  }
  return out;
}

SyncEngine::Applied SyncEngine::apply_physical(std::string_view device_id, std::string_view var, Value value,
                                               Timestamp ts, std::uint64_t seq) {
  if (const auto* schema = device_schema(device_id)) {
    auto s = schema->find(std::string(var));
    if (s == schema->end()) {
      throw SyncError("device '" + std::string(device_id) + "' has no variable '" + std::string(var) + "'");
    }
    if (s->second != type_of(value)) {
      throw SyncError("device '" + std::string(device_id) + "': variable '" + std::string(var) + "' expects " +
                      std::string(to_string(s->second)));
    }
  }

  const VersionedValue vv{value, ts, Origin::Physical, seq};
  Applied out;
  bool linked = false;
  for (auto& [lid, state] : links_) {
    if (state.link().device_id != device_id) continue;
    auto* m = state.by_physical(var);
    if (!m) continue;
    linked = true;
    const std::optional<Value> before = m->reconciled ? std::optional<Value>(m->reconciled->value) : std::nullopt;
    auto cmds = ingest_update(state, UpdateEvent{lid, std::string(var), vv});
    if (m->reconciled && *m->reconciled == vv) {
      out.won_links.push_back(lid);
      if (!before || !(*before == value)) out.changed = true;
    } else {
      out.lost_links.push_back(lid);
    }
    out.commands.insert(out.commands.end(), cmds.begin(), cmds.end());
  }
  if (!linked) {
    throw SyncError("device '" + std::string(device_id) + "' variable '" + std::string(var) + "' is not linked");
  }
  return out;
}

void SyncEngine::observe_physical(std::string_view device_id, std::string_view var, Value value) {
  for (auto& [lid, state] : links_) {
    if (state.link().device_id == device_id && state.by_physical(var)) state.observe(Origin::Physical, var, value);
  }
}

std::vector<Command> SyncEngine::resync() {
  std::vector<Command> out;
  for (auto& [lid, state] : links_) {
    auto cmds = xri::resync(state);
    out.insert(out.end(), cmds.begin(), cmds.end());
  }
  return out;
}

void SyncEngine::mark_sent(const Command& c) {
  auto* state = link(c.link_id);
  if (!state) throw SyncError("unknown link '" + c.link_id + "'");
  xri::mark_sent(*state, c);
}

void SyncEngine::acknowledge(const Command& c, bool delivered) {
  auto* state = link(c.link_id);
  if (!state) throw SyncError("unknown link '" + c.link_id + "'");
  xri::acknowledge(*state, c, delivered);
  if (delivered && c.target == CommandTarget::SceneClients) {
    auto it = agents_.find(c.agent_id);
    if (it != agents_.end()) it->second.virtual_state.set(c.var, VersionedValue{c.value, c.ts, c.origin, c.seq});
  }
}

}  // namespace xri
