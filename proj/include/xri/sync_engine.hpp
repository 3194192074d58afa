#pragma once

// The agent controller: reconciles versioned updates arriving from scene
// clients (virtual side) and device adapters (physical side), emits the
// commands that re-converge the opposite embodiment, and keeps the per-tick
// coherence history that the noise score is computed from.

#include "xri/model.hpp"

#include <array>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace xri {

/// Raised for contract violations on the sync path (unknown link,
/// unmapped variable, type mismatch).
class SyncError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Total order key: (ts, origin with Physical above Virtual, seq), then
/// the value itself so that equal keys still resolve independently of
/// argument order.
bool supersedes(const VersionedValue& a, const VersionedValue& b);

/// Last-writer-wins. Throws SyncError when the two values have different types.
VersionedValue reconcile(const VersionedValue& a, const VersionedValue& b);

/// Comparison tolerances: booleans exact, scalars and vectors 1e-6
/// absolute, colours 1/254 per channel.
bool values_agree(const Value& a, const Value& b);

struct UpdateEvent {
  std::string link_id;
  /// Virtual variable name for Virtual origin, physical name for Physical.
  std::string var;
  VersionedValue value;
};

enum class CommandTarget { Device, SceneClients };

struct Command {
  CommandTarget target = CommandTarget::Device;
  std::string link_id;
  std::string agent_id;
  std::string device_id;
  /// Variable name on the target side.
  std::string var;
  /// Hub-level value (what the winning update carried).
  Value value;
  Transform transform = Transform::Identity;
  /// Device-space colour when the mapping transform is RgbToHsb.
  std::optional<ColorHSB> hsb;
  /// Version of the reconciled value this command realizes.
  Timestamp ts;
  Origin origin = Origin::Virtual;
  std::uint64_t seq = 0;
};

std::string_view to_string(CommandTarget t);

struct MappingState {
  VarMapping mapping;
  std::optional<VersionedValue> reconciled;
  /// Last value known to be held by each embodiment, indexed by Origin.
  std::array<std::optional<Value>, 2> seen;
  std::array<std::optional<std::uint64_t>, 2> last_seq;
  std::array<bool, 2> in_flight{false, false};

  bool coherent() const;
};

struct CoherenceSample {
  Timestamp start;
  std::int64_t duration_ms = 0;
  bool coherent = true;
};

struct Window {
  Timestamp start;
  Timestamp end;
};

struct Span {
  Timestamp start;
  Timestamp end;

  friend bool operator==(const Span&, const Span&) = default;
};

struct CoherenceReport {
  std::string link_id;
  Window window;
  std::vector<Span> incoherent_spans;
  double noise_score = 0.0;
};

class LinkState {
 public:
  explicit LinkState(SyncLink link);

  const SyncLink& link() const { return link_; }
  const std::string& id() const { return link_.id; }

  MappingState* by_virtual(std::string_view var);
  MappingState* by_physical(std::string_view var);
  MappingState* for_side(Origin side, std::string_view var) {
    return side == Origin::Virtual ? by_virtual(var) : by_physical(var);
  }
  std::vector<MappingState>& mappings() { return mappings_; }
  const std::vector<MappingState>& mappings() const { return mappings_; }

  /// Seeds what one side currently holds without creating a version.
  void observe(Origin side, std::string_view var, Value value);
  /// Seeds the reconciled register (initial configuration value).
  void seed(std::string_view virtual_var, VersionedValue value);

  bool coherent() const;

  void record(const CoherenceSample& sample) { history_.push_back(sample); }
  std::span<const CoherenceSample> history() const { return history_; }

 private:
  SyncLink link_;
  std::vector<MappingState> mappings_;
  std::vector<CoherenceSample> history_;
};

/// Applies one update. Duplicates (seq not above the last seen for the
/// same side and variable) and reconcile losers change nothing. A winner
/// that differs from what the opposite side holds yields exactly one
/// command toward that side.
std::vector<Command> ingest_update(LinkState& state, const UpdateEvent& e);

/// One propagation round: re-issues a command for every side that still
/// disagrees with the reconciled value and has nothing in flight.
std::vector<Command> resync(LinkState& state);

/// Marks a command as in flight. Called by whoever dispatches it.
void mark_sent(LinkState& state, const Command& c);

/// Delivery outcome. A delivered command updates what the target side holds.
void acknowledge(LinkState& state, const Command& c, bool delivered);

/// Noise over `window`: runs of incoherent samples lasting longer than
/// `grace_ms` become spans (clipped to the window); the score is their
/// total duration over the window duration. Throws SyncError on an empty window.
CoherenceReport coherence_check(std::string link_id, std::span<const CoherenceSample> samples, Window window,
                                std::int64_t grace_ms);

CoherenceReport coherence_check(const LinkState& state, Window window, std::int64_t grace_ms);

enum class RelationshipClass { HumanToHuman, EnvironmentToHuman, ObjectAgentToObjectAgent };

std::string_view to_string(RelationshipClass c);
std::optional<RelationshipClass> parse_relationship(std::string_view s);

enum class SourceKind { HumanClient, EnvironmentDevice, Agent };

/// Who can originate bus events.
class Topology {
 public:
  void add(std::string id, SourceKind kind) { sources_.insert_or_assign(std::move(id), kind); }
  void remove(const std::string& id) { sources_.erase(id); }
  std::optional<SourceKind> kind_of(std::string_view id) const;

 private:
  std::map<std::string, SourceKind, std::less<>> sources_;
};

/// Human clients talk to humans, devices and sensors surface to humans,
/// agents drive other agents and their devices. Throws SyncError for
/// sources not present in the topology.
RelationshipClass classify_event(std::string_view source_id, const Topology& topology);

/// Registry of agents and links plus the variable schema of each device.
/// All mutation happens on one logical sequence per hub instance.
class SyncEngine {
 public:
  void add_agent(ExtendedMetaverseAgent agent);
  /// Validates the owning agent against the new link set; throws SyncError
  /// with the first violation.
  void add_link(SyncLink link);
  void set_device_schema(const std::string& device_id, std::map<std::string, ValueType> vars);

  const ExtendedMetaverseAgent* agent(std::string_view id) const;
  const std::map<std::string, ExtendedMetaverseAgent, std::less<>>& agents() const { return agents_; }
  LinkState* link(std::string_view id);
  const LinkState* link(std::string_view id) const;
  const std::map<std::string, LinkState, std::less<>>& links() const { return links_; }
  const std::map<std::string, ValueType>* device_schema(std::string_view device_id) const;

  std::vector<Command> ingest(const UpdateEvent& e);

  /// Client-originated change of an agent variable. Unlinked variables are
  /// stored directly; linked ones go through ingest on every link. Throws
  /// SyncError for unknown agents, unknown variables or type changes.
  struct Applied {
    /// The stored value differs from what was held before.
    bool changed = false;
    /// Links on which this update became the reconciled value.
    std::vector<std::string> won_links;
    /// Links that map the variable but kept their newer value.
    std::vector<std::string> lost_links;
    std::vector<Command> commands;
  };
  Applied apply_virtual(std::string_view agent_id, std::string_view var, Value value, Timestamp ts);

  /// Device-originated change, `seq` is the device's own event sequence.
  Applied apply_physical(std::string_view device_id, std::string_view var, Value value, Timestamp ts,
                         std::uint64_t seq);

  /// Initial device state, before any versions exist.
  void observe_physical(std::string_view device_id, std::string_view var, Value value);

  std::vector<Command> resync();
  void mark_sent(const Command& c);
  /// Delivered scene commands also update the agent's virtual snapshot.
  void acknowledge(const Command& c, bool delivered);

 private:
  std::map<std::string, ExtendedMetaverseAgent, std::less<>> agents_;
  std::map<std::string, LinkState, std::less<>> links_;
  std::map<std::string, std::map<std::string, ValueType>, std::less<>> device_schemas_;
  std::map<std::string, std::uint64_t, std::less<>> virtual_seq_;
};

}  // namespace xri
