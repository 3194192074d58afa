#pragma once

// Domain types shared by every part of the hub: scene geometry, colours,
// hub time, agent classification and the versioned values that the sync
// engine reconciles.

#include <cmath>
#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace xri {

/// Scene position in meters. Right-handed, +Y up.
struct Vector3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  friend bool operator==(const Vector3&, const Vector3&) = default;
};

inline Vector3 operator+(const Vector3& a, const Vector3& b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Vector3 operator-(const Vector3& a, const Vector3& b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline double norm(const Vector3& v) { return std::sqrt(v.x * v.x + v.y * v.y + v.z * v.z); }
inline double distance(const Vector3& a, const Vector3& b) { return norm(a - b); }
inline bool is_finite(const Vector3& v) { return std::isfinite(v.x) && std::isfinite(v.y) && std::isfinite(v.z); }

/// Unit-interval RGB.
struct ColorRGB {
  double r = 0.0;
  double g = 0.0;
  double b = 0.0;

  friend bool operator==(const ColorRGB&, const ColorRGB&) = default;
};

inline bool is_valid(const ColorRGB& c) {
  auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  return unit(c.r) && unit(c.g) && unit(c.b);
}

/// Bridge-API colour: hue 0..65535, sat 0..254, bri 1..254.
/// When `on` is false the other fields are kept but have no visible effect.
struct ColorHSB {
  bool on = false;
  std::uint16_t hue = 0;
  std::uint8_t sat = 0;
  std::uint8_t bri = 1;

  friend bool operator==(const ColorHSB&, const ColorHSB&) = default;
};

inline constexpr int kHueMax = 65535;
inline constexpr int kSatMax = 254;
inline constexpr int kBriMin = 1;
inline constexpr int kBriMax = 254;

/// Hub-assigned logical time in milliseconds.
struct Timestamp {
  std::int64_t ms = 0;

  friend auto operator<=>(const Timestamp&, const Timestamp&) = default;
};

enum class Embodiment { VirtualOnly, PhysicalOnly, Dual };
enum class Interaction { None, VirtualToPhysical, PhysicalToVirtual, TwoWay };
enum class Agency { Passive, Reactive, Autonomous };

struct AgentCriteria {
  Embodiment embodiment = Embodiment::VirtualOnly;
  Interaction interaction = Interaction::None;
  Agency agency = Agency::Passive;

  friend bool operator==(const AgentCriteria&, const AgentCriteria&) = default;
};

enum class Origin { Virtual, Physical };

using Value = std::variant<bool, double, ColorRGB, Vector3>;

enum class ValueType { Bool, Scalar, Color, Vector };

inline ValueType type_of(const Value& v) { return static_cast<ValueType>(v.index()); }

struct VersionedValue {
  Value value;
  Timestamp ts;
  Origin origin = Origin::Virtual;
  std::uint64_t seq = 0;

  friend bool operator==(const VersionedValue&, const VersionedValue&) = default;
};

/// Named variables of one embodiment. Names are non-empty and unique.
class StateSnapshot {
 public:
  void set(const std::string& name, VersionedValue value);
  const VersionedValue* find(std::string_view name) const;
  bool contains(std::string_view name) const { return find(name) != nullptr; }
  const std::map<std::string, VersionedValue, std::less<>>& vars() const { return vars_; }

  friend bool operator==(const StateSnapshot&, const StateSnapshot&) = default;

 private:
  std::map<std::string, VersionedValue, std::less<>> vars_;
};

enum class Transform { Identity, RgbToHsb };

struct VarMapping {
  std::string virtual_var;
  std::string physical_var;
  Transform transform = Transform::Identity;

  friend bool operator==(const VarMapping&, const VarMapping&) = default;
};

struct SyncLink {
  std::string id;
  std::string agent_id;
  std::string device_id;
  Interaction mode = Interaction::TwoWay;
  std::vector<VarMapping> mappings;

  const VarMapping* by_virtual(std::string_view var) const;
  const VarMapping* by_physical(std::string_view var) const;
};

struct ExtendedMetaverseAgent {
  std::string id;
  AgentCriteria criteria;
  StateSnapshot virtual_state;
  std::optional<std::string> device;
  std::vector<std::string> links;
};

/// Standard HSV conversion scaled to the bridge API ranges. Black maps to
/// `on = false` with bri at its floor of 1.
ColorHSB rgb_to_hsb(const ColorRGB& c);

/// Inverse of rgb_to_hsb up to quantization. An "off" colour renders black.
ColorRGB hsb_to_rgb(const ColorHSB& c);

/// Hue in degrees (any real) to the 0..65535 API scale, wrapping at 360.
std::uint16_t hue_degrees_to_api(double degrees);

/// Every broken criteria/link invariant, as human-readable messages.
/// An empty result means the agent is consistent.
std::vector<std::string> validate_agent(const ExtendedMetaverseAgent& agent, const std::vector<SyncLink>& links);

/// True when `mode` is one of the directions `criteria` allows.
bool mode_permitted(Interaction agent_interaction, Interaction link_mode);

std::string_view to_string(Embodiment e);
std::string_view to_string(Interaction i);
std::string_view to_string(Agency a);
std::string_view to_string(Origin o);
std::string_view to_string(Transform t);
std::string_view to_string(ValueType t);

std::optional<Embodiment> parse_embodiment(std::string_view s);
std::optional<Interaction> parse_interaction(std::string_view s);
std::optional<Agency> parse_agency(std::string_view s);
std::optional<Transform> parse_transform(std::string_view s);
std::optional<ValueType> parse_value_type(std::string_view s);

/// Text form used by scenario files, demo scripts and CSV logs:
/// `true`, `0.5`, `rgb 1 0 0`, `vec3 0 1.5 0`.
std::string format_value(const Value& v);

/// Parses the text form; `expected` disambiguates bare tokens when given.
std::optional<Value> parse_value(std::string_view text, std::optional<ValueType> expected = std::nullopt);

/// Shortest decimal form of a double that round-trips.
std::string format_double(double v);

}  // namespace xri
