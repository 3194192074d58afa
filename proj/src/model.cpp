#include "xri/model.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <sstream>

namespace xri {

void StateSnapshot::set(const std::string& name, VersionedValue value) {
  if (name.empty()) {
    throw std::invalid_argument("state variable name must not be empty");
  }
  vars_.insert_or_assign(name, std::move(value));
}

const VersionedValue* StateSnapshot::find(std::string_view name) const {
  auto it = vars_.find(name);
  return it == vars_.end() ? nullptr : &it->second;
}

const VarMapping* SyncLink::by_virtual(std::string_view var) const {
  for (const auto& m : mappings) {
    if (m.virtual_var == var) return &m;
  }
  return nullptr;
}

const VarMapping* SyncLink::by_physical(std::string_view var) const {
  for (const auto& m : mappings) {
    if (m.physical_var == var) return &m;
  }
  return nullptr;
}

std::uint16_t hue_degrees_to_api(double degrees) {
  double wrapped = std::fmod(degrees, 360.0);
  if (wrapped < 0.0) wrapped += 360.0;
  const auto scaled = static_cast<std::int64_t>(std::llround(wrapped / 360.0 * kHueMax));
  return static_cast<std::uint16_t>(scaled % (kHueMax + 1));
}

ColorHSB rgb_to_hsb(const ColorRGB& c) {
  const double max = std::max({c.r, c.g, c.b});
  const double min = std::min({c.r, c.g, c.b});
  const double delta = max - min;

  double hue = 0.0;
  if (delta > 0.0) {
    if (max == c.r) {
      hue = 60.0 * std::fmod((c.g - c.b) / delta, 6.0);
    } else if (max == c.g) {
      hue = 60.0 * ((c.b - c.r) / delta + 2.0);
    } else {
      hue = 60.0 * ((c.r - c.g) / delta + 4.0);
    }
  }
  const double sat = max > 0.0 ? delta / max : 0.0;

  ColorHSB out;
  out.on = max > 0.0;
  out.hue = hue_degrees_to_api(hue);
  out.sat = static_cast<std::uint8_t>(std::llround(sat * kSatMax));
  out.bri = static_cast<std::uint8_t>(std::max<long long>(kBriMin, std::llround(max * kBriMax)));
  return out;
}

ColorRGB hsb_to_rgb(const ColorHSB& c) {
  if (!c.on) return {0.0, 0.0, 0.0};
  const double v = static_cast<double>(c.bri) / kBriMax;
  const double s = static_cast<double>(c.sat) / kSatMax;
  const double h = static_cast<double>(c.hue) / kHueMax * 6.0;
  const int sector = static_cast<int>(std::floor(h)) % 6;
  const double f = h - std::floor(h);
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

bool mode_permitted(Interaction agent_interaction, Interaction link_mode) {
  if (link_mode == Interaction::None) return false;
  if (agent_interaction == Interaction::TwoWay) return true;
  return agent_interaction == link_mode;
}

std::vector<std::string> validate_agent(const ExtendedMetaverseAgent& agent, const std::vector<SyncLink>& links) {
  std::vector<std::string> out;
  const auto& crit = agent.criteria;

  if (agent.id.empty()) out.emplace_back("agent id must not be empty");
  if (crit.interaction == Interaction::TwoWay && crit.embodiment != Embodiment::Dual) {
    out.emplace_back("TwoWay interaction requires Dual embodiment");
  }
  if (agent.device && crit.embodiment == Embodiment::VirtualOnly) {
    out.emplace_back("device-bound agent must not be VirtualOnly");
  }

  for (const auto& link : links) {
    const std::string tag = "link '" + link.id + "': ";
    if (link.agent_id != agent.id) {
      out.push_back(tag + "belongs to agent '" + link.agent_id + "', not '" + agent.id + "'");
      continue;
    }
    if (crit.embodiment == Embodiment::VirtualOnly) {
      out.push_back(tag + "VirtualOnly agent cannot carry sync links");
    }
    if (link.mode == Interaction::None) {
      out.push_back(tag + "mode must not be None");
    } else {
      if (link.mode == Interaction::TwoWay && crit.embodiment != Embodiment::Dual) {
        out.push_back(tag + "TwoWay link requires Dual embodiment");
      }
      if (!mode_permitted(crit.interaction, link.mode)) {
        out.push_back(tag + "mode " + std::string(to_string(link.mode)) + " not permitted by agent interaction " +
                      std::string(to_string(crit.interaction)));
      }
    }
    if (link.mappings.empty()) out.push_back(tag + "has no variable mappings");
    for (const auto& m : link.mappings) {
      if (!agent.virtual_state.contains(m.virtual_var)) {
        out.push_back(tag + "maps unknown virtual variable '" + m.virtual_var + "'");
      }
      if (m.physical_var.empty()) out.push_back(tag + "empty physical variable name");
    }
  }
  return out;
}

namespace {

template <typename E, std::size_t N>
std::optional<E> lookup(std::string_view s, const std::array<std::pair<std::string_view, E>, N>& table) {
  for (const auto& [name, value] : table) {
    if (name == s) return value;
  }
  return std::nullopt;
}

template <typename E, std::size_t N>
std::string_view name_of(E e, const std::array<std::pair<std::string_view, E>, N>& table) {
  for (const auto& [name, value] : table) {
    if (value == e) return name;
  }
  return "?";
}

constexpr std::array<std::pair<std::string_view, Embodiment>, 3> kEmbodiment{{
    {"virtual_only", Embodiment::VirtualOnly},
    {"physical_only", Embodiment::PhysicalOnly},
    {"dual", Embodiment::Dual},
}};
constexpr std::array<std::pair<std::string_view, Interaction>, 4> kInteraction{{
    {"none", Interaction::None},
    {"virtual_to_physical", Interaction::VirtualToPhysical},
    {"physical_to_virtual", Interaction::PhysicalToVirtual},
    {"two_way", Interaction::TwoWay},
}};
constexpr std::array<std::pair<std::string_view, Agency>, 3> kAgency{{
    {"passive", Agency::Passive},
    {"reactive", Agency::Reactive},
    {"autonomous", Agency::Autonomous},
}};
constexpr std::array<std::pair<std::string_view, Origin>, 2> kOrigin{{
    {"virtual", Origin::Virtual},
    {"physical", Origin::Physical},
}};
constexpr std::array<std::pair<std::string_view, Transform>, 2> kTransform{{
    {"identity", Transform::Identity},
    {"rgb_to_hsb", Transform::RgbToHsb},
}};
constexpr std::array<std::pair<std::string_view, ValueType>, 4> kValueType{{
    {"bool", ValueType::Bool},
    {"scalar", ValueType::Scalar},
    {"rgb", ValueType::Color},
    {"vec3", ValueType::Vector},
}};

std::optional<double> to_double(std::string_view s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::vector<std::string_view> split_ws(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && (text[i] == ' ' || text[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < text.size() && text[j] != ' ' && text[j] != '\t') ++j;
    if (j > i) out.push_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

}  // namespace

std::string_view to_string(Embodiment e) { return name_of(e, kEmbodiment); }
std::string_view to_string(Interaction i) { return name_of(i, kInteraction); }
std::string_view to_string(Agency a) { return name_of(a, kAgency); }
std::string_view to_string(Origin o) { return name_of(o, kOrigin); }
std::string_view to_string(Transform t) { return name_of(t, kTransform); }
std::string_view to_string(ValueType t) { return name_of(t, kValueType); }

std::optional<Embodiment> parse_embodiment(std::string_view s) { return lookup(s, kEmbodiment); }
std::optional<Interaction> parse_interaction(std::string_view s) { return lookup(s, kInteraction); }
std::optional<Agency> parse_agency(std::string_view s) { return lookup(s, kAgency); }
std::optional<Transform> parse_transform(std::string_view s) { return lookup(s, kTransform); }
std::optional<ValueType> parse_value_type(std::string_view s) { return lookup(s, kValueType); }

std::string format_double(double v) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

std::string format_value(const Value& v) {
  return std::visit(
      [](const auto& x) -> std::string {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, bool>) {
          return x ? "true" : "false";
        } else if constexpr (std::is_same_v<T, double>) {
          return format_double(x);
        } else if constexpr (std::is_same_v<T, ColorRGB>) {
          return "rgb " + format_double(x.r) + " " + format_double(x.g) + " " + format_double(x.b);
        } else {
          return "vec3 " + format_double(x.x) + " " + format_double(x.y) + " " + format_double(x.z);
        }
      },
      v);
}

std::optional<Value> parse_value(std::string_view text, std::optional<ValueType> expected) {
  const auto tok = split_ws(text);
  if (tok.empty()) return std::nullopt;

  auto triple = [&](std::size_t first) -> std::optional<std::array<double, 3>> {
    if (tok.size() != first + 3) return std::nullopt;
    std::array<double, 3> out{};
    for (std::size_t i = 0; i < 3; ++i) {
      auto d = to_double(tok[first + i]);
      if (!d) return std::nullopt;
      out[i] = *d;
    }
    return out;
  };

  std::optional<Value> parsed;
  if (tok[0] == "rgb") {
    if (auto t = triple(1)) parsed = ColorRGB{(*t)[0], (*t)[1], (*t)[2]};
  } else if (tok[0] == "vec3") {
    if (auto t = triple(1)) parsed = Vector3{(*t)[0], (*t)[1], (*t)[2]};
  } else if (tok.size() == 3 && expected && (*expected == ValueType::Color || *expected == ValueType::Vector)) {
    if (auto t = triple(0)) {
      if (*expected == ValueType::Color) {
        parsed = ColorRGB{(*t)[0], (*t)[1], (*t)[2]};
      } else {
        parsed = Vector3{(*t)[0], (*t)[1], (*t)[2]};
      }
    }
  } else if (tok.size() == 1) {
    if (tok[0] == "true" || tok[0] == "on") {
      parsed = true;
    } else if (tok[0] == "false" || tok[0] == "off") {
      parsed = false;
    } else if (auto d = to_double(tok[0])) {
      parsed = *d;
    }
  }

  if (!parsed) return std::nullopt;
  if (auto* c = std::get_if<ColorRGB>(&*parsed); c && !is_valid(*c)) return std::nullopt;
  if (expected && type_of(*parsed) != *expected) return std::nullopt;
  return parsed;
}

}  // namespace xri
