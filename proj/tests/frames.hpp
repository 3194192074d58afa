#pragma once

// Frame generator for round-trip properties and the golden frame set.

#include "support.hpp"

#include "xri/wire.hpp"

#include <limits>

namespace xri::test {

using json = nlohmann::json;

inline std::string random_string(Rng& rng, bool allow_empty = false) {
  static const std::vector<std::string> pieces{"a", "Z", "0", "_", "-", " ", "\"", "\\", "/", "\n", "\t", "\x01",
                                               "\xc3\xa9", "\xe2\x82\xac", "\xf0\x9f\x8c\x8d", "lamp", "*"};
  std::string s;
  const auto n = rng.integer(allow_empty ? 0 : 1, 12);
  for (int i = 0; i < n; ++i) s += rng.pick(pieces);
  return s;
}

inline json random_value(Rng& rng) {
  switch (rng.integer(0, 3)) {
    case 0: return value_to_json(rng.coin());
    case 1: return value_to_json(rng.uniform(-1e9, 1e9));
    case 2: return value_to_json(rng.color());
    default: return value_to_json(rng.vec(1e3));
  }
}

inline json random_data(Rng& rng, int depth = 0) {
  json obj = json::object();
  const auto n = rng.integer(0, 4);
  for (int i = 0; i < n; ++i) {
    const auto key = random_string(rng);
    switch (rng.integer(0, depth < 2 ? 5 : 4)) {
      case 0: obj[key] = rng.integer(-1000000, 1000000); break;
      case 1: obj[key] = rng.uniform(-1, 1); break;
      case 2: obj[key] = random_string(rng, true); break;
      case 3: obj[key] = nullptr; break;
      case 4: obj[key] = json::array({rng.coin(), random_string(rng)}); break;
      default: obj[key] = random_data(rng, depth + 1); break;
    }
  }
  return obj;
}

inline const std::vector<std::string> kClasses{"human_to_human", "environment_to_human", "object_agent_to_object_agent"};

inline Frame random_frame(Rng& rng) {
  Frame f;
  f.type = static_cast<FrameType>(rng.integer(0, 7));
  f.seq = static_cast<std::uint64_t>(rng.integer(0, std::numeric_limits<std::int64_t>::max()));
  f.ts = rng.integer(0, std::int64_t{1} << 50);
  if (rng.coin()) f.agent = random_string(rng);
  json p = json::object();
  switch (f.type) {
    case FrameType::hello: p["client"] = random_string(rng); break;
    case FrameType::subscribe: {
      p["agents"] = json::array();
      for (int i = 0, n = static_cast<int>(rng.integer(1, 4)); i < n; ++i) p["agents"].push_back(random_string(rng));
      if (rng.coin()) {
        p["classes"] = json::array();
        for (int i = 0, n = static_cast<int>(rng.integer(0, 3)); i < n; ++i) p["classes"].push_back(rng.pick(kClasses));
      }
      break;
    }
    case FrameType::state_update:
      f.agent = random_string(rng);
      p["var"] = random_string(rng);
      p["value"] = random_value(rng);
      break;
    case FrameType::command:
      p["target"] = rng.coin() ? "device" : "scene";
      if (p["target"] == "device" || rng.coin()) p["device"] = random_string(rng);
      p["var"] = random_string(rng);
      p["value"] = random_value(rng);
      break;
    case FrameType::event:
      p["class"] = rng.pick(kClasses);
      p["kind"] = random_string(rng);
      p["data"] = random_data(rng);
      break;
    case FrameType::coherence_report: {
      const auto start = rng.integer(0, 1000000);
      const auto end = start + rng.integer(0, 100000);
      p["link"] = random_string(rng);
      p["window"] = json::array({start, end});
      p["spans"] = json::array();
      for (int i = 0, n = static_cast<int>(rng.integer(0, 3)); i < n; ++i) {
        const auto s = rng.integer(start, end);
        p["spans"].push_back(json::array({s, rng.integer(s, end)}));
      }
      p["noise"] = rng.uniform(0, 1);
      break;
    }
    case FrameType::error:
      p["code"] = random_string(rng);
      p["message"] = random_string(rng, true);
      break;
    case FrameType::ack: p["ack_seq"] = static_cast<std::uint64_t>(rng.integer(0, 1 << 30)); break;
  }
  f.payload = p;
  return f;
}

struct GoldenCase {
  std::string file;
  Frame frame;
};

inline std::vector<GoldenCase> golden_cases() {
  auto mk = [](FrameType t, std::uint64_t seq, std::int64_t ts, std::optional<std::string> agent, json payload) {
    Frame f;
    f.type = t;
    f.seq = seq;
    f.ts = ts;
    f.agent = std::move(agent);
    f.payload = std::move(payload);
    return f;
  };
  return {
      {"hello.json", mk(FrameType::hello, 1, 0, std::nullopt, {{"client", "alice"}})},
      {"subscribe.json",
       mk(FrameType::subscribe, 2, 5, std::nullopt,
          {{"agents", json::array({"lamp", "bulb"})}, {"classes", json::array({"environment_to_human", "human_to_human"})}})},
      {"state_update.json", mk(FrameType::state_update, 3, 1200, "lamp", {{"var", "power"}, {"value", true}})},
      {"command.json", mk(FrameType::command, 4, 1250, "lamp",
                          {{"target", "device"}, {"device", "plug1"}, {"var", "power"}, {"value", true}})},
      {"event.json", mk(FrameType::event, 5, 1300, "rocket",
                        {{"class", "object_agent_to_object_agent"},
                         {"kind", "state"},
                         {"data", {{"color", value_to_json(ColorRGB{1, 0, 0})}}}})},
      {"coherence_report.json",
       mk(FrameType::coherence_report, 6, 10000, "lamp",
          {{"link", "lamp_power"}, {"window", json::array({0, 10000})}, {"spans", json::array({json::array({4000, 6000})})}, {"noise", 0.2}})},
      {"error.json", make_error_frame(7, 0, "stale_seq", "seq 3 is not above 3")},
      {"ack.json", make_ack_frame(8, 50, 3)},
  };
}

}  // namespace xri::test
