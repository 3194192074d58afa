#pragma once

// Scene-client wire format: one JSON object per text frame. Top-level keys
// are emitted in the fixed order v, type, seq, ts, agent, payload; payload
// objects are emitted with sorted keys. Decoding is strict: unknown keys
// and schema violations are rejected.

#include "xri/model.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>

namespace xri {

inline constexpr int kProtocolVersion = 1;

enum class FrameType : std::uint8_t { hello, subscribe, state_update, command, event, coherence_report, error, ack };

std::string_view to_string(FrameType t);
std::optional<FrameType> parse_frame_type(std::string_view s);

struct Frame {
  int v = kProtocolVersion;
  FrameType type = FrameType::hello;
  std::uint64_t seq = 0;
  std::int64_t ts = 0;
  std::optional<std::string> agent;
  nlohmann::json payload = nlohmann::json::object();

  friend bool operator==(const Frame&, const Frame&) = default;
};

/// Error codes carried in `error` frames.
namespace wire_error {
inline constexpr std::string_view kBadFrame = "bad_frame";
inline constexpr std::string_view kStaleSeq = "stale_seq";
inline constexpr std::string_view kNoHello = "no_hello";
inline constexpr std::string_view kUnknownAgent = "unknown_agent";
inline constexpr std::string_view kUnknownVar = "unknown_var";
inline constexpr std::string_view kBadValue = "bad_value";
inline constexpr std::string_view kUnsupported = "unsupported";
}  // namespace wire_error

struct WireError {
  std::string code;
  std::string message;
};

class WireFault : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Schema check; returns the first problem found.
std::optional<std::string> validate_frame(const Frame& f);

/// Throws WireFault for frames that fail validation.
std::string encode_frame(const Frame& f);

std::variant<Frame, WireError> decode_frame(std::string_view text);

nlohmann::json value_to_json(const Value& v);
std::optional<Value> value_from_json(const nlohmann::json& j);

Frame make_error_frame(std::uint64_t seq, std::int64_t ts, std::string_view code, std::string_view message);
Frame make_ack_frame(std::uint64_t seq, std::int64_t ts, std::uint64_t ack_seq);

}  // namespace xri
