#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace atsne::service {

using json = nlohmann::json;

enum class ErrorCode { bad_request, bad_state, no_session };

std::string_view to_string(ErrorCode code) noexcept;

/// Failure reported to the client as an `error` envelope.
class ProtocolError : public std::runtime_error {
 public:
  ProtocolError(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// `{type, seq, payload}`.
struct Envelope {
  std::string type;
  std::uint64_t seq = 0;
  json payload = json::object();
};

/// Throws ProtocolError(bad_request) for malformed text.
Envelope parse_envelope(std::string_view text);
std::string serialize(const Envelope& envelope);
Envelope error_envelope(std::uint64_t seq, ErrorCode code, const std::string& message);

enum class FrameKind : std::uint8_t { positions = 1, field = 2, rho = 3 };

/// u32 seq, u8 kind, then the values as little-endian f32.
struct BinaryFrame {
  std::uint32_t seq = 0;
  FrameKind kind = FrameKind::positions;
  std::vector<float> values;
};

inline constexpr std::size_t kFrameHeaderBytes = 5;

std::string encode_frame(const BinaryFrame& frame);
/// Throws ProtocolError(bad_request) when the size or kind is invalid.
BinaryFrame decode_frame(std::string_view bytes);

/// A reply: the envelope plus binary frames it refers to by seq.
struct Message {
  Envelope envelope;
  std::vector<BinaryFrame> frames;
};

}  // namespace atsne::service
