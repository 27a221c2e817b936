#include "atsne/service/protocol.hpp"

#include <bit>
#include <cstring>

namespace atsne::service {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::bad_request: return "bad_request";
    case ErrorCode::bad_state: return "bad_state";
    case ErrorCode::no_session: return "no_session";
  }
  return "bad_request";
}

Envelope parse_envelope(std::string_view text) {
  json doc = json::parse(text, nullptr, false);
  if (doc.is_discarded()) throw ProtocolError(ErrorCode::bad_request, "malformed JSON");
  if (!doc.is_object()) throw ProtocolError(ErrorCode::bad_request, "envelope must be an object");
  Envelope env;
  const auto type = doc.find("type");
  if (type == doc.end() || !type->is_string() || type->get<std::string>().empty()) {
    throw ProtocolError(ErrorCode::bad_request, "envelope needs a string type");
  }
  env.type = type->get<std::string>();
  const auto seq = doc.find("seq");
  if (seq != doc.end()) {
    if (!seq->is_number_unsigned()) {
      throw ProtocolError(ErrorCode::bad_request, "seq must be a non-negative integer");
    }
    env.seq = seq->get<std::uint64_t>();
  }
  const auto payload = doc.find("payload");
  if (payload != doc.end() && !payload->is_null()) {
    if (!payload->is_object()) throw ProtocolError(ErrorCode::bad_request, "payload must be an object");
    env.payload = *payload;
  }
  return env;
}

std::string serialize(const Envelope& envelope) {
  return json{{"type", envelope.type}, {"seq", envelope.seq}, {"payload", envelope.payload}}.dump();
}

Envelope error_envelope(std::uint64_t seq, ErrorCode code, const std::string& message) {
  return {"error", seq, json{{"code", to_string(code)}, {"message", message}}};
}

std::string encode_frame(const BinaryFrame& frame) {
  std::string out(kFrameHeaderBytes + 4 * frame.values.size(), '\0');
  auto* p = reinterpret_cast<unsigned char*>(out.data());
  for (int b = 0; b < 4; ++b) p[b] = static_cast<unsigned char>(frame.seq >> (8 * b));
  p[4] = static_cast<unsigned char>(frame.kind);
  p += kFrameHeaderBytes;
  for (float v : frame.values) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    for (int b = 0; b < 4; ++b) *p++ = static_cast<unsigned char>(bits >> (8 * b));
  }
  return out;
}

BinaryFrame decode_frame(std::string_view bytes) {
  if (bytes.size() < kFrameHeaderBytes || (bytes.size() - kFrameHeaderBytes) % 4 != 0) {
    throw ProtocolError(ErrorCode::bad_request, "binary frame has an invalid length");
  }
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  BinaryFrame frame;
  for (int b = 0; b < 4; ++b) frame.seq |= static_cast<std::uint32_t>(p[b]) << (8 * b);
  if (p[4] < 1 || p[4] > 3) throw ProtocolError(ErrorCode::bad_request, "unknown frame kind");
  frame.kind = static_cast<FrameKind>(p[4]);
  p += kFrameHeaderBytes;
  frame.values.resize((bytes.size() - kFrameHeaderBytes) / 4);
  for (float& v : frame.values) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(*p++) << (8 * b);
    v = std::bit_cast<float>(bits);
  }
  return frame;
}

}  // namespace atsne::service
