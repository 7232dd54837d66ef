#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>

#include "mqttst/expected.hpp"
#include "mqttst/wire/packet.hpp"

namespace mqttst::wire {

enum class CodecError {
  Truncated,
  MalformedRemainingLength,
  UnknownPacketType,
  MalformedPacket,
  InvalidBpduLength,
  UnsupportedProtocolVersion,
};

const char* to_string(CodecError error);

class EncodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::size_t kMaxRemainingLength = 268'435'455;

/// Appends the MQTT framing of `packet` to `out`. CONNECT is always encoded
/// with its own protocol version; every other packet uses `version`.
/// Throws EncodeError when the packet violates a structural invariant.
void encode_packet(const Packet& packet, ProtocolVersion version, Bytes& out);
Bytes encode_packet(const Packet& packet, ProtocolVersion version = ProtocolVersion::V311);

/// Decodes exactly one packet occupying all of `bytes`.
Expected<Packet, CodecError> decode_packet(std::span<const std::uint8_t> bytes,
                                           ProtocolVersion version = ProtocolVersion::V311);

/// Total length (fixed header included) of the packet at the front of
/// `bytes`, or nullopt when more bytes are needed to tell.
Expected<std::optional<std::size_t>, CodecError> frame_length(std::span<const std::uint8_t> bytes);

void encode_bpdu(const BpduPayload& bpdu, Bytes& out);
Expected<BpduPayload, CodecError> decode_bpdu(std::span<const std::uint8_t> bytes);

void encode_varint(std::uint32_t value, Bytes& out);

constexpr std::uint8_t kBrokerFlag = 0x80;

constexpr std::uint8_t set_broker_flag(std::uint8_t version_byte) { return version_byte | kBrokerFlag; }
constexpr std::uint8_t base_version(std::uint8_t version_byte) { return version_byte & 0x7f; }
constexpr bool is_broker_connect(const Connect& connect) {
  return (connect.protocol_version_byte & kBrokerFlag) != 0;
}
constexpr ProtocolVersion connect_version(const Connect& connect) {
  return base_version(connect.protocol_version_byte) == 5 ? ProtocolVersion::V5 : ProtocolVersion::V311;
}

}  // namespace mqttst::wire
