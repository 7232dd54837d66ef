#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "mqttst/broker_id.hpp"

namespace mqttst::wire {

using Bytes = std::vector<std::uint8_t>;

enum class PacketType : std::uint8_t {
  Connect = 1,
  Connack = 2,
  Publish = 3,
  Puback = 4,
  Pubrec = 5,
  Pubrel = 6,
  Pubcomp = 7,
  Subscribe = 8,
  Suback = 9,
  Pingreq = 12,
  Pingresp = 13,
  Disconnect = 14,
};

enum class ProtocolVersion : std::uint8_t { V311 = 4, V5 = 5 };

inline constexpr std::size_t kBpduSize = 36;
/// Capabilities travel in a 6-octet field when relayed as the root's capability.
inline constexpr std::uint64_t kMaxCapability = (std::uint64_t{1} << 48) - 1;

/// Spanning-tree control record appended to PINGREQ.
///
/// Layout (36 octets, big-endian):
///   root_id (4+2) | sender_id (4+2) | sender_capability (8) | root_path_cost_us (8)
///   | flags (1) | root_capability (6) | hops (1)
/// flags: bit 0 topology change, bit 1 the sender uses this connection as its root connection.
struct BpduPayload {
  BrokerId root_id;
  BrokerId sender_id;
  std::uint64_t sender_capability = 0;
  std::uint64_t root_path_cost_us = 0;
  bool tc_flag = false;
  bool root_connection = false;
  std::uint64_t root_capability = 0;  // <= kMaxCapability
  std::uint8_t hops = 0;              // relays since the root originated this information

  bool operator==(const BpduPayload&) const = default;
};

struct Will {
  std::string topic;
  Bytes payload;
  std::uint8_t qos = 0;
  bool retain = false;
  Bytes properties;  // MQTT 5 only, raw property bytes

  bool operator==(const Will&) const = default;
};

struct Connect {
  std::string protocol_name = "MQTT";
  std::uint8_t protocol_version_byte = 0x04;
  bool clean_start = true;
  std::uint16_t keep_alive_s = 60;
  std::string client_id;
  std::optional<Will> will;
  std::optional<std::string> username;
  std::optional<Bytes> password;
  Bytes properties;  // MQTT 5 only

  bool operator==(const Connect&) const = default;
};

struct Connack {
  bool session_present = false;
  std::uint8_t reason_code = 0;
  Bytes properties;

  bool operator==(const Connack&) const = default;
};

struct Publish {
  bool dup = false;
  std::uint8_t qos = 0;
  bool retain = false;
  std::string topic;
  std::uint16_t packet_id = 0;  // present on the wire only when qos > 0
  Bytes properties;
  Bytes payload;

  bool operator==(const Publish&) const = default;
};

// PUBACK, PUBREC, PUBREL and PUBCOMP share one shape.
template <PacketType Type>
struct Ack {
  static constexpr PacketType kType = Type;
  std::uint16_t packet_id = 0;
  std::uint8_t reason_code = 0;
  Bytes properties;

  bool operator==(const Ack&) const = default;
};

using Puback = Ack<PacketType::Puback>;
using Pubrec = Ack<PacketType::Pubrec>;
using Pubrel = Ack<PacketType::Pubrel>;
using Pubcomp = Ack<PacketType::Pubcomp>;

struct Subscription {
  std::string filter;
  std::uint8_t options = 0;  // low two bits: maximum QoS

  std::uint8_t qos() const { return options & 0x03; }
  bool operator==(const Subscription&) const = default;
};

struct Subscribe {
  std::uint16_t packet_id = 0;
  Bytes properties;
  std::vector<Subscription> subscriptions;

  bool operator==(const Subscribe&) const = default;
};

struct Suback {
  std::uint16_t packet_id = 0;
  Bytes properties;
  std::vector<std::uint8_t> reason_codes;

  bool operator==(const Suback&) const = default;
};

struct Pingreq {
  std::optional<BpduPayload> bpdu;

  bool operator==(const Pingreq&) const = default;
};

struct Pingresp {
  bool operator==(const Pingresp&) const = default;
};

struct Disconnect {
  std::uint8_t reason_code = 0;
  Bytes properties;

  bool operator==(const Disconnect&) const = default;
};

using Packet = std::variant<Connect, Connack, Publish, Puback, Pubrec, Pubrel, Pubcomp, Subscribe,
                            Suback, Pingreq, Pingresp, Disconnect>;

PacketType packet_type(const Packet& packet);
const char* to_string(PacketType type);

}  // namespace mqttst::wire
