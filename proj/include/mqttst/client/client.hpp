#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "mqttst/wire/packet.hpp"

// Client side of one MQTT connection, without I/O: feed received bytes in,
// take encoded bytes and events out.

namespace mqttst::client {

struct Options {
  std::string client_id;
  std::uint16_t keep_alive_s = 60;
  wire::ProtocolVersion version = wire::ProtocolVersion::V311;
  std::optional<wire::Will> will;
};

struct Connected {
  std::uint8_t reason_code = 0;
};
struct Subscribed {
  std::uint16_t packet_id = 0;
  std::vector<std::uint8_t> reason_codes;
};
/// The publish with this id finished its handshake (immediately for QoS 0).
struct PublishComplete {
  std::uint16_t packet_id = 0;
};
struct MessageReceived {
  std::string topic;
  wire::Bytes payload;
  std::uint8_t qos = 0;
  bool retain = false;
};
struct ProtocolError {
  std::string what;
};
using Event = std::variant<Connected, Subscribed, PublishComplete, MessageReceived, ProtocolError>;

class Client {
 public:
  explicit Client(Options options);

  /// Queues CONNECT; call once after the transport is up.
  void connect();
  std::uint16_t subscribe(const std::string& filter, std::uint8_t qos);
  /// Returns the packet id, 0 for QoS 0.
  std::uint16_t publish(const std::string& topic, wire::Bytes payload, std::uint8_t qos, bool retain = false);
  void ping();
  void disconnect();

  void on_data(std::span<const std::uint8_t> bytes);

  wire::Bytes take_output();
  bool has_output() const { return !out_.empty(); }
  std::vector<Event> take_events();

  bool connected() const { return connected_; }
  std::size_t inflight() const { return outbound_.size(); }
  const Options& options() const { return options_; }

 private:
  void send(const wire::Packet& packet);
  void handle(const wire::Packet& packet);
  std::uint16_t next_id();

  Options options_;
  bool connected_ = false;
  bool failed_ = false;
  wire::Bytes rx_;
  wire::Bytes out_;
  std::vector<Event> events_;
  std::map<std::uint16_t, std::uint8_t> outbound_;  // id -> qos
  std::set<std::uint16_t> awaiting_pubrel_;
  std::uint16_t next_id_ = 1;
};

}  // namespace mqttst::client
