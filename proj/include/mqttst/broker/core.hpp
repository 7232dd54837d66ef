#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "mqttst/broker_id.hpp"
#include "mqttst/tree/engine.hpp"
#include "mqttst/wire/packet.hpp"

// Server side of the broker: client and inbound bridge sessions, QoS
// handshakes, retained messages, wills, and routing of publications over
// the spanning tree. Performs no I/O; everything leaves through Hooks.

namespace mqttst::broker {

using ConnId = std::uint64_t;
using tree::Timestamp;

/// Client id prefix used by bridge connections, followed by "ip:port".
inline constexpr std::string_view kBridgeClientPrefix = "mqttst/";
/// CONNACK User Property carrying the accepting broker's id.
inline constexpr std::string_view kBrokerIdProperty = "mqttst-id";

struct Publication {
  std::string topic;
  wire::Bytes payload;
  std::uint8_t qos = 0;
  bool retain = false;

  bool operator==(const Publication&) const = default;
};

struct FromClient {
  ConnId conn = 0;
};
struct FromBridge {
  BrokerId peer;
};
using Origin = std::variant<FromClient, FromBridge>;

struct Delivery {
  ConnId conn = 0;
  std::uint8_t qos = 0;
  bool operator==(const Delivery&) const = default;
};

struct RouteResult {
  bool discarded = false;
  std::vector<Delivery> deliveries;
  std::vector<BrokerId> forwards;
};

enum class SessionKind { Client, Bridge };

struct Outflight {
  wire::Publish publish;
  bool pubrec_received = false;
};

struct Session {
  ConnId conn = 0;
  std::string client_id;
  SessionKind kind = SessionKind::Client;
  std::optional<BrokerId> peer;
  wire::ProtocolVersion version = wire::ProtocolVersion::V311;
  std::uint16_t keep_alive_s = 0;
  Timestamp last_rx{};
  std::map<std::string, std::uint8_t> subscriptions;
  std::optional<Publication> will;
  // Inbound QoS 2 ids delivered on PUBLISH and waiting for PUBREL.
  std::set<std::uint16_t> awaiting_pubrel;
  std::map<std::uint16_t, Outflight> outbound;
  std::deque<wire::Publish> queued;
  std::uint16_t next_packet_id = 1;
};

struct CoreStats {
  std::uint64_t client_publishes = 0;
  std::uint64_t bridge_publishes_in = 0;
  std::uint64_t deliveries = 0;
  std::uint64_t forwards = 0;
  std::uint64_t discarded_blocked = 0;
  std::uint64_t wills_fired = 0;
  std::uint64_t protocol_errors = 0;
};

class Hooks {
 public:
  virtual ~Hooks() = default;
  virtual void send(ConnId conn, const wire::Packet& packet) = 0;
  virtual void close(ConnId conn) = 0;
  virtual void forward(BrokerId peer, const Publication& publication) = 0;
  virtual void bridge_session_opened(ConnId conn, BrokerId peer) = 0;
  virtual void bridge_session_closed(ConnId conn, BrokerId peer) = 0;
  virtual void bpdu_received(BrokerId peer, const wire::BpduPayload& bpdu) = 0;
};

class Core {
 public:
  Core(BrokerId self, Hooks& hooks);

  void on_open(ConnId conn, Timestamp now);
  void on_packet(ConnId conn, const wire::Packet& packet, Timestamp now);
  /// Transport closed. Fires the will unless DISCONNECT was received.
  void on_closed(ConnId conn, Timestamp now);
  /// Enforces keep-alive and CONNECT deadlines.
  void on_timer(Timestamp now);

  /// Forwarding view of one bridge, kept current by the bridge manager.
  void set_bridge(BrokerId peer, tree::ConnHandle handle, bool forwarding);
  void remove_bridge(BrokerId peer);

  RouteResult route_publication(const Publication& publication, const Origin& origin) const;
  /// Routes, stores retained state, delivers locally and forwards.
  void publish(const Publication& publication, const Origin& origin);

  const Session* session(ConnId conn) const;
  std::optional<ConnId> find_client(const std::string& client_id) const;
  const std::map<std::string, Publication>& retained() const { return retained_; }
  const CoreStats& stats() const { return stats_; }
  std::size_t session_count() const { return sessions_.size(); }

  static std::string bridge_client_id(BrokerId self);
  static std::optional<BrokerId> parse_bridge_client_id(std::string_view client_id);

  std::size_t max_inflight = 1000;
  std::chrono::microseconds connect_timeout{10'000'000};

 private:
  void handle_connect(ConnId conn, const wire::Connect& connect, Timestamp now);
  void handle_publish(Session& s, const wire::Publish& publish);
  void handle_subscribe(Session& s, const wire::Subscribe& subscribe);
  void deliver(Session& s, const Publication& publication, std::uint8_t qos, bool retain_flag);
  void pump(Session& s);
  std::uint16_t allocate_id(Session& s);
  void drop(ConnId conn, bool fire_will);
  void protocol_error(ConnId conn);

  BrokerId self_;
  Hooks& hooks_;
  std::map<ConnId, Timestamp> pending_;
  std::map<ConnId, Session> sessions_;
  std::unordered_map<std::string, ConnId> by_client_id_;
  struct BridgeView {
    tree::ConnHandle handle = 0;
    bool forwarding = true;
  };
  std::map<BrokerId, BridgeView> bridges_;
  std::map<std::string, Publication> retained_;
  CoreStats stats_;
};

}  // namespace mqttst::broker
