#pragma once

#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "mqttst/bridge/config.hpp"
#include "mqttst/bridge/manager.hpp"
#include "mqttst/broker/core.hpp"

// One broker: the core, the bridge manager and packet framing, driven by
// transport events. Sockets live elsewhere; the node only sees connection
// ids and returns commands.

namespace mqttst {

using broker::ConnId;
using tree::Timestamp;

/// Connection ids chosen by the node for outbound dials have this bit set;
/// ids for accepted connections are chosen by the transport and must not.
inline constexpr ConnId kDialIdBit = ConnId{1} << 63;

struct SendBytes {
  ConnId conn = 0;
  wire::Bytes bytes;
};
struct CloseConn {
  ConnId conn = 0;
};
struct DialConn {
  ConnId conn = 0;
  std::string host;
  std::uint16_t port = 0;
};
using NodeCommand = std::variant<DialConn, SendBytes, CloseConn>;

struct NodeStats {
  std::uint64_t bytes_in = 0;
  std::uint64_t bytes_out = 0;
  std::uint64_t packets_in = 0;
  std::uint64_t packets_out = 0;
  std::uint64_t decode_errors = 0;
};

class Node : private broker::Hooks, private bridge::ManagerHooks {
 public:
  using EventSink = std::function<void(Timestamp, const std::string& kind, const std::string& detail)>;

  Node(bridge::BridgeConfig cfg, std::uint64_t capability, Timestamp now);

  BrokerId id() const { return id_; }
  void set_event_sink(EventSink sink) { sink_ = std::move(sink); }

  void start(Timestamp now);
  void on_accepted(ConnId conn, Timestamp now);
  void on_connected(ConnId conn, Timestamp now);
  void on_data(ConnId conn, std::span<const std::uint8_t> bytes, Timestamp now);
  /// Transport closed or dial failed.
  void on_closed(ConnId conn, Timestamp now);
  void on_timer(Timestamp now);
  Timestamp next_deadline() const;

  /// Dials first, then writes in order, then closes.
  std::vector<NodeCommand> take_commands();

  const broker::Core& core() const { return core_; }
  broker::Core& core() { return core_; }
  const bridge::Manager& manager() const { return manager_; }
  bridge::Manager& manager() { return manager_; }
  const NodeStats& stats() const { return stats_; }
  /// Counters as "key=value" pairs separated by spaces.
  std::string stats_line() const;

  static constexpr std::size_t kMaxPacketBytes = 16 * 1024 * 1024;

 private:
  struct Conn {
    bool outbound = false;
    bool closing = false;
    wire::ProtocolVersion version = wire::ProtocolVersion::V311;
    wire::Bytes rx;
  };

  // broker::Hooks
  void send(ConnId conn, const wire::Packet& packet) override;
  void close(ConnId conn) override;
  void forward(BrokerId peer, const broker::Publication& publication) override;
  void bridge_session_opened(ConnId conn, BrokerId peer) override;
  void bridge_session_closed(ConnId conn, BrokerId peer) override;
  void bpdu_received(BrokerId peer, const wire::BpduPayload& bpdu) override;
  // bridge::ManagerHooks
  ConnId dial(const std::string& host, std::uint16_t port) override;
  void forwarding_changed(BrokerId peer, tree::ConnHandle handle, bool forwarding) override;
  void bridge_removed(BrokerId peer) override;
  void event(const std::string& kind, const std::string& detail) override;

  void dispatch(ConnId conn, const wire::Packet& packet);
  void drain_closes();

  BrokerId id_;
  broker::Core core_;
  bridge::Manager manager_;
  std::map<ConnId, Conn> conns_;
  std::vector<ConnId> close_queue_;
  std::vector<DialConn> dials_;
  std::vector<ConnId> out_order_;
  std::map<ConnId, wire::Bytes> out_;
  std::vector<ConnId> closes_;
  ConnId next_dial_ = kDialIdBit | 1;
  Timestamp now_{};
  EventSink sink_;
  NodeStats stats_;
};

/// BrokerId from the configured address and port; throws std::invalid_argument if malformed.
BrokerId broker_id_from(const bridge::BridgeConfig& cfg);

}  // namespace mqttst
