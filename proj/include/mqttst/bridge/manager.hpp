#pragma once

#include <deque>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mqttst/bridge/config.hpp"
#include "mqttst/broker/core.hpp"
#include "mqttst/tree/engine.hpp"

// Bridge lifecycle around the tree engine. A logical bridge to a peer is a
// pair of sockets: our outbound connection (we are its MQTT client and send
// BPDUs and forwarded publications on it) and the peer's inbound connection
// (held by the broker core). The tree sees one handle per bridge incarnation.

namespace mqttst::bridge {

using broker::ConnId;
using tree::Timestamp;

class ManagerHooks {
 public:
  virtual ~ManagerHooks() = default;
  virtual void send(ConnId conn, const wire::Packet& packet) = 0;
  virtual void close(ConnId conn) = 0;
  /// Starts a non-blocking connect; the returned id identifies the socket.
  virtual ConnId dial(const std::string& host, std::uint16_t port) = 0;
  virtual void forwarding_changed(BrokerId peer, tree::ConnHandle handle, bool forwarding) = 0;
  virtual void bridge_removed(BrokerId peer) = 0;
  /// Free-form event for the metrics log.
  virtual void event(const std::string& kind, const std::string& detail) = 0;
};

struct ManagerStats {
  std::uint64_t bpdus_sent = 0;
  std::uint64_t bpdu_bytes_sent = 0;
  std::uint64_t bpdus_received = 0;
  std::uint64_t tc_sent = 0;
  std::uint64_t tc_received = 0;
  std::uint64_t bridge_publishes_out = 0;
  std::uint64_t forwards_dropped = 0;
  std::uint64_t rtt_samples = 0;
  std::uint64_t link_downs = 0;
  std::uint64_t dials = 0;
};

struct BridgeInfo {
  BrokerId peer;
  std::optional<ConnId> outbound;
  std::optional<ConnId> inbound;
  std::optional<tree::ConnHandle> handle;
};

class Manager {
 public:
  Manager(BridgeConfig cfg, BrokerId self, std::uint64_t capability, ManagerHooks& hooks, Timestamp now);

  /// Schedules the first connect to every configured peer.
  void start(Timestamp now);

  bool owns(ConnId conn) const { return outbound_.contains(conn); }
  void on_connected(ConnId conn, Timestamp now);
  void on_packet(ConnId conn, const wire::Packet& packet, Timestamp now);
  void on_closed(ConnId conn, Timestamp now);

  void on_inbound_opened(ConnId conn, BrokerId peer, Timestamp now);
  void on_inbound_closed(ConnId conn, BrokerId peer, Timestamp now);
  void on_bpdu(BrokerId peer, const wire::BpduPayload& bpdu, Timestamp now);

  void forward(BrokerId peer, const broker::Publication& publication);
  void on_timer(Timestamp now);
  Timestamp next_deadline() const;

  const tree::TreeState& tree() const { return tree_; }
  std::vector<BridgeInfo> bridges() const;
  const ManagerStats& stats() const { return stats_; }
  BrokerId self() const { return self_; }
  /// One line describing root, cost and roles, as written to the event log.
  std::string describe_state() const;

  std::size_t max_inflight = 1000;
  tree::Micros max_backoff{30'000'000};
  tree::Micros initial_backoff{1'000'000};
  /// How long a reverse connect waits for unanswered configured targets.
  tree::Micros reverse_grace{3'000'000};

 private:
  struct Target {
    PeerAddress address;
    std::optional<BrokerId> resolved;
    std::optional<ConnId> conn;
    tree::Micros backoff{};
    Timestamp next_attempt{};
  };
  enum class Phase { Dialing, AwaitConnack, Up };
  struct Outbound {
    std::optional<std::size_t> target;
    std::optional<BrokerId> expected_peer;
    std::optional<BrokerId> peer;
    Phase phase = Phase::Dialing;
    Timestamp since{};
  };
  struct Deferred {
    Timestamp not_before{};
    bool wait_for_targets = false;
  };
  struct Ping {
    Timestamp sent;
    bool probe = false;
  };
  struct Bridge {
    std::optional<ConnId> out;
    std::optional<ConnId> in;
    std::optional<tree::ConnHandle> handle;
    std::deque<Ping> pings;
    std::optional<Timestamp> last_probe;
    // From the peer's last BPDU: whether it uses this bridge as its root connection.
    std::optional<bool> peer_root;
    std::optional<bool> announced;
    std::map<std::uint16_t, broker::Outflight> inflight;
    std::deque<wire::Publish> queued;
    std::uint16_t next_packet_id = 1;
  };

  void apply(tree::Step step, Timestamp now);
  void attempt(std::size_t target, Timestamp now);
  void dial_reverse(BrokerId peer, Timestamp now);
  void maybe_reverse(BrokerId peer, Timestamp now);
  void bridge_up(ConnId conn, BrokerId peer, Timestamp now);
  void outbound_failed(ConnId conn, const Outbound& ob, Timestamp now);
  /// Tears down both sockets of the bridge; `tree_knows` when the tree already removed the handle.
  void link_down(BrokerId peer, Timestamp now, bool tree_knows, const std::string& reason);
  void send_bpdu(Bridge& b, wire::BpduPayload bpdu, Timestamp now);
  void pump(Bridge& b);
  bool has_outbound_to(BrokerId peer) const;
  bool any_target_unresolved() const;
  /// Marks configured targets whose address is literally `peer` as resolved.
  void resolve_literal_targets(BrokerId peer);
  std::optional<BrokerId> peer_of_handle(tree::ConnHandle handle) const;
  /// Data flows on a tree edge only: our Root connection, or a Designated one
  /// the peer has chosen as its root connection (assumed until its first BPDU).
  void update_forwarding(BrokerId peer);
  void log_state_if_changed();

  BridgeConfig cfg_;
  BrokerId self_;
  ManagerHooks& hooks_;
  tree::TreeState tree_;
  Timestamp next_tick_{};
  std::vector<Target> targets_;
  std::map<ConnId, Outbound> outbound_;
  std::map<BrokerId, Bridge> bridges_;
  std::map<BrokerId, Deferred> deferred_reverse_;
  tree::ConnHandle next_handle_ = 1;
  std::string last_state_;
  ManagerStats stats_;
};

}  // namespace mqttst::bridge
