#pragma once

#include <map>
#include <memory>
#include <queue>
#include <set>
#include <string>
#include <vector>

#include "mqttst/client/client.hpp"
#include "mqttst/node.hpp"

// Brokers and clients wired together in memory under virtual time. Every
// socket is a pair of endpoints with a fixed one-way delay; bytes arrive in
// order. Brokers are 10.0.0.(i+1):1883, so index order is id order.

namespace mqttst::testing {

using std::chrono::microseconds;
using std::chrono::milliseconds;

struct SimEvent {
  tree::Timestamp t;
  std::string kind;
  std::string detail;
};

class MeshSim {
 public:
  struct LinkSpec {
    int a = 0;
    int b = 0;
    microseconds one_way{1000};
    bool both_configured = true;  // otherwise only a lists b as a peer
  };

  MeshSim(std::vector<std::uint64_t> capability, std::vector<LinkSpec> links, std::uint16_t keep_alive_s = 10)
      : links_(std::move(links)) {
    const int n = static_cast<int>(capability.size());
    events_.resize(n);
    for (int i = 0; i < n; ++i) {
      bridge::BridgeConfig cfg;
      cfg.address = ip(i);
      cfg.listen_port = 1883;
      cfg.keep_alive_s = keep_alive_s;
      for (const auto& l : links_) {
        if (l.a == i) cfg.peers.push_back({ip(l.b), 1883});
        if (l.b == i && l.both_configured) cfg.peers.push_back({ip(l.a), 1883});
      }
      auto node = std::make_unique<Node>(cfg, capability[i], now_);
      node->set_event_sink([this, i](tree::Timestamp t, const std::string& k, const std::string& d) {
        events_[i].push_back({t, k, d});
      });
      nodes_.push_back(std::move(node));
      alive_.push_back(true);
    }
  }

  static std::string ip(int i) { return "10.0.0." + std::to_string(i + 1); }
  static BrokerId id(int i) { return BrokerId{0x0a000001u + static_cast<std::uint32_t>(i), 1883}; }
  static int index_of(BrokerId b) { return static_cast<int>(b.ip - 0x0a000001u); }

  int size() const { return static_cast<int>(nodes_.size()); }
  Node& node(int i) { return *nodes_[i]; }
  bool alive(int i) const { return alive_[i]; }
  tree::Timestamp now() const { return now_; }
  const std::vector<SimEvent>& events(int i) const { return events_[i]; }

  microseconds link_delay(int a, int b) const {
    for (const auto& l : links_) {
      if ((l.a == a && l.b == b) || (l.a == b && l.b == a)) return l.one_way;
    }
    return microseconds(-1);
  }

  void start() {
    for (int i = 0; i < size(); ++i) {
      nodes_[i]->start(now_);
      pump(i);
    }
  }

  /// Advances virtual time, delivering everything due and ticking node timers.
  void run_for(microseconds span) {
    const auto until = now_ + span;
    while (true) {
      auto next = std::min(until, next_tick_);
      if (!queue_.empty() && queue_.top().at < next) next = queue_.top().at;
      now_ = std::max(now_, next);
      if (!queue_.empty() && queue_.top().at <= now_) {
        auto ev = queue_.top();
        queue_.pop();
        dispatch(ev);
        continue;
      }
      if (now_ >= next_tick_) {
        for (int i = 0; i < size(); ++i) {
          if (!alive_[i]) continue;
          nodes_[i]->on_timer(now_);
          pump(i);
        }
        next_tick_ = now_ + kTick;
        continue;
      }
      if (now_ >= until) break;
    }
  }

  /// Severs every socket of broker i without notice to it; peers see a reset.
  void kill(int i) {
    alive_[i] = false;
    for (auto it = pipes_.begin(); it != pipes_.end();) {
      if (it->first.owner == i) {
        schedule_close(it->second.peer, it->second.delay);
        it = pipes_.erase(it);
      } else {
        ++it;
      }
    }
  }

  // --- clients -------------------------------------------------------------

  int add_client(int broker, client::Options opts, microseconds one_way = microseconds(200)) {
    const int c = static_cast<int>(clients_.size());
    clients_.push_back(std::make_unique<SimClient>(std::move(opts)));
    const Endpoint ce{client_owner(c), 1};
    const Endpoint be{broker, next_accept_++};
    pipes_[ce] = {be, one_way};
    pipes_[be] = {ce, one_way};
    nodes_[broker]->on_accepted(be.conn, now_);
    pump(broker);
    auto& sc = *clients_[c];
    sc.client.connect();
    flush_client(c);
    return c;
  }

  client::Client& client(int c) { return clients_[c]->client; }
  std::vector<client::MessageReceived>& received(int c) { return clients_[c]->received; }
  bool client_connected(int c) const { return clients_[c]->client.connected() && !clients_[c]->closed; }
  std::size_t completed(int c) const { return clients_[c]->completed; }

  void subscribe(int c, const std::string& filter, std::uint8_t qos) {
    clients_[c]->client.subscribe(filter, qos);
    flush_client(c);
  }
  void publish(int c, const std::string& topic, std::string payload, std::uint8_t qos, bool retain = false) {
    clients_[c]->client.publish(topic, wire::Bytes(payload.begin(), payload.end()), qos, retain);
    flush_client(c);
  }
  /// Drops the client's socket without DISCONNECT.
  void abort_client(int c) {
    const Endpoint ce{client_owner(c), 1};
    auto it = pipes_.find(ce);
    if (it == pipes_.end()) return;
    schedule_close(it->second.peer, it->second.delay);
    pipes_.erase(it);
    clients_[c]->closed = true;
  }

  /// Sum of a Node::stats_line counter over live brokers.
  std::uint64_t bridge_publishes_out() const {
    std::uint64_t sum = 0;
    for (const auto& n : nodes_) sum += n->manager().stats().bridge_publishes_out;
    return sum;
  }

 private:
  static constexpr microseconds kTick{50'000};

  struct Endpoint {
    int owner = 0;  // broker index, or client_owner(c) for clients
    ConnId conn = 0;
    auto operator<=>(const Endpoint&) const = default;
  };
  struct Pipe {
    Endpoint peer;
    microseconds delay{};
  };
  enum class Kind { Data, Closed, Accept, Connected };
  struct Ev {
    tree::Timestamp at;
    std::uint64_t seq = 0;
    Kind kind = Kind::Data;
    Endpoint to;
    wire::Bytes bytes;
    bool operator>(const Ev& o) const { return at != o.at ? at > o.at : seq > o.seq; }
  };
  struct SimClient {
    explicit SimClient(client::Options o) : client(std::move(o)) {}
    client::Client client;
    std::vector<client::MessageReceived> received;
    std::size_t completed = 0;
    bool closed = false;
  };

  static int client_owner(int c) { return -1 - c; }

  void push(Ev ev) {
    ev.seq = seq_++;
    queue_.push(std::move(ev));
  }
  void schedule_close(Endpoint to, microseconds delay) { push({now_ + delay, 0, Kind::Closed, to, {}}); }

  void dispatch(Ev& ev) {
    const Endpoint to = ev.to;
    if (to.owner >= 0) {
      if (!alive_[to.owner]) return;
      Node& n = *nodes_[to.owner];
      switch (ev.kind) {
        case Kind::Data:
          if (!pipes_.contains(to)) return;
          n.on_data(to.conn, ev.bytes, now_);
          break;
        case Kind::Closed:
          pipes_.erase(to);
          n.on_closed(to.conn, now_);
          break;
        case Kind::Accept:
          if (!pipes_.contains(to)) return;
          n.on_accepted(to.conn, now_);
          break;
        case Kind::Connected:
          if (!pipes_.contains(to)) return;
          n.on_connected(to.conn, now_);
          break;
      }
      pump(to.owner);
      return;
    }
    const int c = -1 - to.owner;
    auto& sc = *clients_[c];
    if (ev.kind == Kind::Closed) {
      pipes_.erase(to);
      sc.closed = true;
      return;
    }
    if (ev.kind != Kind::Data || !pipes_.contains(to)) return;
    sc.client.on_data(ev.bytes);
    for (auto& e : sc.client.take_events()) {
      if (auto* m = std::get_if<client::MessageReceived>(&e)) sc.received.push_back(std::move(*m));
      if (std::holds_alternative<client::PublishComplete>(e)) ++sc.completed;
    }
    flush_client(c);
  }

  void flush_client(int c) {
    auto out = clients_[c]->client.take_output();
    if (out.empty()) return;
    const Endpoint ce{client_owner(c), 1};
    auto it = pipes_.find(ce);
    if (it == pipes_.end()) return;
    push({now_ + it->second.delay, 0, Kind::Data, it->second.peer, std::move(out)});
  }

  void pump(int i) {
    for (auto& cmd : nodes_[i]->take_commands()) {
      if (auto* d = std::get_if<DialConn>(&cmd)) {
        const Endpoint self{i, d->conn};
        int target = -1;
        for (int j = 0; j < size(); ++j) {
          if (ip(j) == d->host && d->port == 1883) target = j;
        }
        const auto delay = target >= 0 ? link_delay(i, target) : microseconds(-1);
        if (target < 0 || !alive_[target] || delay.count() < 0) {
          push({now_ + milliseconds(1), 0, Kind::Closed, self, {}});
          pipes_[self] = {Endpoint{-1000000, 0}, microseconds(0)};
          continue;
        }
        const Endpoint remote{target, next_accept_++};
        pipes_[self] = {remote, delay};
        pipes_[remote] = {self, delay};
        push({now_ + delay, 0, Kind::Accept, remote, {}});
        push({now_ + 2 * delay, 0, Kind::Connected, self, {}});
      } else if (auto* s = std::get_if<SendBytes>(&cmd)) {
        auto it = pipes_.find(Endpoint{i, s->conn});
        if (it == pipes_.end() || it->second.peer.owner == -1000000) continue;
        push({now_ + it->second.delay, 0, Kind::Data, it->second.peer, std::move(s->bytes)});
      } else if (auto* c = std::get_if<CloseConn>(&cmd)) {
        auto it = pipes_.find(Endpoint{i, c->conn});
        if (it == pipes_.end()) continue;
        if (it->second.peer.owner != -1000000) schedule_close(it->second.peer, it->second.delay);
        pipes_.erase(it);
      }
    }
  }

  std::vector<LinkSpec> links_;
  std::vector<std::unique_ptr<Node>> nodes_;
  std::vector<bool> alive_;
  std::vector<std::unique_ptr<SimClient>> clients_;
  std::vector<std::vector<SimEvent>> events_;
  std::map<Endpoint, Pipe> pipes_;
  std::priority_queue<Ev, std::vector<Ev>, std::greater<>> queue_;
  std::uint64_t seq_ = 0;
  ConnId next_accept_ = 1;
  tree::Timestamp now_{std::chrono::seconds(1000)};
  tree::Timestamp next_tick_{std::chrono::seconds(1000)};
};

/// Root index, role per (broker, peer) and cost per broker as the nodes see them.
struct ObservedTree {
  std::vector<int> root;
  std::vector<std::uint64_t> cost;
  std::map<std::pair<int, int>, tree::Role> role;
};

inline ObservedTree observe(MeshSim& sim) {
  ObservedTree o;
  for (int i = 0; i < sim.size(); ++i) {
    const auto& t = sim.node(i).manager().tree();
    o.root.push_back(sim.alive(i) ? MeshSim::index_of(t.believed_root) : -1);
    o.cost.push_back(t.root_path_cost_us);
    if (!sim.alive(i)) continue;
    for (const auto& [h, c] : t.connections) o.role[{i, MeshSim::index_of(c.peer)}] = c.role;
  }
  return o;
}

}  // namespace mqttst::testing
