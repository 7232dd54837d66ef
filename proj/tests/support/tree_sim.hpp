#pragma once

#include <map>
#include <queue>
#include <set>
#include <string>
#include <vector>

#include "mqttst/tree/engine.hpp"

// Discrete-event network of tree engines: BPDUs travel with half the link
// RTT as one-way delay and RTT samples are exact.

namespace mqttst::testing {

class TreeSim {
 public:
  explicit TreeSim(std::vector<std::uint64_t> capability,
                   tree::Timers timers = tree::Timers::from_keep_alive(std::chrono::seconds(10)))
      : capability_(std::move(capability)) {
    const int n = size();
    rtt_.assign(n, std::vector<std::uint64_t>(n, 0));
    for (int i = 0; i < n; ++i) {
      nodes_.push_back(Node{tree::initial_state(id(i), capability_[i], timers, now_), {}, {}, true});
    }
  }

  static BrokerId id(int i) { return BrokerId{0x0a000001u + static_cast<std::uint32_t>(i), 1883}; }
  int size() const { return static_cast<int>(capability_.size()); }
  tree::Timestamp now() const { return now_; }
  void advance(tree::Micros dt) { now_ += dt; }

  void link(int a, int b, std::uint64_t rtt_us) {
    rtt_[a][b] = rtt_[b][a] = rtt_us;
    const auto ha = next_handle_++;
    const auto hb = next_handle_++;
    nodes_[a].to_peer[ha] = b;
    nodes_[a].to_handle[b] = ha;
    nodes_[b].to_peer[hb] = a;
    nodes_[b].to_handle[a] = hb;
    apply(a, tree::add_connection(std::move(nodes_[a].state), ha, id(b), now_));
    apply(b, tree::add_connection(std::move(nodes_[b].state), hb, id(a), now_));
    apply(a, tree::on_rtt_sample(std::move(nodes_[a].state), ha, rtt_us, now_));
    apply(b, tree::on_rtt_sample(std::move(nodes_[b].state), hb, rtt_us, now_));
  }

  // Both ends observe the socket error.
  void cut(int a, int b) {
    drop_link(a, b);
    drop_link(b, a);
  }

  void kill(int n) {
    nodes_[n].alive = false;
    for (auto [peer, h] : std::map<int, tree::ConnHandle>(nodes_[n].to_handle)) {
      drop_link(peer, n);
      nodes_[n].to_handle.erase(peer);
      nodes_[n].to_peer.erase(h);
    }
    nodes_[n].state.connections.clear();
  }

  /// Delivers queued BPDUs until none remain. Returns false if the event budget ran out.
  bool run(std::size_t budget = 2'000'000) {
    while (!queue_.empty()) {
      if (budget-- == 0) return false;
      auto ev = queue_.top();
      queue_.pop();
      if (ev.at > now_) now_ = ev.at;
      auto& node = nodes_[ev.to];
      if (!node.alive || !node.state.connections.contains(ev.handle)) continue;
      ++delivered_;
      apply(ev.to, tree::on_bpdu(std::move(node.state), ev.handle, ev.bpdu, now_));
    }
    return true;
  }

  /// Runs one hello round on every broker at the next hello deadline and
  /// reports whether any broker's tree information changed.
  bool hello_round_changes_anything() {
    std::vector<tree::TreeState> before;
    for (auto& n : nodes_) before.push_back(n.state);
    tree::Timestamp latest = now_;
    for (auto& n : nodes_) latest = std::max(latest, n.state.next_hello);
    now_ = latest;
    for (int i = 0; i < size(); ++i) {
      if (!nodes_[i].alive) continue;
      // Keep connections fresh; the round is about information, not expiry.
      for (auto& [h, e] : nodes_[i].state.connections) e.last_heard = now_;
      for (auto& [h, e] : before[i].connections) e.last_heard = now_;
      apply(i, tree::tick(std::move(nodes_[i].state), now_));
    }
    run();
    for (int i = 0; i < size(); ++i) {
      auto a = before[i];
      auto b = nodes_[i].state;
      a.next_hello = b.next_hello = {};
      for (auto& [h, e] : a.connections) e.last_heard = {};
      for (auto& [h, e] : b.connections) e.last_heard = {};
      if (!(a == b)) return true;
    }
    return false;
  }

  const tree::TreeState& state(int n) const { return nodes_[n].state; }
  tree::TreeState& mutable_state(int n) { return nodes_[n].state; }
  bool alive(int n) const { return nodes_[n].alive; }
  const std::vector<std::vector<std::uint64_t>>& rtt() const { return rtt_; }
  const std::vector<std::uint64_t>& capability() const { return capability_; }
  tree::ConnHandle handle(int from, int to) const { return nodes_[from].to_handle.at(to); }

  std::optional<tree::Role> role(int from, int to) const {
    auto it = nodes_[from].to_handle.find(to);
    if (it == nodes_[from].to_handle.end()) return std::nullopt;
    return nodes_[from].state.connections.at(it->second).role;
  }

  int believed_root(int n) const {
    for (int i = 0; i < size(); ++i) {
      if (id(i) == nodes_[n].state.believed_root) return i;
    }
    return -1;
  }

  /// Edges with one endpoint in Root role and the other Designated.
  std::set<std::pair<int, int>> forwarding_edges() const {
    std::set<std::pair<int, int>> out;
    for (int a = 0; a < size(); ++a) {
      for (int b = a + 1; b < size(); ++b) {
        auto ra = role(a, b);
        auto rb = role(b, a);
        if (!ra || !rb) continue;
        if ((*ra == tree::Role::Root && *rb == tree::Role::Designated) ||
            (*ra == tree::Role::Designated && *rb == tree::Role::Root)) {
          out.insert({a, b});
        }
      }
    }
    return out;
  }

  /// Links that are neither a forwarding edge nor cleanly blocked on exactly one side.
  std::vector<std::string> inconsistent_links() const {
    std::vector<std::string> out;
    for (int a = 0; a < size(); ++a) {
      for (int b = a + 1; b < size(); ++b) {
        auto ra = role(a, b);
        auto rb = role(b, a);
        if (!ra || !rb) continue;
        const bool forwarding = (*ra == tree::Role::Root) != (*rb == tree::Role::Root) &&
                                *ra != tree::Role::Blocked && *rb != tree::Role::Blocked;
        const bool blocked = (*ra == tree::Role::Blocked) != (*rb == tree::Role::Blocked) &&
                             *ra != tree::Role::Root && *rb != tree::Role::Root;
        if (!forwarding && !blocked) {
          out.push_back(std::to_string(a) + "-" + std::to_string(b) + " " + tree::to_string(*ra) + "/" +
                        tree::to_string(*rb));
        }
      }
    }
    return out;
  }

  const std::vector<std::string>& invariant_violations() const { return violations_; }
  std::size_t delivered() const { return delivered_; }
  const std::vector<std::pair<int, tree::SetForwarding>>& forwarding_log() const { return forwarding_log_; }
  const std::vector<std::pair<int, tree::SendBpdu>>& sent_log() const { return sent_log_; }
  void clear_logs() {
    forwarding_log_.clear();
    sent_log_.clear();
  }

 private:
  struct Node {
    tree::TreeState state;
    std::map<tree::ConnHandle, int> to_peer;
    std::map<int, tree::ConnHandle> to_handle;
    bool alive = true;
  };

  struct Event {
    tree::Timestamp at;
    std::uint64_t seq;
    int to;
    tree::ConnHandle handle;
    wire::BpduPayload bpdu;
    bool operator>(const Event& o) const { return at != o.at ? at > o.at : seq > o.seq; }
  };

  void drop_link(int at, int peer) {
    auto it = nodes_[at].to_handle.find(peer);
    if (it == nodes_[at].to_handle.end()) return;
    const auto h = it->second;
    nodes_[at].to_handle.erase(it);
    nodes_[at].to_peer.erase(h);
    rtt_[at][peer] = rtt_[peer][at] = 0;
    if (nodes_[at].alive) apply(at, tree::on_link_down(std::move(nodes_[at].state), h, now_));
  }

  void apply(int n, tree::Step step) {
    nodes_[n].state = std::move(step.state);
    if (auto bad = tree::check_invariants(nodes_[n].state)) {
      violations_.push_back("broker " + std::to_string(n) + ": " + *bad);
    }
    for (const auto& action : step.actions) {
      if (auto* send = std::get_if<tree::SendBpdu>(&action)) {
        sent_log_.emplace_back(n, *send);
        auto it = nodes_[n].to_peer.find(send->connection);
        if (it == nodes_[n].to_peer.end()) continue;
        const int peer = it->second;
        auto back = nodes_[peer].to_handle.find(n);
        if (back == nodes_[peer].to_handle.end()) continue;
        const auto delay = tree::Micros(static_cast<std::int64_t>(rtt_[n][peer] / 2));
        queue_.push(Event{now_ + delay, seq_++, peer, back->second, send->bpdu});
      } else if (auto* fwd = std::get_if<tree::SetForwarding>(&action)) {
        forwarding_log_.emplace_back(n, *fwd);
      }
    }
  }

  std::vector<std::uint64_t> capability_;
  std::vector<std::vector<std::uint64_t>> rtt_;
  std::vector<Node> nodes_;
  std::priority_queue<Event, std::vector<Event>, std::greater<>> queue_;
  tree::Timestamp now_{1'000'000};
  tree::ConnHandle next_handle_ = 1;
  std::uint64_t seq_ = 0;
  std::size_t delivered_ = 0;
  std::vector<std::string> violations_;
  std::vector<std::pair<int, tree::SetForwarding>> forwarding_log_;
  std::vector<std::pair<int, tree::SendBpdu>> sent_log_;
};

}  // namespace mqttst::testing
