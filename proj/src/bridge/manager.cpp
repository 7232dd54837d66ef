#include "mqttst/bridge/manager.hpp"

#include <algorithm>
#include <sstream>

#include "mqttst/wire/codec.hpp"
#include "mqttst/wire/properties.hpp"

namespace mqttst::bridge {

namespace {

constexpr std::size_t kPingreqBpduBytes = 2 + wire::kBpduSize;

template <class... Fs>
struct Overloaded : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
Overloaded(Fs...) -> Overloaded<Fs...>;

}  // namespace

Manager::Manager(BridgeConfig cfg, BrokerId self, std::uint64_t capability, ManagerHooks& hooks, Timestamp now)
    : cfg_(std::move(cfg)), self_(self), hooks_(hooks) {
  const auto timers = tree::Timers::from_keep_alive(std::chrono::seconds(cfg_.keep_alive_s));
  tree_ = tree::initial_state(self_, capability, timers, now);
  next_tick_ = tree_.next_hello;
  for (const auto& peer : cfg_.peers) {
    Target t;
    t.address = peer;
    t.backoff = initial_backoff;
    targets_.push_back(std::move(t));
  }
}

void Manager::start(Timestamp now) {
  log_state_if_changed();
  for (std::size_t i = 0; i < targets_.size(); ++i) attempt(i, now);
}

void Manager::attempt(std::size_t i, Timestamp now) {
  Target& t = targets_[i];
  ++stats_.dials;
  const ConnId conn = hooks_.dial(t.address.host, t.address.port);
  t.conn = conn;
  Outbound ob;
  ob.target = i;
  ob.since = now;
  outbound_[conn] = ob;
}

void Manager::dial_reverse(BrokerId peer, Timestamp now) {
  deferred_reverse_.erase(peer);
  ++stats_.dials;
  hooks_.event("reverse_connect", peer.to_string());
  const ConnId conn = hooks_.dial(peer.ip_string(), peer.port);
  Outbound ob;
  ob.expected_peer = peer;
  ob.since = now;
  outbound_[conn] = ob;
}

void Manager::on_connected(ConnId conn, Timestamp now) {
  auto it = outbound_.find(conn);
  if (it == outbound_.end()) return;
  it->second.phase = Phase::AwaitConnack;
  it->second.since = now;
  wire::Connect c;
  c.protocol_version_byte = wire::set_broker_flag(static_cast<std::uint8_t>(wire::ProtocolVersion::V5));
  c.clean_start = true;
  c.keep_alive_s = cfg_.keep_alive_s;
  c.client_id = broker::Core::bridge_client_id(self_);
  hooks_.send(conn, c);
}

void Manager::on_packet(ConnId conn, const wire::Packet& packet, Timestamp now) {
  auto it = outbound_.find(conn);
  if (it == outbound_.end()) return;
  Outbound& ob = it->second;

  if (const auto* ack = std::get_if<wire::Connack>(&packet)) {
    if (ob.phase != Phase::AwaitConnack || ack->reason_code != 0) {
      hooks_.close(conn);
      on_closed(conn, now);
      return;
    }
    std::optional<BrokerId> peer;
    if (auto prop = wire::find_user_property(ack->properties, broker::kBrokerIdProperty)) {
      peer = BrokerId::parse(*prop);
    }
    if (!peer) peer = ob.expected_peer;
    if (!peer && ob.target) peer = BrokerId::parse(targets_[*ob.target].address.to_string());
    if (!peer) {
      hooks_.event("bridge_rejected", "peer did not identify itself");
      hooks_.close(conn);
      on_closed(conn, now);
      return;
    }
    bridge_up(conn, *peer, now);
    return;
  }
  if (ob.phase != Phase::Up) return;
  auto b = bridges_.find(*ob.peer);
  if (b == bridges_.end()) return;
  Bridge& br = b->second;

  std::visit(Overloaded{
                 [&](const wire::Pingresp&) {
                   if (br.pings.empty()) return;
                   const Ping ping = br.pings.front();
                   br.pings.pop_front();
                   if (!ping.probe || !br.handle) return;
                   ++stats_.rtt_samples;
                   const auto sample = static_cast<std::uint64_t>(std::max<std::int64_t>((now - ping.sent).count(), 1));
                   apply(tree::on_rtt_sample(tree_, *br.handle, sample, now), now);
                 },
                 [&](const wire::Pubrec& a) {
                   if (auto f = br.inflight.find(a.packet_id); f != br.inflight.end()) f->second.pubrec_received = true;
                   hooks_.send(conn, wire::Pubrel{a.packet_id, 0, {}});
                 },
                 [&](const wire::Pubcomp& a) {
                   if (br.inflight.erase(a.packet_id) > 0) pump(br);
                 },
                 [&](const wire::Puback& a) {
                   if (br.inflight.erase(a.packet_id) > 0) pump(br);
                 },
                 [&](const wire::Disconnect&) {
                   hooks_.close(conn);
                   on_closed(conn, now);
                 },
                 [&](const auto&) {},
             },
             packet);
}

void Manager::bridge_up(ConnId conn, BrokerId peer, Timestamp now) {
  Outbound& ob = outbound_.at(conn);
  if (ob.target) {
    Target& t = targets_[*ob.target];
    t.resolved = peer;
    t.backoff = initial_backoff;
  }
  if (peer == self_) {
    hooks_.event("bridge_rejected", "target is this broker");
    hooks_.close(conn);
    on_closed(conn, now);
    return;
  }
  Bridge& b = bridges_[peer];
  if (b.out && *b.out != conn) {
    // A second outbound socket to the same peer; keep the one already up.
    hooks_.event("bridge_duplicate", peer.to_string());
    hooks_.close(conn);
    on_closed(conn, now);
    return;
  }
  resolve_literal_targets(peer);
  ob.peer = peer;
  ob.phase = Phase::Up;
  ob.since = now;
  deferred_reverse_.erase(peer);
  b.out = conn;
  b.pings.clear();
  const tree::ConnHandle handle = next_handle_++;
  b.handle = handle;
  hooks_.event("bridge_up", peer.to_string() + " handle=" + std::to_string(handle));
  apply(tree::add_connection(tree_, handle, peer, now), now);
}

void Manager::on_closed(ConnId conn, Timestamp now) {
  auto it = outbound_.find(conn);
  if (it == outbound_.end()) return;
  if (it->second.phase == Phase::Up) {
    link_down(*it->second.peer, now, false, "outbound closed");
    return;
  }
  const Outbound ob = it->second;
  outbound_.erase(it);
  outbound_failed(conn, ob, now);
}

void Manager::outbound_failed(ConnId, const Outbound& ob, Timestamp now) {
  if (ob.target) {
    Target& t = targets_[*ob.target];
    t.conn.reset();
    t.next_attempt = now + t.backoff;
    t.backoff = std::min(t.backoff * 2, max_backoff);
  }
  if (ob.expected_peer) {
    auto b = bridges_.find(*ob.expected_peer);
    if (b != bridges_.end() && b->second.in) {
      deferred_reverse_[*ob.expected_peer] = Deferred{now + initial_backoff, false};
    }
  }
}

void Manager::on_inbound_opened(ConnId conn, BrokerId peer, Timestamp now) {
  if (peer == self_) {
    hooks_.close(conn);
    return;
  }
  bridges_[peer].in = conn;
  hooks_.event("inbound_bridge", peer.to_string());
  maybe_reverse(peer, now);
}

bool Manager::any_target_unresolved() const {
  return std::any_of(targets_.begin(), targets_.end(), [](const Target& t) { return !t.resolved; });
}

void Manager::resolve_literal_targets(BrokerId peer) {
  for (auto& t : targets_) {
    if (!t.resolved && BrokerId::parse(t.address.to_string()) == peer) t.resolved = peer;
  }
}

bool Manager::has_outbound_to(BrokerId peer) const {
  if (auto b = bridges_.find(peer); b != bridges_.end() && b->second.out) return true;
  for (const auto& [conn, ob] : outbound_) {
    if (ob.expected_peer == peer) return true;
    if (ob.target && targets_[*ob.target].resolved == peer) return true;
  }
  return false;
}

void Manager::maybe_reverse(BrokerId peer, Timestamp now) {
  resolve_literal_targets(peer);
  if (has_outbound_to(peer)) return;
  for (std::size_t i = 0; i < targets_.size(); ++i) {
    if (targets_[i].resolved == peer) {
      if (!targets_[i].conn) attempt(i, now);
      return;
    }
  }
  // A configured target that has not answered yet may be this same peer
  // behind another address; give it a chance before dialling directly.
  if (any_target_unresolved()) {
    deferred_reverse_[peer] = Deferred{now + reverse_grace, true};
    return;
  }
  dial_reverse(peer, now);
}

void Manager::on_inbound_closed(ConnId conn, BrokerId peer, Timestamp now) {
  auto it = bridges_.find(peer);
  if (it == bridges_.end() || it->second.in != conn) return;
  deferred_reverse_.erase(peer);
  link_down(peer, now, false, "inbound closed");
}

void Manager::link_down(BrokerId peer, Timestamp now, bool tree_knows, const std::string& reason) {
  auto it = bridges_.find(peer);
  if (it == bridges_.end()) return;
  Bridge b = std::move(it->second);
  bridges_.erase(it);
  deferred_reverse_.erase(peer);
  if (b.out) {
    if (auto ob = outbound_.find(*b.out); ob != outbound_.end()) {
      if (ob->second.target) {
        Target& t = targets_[*ob->second.target];
        t.conn.reset();
        t.next_attempt = now + t.backoff;
        t.backoff = std::min(t.backoff * 2, max_backoff);
      }
      outbound_.erase(ob);
    }
    hooks_.close(*b.out);
  }
  if (b.in) hooks_.close(*b.in);
  if (!b.handle) return;
  ++stats_.link_downs;
  hooks_.event("link_down", peer.to_string() + " " + reason);
  hooks_.bridge_removed(peer);
  if (!tree_knows) apply(tree::on_link_down(tree_, *b.handle, now), now);
}

void Manager::on_bpdu(BrokerId peer, const wire::BpduPayload& bpdu, Timestamp now) {
  ++stats_.bpdus_received;
  if (bpdu.tc_flag) {
    ++stats_.tc_received;
    hooks_.event("tc_received", peer.to_string());
  }
  auto it = bridges_.find(peer);
  if (it == bridges_.end() || !it->second.handle) return;
  it->second.peer_root = bpdu.root_connection;
  apply(tree::on_bpdu(tree_, *it->second.handle, bpdu, now), now);
  update_forwarding(peer);
}

void Manager::update_forwarding(BrokerId peer) {
  auto it = bridges_.find(peer);
  if (it == bridges_.end() || !it->second.handle) return;
  Bridge& b = it->second;
  auto c = tree_.connections.find(*b.handle);
  if (c == tree_.connections.end()) return;
  const auto role = c->second.role;
  const bool forwarding =
      role == tree::Role::Root || (role == tree::Role::Designated && b.peer_root.value_or(true));
  if (b.announced == forwarding) return;
  b.announced = forwarding;
  hooks_.forwarding_changed(peer, *b.handle, forwarding);
}

void Manager::forward(BrokerId peer, const broker::Publication& publication) {
  auto it = bridges_.find(peer);
  if (it == bridges_.end() || !it->second.out) {
    ++stats_.forwards_dropped;
    return;
  }
  wire::Publish p;
  p.qos = 2;
  p.retain = publication.retain;
  p.topic = publication.topic;
  p.payload = publication.payload;
  it->second.queued.push_back(std::move(p));
  pump(it->second);
}

void Manager::pump(Bridge& b) {
  while (!b.queued.empty() && b.inflight.size() < max_inflight) {
    wire::Publish p = std::move(b.queued.front());
    b.queued.pop_front();
    do {
      p.packet_id = b.next_packet_id++;
      if (b.next_packet_id == 0) b.next_packet_id = 1;
    } while (p.packet_id == 0 || b.inflight.contains(p.packet_id));
    hooks_.send(*b.out, p);
    ++stats_.bridge_publishes_out;
    b.inflight.emplace(p.packet_id, broker::Outflight{std::move(p), false});
  }
}

void Manager::send_bpdu(Bridge& b, wire::BpduPayload bpdu, Timestamp now) {
  if (!b.out) return;
  bpdu.root_connection = b.handle && tree_.root_connection == b.handle;
  // Triggered BPDUs do not start probes; otherwise every RTT sample that moves
  // the path cost would trigger another probe.
  const bool probe = std::none_of(b.pings.begin(), b.pings.end(), [](const Ping& p) { return p.probe; }) &&
                     (!b.last_probe || now - *b.last_probe >= tree_.timers.hello_interval / 2);
  if (probe) b.last_probe = now;
  b.pings.push_back({now, probe});
  hooks_.send(*b.out, wire::Pingreq{bpdu});
  ++stats_.bpdus_sent;
  stats_.bpdu_bytes_sent += kPingreqBpduBytes;
  if (bpdu.tc_flag) ++stats_.tc_sent;
}

std::optional<BrokerId> Manager::peer_of_handle(tree::ConnHandle handle) const {
  for (const auto& [peer, b] : bridges_) {
    if (b.handle == handle) return peer;
  }
  return std::nullopt;
}

void Manager::apply(tree::Step step, Timestamp now) {
  if (step.error) hooks_.event("tree_error", *step.error);
  tree_ = std::move(step.state);
  bool tc_logged = false;
  for (const auto& action : step.actions) {
    std::visit(Overloaded{
                   [&](const tree::SendBpdu& a) {
                     auto peer = peer_of_handle(a.connection);
                     if (!peer) return;
                     if (a.bpdu.tc_flag && !tc_logged) {
                       tc_logged = true;
                       hooks_.event("tc_sent", "");
                     }
                     send_bpdu(bridges_.at(*peer), a.bpdu, now);
                   },
                   [&](const tree::SetForwarding& a) {
                     if (auto peer = peer_of_handle(a.connection)) update_forwarding(*peer);
                   },
                   [&](const tree::ScheduleTick& a) { next_tick_ = now + a.delay; },
                   [&](const tree::ConnectionExpired& a) {
                     if (auto peer = peer_of_handle(a.connection)) {
                       link_down(*peer, now, true, "keep-alive expired");
                     }
                   },
               },
               action);
  }
  log_state_if_changed();
}

void Manager::on_timer(Timestamp now) {
  for (std::size_t i = 0; i < targets_.size(); ++i) {
    const Target& t = targets_[i];
    if (t.conn || now < t.next_attempt) continue;
    if (t.resolved && (*t.resolved == self_ || has_outbound_to(*t.resolved))) continue;
    attempt(i, now);
  }

  std::vector<BrokerId> due;
  for (const auto& [peer, d] : deferred_reverse_) {
    if (now >= d.not_before || (d.wait_for_targets && !any_target_unresolved())) due.push_back(peer);
  }
  for (const auto& peer : due) {
    deferred_reverse_.erase(peer);
    auto b = bridges_.find(peer);
    if (b == bridges_.end() || !b->second.in) continue;
    bool via_target = false;
    for (std::size_t i = 0; i < targets_.size(); ++i) {
      if (targets_[i].resolved == peer) via_target = true;
    }
    if (!via_target && !has_outbound_to(peer)) dial_reverse(peer, now);
  }

  const auto timeout = tree_.timers.keepalive_timeout;
  std::vector<BrokerId> silent;
  for (const auto& [peer, b] : bridges_) {
    if (!b.pings.empty() && now - b.pings.front().sent > timeout) silent.push_back(peer);
  }
  for (const auto& peer : silent) link_down(peer, now, false, "no PINGRESP");

  std::vector<ConnId> stuck;
  for (const auto& [conn, ob] : outbound_) {
    if (ob.phase != Phase::Up && now - ob.since > timeout) stuck.push_back(conn);
  }
  for (auto conn : stuck) {
    hooks_.close(conn);
    on_closed(conn, now);
  }

  if (now >= next_tick_) apply(tree::tick(tree_, now), now);
}

Timestamp Manager::next_deadline() const {
  Timestamp next = next_tick_;
  for (const auto& t : targets_) {
    if (!t.conn) next = std::min(next, t.next_attempt);
  }
  for (const auto& [peer, d] : deferred_reverse_) next = std::min(next, d.not_before);
  return next;
}

std::vector<BridgeInfo> Manager::bridges() const {
  std::vector<BridgeInfo> out;
  for (const auto& [peer, b] : bridges_) out.push_back({peer, b.out, b.in, b.handle});
  return out;
}

std::string Manager::describe_state() const {
  std::ostringstream os;
  os << "root=" << tree_.believed_root.to_string() << " cost=" << tree_.root_path_cost_us << " conns=";
  bool first = true;
  for (const auto& [h, e] : tree_.connections) {
    if (!first) os << '|';
    first = false;
    os << e.peer.to_string() << ':' << tree::to_string(e.role);
  }
  return os.str();
}

void Manager::log_state_if_changed() {
  // Path costs move with every RTT sample; only root and role changes are events.
  std::ostringstream key;
  key << tree_.believed_root.to_string();
  for (const auto& [h, e] : tree_.connections) key << ' ' << e.peer.to_string() << ':' << tree::to_string(e.role);
  if (key.str() == last_state_) return;
  last_state_ = key.str();
  hooks_.event("state", describe_state());
}

}  // namespace mqttst::bridge
