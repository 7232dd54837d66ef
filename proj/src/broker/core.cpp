#include "mqttst/broker/core.hpp"

#include <algorithm>

#include "mqttst/broker/topic.hpp"
#include "mqttst/wire/codec.hpp"
#include "mqttst/wire/properties.hpp"

namespace mqttst::broker {

namespace {

constexpr std::uint8_t kV311NotAuthorizedId = 0x02;
constexpr std::uint8_t kV5InvalidClientId = 0x85;
constexpr std::uint8_t kV311SubscribeFailure = 0x80;
constexpr std::uint8_t kV5InvalidFilter = 0x8F;

template <class... Fs>
struct Overloaded : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
Overloaded(Fs...) -> Overloaded<Fs...>;

}  // namespace

Core::Core(BrokerId self, Hooks& hooks) : self_(self), hooks_(hooks) {}

std::string Core::bridge_client_id(BrokerId self) {
  return std::string(kBridgeClientPrefix) + self.to_string();
}

std::optional<BrokerId> Core::parse_bridge_client_id(std::string_view client_id) {
  if (!client_id.starts_with(kBridgeClientPrefix)) return std::nullopt;
  return BrokerId::parse(client_id.substr(kBridgeClientPrefix.size()));
}

void Core::on_open(ConnId conn, Timestamp now) { pending_[conn] = now; }

void Core::on_packet(ConnId conn, const wire::Packet& packet, Timestamp now) {
  if (pending_.contains(conn)) {
    if (const auto* connect = std::get_if<wire::Connect>(&packet)) {
      pending_.erase(conn);
      handle_connect(conn, *connect, now);
    } else {
      pending_.erase(conn);
      ++stats_.protocol_errors;
      hooks_.close(conn);
    }
    return;
  }
  auto it = sessions_.find(conn);
  if (it == sessions_.end()) return;
  Session& s = it->second;
  s.last_rx = now;

  std::visit(Overloaded{
                 [&](const wire::Publish& p) { handle_publish(s, p); },
                 [&](const wire::Puback& a) {
                   if (s.outbound.erase(a.packet_id) > 0) pump(s);
                 },
                 [&](const wire::Pubrec& a) {
                   if (auto o = s.outbound.find(a.packet_id); o != s.outbound.end()) o->second.pubrec_received = true;
                   hooks_.send(conn, wire::Pubrel{a.packet_id, 0, {}});
                 },
                 [&](const wire::Pubrel& a) {
                   if (s.awaiting_pubrel.erase(a.packet_id) == 0) {
                     protocol_error(conn);
                     return;
                   }
                   hooks_.send(conn, wire::Pubcomp{a.packet_id, 0, {}});
                 },
                 [&](const wire::Pubcomp& a) {
                   if (s.outbound.erase(a.packet_id) > 0) pump(s);
                 },
                 [&](const wire::Subscribe& sub) { handle_subscribe(s, sub); },
                 [&](const wire::Pingreq& ping) {
                   if (ping.bpdu && s.kind == SessionKind::Bridge) hooks_.bpdu_received(*s.peer, *ping.bpdu);
                   hooks_.send(conn, wire::Pingresp{});
                 },
                 [&](const wire::Disconnect&) {
                   drop(conn, false);
                   hooks_.close(conn);
                 },
                 [&](const auto&) { protocol_error(conn); },
             },
             packet);
}

void Core::handle_connect(ConnId conn, const wire::Connect& connect, Timestamp now) {
  const auto version = wire::connect_version(connect);
  const bool v5 = version == wire::ProtocolVersion::V5;
  Session s;
  s.conn = conn;
  s.version = version;
  s.keep_alive_s = connect.keep_alive_s;
  s.last_rx = now;
  s.client_id = connect.client_id.empty() ? "auto-" + std::to_string(conn) : connect.client_id;

  wire::Connack ack;
  if (wire::is_broker_connect(connect)) {
    s.kind = SessionKind::Bridge;
    s.peer = parse_bridge_client_id(connect.client_id);
    if (!s.peer) {
      ack.reason_code = v5 ? kV5InvalidClientId : kV311NotAuthorizedId;
      hooks_.send(conn, ack);
      hooks_.close(conn);
      return;
    }
    if (v5) wire::append_user_property(ack.properties, kBrokerIdProperty, self_.to_string());
  }
  if (connect.will) {
    s.will = Publication{connect.will->topic, connect.will->payload, connect.will->qos, connect.will->retain};
  }

  if (auto old = by_client_id_.find(s.client_id); old != by_client_id_.end()) {
    const ConnId previous = old->second;
    drop(previous, false);
    hooks_.close(previous);
  }
  by_client_id_[s.client_id] = conn;
  const auto kind = s.kind;
  const auto peer = s.peer;
  sessions_.emplace(conn, std::move(s));
  hooks_.send(conn, ack);
  if (kind == SessionKind::Bridge) hooks_.bridge_session_opened(conn, *peer);
}

void Core::handle_publish(Session& s, const wire::Publish& p) {
  Publication pub{p.topic, p.payload, p.qos, p.retain};
  Origin origin = s.kind == SessionKind::Bridge ? Origin{FromBridge{*s.peer}} : Origin{FromClient{s.conn}};
  if (s.kind == SessionKind::Bridge) {
    ++stats_.bridge_publishes_in;
  } else {
    ++stats_.client_publishes;
  }
  const ConnId conn = s.conn;
  switch (p.qos) {
    case 0:
      publish(pub, origin);
      break;
    case 1:
      publish(pub, origin);
      hooks_.send(conn, wire::Puback{p.packet_id, 0, {}});
      break;
    default:
      // Delivered onward on first receipt; the id stays reserved until PUBREL
      // so retransmissions are acknowledged without a second delivery.
      if (s.awaiting_pubrel.insert(p.packet_id).second) publish(pub, origin);
      hooks_.send(conn, wire::Pubrec{p.packet_id, 0, {}});
      break;
  }
}

void Core::handle_subscribe(Session& s, const wire::Subscribe& sub) {
  const bool v5 = s.version == wire::ProtocolVersion::V5;
  wire::Suback ack;
  ack.packet_id = sub.packet_id;
  std::vector<std::pair<std::string, std::uint8_t>> granted;
  for (const auto& entry : sub.subscriptions) {
    if (!valid_topic_filter(entry.filter)) {
      ack.reason_codes.push_back(v5 ? kV5InvalidFilter : kV311SubscribeFailure);
      continue;
    }
    const std::uint8_t qos = std::min<std::uint8_t>(entry.qos(), 2);
    s.subscriptions[entry.filter] = qos;
    ack.reason_codes.push_back(qos);
    granted.emplace_back(entry.filter, qos);
  }
  hooks_.send(s.conn, ack);
  for (const auto& [filter, qos] : granted) {
    for (const auto& [topic, pub] : retained_) {
      if (topic_matches(filter, topic)) deliver(s, pub, std::min(pub.qos, qos), true);
    }
  }
}

RouteResult Core::route_publication(const Publication& publication, const Origin& origin) const {
  RouteResult result;
  std::optional<BrokerId> arrival;
  if (const auto* from = std::get_if<FromBridge>(&origin)) {
    arrival = from->peer;
    auto it = bridges_.find(from->peer);
    if (it != bridges_.end() && !it->second.forwarding) {
      result.discarded = true;
      return result;
    }
  }
  for (const auto& [conn, s] : sessions_) {
    if (s.kind != SessionKind::Client) continue;
    int best = -1;
    for (const auto& [filter, qos] : s.subscriptions) {
      if (qos > best && topic_matches(filter, publication.topic)) best = qos;
    }
    if (best >= 0) {
      result.deliveries.push_back({conn, std::min<std::uint8_t>(publication.qos, static_cast<std::uint8_t>(best))});
    }
  }
  for (const auto& [peer, view] : bridges_) {
    if (view.forwarding && peer != arrival) result.forwards.push_back(peer);
  }
  return result;
}

void Core::publish(const Publication& publication, const Origin& origin) {
  const auto route = route_publication(publication, origin);
  if (route.discarded) {
    ++stats_.discarded_blocked;
    return;
  }
  if (publication.retain) {
    if (publication.payload.empty()) {
      retained_.erase(publication.topic);
    } else {
      retained_[publication.topic] = publication;
    }
  }
  for (const auto& d : route.deliveries) {
    auto it = sessions_.find(d.conn);
    if (it != sessions_.end()) deliver(it->second, publication, d.qos, false);
  }
  for (const auto& peer : route.forwards) {
    ++stats_.forwards;
    hooks_.forward(peer, publication);
  }
}

void Core::deliver(Session& s, const Publication& publication, std::uint8_t qos, bool retain_flag) {
  ++stats_.deliveries;
  wire::Publish p;
  p.qos = qos;
  p.retain = retain_flag;
  p.topic = publication.topic;
  p.payload = publication.payload;
  if (qos == 0) {
    hooks_.send(s.conn, p);
    return;
  }
  s.queued.push_back(std::move(p));
  pump(s);
}

void Core::pump(Session& s) {
  while (!s.queued.empty() && s.outbound.size() < max_inflight) {
    wire::Publish p = std::move(s.queued.front());
    s.queued.pop_front();
    p.packet_id = allocate_id(s);
    hooks_.send(s.conn, p);
    s.outbound.emplace(p.packet_id, Outflight{std::move(p), false});
  }
}

std::uint16_t Core::allocate_id(Session& s) {
  while (true) {
    const std::uint16_t id = s.next_packet_id++;
    if (s.next_packet_id == 0) s.next_packet_id = 1;
    if (id != 0 && !s.outbound.contains(id)) return id;
  }
}

void Core::on_closed(ConnId conn, Timestamp) { drop(conn, true); }

void Core::drop(ConnId conn, bool fire_will) {
  pending_.erase(conn);
  auto it = sessions_.find(conn);
  if (it == sessions_.end()) return;
  Session s = std::move(it->second);
  sessions_.erase(it);
  if (auto c = by_client_id_.find(s.client_id); c != by_client_id_.end() && c->second == conn) {
    by_client_id_.erase(c);
  }
  if (s.kind == SessionKind::Bridge) hooks_.bridge_session_closed(conn, *s.peer);
  if (fire_will && s.will) {
    ++stats_.wills_fired;
    publish(*s.will, FromClient{conn});
  }
}

void Core::protocol_error(ConnId conn) {
  ++stats_.protocol_errors;
  drop(conn, true);
  hooks_.close(conn);
}

void Core::on_timer(Timestamp now) {
  std::vector<ConnId> stale;
  for (const auto& [conn, opened] : pending_) {
    if (now - opened > connect_timeout) stale.push_back(conn);
  }
  for (auto conn : stale) {
    pending_.erase(conn);
    hooks_.close(conn);
  }
  stale.clear();
  for (const auto& [conn, s] : sessions_) {
    if (s.keep_alive_s == 0) continue;
    const auto limit = std::chrono::microseconds(std::int64_t{s.keep_alive_s} * 1'500'000);
    if (now - s.last_rx > limit) stale.push_back(conn);
  }
  for (auto conn : stale) {
    drop(conn, true);
    hooks_.close(conn);
  }
}

void Core::set_bridge(BrokerId peer, tree::ConnHandle handle, bool forwarding) {
  bridges_[peer] = BridgeView{handle, forwarding};
}

void Core::remove_bridge(BrokerId peer) { bridges_.erase(peer); }

const Session* Core::session(ConnId conn) const {
  auto it = sessions_.find(conn);
  return it == sessions_.end() ? nullptr : &it->second;
}

std::optional<ConnId> Core::find_client(const std::string& client_id) const {
  auto it = by_client_id_.find(client_id);
  if (it == by_client_id_.end()) return std::nullopt;
  return it->second;
}

}  // namespace mqttst::broker
