#include "mqttst/node.hpp"

#include <sstream>
#include <stdexcept>

#include "mqttst/wire/codec.hpp"

namespace mqttst {

BrokerId broker_id_from(const bridge::BridgeConfig& cfg) {
  auto ip = BrokerId::parse_ipv4(cfg.address);
  if (!ip) throw std::invalid_argument("bad broker address " + cfg.address);
  return BrokerId{*ip, cfg.listen_port};
}

Node::Node(bridge::BridgeConfig cfg, std::uint64_t capability, Timestamp now)
    : id_(broker_id_from(cfg)),
      core_(id_, static_cast<broker::Hooks&>(*this)),
      manager_(std::move(cfg), id_, capability, static_cast<bridge::ManagerHooks&>(*this), now),
      now_(now) {}

void Node::start(Timestamp now) {
  now_ = now;
  manager_.start(now);
  drain_closes();
}

void Node::on_accepted(ConnId conn, Timestamp now) {
  now_ = now;
  conns_[conn] = Conn{};
  core_.on_open(conn, now);
  drain_closes();
}

void Node::on_connected(ConnId conn, Timestamp now) {
  now_ = now;
  manager_.on_connected(conn, now);
  drain_closes();
}

void Node::on_data(ConnId conn, std::span<const std::uint8_t> bytes, Timestamp now) {
  now_ = now;
  auto it = conns_.find(conn);
  if (it == conns_.end() || it->second.closing) return;
  stats_.bytes_in += bytes.size();
  it->second.rx.insert(it->second.rx.end(), bytes.begin(), bytes.end());

  std::size_t offset = 0;
  while (true) {
    it = conns_.find(conn);
    if (it == conns_.end() || it->second.closing) break;
    Conn& c = it->second;
    std::span<const std::uint8_t> rest(c.rx.data() + offset, c.rx.size() - offset);
    auto length = wire::frame_length(rest);
    if (!length || (*length && **length > kMaxPacketBytes) ||
        (!*length && rest.size() > kMaxPacketBytes)) {
      ++stats_.decode_errors;
      close(conn);
      break;
    }
    if (!*length || rest.size() < **length) break;
    auto packet = wire::decode_packet(rest.first(**length), c.version);
    offset += **length;
    if (!packet) {
      ++stats_.decode_errors;
      close(conn);
      break;
    }
    ++stats_.packets_in;
    if (!c.outbound) {
      if (const auto* connect = std::get_if<wire::Connect>(&*packet)) c.version = wire::connect_version(*connect);
    }
    dispatch(conn, *packet);
  }
  it = conns_.find(conn);
  if (it != conns_.end() && offset > 0) {
    it->second.rx.erase(it->second.rx.begin(), it->second.rx.begin() + static_cast<std::ptrdiff_t>(offset));
  }
  drain_closes();
}

void Node::dispatch(ConnId conn, const wire::Packet& packet) {
  if (conns_.at(conn).outbound) {
    manager_.on_packet(conn, packet, now_);
  } else {
    core_.on_packet(conn, packet, now_);
  }
}

void Node::on_closed(ConnId conn, Timestamp now) {
  now_ = now;
  auto it = conns_.find(conn);
  if (it == conns_.end()) return;
  const bool outbound = it->second.outbound;
  const bool already = it->second.closing;
  conns_.erase(it);
  if (!already) {
    if (outbound) {
      manager_.on_closed(conn, now);
    } else {
      core_.on_closed(conn, now);
    }
  }
  drain_closes();
}

void Node::on_timer(Timestamp now) {
  now_ = now;
  core_.on_timer(now);
  manager_.on_timer(now);
  drain_closes();
}

Timestamp Node::next_deadline() const { return manager_.next_deadline(); }

void Node::drain_closes() {
  while (!close_queue_.empty()) {
    const ConnId conn = close_queue_.back();
    close_queue_.pop_back();
    auto it = conns_.find(conn);
    if (it == conns_.end()) continue;
    const bool outbound = it->second.outbound;
    conns_.erase(it);
    if (outbound) {
      manager_.on_closed(conn, now_);
    } else {
      core_.on_closed(conn, now_);
    }
  }
}

std::vector<NodeCommand> Node::take_commands() {
  std::vector<NodeCommand> out;
  out.reserve(dials_.size() + out_order_.size() + closes_.size());
  for (auto& d : dials_) out.emplace_back(std::move(d));
  for (auto conn : out_order_) out.emplace_back(SendBytes{conn, std::move(out_[conn])});
  for (auto conn : closes_) out.emplace_back(CloseConn{conn});
  dials_.clear();
  out_order_.clear();
  out_.clear();
  closes_.clear();
  return out;
}

void Node::send(ConnId conn, const wire::Packet& packet) {
  auto it = conns_.find(conn);
  if (it == conns_.end() || it->second.closing) return;
  auto [buf, inserted] = out_.try_emplace(conn);
  if (inserted) out_order_.push_back(conn);
  const auto before = buf->second.size();
  wire::encode_packet(packet, it->second.version, buf->second);
  stats_.bytes_out += buf->second.size() - before;
  ++stats_.packets_out;
}

void Node::close(ConnId conn) {
  auto it = conns_.find(conn);
  if (it == conns_.end() || it->second.closing) return;
  it->second.closing = true;
  closes_.push_back(conn);
  close_queue_.push_back(conn);
}

void Node::forward(BrokerId peer, const broker::Publication& publication) { manager_.forward(peer, publication); }

void Node::bridge_session_opened(ConnId conn, BrokerId peer) { manager_.on_inbound_opened(conn, peer, now_); }

void Node::bridge_session_closed(ConnId conn, BrokerId peer) { manager_.on_inbound_closed(conn, peer, now_); }

void Node::bpdu_received(BrokerId peer, const wire::BpduPayload& bpdu) { manager_.on_bpdu(peer, bpdu, now_); }

ConnId Node::dial(const std::string& host, std::uint16_t port) {
  const ConnId conn = next_dial_++;
  Conn c;
  c.outbound = true;
  c.version = wire::ProtocolVersion::V5;
  conns_[conn] = std::move(c);
  dials_.push_back(DialConn{conn, host, port});
  return conn;
}

void Node::forwarding_changed(BrokerId peer, tree::ConnHandle handle, bool forwarding) {
  core_.set_bridge(peer, handle, forwarding);
}

void Node::bridge_removed(BrokerId peer) { core_.remove_bridge(peer); }

void Node::event(const std::string& kind, const std::string& detail) {
  if (sink_) sink_(now_, kind, detail);
}

std::string Node::stats_line() const {
  const auto& c = core_.stats();
  const auto& m = manager_.stats();
  std::ostringstream os;
  os << "client_publishes=" << c.client_publishes << " bridge_publishes_in=" << c.bridge_publishes_in
     << " bridge_publishes_out=" << m.bridge_publishes_out << " deliveries=" << c.deliveries
     << " forwards=" << c.forwards << " discarded_blocked=" << c.discarded_blocked
     << " wills_fired=" << c.wills_fired << " bpdus_sent=" << m.bpdus_sent
     << " bpdu_bytes_sent=" << m.bpdu_bytes_sent << " bpdus_received=" << m.bpdus_received
     << " tc_sent=" << m.tc_sent << " tc_received=" << m.tc_received << " link_downs=" << m.link_downs
     << " bytes_in=" << stats_.bytes_in << " bytes_out=" << stats_.bytes_out
     << " sessions=" << core_.session_count();
  return os.str();
}

}  // namespace mqttst
