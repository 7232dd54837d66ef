#include "mqttst/client/client.hpp"

#include "mqttst/wire/codec.hpp"

namespace mqttst::client {

Client::Client(Options options) : options_(std::move(options)) {}

void Client::send(const wire::Packet& packet) { wire::encode_packet(packet, options_.version, out_); }

std::uint16_t Client::next_id() {
  while (true) {
    const std::uint16_t id = next_id_++;
    if (next_id_ == 0) next_id_ = 1;
    if (id != 0 && !outbound_.contains(id)) return id;
  }
}

void Client::connect() {
  wire::Connect c;
  c.protocol_version_byte = static_cast<std::uint8_t>(options_.version);
  c.clean_start = true;
  c.keep_alive_s = options_.keep_alive_s;
  c.client_id = options_.client_id;
  c.will = options_.will;
  send(c);
}

std::uint16_t Client::subscribe(const std::string& filter, std::uint8_t qos) {
  wire::Subscribe s;
  s.packet_id = next_id();
  s.subscriptions.push_back({filter, qos});
  send(s);
  return s.packet_id;
}

std::uint16_t Client::publish(const std::string& topic, wire::Bytes payload, std::uint8_t qos, bool retain) {
  wire::Publish p;
  p.qos = qos;
  p.retain = retain;
  p.topic = topic;
  p.payload = std::move(payload);
  if (qos > 0) {
    p.packet_id = next_id();
    outbound_[p.packet_id] = qos;
  }
  send(p);
  if (qos == 0) events_.push_back(PublishComplete{0});
  return p.packet_id;
}

void Client::ping() { send(wire::Pingreq{}); }

void Client::disconnect() { send(wire::Disconnect{}); }

void Client::on_data(std::span<const std::uint8_t> bytes) {
  if (failed_) return;
  rx_.insert(rx_.end(), bytes.begin(), bytes.end());
  std::size_t offset = 0;
  while (true) {
    std::span<const std::uint8_t> rest(rx_.data() + offset, rx_.size() - offset);
    auto length = wire::frame_length(rest);
    if (!length) {
      failed_ = true;
      events_.push_back(ProtocolError{wire::to_string(length.error())});
      break;
    }
    if (!*length || rest.size() < **length) break;
    auto packet = wire::decode_packet(rest.first(**length), options_.version);
    offset += **length;
    if (!packet) {
      failed_ = true;
      events_.push_back(ProtocolError{wire::to_string(packet.error())});
      break;
    }
    handle(*packet);
  }
  rx_.erase(rx_.begin(), rx_.begin() + static_cast<std::ptrdiff_t>(offset));
}

void Client::handle(const wire::Packet& packet) {
  if (const auto* ack = std::get_if<wire::Connack>(&packet)) {
    connected_ = ack->reason_code == 0;
    events_.push_back(Connected{ack->reason_code});
  } else if (const auto* sub = std::get_if<wire::Suback>(&packet)) {
    events_.push_back(Subscribed{sub->packet_id, sub->reason_codes});
  } else if (const auto* p = std::get_if<wire::Publish>(&packet)) {
    bool fresh = true;
    if (p->qos == 1) send(wire::Puback{p->packet_id, 0, {}});
    if (p->qos == 2) {
      fresh = awaiting_pubrel_.insert(p->packet_id).second;
      send(wire::Pubrec{p->packet_id, 0, {}});
    }
    if (fresh) events_.push_back(MessageReceived{p->topic, p->payload, p->qos, p->retain});
  } else if (const auto* rel = std::get_if<wire::Pubrel>(&packet)) {
    awaiting_pubrel_.erase(rel->packet_id);
    send(wire::Pubcomp{rel->packet_id, 0, {}});
  } else if (const auto* a = std::get_if<wire::Puback>(&packet)) {
    if (outbound_.erase(a->packet_id) > 0) events_.push_back(PublishComplete{a->packet_id});
  } else if (const auto* r = std::get_if<wire::Pubrec>(&packet)) {
    send(wire::Pubrel{r->packet_id, 0, {}});
  } else if (const auto* c = std::get_if<wire::Pubcomp>(&packet)) {
    if (outbound_.erase(c->packet_id) > 0) events_.push_back(PublishComplete{c->packet_id});
  }
}

wire::Bytes Client::take_output() {
  wire::Bytes out;
  out.swap(out_);
  return out;
}

std::vector<Event> Client::take_events() {
  std::vector<Event> out;
  out.swap(events_);
  return out;
}

}  // namespace mqttst::client
