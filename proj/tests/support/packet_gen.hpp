#pragma once

#include <random>

#include "mqttst/wire/codec.hpp"

namespace mqttst::testing {

// Random structurally valid packets for round-trip checks. MQTT 5-only
// fields (properties, non-zero ack reason codes) are populated only when the
// target version can carry them.
class PacketGenerator {
 public:
  explicit PacketGenerator(std::uint64_t seed) : rng_(seed) {}

  wire::Packet next(wire::ProtocolVersion version, int kind) {
    const bool v5 = version == wire::ProtocolVersion::V5;
    switch (kind % 12) {
      case 0: return connect(v5);
      case 1: return wire::Connack{coin(), byte(), v5 ? props() : wire::Bytes{}};
      case 2: return publish(v5);
      case 3: return ack<wire::Puback>(v5);
      case 4: return ack<wire::Pubrec>(v5);
      case 5: return ack<wire::Pubrel>(v5);
      case 6: return ack<wire::Pubcomp>(v5);
      case 7: {
        wire::Subscribe s;
        s.packet_id = packet_id();
        if (v5) s.properties = props();
        const int n = 1 + static_cast<int>(uniform(0, 4));
        for (int i = 0; i < n; ++i) {
          s.subscriptions.push_back({filter(), static_cast<std::uint8_t>(uniform(0, 2))});
        }
        return s;
      }
      case 8: {
        wire::Suback s;
        s.packet_id = packet_id();
        if (v5) s.properties = props();
        const auto n = uniform(1, 5);
        for (std::uint64_t i = 0; i < n; ++i) s.reason_codes.push_back(byte());
        return s;
      }
      case 9: {
        wire::Pingreq p;
        if (coin()) p.bpdu = bpdu();
        return p;
      }
      case 10: return wire::Pingresp{};
      default: {
        wire::Disconnect d;
        if (v5) {
          d.reason_code = coin() ? 0 : byte();
          if (coin()) d.properties = props();
        }
        return d;
      }
    }
  }

  wire::BpduPayload bpdu() {
    wire::BpduPayload b;
    b.root_id = BrokerId{static_cast<std::uint32_t>(rng_()), static_cast<std::uint16_t>(rng_())};
    b.sender_id = BrokerId{static_cast<std::uint32_t>(rng_()), static_cast<std::uint16_t>(rng_())};
    b.sender_capability = rng_();
    b.root_path_cost_us = rng_();
    b.tc_flag = coin();
    b.root_connection = coin();
    b.root_capability = rng_() & wire::kMaxCapability;
    b.hops = byte();
    return b;
  }

  std::uint64_t uniform(std::uint64_t lo, std::uint64_t hi) {
    return std::uniform_int_distribution<std::uint64_t>(lo, hi)(rng_);
  }

 private:
  bool coin() { return rng_() & 1; }
  std::uint8_t byte() { return static_cast<std::uint8_t>(rng_()); }
  std::uint16_t packet_id() { return static_cast<std::uint16_t>(uniform(1, 0xffff)); }

  wire::Bytes blob(std::size_t max) {
    wire::Bytes b(uniform(0, max));
    for (auto& x : b) x = byte();
    return b;
  }

  wire::Bytes props() { return coin() ? wire::Bytes{} : blob(24); }

  std::string text(std::size_t min, std::size_t max, bool allow_wildcards) {
    static constexpr char kChars[] = "abcdefghijklmnopqrstuvwxyz0123456789/_-$";
    std::string s(uniform(min, max), 'x');
    for (auto& c : s) c = kChars[uniform(0, sizeof(kChars) - 2)];
    if (allow_wildcards && coin()) s += coin() ? "/#" : "/+";
    return s;
  }

  std::string filter() { return text(1, 16, true); }

  wire::Packet connect(bool v5) {
    wire::Connect c;
    c.protocol_version_byte = v5 ? 0x05 : 0x04;
    if (coin()) c.protocol_version_byte = wire::set_broker_flag(c.protocol_version_byte);
    c.clean_start = coin();
    c.keep_alive_s = static_cast<std::uint16_t>(rng_());
    c.client_id = text(0, 23, false);
    if (v5) c.properties = props();
    if (coin()) {
      wire::Will w;
      w.topic = text(1, 20, false);
      w.payload = blob(40);
      w.qos = static_cast<std::uint8_t>(uniform(0, 2));
      w.retain = coin();
      if (v5) w.properties = props();
      c.will = std::move(w);
    }
    if (coin()) c.username = text(0, 12, false);
    if (coin()) c.password = blob(16);
    return c;
  }

  wire::Packet publish(bool v5) {
    wire::Publish p;
    p.qos = static_cast<std::uint8_t>(uniform(0, 2));
    p.dup = p.qos > 0 && coin();
    p.retain = coin();
    p.topic = text(1, 30, false);
    if (p.qos > 0) p.packet_id = packet_id();
    if (v5) p.properties = props();
    p.payload = blob(coin() ? 64 : 400);
    return p;
  }

  template <typename A>
  wire::Packet ack(bool v5) {
    A a;
    a.packet_id = packet_id();
    if (v5) {
      if (coin()) a.reason_code = byte();
      if (coin()) a.properties = props();
    }
    return a;
  }

  std::mt19937_64 rng_;
};

}  // namespace mqttst::testing
