#include "mqttst/wire/codec.hpp"

#include <algorithm>

namespace mqttst::wire {

namespace {

constexpr std::uint8_t kPubrelFlags = 0x02;
constexpr std::uint8_t kSubscribeFlags = 0x02;

bool has_wildcard(const std::string& topic) {
  return topic.find_first_of("+#") != std::string::npos;
}

class Writer {
 public:
  explicit Writer(Bytes& out) : out_(out) {}

  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    out_.push_back(static_cast<std::uint8_t>(v >> 8));
    out_.push_back(static_cast<std::uint8_t>(v));
  }
  void be(std::uint64_t v, int octets) {
    for (int i = octets - 1; i >= 0; --i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void raw(std::span<const std::uint8_t> bytes) { out_.insert(out_.end(), bytes.begin(), bytes.end()); }
  void binary(std::span<const std::uint8_t> bytes) {
    if (bytes.size() > 0xffff) throw EncodeError("length-prefixed field exceeds 65535 octets");
    u16(static_cast<std::uint16_t>(bytes.size()));
    raw(bytes);
  }
  void str(const std::string& s) {
    binary({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
  }
  void properties(const Bytes& props) {
    if (props.size() > kMaxRemainingLength) throw EncodeError("properties too large");
    encode_varint(static_cast<std::uint32_t>(props.size()), out_);
    raw(props);
  }

 private:
  Bytes& out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  bool empty() const { return pos_ == in_.size(); }
  std::size_t remaining() const { return in_.size() - pos_; }

  bool u8(std::uint8_t& v) {
    if (remaining() < 1) return false;
    v = in_[pos_++];
    return true;
  }
  bool u16(std::uint16_t& v) {
    if (remaining() < 2) return false;
    v = static_cast<std::uint16_t>((in_[pos_] << 8) | in_[pos_ + 1]);
    pos_ += 2;
    return true;
  }
  bool be(std::uint64_t& v, int octets) {
    if (remaining() < static_cast<std::size_t>(octets)) return false;
    v = 0;
    for (int i = 0; i < octets; ++i) v = (v << 8) | in_[pos_++];
    return true;
  }
  bool raw(std::size_t n, Bytes& out) {
    if (remaining() < n) return false;
    out.assign(in_.begin() + static_cast<std::ptrdiff_t>(pos_),
               in_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return true;
  }
  bool binary(Bytes& out) {
    std::uint16_t n = 0;
    return u16(n) && raw(n, out);
  }
  bool str(std::string& out) {
    Bytes tmp;
    if (!binary(tmp)) return false;
    out.assign(tmp.begin(), tmp.end());
    return true;
  }
  bool varint(std::uint32_t& v) {
    v = 0;
    for (int i = 0; i < 4; ++i) {
      std::uint8_t b = 0;
      if (!u8(b)) return false;
      v |= static_cast<std::uint32_t>(b & 0x7f) << (7 * i);
      if ((b & 0x80) == 0) return true;
    }
    return false;
  }
  bool properties(Bytes& out) {
    std::uint32_t n = 0;
    return varint(n) && raw(n, out);
  }
  Bytes rest() {
    Bytes out(in_.begin() + static_cast<std::ptrdiff_t>(pos_), in_.end());
    pos_ = in_.size();
    return out;
  }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

void check_qos(std::uint8_t qos) {
  if (qos > 2) throw EncodeError("qos must be 0, 1 or 2");
}

std::uint8_t encode_body(const Connect& p, Writer& w) {
  auto base = base_version(p.protocol_version_byte);
  if (base != 4 && base != 5) throw EncodeError("unsupported protocol version");
  const bool v5 = base == 5;
  w.str(p.protocol_name);
  w.u8(p.protocol_version_byte);
  std::uint8_t flags = 0;
  if (p.username) flags |= 0x80;
  if (p.password) flags |= 0x40;
  if (p.will) {
    check_qos(p.will->qos);
    flags |= 0x04;
    flags |= static_cast<std::uint8_t>(p.will->qos << 3);
    if (p.will->retain) flags |= 0x20;
  }
  if (p.clean_start) flags |= 0x02;
  w.u8(flags);
  w.u16(p.keep_alive_s);
  if (v5) w.properties(p.properties);
  w.str(p.client_id);
  if (p.will) {
    if (v5) w.properties(p.will->properties);
    w.str(p.will->topic);
    w.binary(p.will->payload);
  }
  if (p.username) w.str(*p.username);
  if (p.password) w.binary(*p.password);
  return 0;
}

std::uint8_t encode_body(const Connack& p, Writer& w, bool v5) {
  w.u8(p.session_present ? 1 : 0);
  w.u8(p.reason_code);
  if (v5) w.properties(p.properties);
  return 0;
}

std::uint8_t encode_body(const Publish& p, Writer& w, bool v5) {
  check_qos(p.qos);
  if (has_wildcard(p.topic)) throw EncodeError("publish topic contains a wildcard");
  if (p.qos > 0 && p.packet_id == 0) throw EncodeError("qos > 0 requires a packet id");
  w.str(p.topic);
  if (p.qos > 0) w.u16(p.packet_id);
  if (v5) w.properties(p.properties);
  w.raw(p.payload);
  return static_cast<std::uint8_t>((p.dup ? 0x08 : 0) | (p.qos << 1) | (p.retain ? 0x01 : 0));
}

template <PacketType T>
std::uint8_t encode_body(const Ack<T>& p, Writer& w, bool v5) {
  w.u16(p.packet_id);
  if (v5 && (p.reason_code != 0 || !p.properties.empty())) {
    w.u8(p.reason_code);
    if (!p.properties.empty()) w.properties(p.properties);
  }
  return T == PacketType::Pubrel ? kPubrelFlags : 0;
}

std::uint8_t encode_body(const Subscribe& p, Writer& w, bool v5) {
  if (p.subscriptions.empty()) throw EncodeError("subscribe without topic filters");
  w.u16(p.packet_id);
  if (v5) w.properties(p.properties);
  for (const auto& s : p.subscriptions) {
    w.str(s.filter);
    w.u8(s.options);
  }
  return kSubscribeFlags;
}

std::uint8_t encode_body(const Suback& p, Writer& w, bool v5) {
  w.u16(p.packet_id);
  if (v5) w.properties(p.properties);
  for (auto rc : p.reason_codes) w.u8(rc);
  return 0;
}

std::uint8_t encode_body(const Pingreq& p, Writer& w, bool, Bytes& body) {
  if (p.bpdu) encode_bpdu(*p.bpdu, body);
  (void)w;
  return 0;
}

std::uint8_t encode_body(const Disconnect& p, Writer& w, bool v5) {
  if (v5 && (p.reason_code != 0 || !p.properties.empty())) {
    w.u8(p.reason_code);
    if (!p.properties.empty()) w.properties(p.properties);
  }
  return 0;
}

template <PacketType T>
Expected<Packet, CodecError> decode_ack(Reader& r, std::uint8_t flags, bool v5) {
  const std::uint8_t expected_flags = T == PacketType::Pubrel ? kPubrelFlags : 0;
  if (flags != expected_flags) return CodecError::MalformedPacket;
  Ack<T> ack;
  if (!r.u16(ack.packet_id)) return CodecError::MalformedPacket;
  if (v5) {
    if (!r.empty() && !r.u8(ack.reason_code)) return CodecError::MalformedPacket;
    if (!r.empty() && !r.properties(ack.properties)) return CodecError::MalformedPacket;
    // A non-canonical explicit zero reason code with no properties is still accepted.
  }
  if (!r.empty()) return CodecError::MalformedPacket;
  return Packet{std::move(ack)};
}

Expected<Packet, CodecError> decode_connect(Reader& r, std::uint8_t flags) {
  if (flags != 0) return CodecError::MalformedPacket;
  Connect c;
  if (!r.str(c.protocol_name) || !r.u8(c.protocol_version_byte)) return CodecError::MalformedPacket;
  const auto base = base_version(c.protocol_version_byte);
  if (c.protocol_name != "MQTT" || (base != 4 && base != 5)) {
    return CodecError::UnsupportedProtocolVersion;
  }
  const bool v5 = base == 5;
  std::uint8_t cflags = 0;
  if (!r.u8(cflags) || !r.u16(c.keep_alive_s)) return CodecError::MalformedPacket;
  if (cflags & 0x01) return CodecError::MalformedPacket;
  c.clean_start = (cflags & 0x02) != 0;
  const bool will = (cflags & 0x04) != 0;
  const auto will_qos = static_cast<std::uint8_t>((cflags >> 3) & 0x03);
  const bool will_retain = (cflags & 0x20) != 0;
  if (!will && (will_qos != 0 || will_retain)) return CodecError::MalformedPacket;
  if (will_qos > 2) return CodecError::MalformedPacket;
  if (v5 && !r.properties(c.properties)) return CodecError::MalformedPacket;
  if (!r.str(c.client_id)) return CodecError::MalformedPacket;
  if (will) {
    Will w;
    w.qos = will_qos;
    w.retain = will_retain;
    if (v5 && !r.properties(w.properties)) return CodecError::MalformedPacket;
    if (!r.str(w.topic) || !r.binary(w.payload)) return CodecError::MalformedPacket;
    if (has_wildcard(w.topic)) return CodecError::MalformedPacket;
    c.will = std::move(w);
  }
  if (cflags & 0x80) {
    std::string user;
    if (!r.str(user)) return CodecError::MalformedPacket;
    c.username = std::move(user);
  }
  if (cflags & 0x40) {
    Bytes pass;
    if (!r.binary(pass)) return CodecError::MalformedPacket;
    c.password = std::move(pass);
  }
  if (!r.empty()) return CodecError::MalformedPacket;
  return Packet{std::move(c)};
}

Expected<Packet, CodecError> decode_body(PacketType type, std::uint8_t flags, Reader& r, bool v5) {
  switch (type) {
    case PacketType::Connect:
      return decode_connect(r, flags);
    case PacketType::Connack: {
      if (flags != 0) return CodecError::MalformedPacket;
      Connack c;
      std::uint8_t ack_flags = 0;
      if (!r.u8(ack_flags) || !r.u8(c.reason_code)) return CodecError::MalformedPacket;
      if (ack_flags & 0xfe) return CodecError::MalformedPacket;
      c.session_present = ack_flags & 0x01;
      if (v5 && !r.properties(c.properties)) return CodecError::MalformedPacket;
      if (!r.empty()) return CodecError::MalformedPacket;
      return Packet{std::move(c)};
    }
    case PacketType::Publish: {
      Publish p;
      p.dup = (flags & 0x08) != 0;
      p.qos = static_cast<std::uint8_t>((flags >> 1) & 0x03);
      p.retain = (flags & 0x01) != 0;
      if (p.qos > 2) return CodecError::MalformedPacket;
      if (p.qos == 0 && p.dup) return CodecError::MalformedPacket;
      if (!r.str(p.topic) || p.topic.empty() || has_wildcard(p.topic)) return CodecError::MalformedPacket;
      if (p.qos > 0 && (!r.u16(p.packet_id) || p.packet_id == 0)) return CodecError::MalformedPacket;
      if (v5 && !r.properties(p.properties)) return CodecError::MalformedPacket;
      p.payload = r.rest();
      return Packet{std::move(p)};
    }
    case PacketType::Puback:
      return decode_ack<PacketType::Puback>(r, flags, v5);
    case PacketType::Pubrec:
      return decode_ack<PacketType::Pubrec>(r, flags, v5);
    case PacketType::Pubrel:
      return decode_ack<PacketType::Pubrel>(r, flags, v5);
    case PacketType::Pubcomp:
      return decode_ack<PacketType::Pubcomp>(r, flags, v5);
    case PacketType::Subscribe: {
      if (flags != kSubscribeFlags) return CodecError::MalformedPacket;
      Subscribe s;
      if (!r.u16(s.packet_id) || s.packet_id == 0) return CodecError::MalformedPacket;
      if (v5 && !r.properties(s.properties)) return CodecError::MalformedPacket;
      while (!r.empty()) {
        Subscription sub;
        if (!r.str(sub.filter) || !r.u8(sub.options)) return CodecError::MalformedPacket;
        if (sub.qos() > 2) return CodecError::MalformedPacket;
        s.subscriptions.push_back(std::move(sub));
      }
      if (s.subscriptions.empty()) return CodecError::MalformedPacket;
      return Packet{std::move(s)};
    }
    case PacketType::Suback: {
      if (flags != 0) return CodecError::MalformedPacket;
      Suback s;
      if (!r.u16(s.packet_id)) return CodecError::MalformedPacket;
      if (v5 && !r.properties(s.properties)) return CodecError::MalformedPacket;
      s.reason_codes = r.rest();
      return Packet{std::move(s)};
    }
    case PacketType::Pingreq: {
      if (flags != 0) return CodecError::MalformedPacket;
      Pingreq p;
      if (r.remaining() == 0) return Packet{p};
      if (r.remaining() != kBpduSize) return CodecError::InvalidBpduLength;
      Bytes body = r.rest();
      auto bpdu = decode_bpdu(body);
      if (!bpdu) return bpdu.error();
      p.bpdu = *bpdu;
      return Packet{p};
    }
    case PacketType::Pingresp:
      if (flags != 0 || !r.empty()) return CodecError::MalformedPacket;
      return Packet{Pingresp{}};
    case PacketType::Disconnect: {
      if (flags != 0) return CodecError::MalformedPacket;
      Disconnect d;
      if (v5) {
        if (!r.empty() && !r.u8(d.reason_code)) return CodecError::MalformedPacket;
        if (!r.empty() && !r.properties(d.properties)) return CodecError::MalformedPacket;
      }
      if (!r.empty()) return CodecError::MalformedPacket;
      return Packet{std::move(d)};
    }
  }
  return CodecError::UnknownPacketType;
}

bool known_type(std::uint8_t t) {
  return (t >= 1 && t <= 9) || t == 12 || t == 13 || t == 14;
}

}  // namespace

const char* to_string(CodecError error) {
  switch (error) {
    case CodecError::Truncated: return "truncated";
    case CodecError::MalformedRemainingLength: return "malformed remaining length";
    case CodecError::UnknownPacketType: return "unknown packet type";
    case CodecError::MalformedPacket: return "malformed packet";
    case CodecError::InvalidBpduLength: return "invalid BPDU length";
    case CodecError::UnsupportedProtocolVersion: return "unsupported protocol version";
  }
  return "?";
}

PacketType packet_type(const Packet& packet) {
  return std::visit(
      [](const auto& p) -> PacketType {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, Connect>) return PacketType::Connect;
        else if constexpr (std::is_same_v<T, Connack>) return PacketType::Connack;
        else if constexpr (std::is_same_v<T, Publish>) return PacketType::Publish;
        else if constexpr (std::is_same_v<T, Subscribe>) return PacketType::Subscribe;
        else if constexpr (std::is_same_v<T, Suback>) return PacketType::Suback;
        else if constexpr (std::is_same_v<T, Pingreq>) return PacketType::Pingreq;
        else if constexpr (std::is_same_v<T, Pingresp>) return PacketType::Pingresp;
        else if constexpr (std::is_same_v<T, Disconnect>) return PacketType::Disconnect;
        else return T::kType;
      },
      packet);
}

const char* to_string(PacketType type) {
  switch (type) {
    case PacketType::Connect: return "CONNECT";
    case PacketType::Connack: return "CONNACK";
    case PacketType::Publish: return "PUBLISH";
    case PacketType::Puback: return "PUBACK";
    case PacketType::Pubrec: return "PUBREC";
    case PacketType::Pubrel: return "PUBREL";
    case PacketType::Pubcomp: return "PUBCOMP";
    case PacketType::Subscribe: return "SUBSCRIBE";
    case PacketType::Suback: return "SUBACK";
    case PacketType::Pingreq: return "PINGREQ";
    case PacketType::Pingresp: return "PINGRESP";
    case PacketType::Disconnect: return "DISCONNECT";
  }
  return "?";
}

void encode_varint(std::uint32_t value, Bytes& out) {
  do {
    auto b = static_cast<std::uint8_t>(value & 0x7f);
    value >>= 7;
    if (value) b |= 0x80;
    out.push_back(b);
  } while (value);
}

void encode_bpdu(const BpduPayload& bpdu, Bytes& out) {
  if (bpdu.root_capability > kMaxCapability) throw EncodeError("root capability exceeds 48 bits");
  Writer w(out);
  w.be(bpdu.root_id.ip, 4);
  w.u16(bpdu.root_id.port);
  w.be(bpdu.sender_id.ip, 4);
  w.u16(bpdu.sender_id.port);
  w.be(bpdu.sender_capability, 8);
  w.be(bpdu.root_path_cost_us, 8);
  w.u8(static_cast<std::uint8_t>((bpdu.tc_flag ? 1 : 0) | (bpdu.root_connection ? 2 : 0)));
  w.be(bpdu.root_capability, 6);
  w.u8(bpdu.hops);
}

Expected<BpduPayload, CodecError> decode_bpdu(std::span<const std::uint8_t> bytes) {
  if (bytes.size() != kBpduSize) return CodecError::InvalidBpduLength;
  Reader r(bytes);
  BpduPayload b;
  std::uint64_t v = 0;
  std::uint8_t tc = 0;
  r.be(v, 4);
  b.root_id.ip = static_cast<std::uint32_t>(v);
  r.u16(b.root_id.port);
  r.be(v, 4);
  b.sender_id.ip = static_cast<std::uint32_t>(v);
  r.u16(b.sender_id.port);
  r.be(b.sender_capability, 8);
  r.be(b.root_path_cost_us, 8);
  r.u8(tc);
  if (tc > 3) return CodecError::MalformedPacket;
  b.tc_flag = (tc & 1) != 0;
  b.root_connection = (tc & 2) != 0;
  r.be(b.root_capability, 6);
  r.u8(b.hops);
  return b;
}

void encode_packet(const Packet& packet, ProtocolVersion version, Bytes& out) {
  const bool v5 = version == ProtocolVersion::V5;
  Bytes body;
  Writer w(body);
  std::uint8_t flags = std::visit(
      [&](const auto& p) -> std::uint8_t {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, Connect>) return encode_body(p, w);
        else if constexpr (std::is_same_v<T, Pingreq>) return encode_body(p, w, v5, body);
        else if constexpr (std::is_same_v<T, Pingresp>) return 0;
        else return encode_body(p, w, v5);
      },
      packet);
  if (body.size() > kMaxRemainingLength) throw EncodeError("packet exceeds maximum remaining length");
  out.push_back(static_cast<std::uint8_t>((static_cast<std::uint8_t>(packet_type(packet)) << 4) | flags));
  encode_varint(static_cast<std::uint32_t>(body.size()), out);
  out.insert(out.end(), body.begin(), body.end());
}

Bytes encode_packet(const Packet& packet, ProtocolVersion version) {
  Bytes out;
  encode_packet(packet, version, out);
  return out;
}

Expected<std::optional<std::size_t>, CodecError> frame_length(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) return std::optional<std::size_t>{};
  std::uint32_t remaining = 0;
  for (std::size_t i = 1; i <= 4; ++i) {
    if (i >= bytes.size()) return std::optional<std::size_t>{};
    const auto b = bytes[i];
    remaining |= static_cast<std::uint32_t>(b & 0x7f) << (7 * (i - 1));
    if ((b & 0x80) == 0) {
      // Overlong encodings (a trailing zero continuation) are rejected.
      if (i > 1 && b == 0) return CodecError::MalformedRemainingLength;
      const std::size_t total = 1 + i + remaining;
      if (bytes.size() < total) return std::optional<std::size_t>{};
      return std::optional<std::size_t>{total};
    }
  }
  return CodecError::MalformedRemainingLength;
}

Expected<Packet, CodecError> decode_packet(std::span<const std::uint8_t> bytes, ProtocolVersion version) {
  if (bytes.empty()) return CodecError::Truncated;
  const std::uint8_t type = bytes[0] >> 4;
  const std::uint8_t flags = bytes[0] & 0x0f;
  auto frame = frame_length(bytes);
  if (!frame) return frame.error();
  if (!known_type(type)) return CodecError::UnknownPacketType;
  if (!frame->has_value()) {
    // Either the length bytes themselves or the body are cut short.
    return CodecError::Truncated;
  }
  const std::size_t total = **frame;
  if (total != bytes.size()) return CodecError::MalformedPacket;
  std::size_t header = 2;
  while (bytes[header - 1] & 0x80) ++header;
  Reader r(bytes.subspan(header));
  return decode_body(static_cast<PacketType>(type), flags, r, version == ProtocolVersion::V5);
}

}  // namespace mqttst::wire
