#include "mqttst/wire/properties.hpp"

#include <cstddef>

namespace mqttst::wire {

namespace {

enum class PropertyKind { Byte, TwoByte, FourByte, VarInt, String, Binary, StringPair, Unknown };

PropertyKind kind_of(std::uint8_t id) {
  switch (id) {
    case 0x01: case 0x17: case 0x19: case 0x24: case 0x25: case 0x28: case 0x29: case 0x2a:
      return PropertyKind::Byte;
    case 0x13: case 0x21: case 0x22: case 0x23:
      return PropertyKind::TwoByte;
    case 0x02: case 0x11: case 0x18: case 0x27:
      return PropertyKind::FourByte;
    case 0x0b:
      return PropertyKind::VarInt;
    case 0x03: case 0x08: case 0x12: case 0x15: case 0x1a: case 0x1c: case 0x1f:
      return PropertyKind::String;
    case 0x09: case 0x16:
      return PropertyKind::Binary;
    case kUserPropertyId:
      return PropertyKind::StringPair;
    default:
      return PropertyKind::Unknown;
  }
}

void append_string(Bytes& out, std::string_view s) {
  out.push_back(static_cast<std::uint8_t>(s.size() >> 8));
  out.push_back(static_cast<std::uint8_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

bool read_string(const Bytes& in, std::size_t& pos, std::string* out) {
  if (pos + 2 > in.size()) return false;
  const std::size_t n = (std::size_t{in[pos]} << 8) | in[pos + 1];
  pos += 2;
  if (pos + n > in.size()) return false;
  if (out) out->assign(in.begin() + static_cast<std::ptrdiff_t>(pos), in.begin() + static_cast<std::ptrdiff_t>(pos + n));
  pos += n;
  return true;
}

}  // namespace

void append_user_property(Bytes& properties, std::string_view key, std::string_view value) {
  properties.push_back(kUserPropertyId);
  append_string(properties, key);
  append_string(properties, value);
}

std::optional<std::string> find_user_property(const Bytes& properties, std::string_view key) {
  std::size_t pos = 0;
  while (pos < properties.size()) {
    const std::uint8_t id = properties[pos++];
    switch (kind_of(id)) {
      case PropertyKind::Byte: pos += 1; break;
      case PropertyKind::TwoByte: pos += 2; break;
      case PropertyKind::FourByte: pos += 4; break;
      case PropertyKind::VarInt: {
        int n = 0;
        while (pos < properties.size() && (properties[pos] & 0x80) && n < 3) {
          ++pos;
          ++n;
        }
        ++pos;
        break;
      }
      case PropertyKind::String:
      case PropertyKind::Binary:
        if (!read_string(properties, pos, nullptr)) return std::nullopt;
        break;
      case PropertyKind::StringPair: {
        std::string k, v;
        if (!read_string(properties, pos, &k) || !read_string(properties, pos, &v)) return std::nullopt;
        if (k == key) return v;
        break;
      }
      case PropertyKind::Unknown:
        return std::nullopt;
    }
  }
  return std::nullopt;
}

}  // namespace mqttst::wire
