#include "mqttst/broker_id.hpp"

#include <charconv>

namespace mqttst {

std::string BrokerId::ip_string() const {
  return std::to_string((ip >> 24) & 0xff) + "." + std::to_string((ip >> 16) & 0xff) + "." +
         std::to_string((ip >> 8) & 0xff) + "." + std::to_string(ip & 0xff);
}

std::string BrokerId::to_string() const { return ip_string() + ":" + std::to_string(port); }

std::optional<std::uint32_t> BrokerId::parse_ipv4(std::string_view text) {
  std::uint32_t out = 0;
  for (int octet = 0; octet < 4; ++octet) {
    if (octet > 0) {
      if (text.empty() || text.front() != '.') return std::nullopt;
      text.remove_prefix(1);
    }
    unsigned value = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || ptr == text.data() || value > 255) return std::nullopt;
    text.remove_prefix(static_cast<std::size_t>(ptr - text.data()));
    out = (out << 8) | value;
  }
  if (!text.empty()) return std::nullopt;
  return out;
}

std::optional<BrokerId> BrokerId::parse(std::string_view text) {
  auto colon = text.rfind(':');
  if (colon == std::string_view::npos) return std::nullopt;
  auto ip = parse_ipv4(text.substr(0, colon));
  if (!ip) return std::nullopt;
  auto port_text = text.substr(colon + 1);
  unsigned port = 0;
  auto [ptr, ec] = std::from_chars(port_text.data(), port_text.data() + port_text.size(), port);
  if (ec != std::errc{} || ptr != port_text.data() + port_text.size() || port > 0xffff) {
    return std::nullopt;
  }
  return BrokerId{*ip, static_cast<std::uint16_t>(port)};
}

}  // namespace mqttst
