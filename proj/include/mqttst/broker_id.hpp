#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>

namespace mqttst {

/// Broker identity: IPv4 address plus listen port. The derived ordering
/// (address as a big-endian integer, then port) is the tie-break used for
/// root election and connection classification.
struct BrokerId {
  std::uint32_t ip = 0;
  std::uint16_t port = 0;

  auto operator<=>(const BrokerId&) const = default;

  std::string to_string() const;
  std::string ip_string() const;

  // "a.b.c.d:port"
  static std::optional<BrokerId> parse(std::string_view text);
  static std::optional<std::uint32_t> parse_ipv4(std::string_view text);

  std::uint64_t packed() const { return (std::uint64_t{ip} << 16) | port; }
};

}  // namespace mqttst

template <>
struct std::hash<mqttst::BrokerId> {
  std::size_t operator()(const mqttst::BrokerId& id) const noexcept {
    return std::hash<std::uint64_t>{}(id.packed());
  }
};
