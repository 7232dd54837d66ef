#pragma once

#include <cstdint>
#include <istream>
#include <optional>
#include <string>
#include <vector>

#include "mqttst/expected.hpp"

namespace mqttst::bridge {

struct PeerAddress {
  std::string host;
  std::uint16_t port = 1883;

  std::string to_string() const;
  static std::optional<PeerAddress> parse(std::string_view text);
  bool operator==(const PeerAddress&) const = default;
};

struct CapabilityOverride {
  std::uint64_t cpu_mhz = 0;
  std::uint64_t ram_mb = 0;
  bool operator==(const CapabilityOverride&) const = default;
};

struct BridgeConfig {
  std::vector<PeerAddress> peers;
  std::uint16_t keep_alive_s = 10;
  double alpha = 1.0;
  double beta = 1.0;
  std::uint16_t listen_port = 1883;
  std::optional<CapabilityOverride> capability;
  /// IPv4 address this broker is known by; forms the BrokerId with listen_port.
  std::string address = "127.0.0.1";
  /// CSV event and counter log; empty disables it.
  std::string metrics_file;

  /// Empty when valid, otherwise the first problem found.
  std::optional<std::string> validate() const;
};

/// Reads "key value" lines on top of `base`. Keys: peer host:port (repeatable),
/// keep_alive, alpha, beta, listen_port, capability L R, address, metrics.
/// '#' starts a comment.
Expected<BridgeConfig, std::string> parse_config(std::istream& in, BridgeConfig base = {});
Expected<BridgeConfig, std::string> load_config_file(const std::string& path, BridgeConfig base = {});

struct MachineResources {
  std::uint64_t cpu_mhz = 0;
  std::uint64_t ram_mb = 0;
};

/// Highest "cpu MHz" entry and MemTotal, from /proc-format files.
Expected<MachineResources, std::string> read_machine_resources(const std::string& cpuinfo = "/proc/cpuinfo",
                                                               const std::string& meminfo = "/proc/meminfo");

}  // namespace mqttst::bridge
