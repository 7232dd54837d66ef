#include "mqttst/bridge/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "mqttst/broker_id.hpp"

namespace mqttst::bridge {

namespace {

template <class T>
bool parse_number(std::string_view text, T& out) {
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, out);
  return ec == std::errc{} && ptr == end;
}

bool parse_double(const std::string& text, double& out) {
  try {
    std::size_t used = 0;
    out = std::stod(text, &used);
    return used == text.size();
  } catch (const std::exception&) {
    return false;
  }
}

}  // namespace

std::string PeerAddress::to_string() const { return host + ":" + std::to_string(port); }

std::optional<PeerAddress> PeerAddress::parse(std::string_view text) {
  const auto colon = text.rfind(':');
  if (colon == std::string_view::npos || colon == 0) return std::nullopt;
  PeerAddress a;
  a.host = std::string(text.substr(0, colon));
  if (!parse_number(text.substr(colon + 1), a.port) || a.port == 0) return std::nullopt;
  return a;
}

std::optional<std::string> BridgeConfig::validate() const {
  if (keep_alive_s == 0) return "keep_alive must be positive";
  if (!std::isfinite(alpha) || !std::isfinite(beta) || alpha < 0 || beta < 0) {
    return "alpha and beta must be finite and non-negative";
  }
  if (alpha == 0 && beta == 0) return "alpha and beta cannot both be zero";
  if (listen_port == 0) return "listen_port must be nonzero";
  if (!BrokerId::parse_ipv4(address)) return "address must be an IPv4 address";
  return std::nullopt;
}

Expected<BridgeConfig, std::string> parse_config(std::istream& in, BridgeConfig cfg) {
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream words(line);
    std::string key;
    if (!(words >> key)) continue;
    std::vector<std::string> args;
    for (std::string w; words >> w;) args.push_back(w);
    auto fail = [&](const std::string& why) {
      return Expected<BridgeConfig, std::string>(
          Unexpected(std::string("line ") + std::to_string(line_no) + ": " + why));
    };
    const std::size_t want = key == "capability" ? 2 : 1;
    if (args.size() != want) return fail("'" + key + "' expects " + std::to_string(want) + " value(s)");

    if (key == "peer") {
      auto peer = PeerAddress::parse(args[0]);
      if (!peer) return fail("bad peer address '" + args[0] + "'");
      cfg.peers.push_back(*peer);
    } else if (key == "keep_alive") {
      if (!parse_number(args[0], cfg.keep_alive_s)) return fail("bad keep_alive");
    } else if (key == "alpha") {
      if (!parse_double(args[0], cfg.alpha)) return fail("bad alpha");
    } else if (key == "beta") {
      if (!parse_double(args[0], cfg.beta)) return fail("bad beta");
    } else if (key == "listen_port") {
      if (!parse_number(args[0], cfg.listen_port)) return fail("bad listen_port");
    } else if (key == "capability") {
      CapabilityOverride c;
      if (!parse_number(args[0], c.cpu_mhz) || !parse_number(args[1], c.ram_mb)) return fail("bad capability");
      cfg.capability = c;
    } else if (key == "address") {
      cfg.address = args[0];
    } else if (key == "metrics") {
      cfg.metrics_file = args[0];
    } else {
      return fail("unknown key '" + key + "'");
    }
  }
  return cfg;
}

Expected<BridgeConfig, std::string> load_config_file(const std::string& path, BridgeConfig base) {
  std::ifstream in(path);
  if (!in) return Unexpected(std::string("cannot open ") + path);
  auto cfg = parse_config(in, std::move(base));
  if (!cfg) return Unexpected(path + ": " + cfg.error());
  return cfg;
}

Expected<MachineResources, std::string> read_machine_resources(const std::string& cpuinfo,
                                                               const std::string& meminfo) {
  MachineResources r;
  std::ifstream cpu(cpuinfo);
  if (!cpu) return Unexpected("cannot read " + cpuinfo);
  double best_mhz = 0;
  for (std::string line; std::getline(cpu, line);) {
    if (!line.starts_with("cpu MHz")) continue;
    const auto colon = line.find(':');
    double mhz = 0;
    if (colon != std::string::npos && parse_double(line.substr(line.find_first_not_of(' ', colon + 1)), mhz)) {
      best_mhz = std::max(best_mhz, mhz);
    }
  }
  std::ifstream mem(meminfo);
  if (!mem) return Unexpected("cannot read " + meminfo);
  for (std::string line; std::getline(mem, line);) {
    if (!line.starts_with("MemTotal:")) continue;
    std::istringstream words(line.substr(9));
    std::uint64_t kb = 0;
    words >> kb;
    r.ram_mb = kb / 1024;
  }
  if (best_mhz <= 0 || r.ram_mb == 0) return Unexpected(std::string("no CPU speed or RAM size found"));
  r.cpu_mhz = static_cast<std::uint64_t>(std::llround(best_mhz));
  return r;
}

}  // namespace mqttst::bridge
