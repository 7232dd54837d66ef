#include <csignal>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "mqttst/bridge/config.hpp"
#include "mqttst/event_log.hpp"
#include "mqttst/net/reactor.hpp"
#include "mqttst/node.hpp"

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MQTT broker that joins a spanning-tree broker mesh"};
  std::string config_path;
  std::vector<std::string> peers;
  std::optional<std::uint16_t> keep_alive, listen_port;
  std::optional<double> alpha, beta;
  std::vector<std::uint64_t> capability;
  std::optional<std::string> address, metrics;
  std::string log_level = "info";

  app.add_option("-c,--config", config_path, "Configuration file (key value lines)")->check(CLI::ExistingFile);
  app.add_option("--peer", peers, "Peer broker host:port (repeatable)");
  app.add_option("--keep-alive", keep_alive, "Keep Alive in seconds");
  app.add_option("--alpha", alpha, "Capability weight for CPU MHz");
  app.add_option("--beta", beta, "Capability weight for RAM MB");
  app.add_option("-p,--listen-port", listen_port, "TCP port to listen on");
  app.add_option("--capability", capability, "Override CPU MHz and RAM MB")->expected(2);
  app.add_option("--address", address, "IPv4 address this broker is known by");
  app.add_option("--metrics", metrics, "CSV event and counter log");
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error");
  CLI11_PARSE(app, argc, argv);

  spdlog::set_level(spdlog::level::from_str(log_level));

  mqttst::bridge::BridgeConfig cfg;
  if (!config_path.empty()) {
    auto loaded = mqttst::bridge::load_config_file(config_path);
    if (!loaded) {
      spdlog::error("{}", loaded.error());
      return 2;
    }
    cfg = std::move(*loaded);
  }
  for (const auto& p : peers) {
    auto peer = mqttst::bridge::PeerAddress::parse(p);
    if (!peer) {
      spdlog::error("bad --peer '{}'", p);
      return 2;
    }
    cfg.peers.push_back(*peer);
  }
  if (keep_alive) cfg.keep_alive_s = *keep_alive;
  if (alpha) cfg.alpha = *alpha;
  if (beta) cfg.beta = *beta;
  if (listen_port) cfg.listen_port = *listen_port;
  if (capability.size() == 2) cfg.capability = mqttst::bridge::CapabilityOverride{capability[0], capability[1]};
  if (address) cfg.address = *address;
  if (metrics) cfg.metrics_file = *metrics;
  if (auto problem = cfg.validate()) {
    spdlog::error("invalid configuration: {}", *problem);
    return 2;
  }

  mqttst::bridge::MachineResources resources;
  if (cfg.capability) {
    resources = {cfg.capability->cpu_mhz, cfg.capability->ram_mb};
  } else {
    auto read = mqttst::bridge::read_machine_resources();
    if (!read) {
      spdlog::error("cannot determine capability: {}", read.error());
      return 2;
    }
    resources = *read;
  }
  std::uint64_t c = 0;
  try {
    c = mqttst::tree::compute_capability(resources.cpu_mhz, resources.ram_mb, cfg.alpha, cfg.beta);
  } catch (const mqttst::tree::ConfigError& e) {
    spdlog::error("{}", e.what());
    return 2;
  }

  mqttst::net::raise_fd_limit();
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::signal(SIGPIPE, SIG_IGN);

  mqttst::EventLog log;
  if (!cfg.metrics_file.empty() && !log.open(cfg.metrics_file)) {
    spdlog::error("cannot open metrics file {}", cfg.metrics_file);
    return 2;
  }

  const auto now = mqttst::net::monotonic_now();
  const std::string bind = cfg.address;
  mqttst::Node node(cfg, c, now);
  node.set_event_sink([&](mqttst::tree::Timestamp t, const std::string& kind, const std::string& detail) {
    log.write(t, kind, detail);
    spdlog::debug("{} {}", kind, detail);
  });

  std::unique_ptr<mqttst::net::Reactor> reactor;
  try {
    reactor = std::make_unique<mqttst::net::Reactor>(node, bind, cfg.listen_port);
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  log.write(now, "start",
            "id=" + node.id().to_string() + " capability=" + std::to_string(c) + " cpu_mhz=" +
                std::to_string(resources.cpu_mhz) + " ram_mb=" + std::to_string(resources.ram_mb));
  spdlog::info("broker {} listening, capability {}", node.id().to_string(), c);

  mqttst::tree::Timestamp last_stats{};
  reactor->on_iteration = [&](mqttst::tree::Timestamp t) {
    if (t - last_stats < std::chrono::milliseconds(250)) return;
    last_stats = t;
    log.write(t, "stats", node.stats_line());
  };
  node.start(now);
  reactor->run(g_stop);
  log.write(mqttst::net::monotonic_now(), "stop", node.stats_line());
  spdlog::info("broker {} stopped", node.id().to_string());
  return 0;
}
