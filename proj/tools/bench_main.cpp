#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "mqttst/bench/workload.hpp"
#include "mqttst/net/socket.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Publish/subscribe load generator"};
  std::vector<std::string> targets;
  mqttst::bench::WorkloadSpec spec;
  unsigned qos = 2, sub_qos = 2;
  long duration_ms = 5000, drain_ms = 5000;
  std::optional<std::uint64_t> count;
  std::optional<std::string> out_dir;
  std::string scenario = "run";
  std::uint32_t brokers = 1;
  bool samples = false;

  app.add_option("-t,--target", targets, "host:port:publishers:subscribers (repeatable)")->required();
  app.add_option("--size", spec.message_size, "Payload bytes (min 16)");
  app.add_option("--topics", spec.topic_count, "Number of topics");
  app.add_option("--qos", qos, "Publish QoS")->check(CLI::Range(0, 2));
  app.add_option("--sub-qos", sub_qos, "Subscribe QoS")->check(CLI::Range(0, 2));
  app.add_option("--duration", duration_ms, "Publish window in ms");
  app.add_option("--drain", drain_ms, "Max wait for outstanding deliveries in ms");
  app.add_option("--count", count, "Messages per publisher instead of a time window");
  app.add_option("--seed", spec.seed, "Seed for topic assignment");
  app.add_option("--prefix", spec.client_prefix, "Client id prefix");
  app.add_option("--out", out_dir, "Directory for results.csv (appended)");
  app.add_option("--scenario", scenario, "Scenario label for the CSV row");
  app.add_option("--brokers", brokers, "Broker count for the CSV row");
  app.add_flag("--samples", samples, "Also write every latency sample to latency_<scenario>.csv");
  CLI11_PARSE(app, argc, argv);

  for (const auto& t : targets) {
    auto parsed = mqttst::bench::BenchTarget::parse(t);
    if (!parsed) {
      std::cerr << "bad --target '" << t << "'\n";
      return 2;
    }
    spec.targets.push_back(*parsed);
  }
  spec.qos = static_cast<std::uint8_t>(qos);
  spec.subscribe_qos = static_cast<std::uint8_t>(sub_qos);
  spec.duration = std::chrono::milliseconds(duration_ms);
  spec.drain = std::chrono::milliseconds(drain_ms);
  spec.messages_per_publisher = count;
  mqttst::net::raise_fd_limit();

  auto result = mqttst::bench::run_workload(spec);
  if (!result) {
    std::cerr << "bench failed: " << result.error() << '\n';
    return 1;
  }
  mqttst::bench::write_csv_header(std::cout);
  mqttst::bench::write_csv_row(std::cout, scenario, brokers, spec, *result);

  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    const auto path = std::filesystem::path(*out_dir) / "results.csv";
    const bool fresh = !std::filesystem::exists(path);
    std::ofstream out(path, std::ios::app);
    if (fresh) mqttst::bench::write_csv_header(out);
    mqttst::bench::write_csv_row(out, scenario, brokers, spec, *result);
    if (samples) {
      std::ofstream s(std::filesystem::path(*out_dir) / ("latency_" + scenario + ".csv"));
      s << "delay_ms\n";
      for (double v : result->samples_ms) s << v << '\n';
    }
  }
  if (!result->conserved()) {
    std::cerr << "conservation violated: received " << result->received << " expected " << result->expected
              << " duplicates " << result->duplicates << '\n';
    return 3;
  }
  return 0;
}
