#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "mqttst/expected.hpp"

namespace mqttst::bench {

struct BenchTarget {
  std::string host;
  std::uint16_t port = 1883;
  std::uint32_t publishers = 0;
  std::uint32_t subscribers = 0;

  /// "host:port:publishers:subscribers"
  static std::optional<BenchTarget> parse(const std::string& text);
};

struct WorkloadSpec {
  std::vector<BenchTarget> targets;
  std::uint32_t message_size = 64;
  std::uint32_t topic_count = 10;
  std::uint8_t qos = 2;
  std::uint8_t subscribe_qos = 2;
  std::chrono::milliseconds duration{5000};
  /// When set, every publisher sends exactly this many messages and the
  /// duration only bounds the run.
  std::optional<std::uint64_t> messages_per_publisher;
  /// Gap between a completed publish and the next one; zero publishes back to back.
  std::chrono::microseconds publish_interval{0};
  std::chrono::milliseconds drain{5000};
  std::chrono::milliseconds settle{300};
  std::uint64_t seed = 1;
  std::string topic_prefix = "bench";
  std::string client_prefix = "bench";
};

struct LatencyStats {
  std::uint64_t count = 0;
  double mean_ms = 0;
  double p50_ms = 0;
  double p95_ms = 0;
  double max_ms = 0;
};

struct WorkloadResult {
  double elapsed_s = 0;
  std::uint64_t published = 0;
  std::uint64_t received = 0;
  std::uint64_t expected = 0;
  std::uint64_t duplicates = 0;
  double throughput = 0;  // completed publishes per second, all publishers
  LatencyStats latency;
  std::uint32_t starved_subscribers = 0;
  std::vector<std::uint64_t> per_publisher;
  std::vector<std::uint64_t> per_subscriber;
  std::vector<double> samples_ms;

  bool conserved() const { return received == expected && duplicates == 0; }
};

/// Topic index of publisher i / subscriber j; a function of the seed only.
std::uint32_t publisher_topic(const WorkloadSpec& spec, std::uint32_t index);
std::uint32_t subscriber_topic(const WorkloadSpec& spec, std::uint32_t index);
std::string topic_name(const WorkloadSpec& spec, std::uint32_t topic);

LatencyStats summarize(std::vector<double> samples_ms);

Expected<WorkloadResult, std::string> run_workload(const WorkloadSpec& spec);

void write_csv_header(std::ostream& out);
void write_csv_row(std::ostream& out, const std::string& scenario, std::uint32_t brokers, const WorkloadSpec& spec,
                   const WorkloadResult& result);

}  // namespace mqttst::bench
