#pragma once

#include <cstdint>
#include <istream>
#include <optional>
#include <string>
#include <vector>

#include "mqttst/expected.hpp"

// Plain-text description of a harness run: brokers, injected link delays,
// client placement, workload and the sequence of steps to perform.

namespace mqttst::harness {

struct BrokerSpec {
  std::string name;
  std::uint64_t cpu_mhz = 1000;
  std::uint64_t ram_mb = 1000;
  std::uint16_t port = 0;  // 0 picks a free port
};

struct LinkSpec {
  std::string a;
  std::string b;
  double delay_ms = 0;  // one way, applied in both directions
};

enum class ScenarioKind { Benchmark, Distributed, Locality };

struct Scenario {
  ScenarioKind kind = ScenarioKind::Distributed;
  int locality_percent = 100;
};

/// Clients attached to one broker, optionally behind an injected delay.
struct ClientGroup {
  std::string broker;
  std::uint32_t publishers = 0;
  std::uint32_t subscribers = 0;
  double delay_ms = 0;
};

struct WorkloadDesc {
  std::uint32_t publishers = 0;
  std::uint32_t subscribers = 0;
  std::uint32_t message_size = 64;
  std::uint32_t topics = 10;
  double duration_s = 5;
  std::optional<std::uint64_t> count;  // messages per publisher
  std::uint8_t qos = 2;
};

struct Step {
  enum class Kind { Converge, Workload, Kill, Restore, Sleep };
  Kind kind = Kind::Converge;
  std::string target;  // broker name, or "root" for kill
  double seconds = 0;
};

struct TopologySpec {
  std::string name = "run";
  std::uint16_t keep_alive_s = 10;
  double alpha = 1;
  double beta = 1;
  std::vector<BrokerSpec> brokers;
  std::vector<LinkSpec> links;
  Scenario scenario;
  std::optional<WorkloadDesc> workload;
  std::vector<ClientGroup> clients;  // explicit placement; overrides the scenario split
  std::vector<Step> steps;           // default: converge, then workload if any

  /// First problem found, if any.
  std::optional<std::string> validate() const;
  int index_of(const std::string& broker) const;
  /// Explicit client lines, or the split implied by the scenario.
  std::vector<ClientGroup> placement() const;
  std::vector<Step> effective_steps() const;
};

/// Line format:
///   name <text>
///   keep_alive <s>            alpha <w>            beta <w>
///   broker <name> capability <cpu_mhz> <ram_mb> [port <p>]
///   link <a> <b> <one-way delay ms>
///   scenario benchmark | distributed | locality <percent>
///   workload publishers <N> subscribers <M> [size <b>] [topics <t>] [duration <s>] [count <n>] [qos <q>]
///   clients <broker> <publishers> <subscribers> [delay <ms>]
///   step converge | workload | kill <broker|root> | restore <broker> | sleep <s>
/// '#' starts a comment.
Expected<TopologySpec, std::string> parse_topology(std::istream& in);
Expected<TopologySpec, std::string> load_topology(const std::string& path);

std::string to_string(ScenarioKind kind);

}  // namespace mqttst::harness
