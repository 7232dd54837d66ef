#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mqttst/bench/workload.hpp"
#include "mqttst/harness/deployment.hpp"

namespace mqttst::harness {

struct RunOptions {
  std::string broker_bin;
  std::filesystem::path out_dir;
  std::uint64_t seed = 1;
  std::optional<double> duration_s;  // overrides the workload duration
  std::chrono::seconds converge_timeout{120};
  std::string log_level = "warn";
};

struct ConvergeOutcome {
  bool quiescent = false;
  /// From the last disruption (start, kill, restore) to the last role change.
  double seconds = 0;
  TreeCheck check;
  std::string detail;
  bool pass() const { return quiescent && check.pass; }
};

struct WorkloadOutcome {
  std::string scenario;
  std::uint32_t brokers = 0;  // live brokers during the run
  bench::WorkloadSpec spec;
  bench::WorkloadResult result;
  std::uint64_t inter_broker_publishes = 0;
  bool replication_exact = false;  // inter-broker publishes == published * (brokers - 1)
  bool pass() const { return result.conserved() && replication_exact && result.starved_subscribers == 0; }
};

struct StepRecord {
  std::string label;
  bool pass = true;
  std::string detail;
};

struct RunReport {
  bool pass = true;
  std::vector<StepRecord> steps;
  std::vector<ConvergeOutcome> convergences;
  std::vector<WorkloadOutcome> workloads;
  std::filesystem::path dir;
};

ConvergeOutcome converge(Deployment& d, std::chrono::seconds timeout, tree::Timestamp disrupted_at);

Expected<WorkloadOutcome, std::string> run_workload_on(Deployment& d, const std::vector<ClientGroup>& groups,
                                                       const WorkloadDesc& w, std::uint64_t seed,
                                                       const std::string& scenario);

/// Deploys, performs every step, writes the report directory and tears down.
Expected<RunReport, std::string> run_scenario(const TopologySpec& spec, const RunOptions& options);

/// Writes topology, broker table, timeline, byte counters and tree checks for a deployment.
void write_report(Deployment& d, const RunReport& report);

struct VerifyResult {
  bool conclusive = false;
  TreeCheck check;
  std::string text;
  bool pass() const { return conclusive && check.pass; }
};

/// Re-checks the final tree recorded in a report directory against the reference.
Expected<VerifyResult, std::string> verify_report(const std::filesystem::path& dir);

std::string format_topology(const TopologySpec& spec);

/// mqttst-broker next to the running executable, if present.
std::string default_broker_bin();

}  // namespace mqttst::harness
