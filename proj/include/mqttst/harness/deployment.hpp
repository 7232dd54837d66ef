#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mqttst/bench/workload.hpp"
#include "mqttst/event_log.hpp"
#include "mqttst/harness/delay_proxy.hpp"
#include "mqttst/harness/process.hpp"
#include "mqttst/harness/topology.hpp"
#include "mqttst/harness/verify.hpp"

// A running set of broker processes wired through delay proxies, observed
// through the CSV event logs the brokers write.

namespace mqttst::harness {

struct DeployOptions {
  std::string broker_bin;
  std::filesystem::path dir;
  std::string log_level = "warn";
};

struct BrokerStatus {
  std::string name;
  BrokerId id;
  std::uint64_t capability = 0;
  bool alive = false;
  bool killed = false;  // stopped on purpose
  std::optional<ObservedBroker> state;
  tree::Timestamp last_state_change{};
  std::map<std::string, std::uint64_t> stats;
};

struct TimelineRow {
  tree::Timestamp t{};
  std::string source;
  std::string kind;
  std::string detail;
};

struct Quiescence {
  bool reached = false;
  /// Time of the last role or root change before the quiet period.
  tree::Timestamp settled_at{};
  std::string detail;
};

class Deployment {
 public:
  static Expected<std::unique_ptr<Deployment>, std::string> start(TopologySpec spec, DeployOptions options);
  ~Deployment();

  const TopologySpec& spec() const { return spec_; }
  const std::vector<BrokerId>& ids() const { return ids_; }
  const DeployOptions& options() const { return options_; }

  /// Reads new rows from every broker log and checks the processes.
  void poll();
  const BrokerStatus& broker(int i) const { return status_[static_cast<std::size_t>(i)]; }
  std::set<std::string> alive_names() const;
  std::map<std::string, ObservedBroker> observed() const;
  /// Root all live brokers agree on, if they do.
  std::optional<std::string> agreed_root() const;
  /// Names of brokers that exited without being killed.
  std::vector<std::string> crashed() const;

  /// Waits until all live brokers agree on the root, every link between live
  /// brokers is up, and no role changed for three hello intervals.
  Quiescence wait_quiescent(std::chrono::seconds timeout);
  tree::Micros quiet_period() const;

  void kill(const std::string& name);
  std::optional<std::string> restore(const std::string& name);

  /// Connection targets for the client groups, through delay proxies where asked.
  Expected<std::vector<bench::BenchTarget>, std::string> targets(const std::vector<ClientGroup>& groups);
  /// Sum over brokers of a counter from their latest stats rows.
  std::uint64_t stat_sum(const std::string& key) const;
  /// Polls until every live broker wrote a stats row after `t`.
  void wait_fresh_stats(tree::Timestamp t, std::chrono::milliseconds timeout);

  void note(const std::string& kind, const std::string& detail);
  std::vector<TimelineRow> timeline() const;
  std::filesystem::path log_path(int i) const;
  const std::vector<EventRecord>& events(int i) const { return events_[static_cast<std::size_t>(i)]; }

 private:
  Deployment(TopologySpec spec, DeployOptions options);
  std::optional<std::string> launch(int i);
  void ingest(int i, const EventRecord& r);

  struct Reader {
    std::uintmax_t offset = 0;
    std::string partial;
  };

  TopologySpec spec_;
  DeployOptions options_;
  std::vector<BrokerId> ids_;
  std::vector<BrokerStatus> status_;
  std::vector<Process> procs_;
  std::vector<Reader> readers_;
  std::vector<std::vector<EventRecord>> events_;
  std::vector<tree::Timestamp> last_stats_;
  std::vector<TimelineRow> notes_;
  std::map<std::pair<std::string, long long>, std::uint16_t> client_routes_;
  DelayProxy proxy_;
};

tree::Role role_from_string(const std::string& s);
/// Parses a "state" detail into root and roles, naming brokers through `ids`.
std::optional<ObservedBroker> parse_state(const std::string& detail, const std::vector<BrokerId>& ids,
                                          const std::vector<std::string>& names);

}  // namespace mqttst::harness
