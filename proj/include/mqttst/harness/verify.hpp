#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mqttst/broker_id.hpp"
#include "mqttst/harness/topology.hpp"
#include "mqttst/tree/engine.hpp"

namespace mqttst::harness {

using Edge = std::pair<std::string, std::string>;  // names, lexicographically ordered

Edge make_edge(const std::string& a, const std::string& b);

struct ExpectedTree {
  std::string root;
  std::set<Edge> edges;
  std::map<std::string, std::uint64_t> cost_us;
};

/// Reference tree over the injected delays: root by (capability desc, id asc),
/// shortest paths on round-trip time, equal-cost parents by (capability desc, id asc).
/// Brokers not in `alive` and their links are left out.
ExpectedTree expected_tree(const TopologySpec& spec, const std::vector<BrokerId>& ids,
                           const std::set<std::string>& alive);

/// One broker's last reported view: its root and the role of each bridge, by peer name.
struct ObservedBroker {
  std::string root;
  std::map<std::string, tree::Role> roles;
};

struct TreeCheck {
  bool pass = false;
  std::set<Edge> observed;
  std::set<Edge> expected;
  std::vector<std::string> problems;
};

/// Edges where one end is Root and the other Designated.
std::set<Edge> forwarding_edges(const std::map<std::string, ObservedBroker>& observed);

TreeCheck verify_tree(const ExpectedTree& expected, const std::map<std::string, ObservedBroker>& observed);

std::string format_edges(const std::set<Edge>& edges);

}  // namespace mqttst::harness
