#include "mqttst/harness/verify.hpp"

#include <cmath>
#include <limits>
#include <queue>

namespace mqttst::harness {

Edge make_edge(const std::string& a, const std::string& b) { return a < b ? Edge{a, b} : Edge{b, a}; }

ExpectedTree expected_tree(const TopologySpec& spec, const std::vector<BrokerId>& ids,
                           const std::set<std::string>& alive) {
  const int n = static_cast<int>(spec.brokers.size());
  std::vector<std::uint64_t> cap(n);
  for (int i = 0; i < n; ++i) {
    cap[i] = tree::compute_capability(spec.brokers[i].cpu_mhz, spec.brokers[i].ram_mb, spec.alpha, spec.beta);
  }
  auto up = [&](int i) { return alive.contains(spec.brokers[i].name); };
  // Preference used both for the root and for equal-cost parents.
  auto better = [&](int a, int b) { return cap[a] != cap[b] ? cap[a] > cap[b] : ids[a] < ids[b]; };

  std::vector<std::vector<std::pair<int, std::uint64_t>>> adj(n);
  for (const auto& l : spec.links) {
    const int a = spec.index_of(l.a), b = spec.index_of(l.b);
    if (!up(a) || !up(b)) continue;
    const auto rtt = static_cast<std::uint64_t>(std::llround(2 * l.delay_ms * 1000));
    adj[a].emplace_back(b, rtt);
    adj[b].emplace_back(a, rtt);
  }

  ExpectedTree out;
  int root = -1;
  for (int i = 0; i < n; ++i) {
    if (up(i) && (root < 0 || better(i, root))) root = i;
  }
  if (root < 0) return out;
  out.root = spec.brokers[root].name;

  constexpr auto kInf = std::numeric_limits<std::uint64_t>::max();
  std::vector<std::uint64_t> dist(n, kInf);
  using Item = std::pair<std::uint64_t, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  dist[root] = 0;
  pq.push({0, root});
  while (!pq.empty()) {
    auto [d, u] = pq.top();
    pq.pop();
    if (d != dist[u]) continue;
    for (auto [v, w] : adj[u]) {
      if (d + w < dist[v]) {
        dist[v] = d + w;
        pq.push({dist[v], v});
      }
    }
  }
  for (int v = 0; v < n; ++v) {
    if (dist[v] == kInf) continue;
    out.cost_us[spec.brokers[v].name] = dist[v];
    if (v == root) continue;
    int parent = -1;
    for (auto [u, w] : adj[v]) {
      if (dist[u] == kInf || dist[u] + w != dist[v]) continue;
      if (parent < 0 || better(u, parent)) parent = u;
    }
    if (parent >= 0) out.edges.insert(make_edge(spec.brokers[v].name, spec.brokers[parent].name));
  }
  return out;
}

std::set<Edge> forwarding_edges(const std::map<std::string, ObservedBroker>& observed) {
  std::set<Edge> out;
  for (const auto& [name, b] : observed) {
    for (const auto& [peer, role] : b.roles) {
      auto other = observed.find(peer);
      if (other == observed.end()) continue;
      auto back = other->second.roles.find(name);
      if (back == other->second.roles.end()) continue;
      if (role == tree::Role::Root && back->second == tree::Role::Designated) out.insert(make_edge(name, peer));
    }
  }
  return out;
}

std::string format_edges(const std::set<Edge>& edges) {
  std::string s;
  for (const auto& [a, b] : edges) {
    if (!s.empty()) s += ' ';
    s += a + "-" + b;
  }
  return s.empty() ? "(none)" : s;
}

TreeCheck verify_tree(const ExpectedTree& expected, const std::map<std::string, ObservedBroker>& observed) {
  TreeCheck check;
  check.expected = expected.edges;
  check.observed = forwarding_edges(observed);
  auto role_of = [&](const std::string& at, const std::string& peer) -> std::string {
    auto b = observed.find(at);
    if (b == observed.end()) return "absent";
    auto r = b->second.roles.find(peer);
    return r == b->second.roles.end() ? "none" : tree::to_string(r->second);
  };
  for (const auto& [name, b] : observed) {
    if (b.root != expected.root) {
      check.problems.push_back(name + " believes root is " + b.root + ", expected " + expected.root);
    }
    int root_roles = 0;
    for (const auto& [peer, role] : b.roles) root_roles += role == tree::Role::Root;
    if (root_roles != (name == expected.root ? 0 : 1)) {
      check.problems.push_back(name + " has " + std::to_string(root_roles) + " Root connections");
    }
  }
  for (const auto& e : expected.edges) {
    if (check.observed.contains(e)) continue;
    check.problems.push_back("missing edge " + e.first + "-" + e.second + " (" + e.first + ":" +
                             role_of(e.first, e.second) + " " + e.second + ":" + role_of(e.second, e.first) + ")");
  }
  for (const auto& e : check.observed) {
    if (expected.edges.contains(e)) continue;
    check.problems.push_back("unexpected edge " + e.first + "-" + e.second + " (" + e.first + ":" +
                             role_of(e.first, e.second) + " " + e.second + ":" + role_of(e.second, e.first) + ")");
  }
  check.pass = check.problems.empty();
  return check;
}

}  // namespace mqttst::harness
