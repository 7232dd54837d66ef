#include "mqttst/harness/topology.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace mqttst::harness {

namespace {

template <class T>
bool parse_int(const std::string& s, T& out) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && p == s.data() + s.size();
}

bool parse_real(const std::string& s, double& out) {
  try {
    std::size_t used = 0;
    out = std::stod(s, &used);
    return used == s.size() && out >= 0;
  } catch (const std::exception&) {
    return false;
  }
}

// Reads "key value" pairs from args[from..] into a map; false on odd counts.
bool options(const std::vector<std::string>& args, std::size_t from, std::map<std::string, std::string>& out) {
  if ((args.size() - from) % 2 != 0) return false;
  for (std::size_t i = from; i < args.size(); i += 2) out[args[i]] = args[i + 1];
  return true;
}

}  // namespace

std::string to_string(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::Benchmark: return "benchmark";
    case ScenarioKind::Distributed: return "distributed";
    case ScenarioKind::Locality: return "locality";
  }
  return "?";
}

int TopologySpec::index_of(const std::string& broker) const {
  for (std::size_t i = 0; i < brokers.size(); ++i) {
    if (brokers[i].name == broker) return static_cast<int>(i);
  }
  return -1;
}

std::optional<std::string> TopologySpec::validate() const {
  if (brokers.empty()) return "no brokers";
  std::set<std::string> names;
  std::set<std::uint16_t> ports;
  for (const auto& b : brokers) {
    if (!names.insert(b.name).second) return "duplicate broker " + b.name;
    if (b.port != 0 && !ports.insert(b.port).second) return "duplicate port " + std::to_string(b.port);
  }
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& l : links) {
    if (index_of(l.a) < 0 || index_of(l.b) < 0) return "link " + l.a + "-" + l.b + " names an unknown broker";
    if (l.a == l.b) return "link from " + l.a + " to itself";
    if (!seen.insert(std::minmax(l.a, l.b)).second) return "duplicate link " + l.a + "-" + l.b;
  }
  if (scenario.kind == ScenarioKind::Benchmark && brokers.size() != 1) return "benchmark needs exactly one broker";
  if (scenario.kind == ScenarioKind::Locality && (scenario.locality_percent < 0 || scenario.locality_percent > 100)) {
    return "locality percent out of range";
  }
  for (const auto& c : clients) {
    if (index_of(c.broker) < 0) return "clients on unknown broker " + c.broker;
  }
  if (keep_alive_s == 0) return "keep_alive must be positive";
  for (const auto& s : steps) {
    if ((s.kind == Step::Kind::Kill && s.target != "root") || s.kind == Step::Kind::Restore) {
      if (index_of(s.target) < 0) return "step names unknown broker " + s.target;
    }
    if (s.kind == Step::Kind::Workload && !workload) return "workload step without a workload line";
  }
  return std::nullopt;
}

std::vector<ClientGroup> TopologySpec::placement() const {
  if (!clients.empty()) return clients;
  std::vector<ClientGroup> out;
  if (!workload) return out;
  const auto k = static_cast<std::uint32_t>(brokers.size());
  const std::uint32_t n = workload->publishers;
  const std::uint32_t m = workload->subscribers;
  switch (scenario.kind) {
    case ScenarioKind::Benchmark:
      out.push_back({brokers[0].name, n, m, 0});
      break;
    case ScenarioKind::Distributed:
      for (std::uint32_t i = 0; i < k; ++i) {
        out.push_back({brokers[i].name, n / k + (i < n % k ? 1 : 0), m / k + (i < m % k ? 1 : 0), 0});
      }
      break;
    case ScenarioKind::Locality: {
      // Every publisher on the first broker, the given share of subscribers
      // with them and the rest spread over the other brokers.
      const auto local = static_cast<std::uint32_t>(static_cast<std::uint64_t>(m) * scenario.locality_percent / 100);
      std::uint32_t remote = m - local;
      out.push_back({brokers[0].name, n, k == 1 ? m : local, 0});
      if (k == 1) break;
      for (std::uint32_t i = 1; i < k; ++i) {
        const std::uint32_t share = remote / (k - 1) + (i - 1 < remote % (k - 1) ? 1 : 0);
        out.push_back({brokers[i].name, 0, share, 0});
      }
      break;
    }
  }
  return out;
}

std::vector<Step> TopologySpec::effective_steps() const {
  if (!steps.empty()) return steps;
  std::vector<Step> out{{Step::Kind::Converge, "", 0}};
  if (workload) out.push_back({Step::Kind::Workload, "", 0});
  return out;
}

Expected<TopologySpec, std::string> parse_topology(std::istream& in) {
  TopologySpec spec;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream words(line);
    std::vector<std::string> a;
    for (std::string w; words >> w;) a.push_back(w);
    if (a.empty()) continue;
    auto fail = [&](const std::string& why) {
      return Expected<TopologySpec, std::string>(Unexpected("line " + std::to_string(line_no) + ": " + why));
    };
    const std::string& key = a[0];

    if (key == "name" && a.size() == 2) {
      spec.name = a[1];
    } else if (key == "keep_alive" && a.size() == 2) {
      if (!parse_int(a[1], spec.keep_alive_s)) return fail("bad keep_alive");
    } else if ((key == "alpha" || key == "beta") && a.size() == 2) {
      if (!parse_real(a[1], key == "alpha" ? spec.alpha : spec.beta)) return fail("bad " + key);
    } else if (key == "broker") {
      if (a.size() < 5 || a[2] != "capability") return fail("expected: broker <name> capability <L> <R> [port <p>]");
      BrokerSpec b;
      b.name = a[1];
      if (!parse_int(a[3], b.cpu_mhz) || !parse_int(a[4], b.ram_mb)) return fail("bad capability");
      std::map<std::string, std::string> opt;
      if (!options(a, 5, opt)) return fail("dangling broker option");
      for (const auto& [k, v] : opt) {
        if (k != "port" || !parse_int(v, b.port)) return fail("bad broker option " + k);
      }
      spec.brokers.push_back(b);
    } else if (key == "link") {
      LinkSpec l;
      if (a.size() != 4 || !parse_real(a[3], l.delay_ms)) return fail("expected: link <a> <b> <delay ms>");
      l.a = a[1];
      l.b = a[2];
      spec.links.push_back(l);
    } else if (key == "scenario") {
      if (a.size() == 2 && a[1] == "benchmark") {
        spec.scenario = {ScenarioKind::Benchmark, 0};
      } else if (a.size() == 2 && a[1] == "distributed") {
        spec.scenario = {ScenarioKind::Distributed, 0};
      } else if (a.size() == 3 && a[1] == "locality") {
        spec.scenario.kind = ScenarioKind::Locality;
        if (!parse_int(a[2], spec.scenario.locality_percent)) return fail("bad locality percent");
      } else {
        return fail("expected: scenario benchmark | distributed | locality <percent>");
      }
    } else if (key == "workload") {
      WorkloadDesc w;
      std::map<std::string, std::string> opt;
      if (!options(a, 1, opt)) return fail("dangling workload option");
      for (const auto& [k, v] : opt) {
        bool ok = true;
        if (k == "publishers") {
          ok = parse_int(v, w.publishers);
        } else if (k == "subscribers") {
          ok = parse_int(v, w.subscribers);
        } else if (k == "size") {
          ok = parse_int(v, w.message_size);
        } else if (k == "topics") {
          ok = parse_int(v, w.topics) && w.topics > 0;
        } else if (k == "duration") {
          ok = parse_real(v, w.duration_s);
        } else if (k == "count") {
          std::uint64_t c = 0;
          ok = parse_int(v, c);
          w.count = c;
        } else if (k == "qos") {
          unsigned q = 0;
          ok = parse_int(v, q) && q <= 2;
          w.qos = static_cast<std::uint8_t>(q);
        } else {
          ok = false;
        }
        if (!ok) return fail("bad workload option " + k);
      }
      spec.workload = w;
    } else if (key == "clients") {
      ClientGroup c;
      if (a.size() != 4 && a.size() != 6) return fail("expected: clients <broker> <pubs> <subs> [delay <ms>]");
      c.broker = a[1];
      if (!parse_int(a[2], c.publishers) || !parse_int(a[3], c.subscribers)) return fail("bad client counts");
      if (a.size() == 6 && (a[4] != "delay" || !parse_real(a[5], c.delay_ms))) return fail("bad client delay");
      spec.clients.push_back(c);
    } else if (key == "step") {
      Step s;
      if (a.size() == 2 && a[1] == "converge") {
        s.kind = Step::Kind::Converge;
      } else if (a.size() == 2 && a[1] == "workload") {
        s.kind = Step::Kind::Workload;
      } else if (a.size() == 3 && a[1] == "kill") {
        s.kind = Step::Kind::Kill;
        s.target = a[2];
      } else if (a.size() == 3 && a[1] == "restore") {
        s.kind = Step::Kind::Restore;
        s.target = a[2];
      } else if (a.size() == 3 && a[1] == "sleep") {
        s.kind = Step::Kind::Sleep;
        if (!parse_real(a[2], s.seconds)) return fail("bad sleep");
      } else {
        return fail("unknown step");
      }
      spec.steps.push_back(s);
    } else {
      return fail("unknown or malformed line '" + key + "'");
    }
  }
  if (auto problem = spec.validate()) return Unexpected(*problem);
  return spec;
}

Expected<TopologySpec, std::string> load_topology(const std::string& path) {
  std::ifstream in(path);
  if (!in) return Unexpected("cannot open " + path);
  auto spec = parse_topology(in);
  if (!spec) return Unexpected(path + ": " + spec.error());
  return spec;
}

}  // namespace mqttst::harness
