#include "mqttst/harness/deployment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include "mqttst/net/socket.hpp"

namespace mqttst::harness {

namespace {

using std::chrono::milliseconds;

std::uint16_t free_port() {
  auto fd = net::listen_tcp("127.0.0.1", 0);
  return fd ? net::local_port(fd->get()) : 0;
}

std::map<std::string, std::uint64_t> parse_stats(const std::string& detail) {
  std::map<std::string, std::uint64_t> out;
  std::istringstream words(detail);
  for (std::string w; words >> w;) {
    const auto eq = w.find('=');
    if (eq == std::string::npos) continue;
    try {
      out[w.substr(0, eq)] = std::stoull(w.substr(eq + 1));
    } catch (const std::exception&) {
    }
  }
  return out;
}

}  // namespace

tree::Role role_from_string(const std::string& s) {
  if (s == "root") return tree::Role::Root;
  if (s == "blocked") return tree::Role::Blocked;
  return tree::Role::Designated;
}

std::optional<ObservedBroker> parse_state(const std::string& detail, const std::vector<BrokerId>& ids,
                                          const std::vector<std::string>& names) {
  auto name_of = [&](const std::string& text) -> std::optional<std::string> {
    auto id = BrokerId::parse(text);
    if (!id) return std::nullopt;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] == *id) return names[i];
    }
    return std::nullopt;
  };
  ObservedBroker b;
  auto root = name_of(detail_field(detail, "root"));
  if (!root) return std::nullopt;
  b.root = *root;
  std::string conns = detail_field(detail, "conns");
  std::istringstream parts(conns);
  for (std::string item; std::getline(parts, item, '|');) {
    const auto colon = item.rfind(':');
    if (colon == std::string::npos) continue;
    auto peer = name_of(item.substr(0, colon));
    if (!peer) continue;
    b.roles[*peer] = role_from_string(item.substr(colon + 1));
  }
  return b;
}

Deployment::Deployment(TopologySpec spec, DeployOptions options)
    : spec_(std::move(spec)), options_(std::move(options)) {}

Deployment::~Deployment() {
  for (auto& p : procs_) p.terminate();
  proxy_.stop();
}

Expected<std::unique_ptr<Deployment>, std::string> Deployment::start(TopologySpec spec, DeployOptions options) {
  if (auto problem = spec.validate()) return Unexpected(*problem);
  std::error_code ec;
  std::filesystem::create_directories(options.dir, ec);
  if (ec) return Unexpected("cannot create " + options.dir.string() + ": " + ec.message());

  std::unique_ptr<Deployment> d(new Deployment(std::move(spec), std::move(options)));
  const auto& s = d->spec_;
  const std::size_t n = s.brokers.size();
  d->procs_.resize(n);
  d->readers_.resize(n);
  d->events_.resize(n);
  d->last_stats_.assign(n, tree::Timestamp{});
  std::set<std::uint16_t> used;
  for (const auto& b : s.brokers) used.insert(b.port);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint16_t port = s.brokers[i].port;
    while (port == 0 || (s.brokers[i].port == 0 && used.contains(port))) port = free_port();
    used.insert(port);
    d->ids_.push_back(BrokerId{0x7f000001u, port});
    BrokerStatus st;
    st.name = s.brokers[i].name;
    st.id = d->ids_.back();
    st.capability = tree::compute_capability(s.brokers[i].cpu_mhz, s.brokers[i].ram_mb, s.alpha, s.beta);
    d->status_.push_back(st);
  }

  // Each direction of a link gets its own relay so both outbound dials see the delay.
  std::vector<std::vector<std::string>> peers(n);
  for (const auto& l : s.links) {
    const int a = s.index_of(l.a), b = s.index_of(l.b);
    for (auto [from, to] : {std::pair{a, b}, std::pair{b, a}}) {
      std::uint16_t port = d->ids_[to].port;
      if (l.delay_ms > 0) {
        auto relay = d->proxy_.add_route("127.0.0.1", port,
                                         std::chrono::microseconds(static_cast<long long>(l.delay_ms * 1000)));
        if (!relay) return Unexpected("delay proxy: " + relay.error());
        port = *relay;
      }
      peers[from].push_back("127.0.0.1:" + std::to_string(port));
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    const auto& b = s.brokers[i];
    const auto conf = d->options_.dir / ("broker_" + b.name + ".conf");
    std::ofstream out(conf);
    out << "address 127.0.0.1\n"
        << "listen_port " << d->ids_[i].port << "\n"
        << "keep_alive " << s.keep_alive_s << "\n"
        << "alpha " << s.alpha << "\nbeta " << s.beta << "\n"
        << "capability " << b.cpu_mhz << ' ' << b.ram_mb << "\n"
        << "metrics " << (d->options_.dir / ("broker_" + b.name + ".csv")).string() << "\n";
    for (const auto& p : peers[i]) out << "peer " << p << "\n";
    if (!out) return Unexpected("cannot write " + conf.string());
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (auto err = d->launch(static_cast<int>(i))) return Unexpected(*err);
  }
  return d;
}

std::filesystem::path Deployment::log_path(int i) const {
  return options_.dir / ("broker_" + spec_.brokers[static_cast<std::size_t>(i)].name + ".csv");
}

std::optional<std::string> Deployment::launch(int i) {
  const auto& name = spec_.brokers[static_cast<std::size_t>(i)].name;
  const auto conf = options_.dir / ("broker_" + name + ".conf");
  const auto log = options_.dir / ("broker_" + name + ".log");
  const auto before = events_[static_cast<std::size_t>(i)].size();
  auto proc = Process::spawn({options_.broker_bin, "-c", conf.string(), "--log-level", options_.log_level},
                             log.string());
  if (!proc) return proc.error();
  procs_[static_cast<std::size_t>(i)] = std::move(*proc);
  auto& st = status_[static_cast<std::size_t>(i)];
  st.alive = true;
  st.killed = false;
  st.state.reset();
  note("spawn", name);
  // Wait for the broker to report that it is listening.
  const auto deadline = net::monotonic_now() + std::chrono::seconds(10);
  while (net::monotonic_now() < deadline) {
    poll();
    const auto& ev = events_[static_cast<std::size_t>(i)];
    for (std::size_t k = before; k < ev.size(); ++k) {
      if (ev[k].kind == "start") return std::nullopt;
    }
    if (!procs_[static_cast<std::size_t>(i)].running()) break;
    std::this_thread::sleep_for(milliseconds(10));
  }
  return "broker " + name + " did not start; see " + log.string();
}

void Deployment::ingest(int i, const EventRecord& r) {
  auto& st = status_[static_cast<std::size_t>(i)];
  if (r.kind == "state") {
    std::vector<std::string> names;
    for (const auto& b : spec_.brokers) names.push_back(b.name);
    st.state = parse_state(r.detail, ids_, names);
    st.last_state_change = r.t;
  } else if (r.kind == "stats" || r.kind == "stop") {
    st.stats = parse_stats(r.detail);
    last_stats_[static_cast<std::size_t>(i)] = r.t;
  } else if (r.kind == "start") {
    st.state.reset();
    st.last_state_change = r.t;
  }
  events_[static_cast<std::size_t>(i)].push_back(r);
}

void Deployment::poll() {
  for (std::size_t i = 0; i < status_.size(); ++i) {
    std::ifstream in(log_path(static_cast<int>(i)), std::ios::binary);
    if (in) {
      Reader& rd = readers_[i];
      in.seekg(static_cast<std::streamoff>(rd.offset));
      std::string chunk((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      rd.offset += chunk.size();
      rd.partial += chunk;
      std::size_t start = 0;
      for (auto nl = rd.partial.find('\n'); nl != std::string::npos; nl = rd.partial.find('\n', start)) {
        if (auto r = parse_event_line(rd.partial.substr(start, nl - start))) ingest(static_cast<int>(i), *r);
        start = nl + 1;
      }
      rd.partial.erase(0, start);
    }
    if (status_[i].alive && !procs_[i].running()) status_[i].alive = false;
  }
}

std::set<std::string> Deployment::alive_names() const {
  std::set<std::string> out;
  for (const auto& s : status_) {
    if (s.alive) out.insert(s.name);
  }
  return out;
}

std::map<std::string, ObservedBroker> Deployment::observed() const {
  std::map<std::string, ObservedBroker> out;
  for (const auto& s : status_) {
    if (s.alive && s.state) out[s.name] = *s.state;
  }
  return out;
}

std::optional<std::string> Deployment::agreed_root() const {
  std::optional<std::string> root;
  for (const auto& s : status_) {
    if (!s.alive) continue;
    if (!s.state) return std::nullopt;
    if (root && *root != s.state->root) return std::nullopt;
    root = s.state->root;
  }
  return root;
}

std::vector<std::string> Deployment::crashed() const {
  std::vector<std::string> out;
  for (const auto& s : status_) {
    if (!s.alive && !s.killed) out.push_back(s.name);
  }
  return out;
}

tree::Micros Deployment::quiet_period() const {
  // Three hello intervals; hello is half the keep-alive.
  return tree::Micros(std::int64_t{spec_.keep_alive_s} * 1'500'000);
}

Quiescence Deployment::wait_quiescent(std::chrono::seconds timeout) {
  const auto deadline = net::monotonic_now() + timeout;
  Quiescence q;
  while (true) {
    poll();
    const auto now = net::monotonic_now();
    const auto alive = alive_names();
    std::string why;
    tree::Timestamp last_change{};
    auto root = agreed_root();
    if (!root) why = "brokers disagree on the root";
    if (root && !alive.contains(*root)) why = "root " + *root + " is not running";
    for (const auto& s : status_) {
      if (!s.alive) continue;
      last_change = std::max(last_change, s.last_state_change);
      if (!why.empty()) continue;
      std::size_t want = 0;
      for (const auto& l : spec_.links) {
        const bool touches = l.a == s.name || l.b == s.name;
        const auto& other = l.a == s.name ? l.b : l.a;
        if (touches && alive.contains(other)) ++want;
      }
      if (s.state->roles.size() != want) {
        why = s.name + " has " + std::to_string(s.state->roles.size()) + " of " + std::to_string(want) + " bridges";
      }
    }
    if (why.empty() && now - last_change >= quiet_period()) {
      q.reached = true;
      q.settled_at = last_change;
      q.detail = "root " + *root;
      return q;
    }
    if (!crashed().empty()) {
      q.detail = "broker exited: " + crashed().front();
      return q;
    }
    if (now >= deadline) {
      q.detail = why.empty() ? "roles still changing" : why;
      return q;
    }
    std::this_thread::sleep_for(milliseconds(100));
  }
}

void Deployment::kill(const std::string& name) {
  const int i = spec_.index_of(name);
  if (i < 0) return;
  note("kill", name);
  status_[static_cast<std::size_t>(i)].killed = true;
  procs_[static_cast<std::size_t>(i)].kill();
  status_[static_cast<std::size_t>(i)].alive = false;
}

std::optional<std::string> Deployment::restore(const std::string& name) {
  const int i = spec_.index_of(name);
  if (i < 0) return "unknown broker " + name;
  if (status_[static_cast<std::size_t>(i)].alive) return name + " is running";
  note("restore", name);
  return launch(i);
}

Expected<std::vector<bench::BenchTarget>, std::string> Deployment::targets(const std::vector<ClientGroup>& groups) {
  std::vector<bench::BenchTarget> out;
  for (const auto& g : groups) {
    const int i = spec_.index_of(g.broker);
    if (i < 0) return Unexpected("unknown broker " + g.broker);
    std::uint16_t port = ids_[static_cast<std::size_t>(i)].port;
    if (g.delay_ms > 0) {
      const auto key = std::pair{g.broker, std::llround(g.delay_ms * 1000)};
      auto it = client_routes_.find(key);
      if (it == client_routes_.end()) {
        auto relay = proxy_.add_route("127.0.0.1", port, std::chrono::microseconds(key.second));
        if (!relay) return Unexpected("delay proxy: " + relay.error());
        it = client_routes_.emplace(key, *relay).first;
      }
      port = it->second;
    }
    out.push_back({"127.0.0.1", port, g.publishers, g.subscribers});
  }
  return out;
}

std::uint64_t Deployment::stat_sum(const std::string& key) const {
  std::uint64_t sum = 0;
  for (const auto& s : status_) {
    if (auto it = s.stats.find(key); it != s.stats.end()) sum += it->second;
  }
  return sum;
}

void Deployment::wait_fresh_stats(tree::Timestamp t, std::chrono::milliseconds timeout) {
  const auto deadline = net::monotonic_now() + timeout;
  while (net::monotonic_now() < deadline) {
    poll();
    bool fresh = true;
    for (std::size_t i = 0; i < status_.size(); ++i) {
      if (status_[i].alive && last_stats_[i] <= t) fresh = false;
    }
    if (fresh) return;
    std::this_thread::sleep_for(milliseconds(50));
  }
}

void Deployment::note(const std::string& kind, const std::string& detail) {
  notes_.push_back({net::monotonic_now(), "harness", kind, detail});
}

std::vector<TimelineRow> Deployment::timeline() const {
  std::vector<TimelineRow> out = notes_;
  for (std::size_t i = 0; i < events_.size(); ++i) {
    for (const auto& e : events_[i]) {
      if (e.kind == "stats") continue;
      out.push_back({e.t, spec_.brokers[i].name, e.kind, e.detail});
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.t < b.t; });
  return out;
}

}  // namespace mqttst::harness
