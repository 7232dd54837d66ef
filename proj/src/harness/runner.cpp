#include "mqttst/harness/runner.hpp"

#include <unistd.h>

#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#include "mqttst/net/socket.hpp"

namespace mqttst::harness {

namespace {

namespace fs = std::filesystem;
using std::chrono::milliseconds;

double seconds_between(tree::Timestamp from, tree::Timestamp to) {
  return std::max(0.0, static_cast<double>((to - from).count()) / 1e6);
}

std::string fixed(double v, int digits = 2) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

std::string scenario_label(const TopologySpec& spec) {
  if (spec.scenario.kind == ScenarioKind::Locality) {
    return "locality" + std::to_string(spec.scenario.locality_percent);
  }
  return to_string(spec.scenario.kind);
}

std::string describe(const ConvergeOutcome& c) {
  std::string s = c.quiescent ? "settled " + fixed(c.seconds) + " s after the disruption" : "no quiescence: " + c.detail;
  s += "; tree " + format_edges(c.check.observed);
  for (const auto& p : c.check.problems) s += "; " + p;
  return s;
}

std::string describe(const WorkloadOutcome& w) {
  const auto& r = w.result;
  std::ostringstream os;
  os << "published=" << r.published << " received=" << r.received << "/" << r.expected
     << " duplicates=" << r.duplicates << " throughput=" << fixed(r.throughput, 1)
     << " mean_ms=" << fixed(r.latency.mean_ms, 3) << " p95_ms=" << fixed(r.latency.p95_ms, 3)
     << " inter_broker=" << w.inter_broker_publishes << " (expected " << r.published * (w.brokers ? w.brokers - 1 : 0)
     << ")";
  if (r.starved_subscribers) os << " starved=" << r.starved_subscribers;
  return os.str();
}

// Per-broker value of a counter, keyed by index, for brokers currently running.
std::map<int, std::uint64_t> snapshot(const Deployment& d, const std::string& key) {
  std::map<int, std::uint64_t> out;
  for (std::size_t i = 0; i < d.ids().size(); ++i) {
    const auto& b = d.broker(static_cast<int>(i));
    if (!b.alive) continue;
    auto it = b.stats.find(key);
    out[static_cast<int>(i)] = it == b.stats.end() ? 0 : it->second;
  }
  return out;
}

// Client placement over the brokers still running; explicit groups on
// stopped brokers are dropped.
std::vector<ClientGroup> live_placement(const Deployment& d) {
  const auto alive = d.alive_names();
  TopologySpec live = d.spec();
  std::erase_if(live.brokers, [&](const BrokerSpec& b) { return !alive.contains(b.name); });
  std::erase_if(live.clients, [&](const ClientGroup& c) { return !alive.contains(c.broker); });
  if (live.brokers.empty() || (!d.spec().clients.empty() && live.clients.empty())) return {};
  return live.placement();
}

}  // namespace

std::string default_broker_bin() {
  std::error_code ec;
  const auto self = fs::read_symlink("/proc/self/exe", ec);
  if (ec) return "mqttst-broker";
  return (self.parent_path() / "mqttst-broker").string();
}

std::string format_topology(const TopologySpec& spec) {
  std::ostringstream os;
  os << "name " << spec.name << "\nkeep_alive " << spec.keep_alive_s << "\nalpha " << spec.alpha << "\nbeta "
     << spec.beta << "\n";
  for (const auto& b : spec.brokers) {
    os << "broker " << b.name << " capability " << b.cpu_mhz << ' ' << b.ram_mb;
    if (b.port) os << " port " << b.port;
    os << "\n";
  }
  for (const auto& l : spec.links) os << "link " << l.a << ' ' << l.b << ' ' << l.delay_ms << "\n";
  os << "scenario " << to_string(spec.scenario.kind);
  if (spec.scenario.kind == ScenarioKind::Locality) os << ' ' << spec.scenario.locality_percent;
  os << "\n";
  if (spec.workload) {
    const auto& w = *spec.workload;
    os << "workload publishers " << w.publishers << " subscribers " << w.subscribers << " size " << w.message_size
       << " topics " << w.topics << " duration " << w.duration_s << " qos " << unsigned{w.qos};
    if (w.count) os << " count " << *w.count;
    os << "\n";
  }
  for (const auto& c : spec.clients) {
    os << "clients " << c.broker << ' ' << c.publishers << ' ' << c.subscribers;
    if (c.delay_ms > 0) os << " delay " << c.delay_ms;
    os << "\n";
  }
  for (const auto& s : spec.steps) {
    switch (s.kind) {
      case Step::Kind::Converge: os << "step converge\n"; break;
      case Step::Kind::Workload: os << "step workload\n"; break;
      case Step::Kind::Kill: os << "step kill " << s.target << "\n"; break;
      case Step::Kind::Restore: os << "step restore " << s.target << "\n"; break;
      case Step::Kind::Sleep: os << "step sleep " << s.seconds << "\n"; break;
    }
  }
  return os.str();
}

ConvergeOutcome converge(Deployment& d, std::chrono::seconds timeout, tree::Timestamp disrupted_at) {
  ConvergeOutcome out;
  const auto q = d.wait_quiescent(timeout);
  out.quiescent = q.reached;
  out.detail = q.detail;
  if (q.reached) out.seconds = seconds_between(disrupted_at, q.settled_at);
  d.poll();
  out.check = verify_tree(expected_tree(d.spec(), d.ids(), d.alive_names()), d.observed());
  d.note("converge", (out.pass() ? "pass " : "fail ") + format_edges(out.check.observed));
  return out;
}

Expected<WorkloadOutcome, std::string> run_workload_on(Deployment& d, const std::vector<ClientGroup>& groups,
                                                       const WorkloadDesc& w, std::uint64_t seed,
                                                       const std::string& scenario) {
  auto targets = d.targets(groups);
  if (!targets) return Unexpected(targets.error());
  static int serial = 0;
  ++serial;
  WorkloadOutcome out;
  out.scenario = scenario;
  auto& ws = out.spec;
  ws.targets = *targets;
  ws.message_size = w.message_size;
  ws.topic_count = w.topics;
  ws.qos = w.qos;
  ws.subscribe_qos = 2;
  ws.duration = milliseconds(static_cast<long long>(w.duration_s * 1000));
  ws.messages_per_publisher = w.count;
  ws.seed = seed;
  ws.topic_prefix = "h" + std::to_string(::getpid()) + "-" + std::to_string(serial);
  ws.client_prefix = ws.topic_prefix;
  // Give delayed clients room to finish.
  ws.drain = milliseconds(5000 + static_cast<long long>(4 * d.spec().keep_alive_s) * 1000);

  d.wait_fresh_stats(net::monotonic_now(), milliseconds(2000));
  const auto before = snapshot(d, "bridge_publishes_out");
  out.brokers = static_cast<std::uint32_t>(before.size());
  d.note("workload", "start " + scenario);
  auto result = bench::run_workload(ws);
  d.note("workload", "end " + scenario);
  if (!result) return Unexpected(result.error());
  out.result = std::move(*result);
  d.wait_fresh_stats(net::monotonic_now(), milliseconds(2000));
  const auto after = snapshot(d, "bridge_publishes_out");
  for (const auto& [i, v] : after) {
    auto it = before.find(i);
    if (it != before.end() && v >= it->second) out.inter_broker_publishes += v - it->second;
  }
  out.replication_exact =
      out.inter_broker_publishes == out.result.published * (out.brokers ? out.brokers - 1 : 0);
  return out;
}

Expected<RunReport, std::string> run_scenario(const TopologySpec& spec, const RunOptions& options) {
  DeployOptions dopt;
  dopt.broker_bin = options.broker_bin.empty() ? default_broker_bin() : options.broker_bin;
  dopt.dir = options.out_dir;
  dopt.log_level = options.log_level;
  auto started = Deployment::start(spec, dopt);
  if (!started) return Unexpected(started.error());
  Deployment& d = **started;

  RunReport report;
  report.dir = options.out_dir;
  auto disrupted = net::monotonic_now();
  auto record = [&](std::string label, bool pass, std::string detail) {
    report.steps.push_back({std::move(label), pass, std::move(detail)});
    report.pass = report.pass && pass;
  };

  for (const auto& step : spec.effective_steps()) {
    switch (step.kind) {
      case Step::Kind::Converge: {
        auto c = converge(d, options.converge_timeout, disrupted);
        record("converge", c.pass(), describe(c));
        report.convergences.push_back(std::move(c));
        break;
      }
      case Step::Kind::Workload: {
        auto w = *spec.workload;
        if (options.duration_s) w.duration_s = *options.duration_s;
        d.poll();
        auto out = run_workload_on(d, live_placement(d), w, options.seed, scenario_label(spec));
        if (!out) {
          record("workload", false, out.error());
          break;
        }
        record("workload", out->pass(), describe(*out));
        report.workloads.push_back(std::move(*out));
        break;
      }
      case Step::Kind::Kill: {
        d.poll();
        std::string target = step.target;
        if (target == "root") {
          auto root = d.agreed_root();
          if (!root) {
            record("kill root", false, "brokers disagree on the root");
            break;
          }
          target = *root;
        }
        d.kill(target);
        disrupted = net::monotonic_now();
        record("kill " + target, true, "");
        break;
      }
      case Step::Kind::Restore: {
        auto err = d.restore(step.target);
        disrupted = net::monotonic_now();
        record("restore " + step.target, !err, err.value_or(""));
        break;
      }
      case Step::Kind::Sleep:
        std::this_thread::sleep_for(milliseconds(static_cast<long long>(step.seconds * 1000)));
        d.poll();
        record("sleep " + fixed(step.seconds, 1), true, "");
        break;
    }
  }
  d.poll();
  for (const auto& name : d.crashed()) record("broker " + name, false, "exited unexpectedly");
  d.note("end", "");
  write_report(d, report);
  return report;
}

void write_report(Deployment& d, const RunReport& report) {
  d.poll();
  const auto& dir = d.options().dir;
  const auto& spec = d.spec();
  {
    std::ofstream out(dir / "topology.txt");
    out << format_topology(spec);
  }
  {
    std::ofstream out(dir / "brokers.csv");
    out << "name,id,port,capability,alive\n";
    for (std::size_t i = 0; i < d.ids().size(); ++i) {
      const auto& b = d.broker(static_cast<int>(i));
      out << b.name << ',' << b.id.to_string() << ',' << b.id.port << ',' << b.capability << ','
          << (b.alive ? 1 : 0) << "\n";
    }
  }
  {
    std::ofstream out(dir / "timeline.csv");
    out << "t_us,source,kind,detail\n";
    for (const auto& r : d.timeline()) out << r.t.count() << ',' << r.source << ',' << r.kind << ',' << r.detail << "\n";
  }
  {
    std::ofstream out(dir / "bytes.csv");
    const std::vector<std::string> keys{"bytes_out", "bpdu_bytes_sent", "bridge_publishes_out", "client_publishes"};
    out << "t_us,broker";
    for (const auto& k : keys) out << ',' << k;
    out << "\n";
    for (std::size_t i = 0; i < d.ids().size(); ++i) {
      for (const auto& e : d.events(static_cast<int>(i))) {
        if (e.kind != "stats" && e.kind != "stop") continue;
        out << e.t.count() << ',' << spec.brokers[i].name;
        for (const auto& k : keys) out << ',' << detail_field(e.detail, k);
        out << "\n";
      }
    }
  }
  {
    std::ofstream out(dir / "tree.csv");
    out << "check,edge,expected,observed\n";
    for (std::size_t c = 0; c < report.convergences.size(); ++c) {
      const auto& check = report.convergences[c].check;
      std::set<Edge> all = check.expected;
      all.insert(check.observed.begin(), check.observed.end());
      for (const auto& e : all) {
        out << c << ',' << e.first << '-' << e.second << ',' << check.expected.contains(e) << ','
            << check.observed.contains(e) << "\n";
      }
    }
  }
  if (!report.workloads.empty()) {
    std::ofstream out(dir / "results.csv");
    bench::write_csv_header(out);
    for (const auto& w : report.workloads) bench::write_csv_row(out, w.scenario, w.brokers, w.spec, w.result);
    std::ofstream rep(dir / "replication.csv");
    rep << "run,brokers,published,inter_broker_publishes,per_message\n";
    for (std::size_t i = 0; i < report.workloads.size(); ++i) {
      const auto& w = report.workloads[i];
      const double per = w.result.published ? static_cast<double>(w.inter_broker_publishes) /
                                                  static_cast<double>(w.result.published)
                                            : 0;
      rep << i << ',' << w.brokers << ',' << w.result.published << ',' << w.inter_broker_publishes << ','
          << fixed(per, 3) << "\n";
    }
    std::ofstream lat(dir / "latency.csv");
    lat << "run,latency_ms\n";
    for (std::size_t i = 0; i < report.workloads.size(); ++i) {
      for (double s : report.workloads[i].result.samples_ms) lat << i << ',' << fixed(s, 3) << "\n";
    }
  }
  {
    std::ofstream out(dir / "summary.txt");
    out << (report.pass ? "PASS" : "FAIL") << ' ' << spec.name << "\n";
    for (const auto& s : report.steps) {
      out << (s.pass ? "  ok   " : "  FAIL ") << s.label;
      if (!s.detail.empty()) out << ": " << s.detail;
      out << "\n";
    }
  }
}

Expected<VerifyResult, std::string> verify_report(const fs::path& dir) {
  auto spec = load_topology((dir / "topology.txt").string());
  if (!spec) return Unexpected(spec.error());
  std::ifstream table(dir / "brokers.csv");
  if (!table) return Unexpected("cannot open " + (dir / "brokers.csv").string());
  std::vector<BrokerId> ids(spec->brokers.size());
  std::vector<std::string> names;
  for (const auto& b : spec->brokers) names.push_back(b.name);
  std::set<std::string> alive;
  std::string line;
  std::getline(table, line);
  while (std::getline(table, line)) {
    std::istringstream cols(line);
    std::string name, id, port, cap, up;
    if (!std::getline(cols, name, ',') || !std::getline(cols, id, ',') || !std::getline(cols, port, ',') ||
        !std::getline(cols, cap, ',') || !std::getline(cols, up, ',')) {
      return Unexpected("malformed brokers.csv row: " + line);
    }
    const int i = spec->index_of(name);
    auto parsed = BrokerId::parse(id);
    if (i < 0 || !parsed) return Unexpected("brokers.csv names an unknown broker: " + line);
    ids[static_cast<std::size_t>(i)] = *parsed;
    if (up == "1") alive.insert(name);
  }

  // Logs keep growing while the brokers shut down; only look up to the end mark.
  std::optional<tree::Timestamp> cutoff;
  {
    std::ifstream tl(dir / "timeline.csv");
    std::getline(tl, line);
    while (std::getline(tl, line)) {
      if (line.find(",harness,end,") != std::string::npos) cutoff = tree::Timestamp(std::stoll(line));
    }
  }

  VerifyResult out;
  out.conclusive = true;
  std::map<std::string, ObservedBroker> observed;
  const tree::Micros quiet(std::int64_t{spec->keep_alive_s} * 1'500'000);
  std::ostringstream text;
  for (const auto& name : alive) {
    const auto log = (dir / ("broker_" + name + ".csv")).string();
    std::optional<ObservedBroker> state;
    tree::Timestamp changed{}, end{};
    for (const auto& e : read_event_log(log)) {
      if (cutoff && e.t > *cutoff) break;
      end = e.t;
      if (e.kind == "start") {
        state.reset();
        changed = e.t;
      } else if (e.kind == "state") {
        state = parse_state(e.detail, ids, names);
        changed = e.t;
      }
    }
    if (!state) {
      out.conclusive = false;
      text << name << ": no tree state recorded\n";
      continue;
    }
    const auto last = cutoff ? *cutoff : end;
    if (last - changed < quiet) {
      out.conclusive = false;
      text << name << ": roles changed " << fixed(seconds_between(changed, last)) << " s before the end\n";
    }
    observed[name] = *state;
  }
  out.check = verify_tree(expected_tree(*spec, ids, alive), observed);
  text << "expected " << format_edges(out.check.expected) << "\nobserved " << format_edges(out.check.observed)
       << "\n";
  for (const auto& p : out.check.problems) text << p << "\n";
  text << (out.pass() ? "PASS" : out.conclusive ? "FAIL" : "INCONCLUSIVE") << "\n";
  out.text = text.str();
  return out;
}

}  // namespace mqttst::harness
