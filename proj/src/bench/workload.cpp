#include "mqttst/bench/workload.hpp"

#include <poll.h>
#include <sys/socket.h>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <memory>
#include <numeric>
#include <random>

#include "mqttst/client/client.hpp"
#include "mqttst/net/socket.hpp"

namespace mqttst::bench {

namespace {

using Clock = std::chrono::microseconds;
constexpr std::size_t kHeaderBytes = 16;

void put_u64(wire::Bytes& b, std::size_t at, std::uint64_t v) {
  for (int i = 7; i >= 0; --i) b[at + 7 - i] = static_cast<std::uint8_t>(v >> (8 * i));
}
void put_u32(wire::Bytes& b, std::size_t at, std::uint32_t v) {
  for (int i = 3; i >= 0; --i) b[at + 3 - i] = static_cast<std::uint8_t>(v >> (8 * i));
}
std::uint64_t get_u64(const wire::Bytes& b, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v = (v << 8) | b[at + i];
  return v;
}
std::uint32_t get_u32(const wire::Bytes& b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v = (v << 8) | b[at + i];
  return v;
}

enum class Phase { Connecting, AwaitConnack, AwaitSuback, Ready, Failed };

struct Agent {
  bool publisher = false;
  std::uint32_t index = 0;  // within its role
  std::uint32_t topic = 0;
  const BenchTarget* target = nullptr;
  net::Fd fd;
  client::Client client;
  wire::Bytes wbuf;
  std::size_t woff = 0;
  Phase phase = Phase::Connecting;
  // publisher
  bool inflight = false;
  std::uint64_t sent = 0;
  std::uint64_t completed = 0;
  std::uint64_t completed_in_window = 0;
  Clock next_publish{};
  // subscriber
  std::uint64_t received = 0;
  std::vector<std::int64_t> last_seq;

  Agent(client::Options o) : client(std::move(o)) {}
};

bool flush(Agent& a) {
  auto out = a.client.take_output();
  if (!out.empty()) {
    if (a.woff == a.wbuf.size()) {
      a.wbuf = std::move(out);
      a.woff = 0;
    } else {
      a.wbuf.insert(a.wbuf.end(), out.begin(), out.end());
    }
  }
  while (a.woff < a.wbuf.size()) {
    const ssize_t n = ::send(a.fd.get(), a.wbuf.data() + a.woff, a.wbuf.size() - a.woff, MSG_NOSIGNAL);
    if (n > 0) {
      a.woff += static_cast<std::size_t>(n);
    } else if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR)) {
      return true;
    } else {
      return false;
    }
  }
  a.wbuf.clear();
  a.woff = 0;
  return true;
}

}  // namespace

std::optional<BenchTarget> BenchTarget::parse(const std::string& text) {
  // host:port:publishers:subscribers, host may not contain ':'.
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto colon = text.find(':', start);
    parts.push_back(text.substr(start, colon == std::string::npos ? std::string::npos : colon - start));
    if (colon == std::string::npos) break;
    start = colon + 1;
  }
  if (parts.size() != 4 || parts[0].empty()) return std::nullopt;
  BenchTarget t;
  t.host = parts[0];
  auto num = [](const std::string& s, auto& out) {
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && p == s.data() + s.size();
  };
  if (!num(parts[1], t.port) || !num(parts[2], t.publishers) || !num(parts[3], t.subscribers)) return std::nullopt;
  return t;
}

std::uint32_t publisher_topic(const WorkloadSpec& spec, std::uint32_t index) {
  std::mt19937_64 rng(spec.seed);
  const auto offset = static_cast<std::uint32_t>(rng() % spec.topic_count);
  return (index + offset) % spec.topic_count;
}

std::uint32_t subscriber_topic(const WorkloadSpec& spec, std::uint32_t index) {
  std::mt19937_64 rng(spec.seed);
  rng();
  const auto offset = static_cast<std::uint32_t>(rng() % spec.topic_count);
  return (index + offset) % spec.topic_count;
}

std::string topic_name(const WorkloadSpec& spec, std::uint32_t topic) {
  return spec.topic_prefix + "/" + std::to_string(topic);
}

LatencyStats summarize(std::vector<double> samples) {
  LatencyStats s;
  s.count = samples.size();
  if (samples.empty()) return s;
  std::sort(samples.begin(), samples.end());
  s.mean_ms = std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(samples.size());
  auto pct = [&](double p) {
    const auto idx = static_cast<std::size_t>(std::ceil(p * static_cast<double>(samples.size()))) - 1;
    return samples[std::min(idx, samples.size() - 1)];
  };
  s.p50_ms = pct(0.50);
  s.p95_ms = pct(0.95);
  s.max_ms = samples.back();
  return s;
}

Expected<WorkloadResult, std::string> run_workload(const WorkloadSpec& spec) {
  if (spec.topic_count == 0) return Unexpected(std::string("topic_count must be positive"));
  if (spec.qos > 2 || spec.subscribe_qos > 2) return Unexpected(std::string("qos must be 0, 1 or 2"));
  const std::size_t size = std::max<std::size_t>(spec.message_size, kHeaderBytes);

  std::uint32_t total_pubs = 0;
  std::uint32_t total_subs = 0;
  for (const auto& t : spec.targets) {
    total_pubs += t.publishers;
    total_subs += t.subscribers;
  }

  std::vector<std::unique_ptr<Agent>> agents;
  std::vector<std::uint64_t> subs_per_topic(spec.topic_count, 0);
  std::uint32_t pub_index = 0;
  std::uint32_t sub_index = 0;
  for (const auto& t : spec.targets) {
    for (std::uint32_t i = 0; i < t.publishers + t.subscribers; ++i) {
      const bool pub = i < t.publishers;
      client::Options o;
      o.keep_alive_s = 60;
      const std::uint32_t idx = pub ? pub_index++ : sub_index++;
      o.client_id = spec.client_prefix + (pub ? "-pub-" : "-sub-") + std::to_string(idx);
      auto a = std::make_unique<Agent>(std::move(o));
      a->publisher = pub;
      a->index = idx;
      a->topic = pub ? publisher_topic(spec, idx) : subscriber_topic(spec, idx);
      a->target = &t;
      if (!pub) {
        ++subs_per_topic[a->topic];
        a->last_seq.assign(total_pubs, -1);
      }
      auto fd = net::connect_tcp(t.host, t.port);
      if (!fd) return Unexpected("cannot connect to " + t.host + ":" + std::to_string(t.port) + ": " + fd.error());
      a->fd = std::move(*fd);
      agents.push_back(std::move(a));
    }
  }

  WorkloadResult result;
  std::vector<double> samples;
  std::uint64_t expected = 0;
  std::uint64_t duplicates = 0;

  Clock start{};
  Clock stop_issuing{};
  Clock last_completion{};
  bool started = false;
  bool issuing = false;
  const Clock setup_deadline = net::monotonic_now() + std::chrono::seconds(30);
  Clock settle_until{};
  Clock drain_deadline{};

  std::vector<pollfd> fds(agents.size());
  std::uint8_t buf[65536];

  auto all_ready = [&] {
    return std::all_of(agents.begin(), agents.end(), [](const auto& a) { return a->phase == Phase::Ready; });
  };

  auto handle_events = [&](Agent& a, Clock now) {
    for (auto& e : a.client.take_events()) {
      if (auto* c = std::get_if<client::Connected>(&e)) {
        if (c->reason_code != 0) {
          a.phase = Phase::Failed;
        } else if (a.publisher) {
          a.phase = Phase::Ready;
        } else {
          a.client.subscribe(topic_name(spec, a.topic), spec.subscribe_qos);
          a.phase = Phase::AwaitSuback;
        }
      } else if (std::holds_alternative<client::Subscribed>(e)) {
        a.phase = Phase::Ready;
      } else if (std::holds_alternative<client::PublishComplete>(e)) {
        a.inflight = false;
        ++a.completed;
        if (issuing || now <= stop_issuing) ++a.completed_in_window;
        last_completion = now;
        a.next_publish = now + spec.publish_interval;
      } else if (auto* m = std::get_if<client::MessageReceived>(&e)) {
        if (m->payload.size() < kHeaderBytes) continue;
        const auto ts = static_cast<std::int64_t>(get_u64(m->payload, 0));
        const auto from = get_u32(m->payload, 8);
        const auto seq = static_cast<std::int64_t>(get_u32(m->payload, 12));
        if (from < a.last_seq.size()) {
          if (seq <= a.last_seq[from]) {
            ++duplicates;
            continue;
          }
          a.last_seq[from] = seq;
        }
        ++a.received;
        samples.push_back(static_cast<double>(now.count() - ts) / 1000.0);
      } else if (std::holds_alternative<client::ProtocolError>(e)) {
        a.phase = Phase::Failed;
      }
    }
  };

  while (true) {
    Clock now = net::monotonic_now();
    if (!started) {
      if (std::any_of(agents.begin(), agents.end(), [](const auto& a) { return a->phase == Phase::Failed; })) {
        return Unexpected(std::string("a client failed to connect or subscribe"));
      }
      if (now > setup_deadline) return Unexpected(std::string("timed out connecting clients"));
      if (all_ready()) {
        if (settle_until == Clock{}) settle_until = now + spec.settle;
        if (now >= settle_until) {
          started = true;
          issuing = true;
          start = now;
          stop_issuing = start + spec.duration;
        }
      }
    }
    if (issuing) {
      bool all_done = spec.messages_per_publisher.has_value();
      for (auto& ap : agents) {
        Agent& a = *ap;
        if (!a.publisher) continue;
        if (spec.messages_per_publisher && a.sent >= *spec.messages_per_publisher) continue;
        all_done = false;
        if (a.inflight || now < a.next_publish) continue;
        wire::Bytes payload(size, 0);
        put_u64(payload, 0, static_cast<std::uint64_t>(net::monotonic_now().count()));
        put_u32(payload, 8, a.index);
        put_u32(payload, 12, static_cast<std::uint32_t>(a.sent));
        a.client.publish(topic_name(spec, a.topic), std::move(payload), spec.qos);
        a.inflight = spec.qos > 0;
        ++a.sent;
        expected += subs_per_topic[a.topic];
        if (spec.qos == 0) {
          a.client.take_events();
          ++a.completed;
          ++a.completed_in_window;
          last_completion = now;
          a.next_publish = now + spec.publish_interval;
        }
        if (!flush(a)) a.phase = Phase::Failed;
      }
      if (now >= stop_issuing || (spec.messages_per_publisher && all_done)) {
        issuing = false;
        if (spec.messages_per_publisher) stop_issuing = now;
        drain_deadline = now + spec.drain;
      }
    }
    if (started && !issuing) {
      std::uint64_t received = 0;
      bool pending = false;
      for (const auto& a : agents) {
        received += a->received;
        pending = pending || a->inflight;
      }
      if ((received >= expected && !pending) || now >= drain_deadline) break;
    }

    for (std::size_t i = 0; i < agents.size(); ++i) {
      const Agent& a = *agents[i];
      short events = 0;
      if (a.phase == Phase::Connecting) {
        events = POLLOUT;
      } else if (a.phase != Phase::Failed) {
        events = POLLIN;
        if (a.woff < a.wbuf.size()) events |= POLLOUT;
      }
      fds[i] = {a.phase == Phase::Failed ? -1 : a.fd.get(), events, 0};
    }
    int wait_ms = 5;
    if (issuing && spec.publish_interval.count() == 0) wait_ms = 0;
    if (::poll(fds.data(), fds.size(), wait_ms) < 0 && errno != EINTR) {
      return Unexpected(std::string("poll failed"));
    }
    now = net::monotonic_now();
    for (std::size_t i = 0; i < agents.size(); ++i) {
      Agent& a = *agents[i];
      const short rev = fds[i].revents;
      if (rev == 0) continue;
      if (a.phase == Phase::Connecting) {
        if (net::socket_error(a.fd.get()) != 0) {
          a.phase = Phase::Failed;
          continue;
        }
        a.phase = Phase::AwaitConnack;
        a.client.connect();
        if (!flush(a)) a.phase = Phase::Failed;
        continue;
      }
      if (rev & (POLLIN | POLLHUP | POLLERR)) {
        for (int reads = 0; reads < 8; ++reads) {
          const ssize_t n = ::recv(a.fd.get(), buf, sizeof buf, 0);
          if (n > 0) {
            a.client.on_data(std::span<const std::uint8_t>(buf, static_cast<std::size_t>(n)));
            handle_events(a, now);
            if (static_cast<std::size_t>(n) < sizeof buf) break;
            continue;
          }
          if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR)) break;
          a.phase = Phase::Failed;
          break;
        }
      }
      if (a.phase != Phase::Failed && !flush(a)) a.phase = Phase::Failed;
    }
  }

  for (auto& a : agents) {
    if (a->phase == Phase::Failed) continue;
    a->client.disconnect();
    flush(*a);
  }

  const Clock window_end = spec.messages_per_publisher ? std::max(last_completion, start) : stop_issuing;
  result.elapsed_s = std::max(1e-9, static_cast<double>((window_end - start).count()) / 1e6);
  for (const auto& a : agents) {
    if (a->publisher) {
      result.published += a->sent;
      result.per_publisher.push_back(a->completed);
      result.throughput += static_cast<double>(spec.messages_per_publisher ? a->completed : a->completed_in_window);
    } else {
      result.received += a->received;
      result.per_subscriber.push_back(a->received);
      if (a->received == 0) ++result.starved_subscribers;
    }
  }
  result.throughput /= result.elapsed_s;
  result.expected = expected;
  result.duplicates = duplicates;
  result.latency = summarize(samples);
  result.samples_ms = std::move(samples);
  (void)total_subs;
  return result;
}

void write_csv_header(std::ostream& out) {
  out << "scenario,N,M,K,throughput,mean_ms,p50_ms,p95_ms,published,received,expected,duplicates,starved\n";
}

void write_csv_row(std::ostream& out, const std::string& scenario, std::uint32_t brokers, const WorkloadSpec& spec,
                   const WorkloadResult& r) {
  std::uint32_t n = 0;
  std::uint32_t m = 0;
  for (const auto& t : spec.targets) {
    n += t.publishers;
    m += t.subscribers;
  }
  out << scenario << ',' << n << ',' << m << ',' << brokers << ',' << r.throughput << ',' << r.latency.mean_ms << ','
      << r.latency.p50_ms << ',' << r.latency.p95_ms << ',' << r.published << ',' << r.received << ',' << r.expected
      << ',' << r.duplicates << ',' << r.starved_subscribers << '\n';
}

}  // namespace mqttst::bench
