#include "mqttst/harness/delay_proxy.hpp"

#include <fcntl.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <deque>
#include <optional>

namespace mqttst::harness {

using std::chrono::microseconds;

struct DelayProxy::Route {
  net::Fd listener;
  std::string host;
  std::uint16_t port = 0;
  microseconds delay{};
};

namespace {

struct Chunk {
  microseconds due;
  std::vector<std::uint8_t> data;
  std::size_t off = 0;
};

struct Side {
  net::Fd fd;
  std::deque<Chunk> out;  // waiting to be written to this side
  bool eof = false;       // nothing more will be read from this side
};

}  // namespace

struct DelayProxy::Pair {
  Side down;  // accepted
  Side up;    // towards the target
  bool connecting = true;
  microseconds delay{};
  std::optional<microseconds> close_at;
};

DelayProxy::DelayProxy() {
  int fds[2];
  if (::pipe2(fds, O_NONBLOCK | O_CLOEXEC) != 0) throw std::runtime_error("pipe2 failed");
  wake_read_ = net::Fd(fds[0]);
  wake_write_ = net::Fd(fds[1]);
  thread_ = std::thread([this] { run(); });
}

DelayProxy::~DelayProxy() { stop(); }

void DelayProxy::stop() {
  if (!thread_.joinable()) return;
  stop_ = true;
  const char c = 0;
  [[maybe_unused]] auto n = ::write(wake_write_.get(), &c, 1);
  thread_.join();
}

Expected<std::uint16_t, std::string> DelayProxy::add_route(const std::string& host, std::uint16_t port,
                                                           microseconds one_way) {
  auto listener = net::listen_tcp("127.0.0.1", 0);
  if (!listener) return Unexpected(listener.error());
  auto route = std::make_unique<Route>();
  const auto local = net::local_port(listener->get());
  route->listener = std::move(*listener);
  route->host = host;
  route->port = port;
  route->delay = one_way;
  {
    std::lock_guard lock(mu_);
    incoming_.push_back(std::move(route));
  }
  const char c = 0;
  [[maybe_unused]] auto n = ::write(wake_write_.get(), &c, 1);
  return local;
}

namespace {

// Writes due chunks; false on a hard error.
bool flush_due(Side& s, microseconds now) {
  while (!s.out.empty() && s.out.front().due <= now) {
    Chunk& c = s.out.front();
    const ssize_t n = ::send(s.fd.get(), c.data.data() + c.off, c.data.size() - c.off, MSG_NOSIGNAL);
    if (n < 0) return errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR;
    c.off += static_cast<std::size_t>(n);
    if (c.off < c.data.size()) return true;
    s.out.pop_front();
  }
  return true;
}

}  // namespace

void DelayProxy::run() {
  std::vector<std::unique_ptr<Route>> routes;
  std::vector<std::unique_ptr<Pair>> pairs;
  std::vector<pollfd> fds;
  std::vector<std::uint8_t> buf(64 * 1024);

  while (!stop_) {
    {
      std::lock_guard lock(mu_);
      for (auto& r : incoming_) routes.push_back(std::move(r));
      incoming_.clear();
    }
    auto now = net::monotonic_now();

    // Earliest future deadline among queued chunks and pending closes.
    std::optional<microseconds> next;
    auto consider = [&](microseconds t) {
      if (!next || t < *next) next = t;
    };
    fds.clear();
    fds.push_back({wake_read_.get(), POLLIN, 0});
    for (const auto& r : routes) fds.push_back({r->listener.get(), POLLIN, 0});
    for (const auto& p : pairs) {
      short down = p->down.eof ? 0 : POLLIN;
      short up = p->connecting ? POLLOUT : (p->up.eof ? 0 : POLLIN);
      if (!p->down.out.empty()) {
        if (p->down.out.front().due <= now) down |= POLLOUT;
        else consider(p->down.out.front().due);
      }
      if (!p->up.out.empty() && !p->connecting) {
        if (p->up.out.front().due <= now) up |= POLLOUT;
        else consider(p->up.out.front().due);
      }
      if (p->close_at) consider(*p->close_at);
      fds.push_back({p->down.fd.get(), down, 0});
      fds.push_back({p->up.fd.get(), up, 0});
    }
    timespec ts{1, 0};
    if (next) {
      const auto wait = std::max(microseconds(0), *next - now);
      ts.tv_sec = static_cast<time_t>(wait.count() / 1'000'000);
      ts.tv_nsec = static_cast<long>(wait.count() % 1'000'000) * 1000;
    }
    if (::ppoll(fds.data(), fds.size(), &ts, nullptr) < 0 && errno != EINTR) break;
    now = net::monotonic_now();

    if (fds[0].revents) {
      char drain[64];
      while (::read(wake_read_.get(), drain, sizeof drain) > 0) {
      }
    }
    const std::size_t route_base = 1;
    const std::size_t pair_base = route_base + routes.size();
    const std::size_t polled_pairs = (fds.size() - pair_base) / 2;

    for (std::size_t i = 0; i < polled_pairs; ++i) {
      Pair& p = *pairs[i];
      const short rd = fds[pair_base + 2 * i].revents;
      const short ru = fds[pair_base + 2 * i + 1].revents;
      bool dead = false;
      if (p.connecting && ru) {
        if (net::socket_error(p.up.fd.get()) != 0) {
          dead = true;
        } else {
          p.connecting = false;
          net::set_nodelay(p.up.fd.get());
        }
      }
      auto pull = [&](Side& from, Side& to, short rev) {
        if (!(rev & (POLLIN | POLLHUP | POLLERR)) || from.eof) return;
        for (int reads = 0; reads < 4; ++reads) {
          const ssize_t n = ::recv(from.fd.get(), buf.data(), buf.size(), 0);
          if (n > 0) {
            bytes_ += static_cast<std::uint64_t>(n);
            to.out.push_back({now + p.delay, std::vector<std::uint8_t>(buf.begin(), buf.begin() + n), 0});
            if (static_cast<std::size_t>(n) < buf.size()) break;
            continue;
          }
          if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR)) break;
          // EOF or reset: pass it on once the data already read has gone through.
          from.eof = true;
          if (!p.close_at) p.close_at = now + p.delay;
          break;
        }
      };
      if (!dead) {
        pull(p.down, p.up, rd);
        if (!p.connecting) pull(p.up, p.down, ru);
        if (!flush_due(p.down, now)) dead = true;
        if (!p.connecting && !flush_due(p.up, now)) dead = true;
      }
      if (dead) p.close_at = now;
    }

    for (std::size_t i = 0; i < routes.size(); ++i) {
      if (!(fds[route_base + i].revents & POLLIN)) continue;
      Route& r = *routes[i];
      while (true) {
        const int c = ::accept4(r.listener.get(), nullptr, nullptr, SOCK_NONBLOCK | SOCK_CLOEXEC);
        if (c < 0) break;
        ++accepted_;
        auto pair = std::make_unique<Pair>();
        pair->down.fd = net::Fd(c);
        net::set_nodelay(c);
        pair->delay = r.delay;
        auto up = net::connect_tcp(r.host, r.port);
        if (!up) continue;  // the accepted socket closes with the pair
        pair->up.fd = std::move(*up);
        pairs.push_back(std::move(pair));
      }
    }

    for (auto it = pairs.begin(); it != pairs.end();) {
      Pair& p = **it;
      if (p.close_at && *p.close_at <= now) {
        if (!p.connecting) flush_due(p.up, now);
        flush_due(p.down, now);
        it = pairs.erase(it);
      } else {
        ++it;
      }
    }
  }
}

}  // namespace mqttst::harness
