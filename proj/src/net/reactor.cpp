#include "mqttst/net/reactor.hpp"

#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <stdexcept>

namespace mqttst::net {

namespace {

constexpr std::chrono::milliseconds kTimerGranularity{50};
constexpr int kReadsPerWakeup = 16;

}  // namespace

Reactor::Reactor(Node& node, const std::string& bind_address, std::uint16_t port)
    : node_(node), read_buf_(64 * 1024) {
  auto fd = listen_tcp(bind_address, port);
  if (!fd) throw std::runtime_error(fd.error());
  listener_ = std::move(*fd);
  port_ = local_port(listener_.get());
}

void Reactor::run(const std::atomic<bool>& stop) {
  while (!stop.load()) poll_once(std::chrono::milliseconds(100));
}

void Reactor::pump_node() {
  while (true) {
    auto commands = node_.take_commands();
    if (commands.empty() && closed_.empty()) return;
    for (auto& cmd : commands) {
      if (auto* d = std::get_if<DialConn>(&cmd)) {
        auto fd = connect_tcp(d->host, d->port);
        if (!fd) {
          closed_.push_back(d->conn);
          continue;
        }
        Socket s;
        s.fd = std::move(*fd);
        s.connecting = true;
        sockets_.emplace(d->conn, std::move(s));
      } else if (auto* w = std::get_if<SendBytes>(&cmd)) {
        auto it = sockets_.find(w->conn);
        if (it == sockets_.end() || it->second.closing) continue;
        auto& buf = it->second.wbuf;
        if (buf.empty()) {
          buf = std::move(w->bytes);
        } else {
          buf.insert(buf.end(), w->bytes.begin(), w->bytes.end());
        }
        if (!it->second.connecting) flush(w->conn);
      } else if (auto* c = std::get_if<CloseConn>(&cmd)) {
        auto it = sockets_.find(c->conn);
        if (it == sockets_.end()) continue;
        it->second.closing = true;
        if (it->second.connecting) {
          sockets_.erase(it);
        } else {
          flush(c->conn);
        }
      }
    }
    auto closed = std::move(closed_);
    closed_.clear();
    const auto now = monotonic_now();
    for (auto id : closed) node_.on_closed(id, now);
  }
}

void Reactor::flush(ConnId id) {
  auto it = sockets_.find(id);
  if (it == sockets_.end()) return;
  Socket& s = it->second;
  while (s.woff < s.wbuf.size()) {
    const ssize_t n = ::send(s.fd.get(), s.wbuf.data() + s.woff, s.wbuf.size() - s.woff, MSG_NOSIGNAL);
    if (n > 0) {
      s.woff += static_cast<std::size_t>(n);
      continue;
    }
    if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) break;
    if (n < 0 && errno == EINTR) continue;
    drop(id, !s.closing);
    return;
  }
  if (s.woff == s.wbuf.size()) {
    s.wbuf.clear();
    s.woff = 0;
    if (s.closing) sockets_.erase(it);
  } else if (s.woff > (1 << 20)) {
    s.wbuf.erase(s.wbuf.begin(), s.wbuf.begin() + static_cast<std::ptrdiff_t>(s.woff));
    s.woff = 0;
  }
}

void Reactor::drop(ConnId id, bool notify) {
  sockets_.erase(id);
  if (notify) closed_.push_back(id);
}

void Reactor::accept_all() {
  while (true) {
    const int fd = ::accept4(listener_.get(), nullptr, nullptr, SOCK_NONBLOCK | SOCK_CLOEXEC);
    if (fd < 0) return;
    set_nodelay(fd);
    const ConnId id = next_accept_++;
    Socket s;
    s.fd = Fd(fd);
    sockets_.emplace(id, std::move(s));
    node_.on_accepted(id, monotonic_now());
    pump_node();
  }
}

void Reactor::read_from(ConnId id) {
  for (int i = 0; i < kReadsPerWakeup; ++i) {
    auto it = sockets_.find(id);
    if (it == sockets_.end()) return;
    const ssize_t n = ::recv(it->second.fd.get(), read_buf_.data(), read_buf_.size(), 0);
    if (n > 0) {
      if (!it->second.closing) {
        node_.on_data(id, std::span<const std::uint8_t>(read_buf_.data(), static_cast<std::size_t>(n)),
                      monotonic_now());
        pump_node();
      }
      if (static_cast<std::size_t>(n) < read_buf_.size()) return;
      continue;
    }
    if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) return;
    if (n < 0 && errno == EINTR) continue;
    drop(id, !it->second.closing);
    pump_node();
    return;
  }
}

void Reactor::poll_once(std::chrono::milliseconds max_wait) {
  auto now = monotonic_now();
  if (now >= node_.next_deadline() || now - last_timer_ >= kTimerGranularity) {
    last_timer_ = now;
    node_.on_timer(now);
    pump_node();
  }
  if (on_iteration) on_iteration(now);

  std::vector<pollfd> fds;
  std::vector<ConnId> ids;
  fds.reserve(sockets_.size() + 1);
  ids.reserve(sockets_.size());
  fds.push_back({listener_.get(), POLLIN, 0});
  for (const auto& [id, s] : sockets_) {
    short events = 0;
    if (s.connecting) {
      events = POLLOUT;
    } else {
      events = POLLIN;
      if (s.woff < s.wbuf.size()) events |= POLLOUT;
    }
    fds.push_back({s.fd.get(), events, 0});
    ids.push_back(id);
  }
  auto wait = std::chrono::duration_cast<std::chrono::milliseconds>(node_.next_deadline() - now);
  wait = std::clamp(wait, std::chrono::milliseconds(0), std::min(max_wait, kTimerGranularity));
  const int ready = ::poll(fds.data(), fds.size(), static_cast<int>(wait.count()));
  if (ready <= 0) return;

  if (fds[0].revents & POLLIN) accept_all();
  for (std::size_t i = 1; i < fds.size(); ++i) {
    const short rev = fds[i].revents;
    if (rev == 0) continue;
    const ConnId id = ids[i - 1];
    auto it = sockets_.find(id);
    if (it == sockets_.end() || it->second.fd.get() != fds[i].fd) continue;
    if (it->second.connecting) {
      if (socket_error(it->second.fd.get()) != 0) {
        drop(id, true);
      } else {
        it->second.connecting = false;
        node_.on_connected(id, monotonic_now());
      }
      pump_node();
      continue;
    }
    if (rev & (POLLIN | POLLHUP | POLLERR)) read_from(id);
    if (rev & POLLOUT) flush(id);
    pump_node();
  }
}

}  // namespace mqttst::net
