#include "mqttst/client/blocking_client.hpp"

#include <poll.h>
#include <sys/socket.h>

#include <algorithm>
#include <cerrno>

namespace mqttst::client {

Expected<std::unique_ptr<BlockingClient>, std::string> BlockingClient::connect(const std::string& host,
                                                                                std::uint16_t port, Options options,
                                                                                Ms timeout) {
  auto fd = net::connect_tcp_blocking(host, port, timeout);
  if (!fd) return Unexpected(fd.error());
  std::unique_ptr<BlockingClient> c(new BlockingClient(std::move(*fd), std::move(options)));
  c->client_.connect();
  if (!c->run_until([&] { return c->connected_ || c->refused_; }, timeout) || !c->connected_) {
    return Unexpected(std::string("no CONNACK from ") + host + ":" + std::to_string(port));
  }
  return c;
}

bool BlockingClient::flush() {
  auto out = client_.take_output();
  std::size_t off = 0;
  while (off < out.size() && fd_) {
    const ssize_t n = ::send(fd_.get(), out.data() + off, out.size() - off, MSG_NOSIGNAL);
    if (n > 0) {
      off += static_cast<std::size_t>(n);
    } else if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR)) {
      pollfd p{fd_.get(), POLLOUT, 0};
      ::poll(&p, 1, 100);
    } else {
      fd_.reset();
      return false;
    }
  }
  return static_cast<bool>(fd_);
}

void BlockingClient::absorb_events() {
  for (auto& e : client_.take_events()) {
    if (auto* c = std::get_if<Connected>(&e)) {
      connected_ = c->reason_code == 0;
      refused_ = c->reason_code != 0;
    } else if (auto* s = std::get_if<Subscribed>(&e)) {
      subscribed_.push_back(s->packet_id);
    } else if (auto* p = std::get_if<PublishComplete>(&e)) {
      completed_.push_back(p->packet_id);
    } else if (auto* m = std::get_if<MessageReceived>(&e)) {
      messages_.push_back(std::move(*m));
    } else if (std::holds_alternative<ProtocolError>(e)) {
      fd_.reset();
    }
  }
}

bool BlockingClient::service(Ms wait) {
  if (!flush()) return false;
  pollfd p{fd_.get(), POLLIN, 0};
  if (::poll(&p, 1, static_cast<int>(wait.count())) <= 0) return true;
  std::uint8_t buf[16384];
  const ssize_t n = ::recv(fd_.get(), buf, sizeof buf, 0);
  if (n <= 0) {
    if (n < 0 && (errno == EAGAIN || errno == EINTR)) return true;
    fd_.reset();
    return false;
  }
  client_.on_data(std::span<const std::uint8_t>(buf, static_cast<std::size_t>(n)));
  absorb_events();
  return flush();
}

bool BlockingClient::run_until(const std::function<bool()>& done, Ms timeout) {
  const auto deadline = net::monotonic_now() + timeout;
  while (!done()) {
    if (!fd_) return false;
    const auto left = std::chrono::duration_cast<Ms>(deadline - net::monotonic_now());
    if (left.count() <= 0) return false;
    if (!service(std::min(left, Ms(50)))) return done();
  }
  return flush() || done();
}

bool BlockingClient::subscribe(const std::string& filter, std::uint8_t qos, Ms timeout) {
  const auto id = client_.subscribe(filter, qos);
  return run_until([&] { return std::find(subscribed_.begin(), subscribed_.end(), id) != subscribed_.end(); },
                   timeout);
}

bool BlockingClient::publish(const std::string& topic, const wire::Bytes& payload, std::uint8_t qos, bool retain,
                             Ms timeout) {
  const auto id = client_.publish(topic, payload, qos, retain);
  absorb_events();
  return run_until([&] { return std::find(completed_.begin(), completed_.end(), id) != completed_.end(); },
                   timeout);
}

bool BlockingClient::wait_messages(std::size_t count, Ms timeout) {
  return run_until([&] { return messages_.size() >= count; }, timeout);
}

void BlockingClient::disconnect() {
  if (!fd_) return;
  client_.disconnect();
  flush();
  fd_.reset();
}

void BlockingClient::abort() {
  if (!fd_) return;
  linger l{1, 0};
  setsockopt(fd_.get(), SOL_SOCKET, SO_LINGER, &l, sizeof l);
  fd_.reset();
}

}  // namespace mqttst::client
