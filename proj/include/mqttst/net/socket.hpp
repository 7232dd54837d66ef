#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>

#include "mqttst/expected.hpp"

namespace mqttst::net {

/// CLOCK_MONOTONIC in microseconds. Shared by every process on the host, so
/// timestamps taken by different brokers and clients are comparable.
std::chrono::microseconds monotonic_now();

/// Owns a file descriptor.
class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  Fd(Fd&& other) noexcept : fd_(other.release()) {}
  Fd& operator=(Fd&& other) noexcept;
  ~Fd();

  int get() const { return fd_; }
  int release();
  void reset();
  explicit operator bool() const { return fd_ >= 0; }

 private:
  int fd_ = -1;
};

std::optional<std::uint32_t> resolve_ipv4(const std::string& host);

/// Non-blocking listening socket; port 0 picks a free port.
Expected<Fd, std::string> listen_tcp(const std::string& address, std::uint16_t port, int backlog = 1024);
std::uint16_t local_port(int fd);

/// Starts a non-blocking connect. Completion is signalled by writability.
Expected<Fd, std::string> connect_tcp(const std::string& host, std::uint16_t port);
/// Blocking connect with a timeout; the returned socket is left non-blocking.
Expected<Fd, std::string> connect_tcp_blocking(const std::string& host, std::uint16_t port,
                                               std::chrono::milliseconds timeout);

/// Pending SO_ERROR of a socket, 0 when the connect succeeded.
int socket_error(int fd);
void set_nonblocking(int fd);
void set_nodelay(int fd);

/// Raises the open-file soft limit towards the hard limit.
void raise_fd_limit();

}  // namespace mqttst::net
