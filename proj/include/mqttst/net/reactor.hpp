#pragma once

#include <atomic>
#include <chrono>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mqttst/net/socket.hpp"
#include "mqttst/node.hpp"

namespace mqttst::net {

/// poll()-based event loop that owns the sockets of one broker node.
class Reactor {
 public:
  /// Throws std::runtime_error when the listening socket cannot be opened.
  Reactor(Node& node, const std::string& bind_address, std::uint16_t port);

  std::uint16_t port() const { return port_; }
  void run(const std::atomic<bool>& stop);
  void poll_once(std::chrono::milliseconds max_wait);
  std::size_t socket_count() const { return sockets_.size(); }

  /// Called once per loop iteration with the current time.
  std::function<void(Timestamp)> on_iteration;

 private:
  struct Socket {
    Fd fd;
    wire::Bytes wbuf;
    std::size_t woff = 0;
    bool connecting = false;
    bool closing = false;
  };

  void pump_node();
  void flush(ConnId id);
  void drop(ConnId id, bool notify);
  void accept_all();
  void read_from(ConnId id);

  Node& node_;
  Fd listener_;
  std::uint16_t port_ = 0;
  std::map<ConnId, Socket> sockets_;
  std::vector<ConnId> closed_;
  ConnId next_accept_ = 1;
  Timestamp last_timer_{};
  std::vector<std::uint8_t> read_buf_;
};

}  // namespace mqttst::net
