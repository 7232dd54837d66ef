#pragma once

#include <chrono>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mqttst/client/client.hpp"
#include "mqttst/expected.hpp"
#include "mqttst/net/socket.hpp"

namespace mqttst::client {

/// Single MQTT connection driven synchronously; for tests and tools.
class BlockingClient {
 public:
  using Ms = std::chrono::milliseconds;

  static Expected<std::unique_ptr<BlockingClient>, std::string> connect(const std::string& host, std::uint16_t port,
                                                                         Options options, Ms timeout = Ms(5000));

  bool subscribe(const std::string& filter, std::uint8_t qos, Ms timeout = Ms(5000));
  /// Waits for the handshake to finish.
  bool publish(const std::string& topic, const wire::Bytes& payload, std::uint8_t qos, bool retain = false,
               Ms timeout = Ms(5000));
  /// Services the socket until `done` holds or the timeout passes.
  bool run_until(const std::function<bool()>& done, Ms timeout);
  bool wait_messages(std::size_t count, Ms timeout);

  void disconnect();
  /// Drops the connection with a TCP reset and no DISCONNECT.
  void abort();

  const std::vector<MessageReceived>& messages() const { return messages_; }
  void clear_messages() { messages_.clear(); }
  bool alive() const { return static_cast<bool>(fd_); }

 private:
  BlockingClient(net::Fd fd, Options options) : fd_(std::move(fd)), client_(std::move(options)) {}
  bool flush();
  bool service(Ms wait);
  void absorb_events();

  net::Fd fd_;
  Client client_;
  std::vector<MessageReceived> messages_;
  std::vector<std::uint16_t> completed_;
  std::vector<std::uint16_t> subscribed_;
  bool connected_ = false;
  bool refused_ = false;
};

}  // namespace mqttst::client
