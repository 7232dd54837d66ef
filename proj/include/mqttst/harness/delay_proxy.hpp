#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "mqttst/expected.hpp"
#include "mqttst/net/socket.hpp"

namespace mqttst::harness {

/// TCP relay that holds every chunk for a fixed one-way delay in each
/// direction. All routes share one background thread.
class DelayProxy {
 public:
  DelayProxy();
  ~DelayProxy();
  DelayProxy(const DelayProxy&) = delete;
  DelayProxy& operator=(const DelayProxy&) = delete;

  /// Listens on 127.0.0.1 (free port) and relays to host:port. Safe to call while running.
  Expected<std::uint16_t, std::string> add_route(const std::string& host, std::uint16_t port,
                                                 std::chrono::microseconds one_way);
  void stop();

  std::uint64_t connections_accepted() const { return accepted_; }
  std::uint64_t bytes_relayed() const { return bytes_; }

 private:
  struct Route;
  struct Pair;
  void run();

  std::mutex mu_;
  std::vector<std::unique_ptr<Route>> incoming_;
  net::Fd wake_read_;
  net::Fd wake_write_;
  std::atomic<bool> stop_{false};
  std::atomic<std::uint64_t> accepted_{0};
  std::atomic<std::uint64_t> bytes_{0};
  std::thread thread_;
};

}  // namespace mqttst::harness
