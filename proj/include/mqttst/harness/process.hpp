#pragma once

#include <sys/types.h>

#include <chrono>
#include <string>
#include <vector>

#include "mqttst/expected.hpp"

namespace mqttst::harness {

/// A child process with stdout and stderr appended to a log file.
class Process {
 public:
  Process() = default;
  Process(const Process&) = delete;
  Process& operator=(const Process&) = delete;
  Process(Process&& other) noexcept : pid_(other.pid_) { other.pid_ = -1; }
  Process& operator=(Process&& other) noexcept;
  ~Process();

  static Expected<Process, std::string> spawn(const std::vector<std::string>& argv, const std::string& log_path);

  bool running();
  /// SIGKILL, no chance to clean up.
  void kill();
  /// SIGTERM, then SIGKILL after the grace period.
  void terminate(std::chrono::milliseconds grace = std::chrono::milliseconds(3000));
  pid_t pid() const { return pid_; }
  /// Exit status once reaped; -1 while running or never started.
  int exit_status() const { return status_; }

 private:
  void reap(bool block);
  pid_t pid_ = -1;
  int status_ = -1;
};

}  // namespace mqttst::harness
