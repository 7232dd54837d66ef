#pragma once

#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "mqttst/tree/engine.hpp"

namespace mqttst {

/// Append-only CSV of "t_us,kind,detail" rows, flushed per row so a killed
/// process loses nothing it already reported.
class EventLog {
 public:
  EventLog() = default;
  EventLog(const EventLog&) = delete;
  EventLog& operator=(const EventLog&) = delete;
  ~EventLog();

  bool open(const std::string& path);
  bool is_open() const { return file_ != nullptr; }
  void write(tree::Timestamp t, const std::string& kind, const std::string& detail);

 private:
  std::FILE* file_ = nullptr;
};

struct EventRecord {
  tree::Timestamp t{};
  std::string kind;
  std::string detail;
};

/// One "t_us,kind,detail" row; nullopt when malformed.
std::optional<EventRecord> parse_event_line(const std::string& line);
std::vector<EventRecord> read_event_log(const std::string& path);

/// Value of "key=value" inside a space-separated detail string.
std::string detail_field(const std::string& detail, const std::string& key);

}  // namespace mqttst
