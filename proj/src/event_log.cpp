#include "mqttst/event_log.hpp"

#include <fstream>

namespace mqttst {

EventLog::~EventLog() {
  if (file_) std::fclose(file_);
}

bool EventLog::open(const std::string& path) {
  if (file_) std::fclose(file_);
  file_ = std::fopen(path.c_str(), "a");
  return file_ != nullptr;
}

void EventLog::write(tree::Timestamp t, const std::string& kind, const std::string& detail) {
  if (!file_) return;
  std::fprintf(file_, "%lld,%s,%s\n", static_cast<long long>(t.count()), kind.c_str(), detail.c_str());
  std::fflush(file_);
}

std::optional<EventRecord> parse_event_line(const std::string& line) {
  const auto a = line.find(',');
  if (a == std::string::npos) return std::nullopt;
  const auto b = line.find(',', a + 1);
  if (b == std::string::npos) return std::nullopt;
  EventRecord r;
  try {
    r.t = tree::Timestamp(std::stoll(line.substr(0, a)));
  } catch (const std::exception&) {
    return std::nullopt;
  }
  r.kind = line.substr(a + 1, b - a - 1);
  r.detail = line.substr(b + 1);
  return r;
}

std::vector<EventRecord> read_event_log(const std::string& path) {
  std::vector<EventRecord> out;
  std::ifstream in(path);
  for (std::string line; std::getline(in, line);) {
    if (auto r = parse_event_line(line)) out.push_back(std::move(*r));
  }
  return out;
}

std::string detail_field(const std::string& detail, const std::string& key) {
  const std::string needle = key + "=";
  std::size_t pos = 0;
  while ((pos = detail.find(needle, pos)) != std::string::npos) {
    if (pos == 0 || detail[pos - 1] == ' ') {
      const auto start = pos + needle.size();
      const auto end = detail.find(' ', start);
      return detail.substr(start, end == std::string::npos ? std::string::npos : end - start);
    }
    pos += needle.size();
  }
  return {};
}

}  // namespace mqttst
