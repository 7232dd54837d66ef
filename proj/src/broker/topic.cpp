#include "mqttst/broker/topic.hpp"

namespace mqttst::broker {

namespace {

class Levels {
 public:
  explicit Levels(std::string_view text) : text_(text) {}
  bool done() const { return done_; }
  std::string_view next() {
    const auto slash = text_.find('/', pos_);
    if (slash == std::string_view::npos) {
      done_ = true;
      return text_.substr(pos_);
    }
    auto level = text_.substr(pos_, slash - pos_);
    pos_ = slash + 1;
    return level;
  }

 private:
  std::string_view text_;
  std::size_t pos_ = 0;
  bool done_ = false;
};

}  // namespace

bool valid_topic_name(std::string_view topic) {
  return !topic.empty() && topic.find_first_of("+#") == std::string_view::npos &&
         topic.find('\0') == std::string_view::npos;
}

bool valid_topic_filter(std::string_view filter) {
  if (filter.empty() || filter.find('\0') != std::string_view::npos) return false;
  Levels levels(filter);
  while (!levels.done()) {
    const auto level = levels.next();
    if (level.find_first_of("+#") == std::string_view::npos) continue;
    if (level.size() != 1) return false;
    if (level == "#" && !levels.done()) return false;
  }
  return true;
}

bool topic_matches(std::string_view filter, std::string_view topic) {
  if (!topic.empty() && topic.front() == '$' && !filter.empty() && (filter.front() == '+' || filter.front() == '#')) {
    return false;
  }
  Levels f(filter);
  Levels t(topic);
  while (!f.done()) {
    const auto level = f.next();
    if (level == "#") return true;
    if (t.done()) return false;
    const auto other = t.next();
    if (level != "+" && level != other) return false;
  }
  return t.done();
}

}  // namespace mqttst::broker
