#pragma once

#include <string_view>

namespace mqttst::broker {

/// Non-empty, no wildcard characters.
bool valid_topic_name(std::string_view topic);

/// Non-empty; '+' and '#' only as whole levels; '#' only as the last level.
bool valid_topic_filter(std::string_view filter);

/// Standard MQTT matching. "a/#" matches "a" itself, and filters starting
/// with a wildcard never match topics starting with '$'.
bool topic_matches(std::string_view filter, std::string_view topic);

}  // namespace mqttst::broker
