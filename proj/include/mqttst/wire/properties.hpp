#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "mqttst/wire/packet.hpp"

namespace mqttst::wire {

inline constexpr std::uint8_t kUserPropertyId = 0x26;

/// Appends an MQTT 5 User Property (key/value string pair) to raw property bytes.
void append_user_property(Bytes& properties, std::string_view key, std::string_view value);

/// First User Property value with the given key, if the property block is well formed.
std::optional<std::string> find_user_property(const Bytes& properties, std::string_view key);

}  // namespace mqttst::wire
