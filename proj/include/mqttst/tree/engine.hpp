#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "mqttst/broker_id.hpp"
#include "mqttst/wire/packet.hpp"

// Spanning-tree state machine for a broker mesh. Every operation takes the
// current TreeState by value and returns the successor state together with
// the I/O the caller must perform. Nothing here touches sockets or clocks.

namespace mqttst::tree {

using Micros = std::chrono::microseconds;
/// Monotonic time, as an offset from an arbitrary epoch.
using Timestamp = Micros;
/// Identifies one logical bridge. Chosen by the caller; never reused for a
/// different link incarnation.
using ConnHandle = std::uint64_t;

enum class Role { Root, Designated, Blocked };
const char* to_string(Role role);

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// round(alpha * cpu_mhz + beta * ram_mb), rounding halves away from zero.
/// Throws ConfigError for negative or non-finite weights, for alpha == beta == 0,
/// and for results that do not fit the 48-bit relayed capability field.
std::uint64_t compute_capability(std::uint64_t cpu_mhz, std::uint64_t ram_mb, double alpha, double beta);

struct RootCandidate {
  std::uint64_t capability = 0;
  BrokerId id;
};

/// Strict total order used for election: higher capability wins, ties go to the lower id.
bool better_root(const RootCandidate& a, const RootCandidate& b);

struct Timers {
  Micros hello_interval{5'000'000};
  Micros keepalive_timeout{15'000'000};
  Micros tc_holdoff{10'000'000};

  bool operator==(const Timers&) const = default;

  /// hello = keep_alive / 2, timeout = 1.5 * keep_alive, holdoff = 2 * hello.
  static Timers from_keep_alive(std::chrono::milliseconds keep_alive);
};

/// Relayed information older than this many hops is discarded; bounds the
/// lifetime of stale root information circulating after a failure.
inline constexpr std::uint8_t kMaxHops = 64;

/// EWMA with weight 1/8 on the new sample; the first sample is taken as is.
std::uint64_t smooth_rtt(std::uint64_t current_us, std::uint64_t sample_us);

struct ConnectionEntry {
  BrokerId peer;
  Role role = Role::Designated;
  std::uint64_t rtt_us = 0;
  std::uint64_t peer_capability = 0;
  std::optional<wire::BpduPayload> last_bpdu;
  Timestamp last_heard{};

  bool operator==(const ConnectionEntry&) const = default;
};

struct TreeState {
  BrokerId self_id;
  std::uint64_t self_capability = 0;
  BrokerId believed_root;
  std::uint64_t believed_root_capability = 0;
  std::uint64_t root_path_cost_us = 0;
  std::uint8_t hops = 0;
  std::optional<ConnHandle> root_connection;
  std::map<ConnHandle, ConnectionEntry> connections;
  Timestamp tc_holdoff_until{};
  Timestamp next_hello{};
  Timers timers;

  bool is_root() const { return believed_root == self_id; }
  bool operator==(const TreeState&) const = default;
};

struct SendBpdu {
  ConnHandle connection = 0;
  wire::BpduPayload bpdu;
  bool operator==(const SendBpdu&) const = default;
};

struct SetForwarding {
  ConnHandle connection = 0;
  bool forwarding = true;
  bool operator==(const SetForwarding&) const = default;
};

struct ScheduleTick {
  Micros delay{};
  bool operator==(const ScheduleTick&) const = default;
};

/// Emitted by tick() when a connection has been silent past the keep-alive
/// timeout; the state has already been updated as for on_link_down, the
/// caller only has to tear down the transport.
struct ConnectionExpired {
  ConnHandle connection = 0;
  bool operator==(const ConnectionExpired&) const = default;
};

using Action = std::variant<SendBpdu, SetForwarding, ScheduleTick, ConnectionExpired>;

struct Step {
  TreeState state;
  std::vector<Action> actions;
  /// Set when the event was rejected (for example a BPDU on an unknown handle).
  std::optional<std::string> error;
};

/// A fresh broker believes it is the root.
TreeState initial_state(BrokerId self, std::uint64_t capability, Timers timers, Timestamp now);

Step add_connection(TreeState state, ConnHandle handle, BrokerId peer, Timestamp now);
Step on_rtt_sample(TreeState state, ConnHandle handle, std::uint64_t sample_us, Timestamp now);
Step on_bpdu(TreeState state, ConnHandle handle, const wire::BpduPayload& bpdu, Timestamp now);
Step on_link_down(TreeState state, ConnHandle handle, Timestamp now);
Step tick(TreeState state, Timestamp now);

/// The information this broker currently advertises to its neighbours.
wire::BpduPayload advertised_bpdu(const TreeState& state, bool tc_flag = false);
/// The advertisement as sent on one connection, flagged when it is our root connection.
wire::BpduPayload bpdu_for(const TreeState& state, ConnHandle to, bool tc_flag = false);

/// Empty when the structural invariants hold, otherwise a description of the violation.
std::optional<std::string> check_invariants(const TreeState& state);

}  // namespace mqttst::tree
