#include "mqttst/tree/engine.hpp"

#include <cmath>
#include <tuple>

namespace mqttst::tree {

namespace {

// Priority of a path towards the root; lower is better.
struct PathVector {
  RootCandidate root;
  std::uint64_t cost = 0;
  std::uint64_t via_capability = 0;
  BrokerId via_id;
};

// -1 when a is better, 1 when b is better, 0 when equal.
int compare_paths(const PathVector& a, const PathVector& b) {
  if (better_root(a.root, b.root)) return -1;
  if (better_root(b.root, a.root)) return 1;
  if (a.cost != b.cost) return a.cost < b.cost ? -1 : 1;
  if (a.via_capability != b.via_capability) return a.via_capability > b.via_capability ? -1 : 1;
  if (a.via_id != b.via_id) return a.via_id < b.via_id ? -1 : 1;
  return 0;
}

// Designation on a non-root connection: whoever advertises the better
// (root, cost, capability, id) vector forwards on the link.
bool we_are_designated(const TreeState& s, const wire::BpduPayload& peer) {
  PathVector ours{{s.believed_root_capability, s.believed_root}, s.root_path_cost_us, s.self_capability, s.self_id};
  PathVector theirs{{peer.root_capability, peer.root_id}, peer.root_path_cost_us, peer.sender_capability,
                    peer.sender_id};
  return compare_paths(ours, theirs) < 0;
}

struct Advert {
  BrokerId root;
  std::uint64_t root_capability;
  std::uint64_t cost;
  std::uint8_t hops;
  std::optional<ConnHandle> root_connection;  // neighbours learn which of them we route through
  bool operator==(const Advert&) const = default;
};

Advert advert_of(const TreeState& s) {
  return {s.believed_root, s.believed_root_capability, s.root_path_cost_us, s.hops, s.root_connection};
}

void recompute(TreeState& s) {
  PathVector best{{s.self_capability, s.self_id}, 0, s.self_capability, s.self_id};
  std::optional<ConnHandle> best_conn;
  std::uint8_t best_hops = 0;

  for (const auto& [handle, entry] : s.connections) {
    if (!entry.last_bpdu || entry.rtt_us == 0) continue;
    const auto& b = *entry.last_bpdu;
    if (b.root_id == s.self_id) continue;
    if (b.hops >= kMaxHops) continue;
    // The peer reaches the root through us; its cost already includes ours.
    if (b.root_connection) continue;
    PathVector candidate{{b.root_capability, b.root_id}, b.root_path_cost_us + entry.rtt_us,
                         entry.peer_capability, entry.peer};
    if (compare_paths(candidate, best) < 0) {
      best = candidate;
      best_conn = handle;
      best_hops = static_cast<std::uint8_t>(b.hops + 1);
    }
  }

  s.believed_root = best.root.id;
  s.believed_root_capability = best.root.capability;
  s.root_path_cost_us = best_conn ? best.cost : 0;
  s.hops = best_conn ? best_hops : 0;
  s.root_connection = best_conn;

  for (auto& [handle, entry] : s.connections) {
    if (best_conn && handle == *best_conn) {
      entry.role = Role::Root;
    } else if (s.is_root() || !entry.last_bpdu || entry.last_bpdu->root_connection) {
      entry.role = Role::Designated;
    } else {
      entry.role = we_are_designated(s, *entry.last_bpdu) ? Role::Designated : Role::Blocked;
    }
  }
}

std::map<ConnHandle, Role> roles_of(const TreeState& s) {
  std::map<ConnHandle, Role> out;
  for (const auto& [h, e] : s.connections) out.emplace(h, e.role);
  return out;
}

void emit_role_changes(const TreeState& s, const std::map<ConnHandle, Role>& before,
                       std::vector<Action>& actions) {
  for (const auto& [h, e] : s.connections) {
    auto it = before.find(h);
    if (it != before.end() && it->second == e.role) continue;
    actions.push_back(SetForwarding{h, e.role != Role::Blocked});
  }
}

void send_to_all(const TreeState& s, bool tc, std::vector<Action>& actions) {
  for (const auto& [h, e] : s.connections) actions.push_back(SendBpdu{h, bpdu_for(s, h, tc)});
}

// Recomputes and emits forwarding changes plus BPDUs when the advertisement moved.
void settle(TreeState& s, const Advert& before_advert, const std::map<ConnHandle, Role>& before_roles,
            std::vector<Action>& actions) {
  recompute(s);
  emit_role_changes(s, before_roles, actions);
  if (advert_of(s) != before_advert) send_to_all(s, false, actions);
}

// Forget everything learned from neighbours and restart the election with
// this broker as root; the caller floods the TC-flagged result.
void reset_to_self(TreeState& s, Timestamp now) {
  for (auto& [h, e] : s.connections) e.last_bpdu.reset();
  s.believed_root = s.self_id;
  s.believed_root_capability = s.self_capability;
  s.root_path_cost_us = 0;
  s.hops = 0;
  s.root_connection.reset();
  s.tc_holdoff_until = now + s.timers.tc_holdoff;
}

}  // namespace

const char* to_string(Role role) {
  switch (role) {
    case Role::Root: return "root";
    case Role::Designated: return "designated";
    case Role::Blocked: return "blocked";
  }
  return "?";
}

std::uint64_t compute_capability(std::uint64_t cpu_mhz, std::uint64_t ram_mb, double alpha, double beta) {
  if (!std::isfinite(alpha) || !std::isfinite(beta) || alpha < 0 || beta < 0) {
    throw ConfigError("capability weights must be finite and non-negative");
  }
  if (alpha == 0 && beta == 0) throw ConfigError("alpha and beta cannot both be zero");
  const long double value = static_cast<long double>(alpha) * static_cast<long double>(cpu_mhz) +
                            static_cast<long double>(beta) * static_cast<long double>(ram_mb);
  const long double rounded = std::floor(value + 0.5L);
  if (rounded > static_cast<long double>(wire::kMaxCapability)) {
    throw ConfigError("capability value exceeds 48 bits");
  }
  return static_cast<std::uint64_t>(rounded);
}

bool better_root(const RootCandidate& a, const RootCandidate& b) {
  if (a.capability != b.capability) return a.capability > b.capability;
  return a.id < b.id;
}

Timers Timers::from_keep_alive(std::chrono::milliseconds keep_alive) {
  const auto ka = std::chrono::duration_cast<Micros>(keep_alive);
  Timers t;
  t.hello_interval = ka / 2;
  t.keepalive_timeout = ka * 3 / 2;
  t.tc_holdoff = t.hello_interval * 2;
  return t;
}

std::uint64_t smooth_rtt(std::uint64_t current_us, std::uint64_t sample_us) {
  if (sample_us == 0) sample_us = 1;
  if (current_us == 0) return sample_us;
  const auto cur = static_cast<std::int64_t>(current_us);
  const auto next = cur + (static_cast<std::int64_t>(sample_us) - cur) / 8;
  return next > 0 ? static_cast<std::uint64_t>(next) : 1;
}

wire::BpduPayload advertised_bpdu(const TreeState& s, bool tc_flag) {
  wire::BpduPayload b;
  b.root_id = s.believed_root;
  b.sender_id = s.self_id;
  b.sender_capability = s.self_capability;
  b.root_path_cost_us = s.root_path_cost_us;
  b.tc_flag = tc_flag;
  b.root_capability = s.believed_root_capability;
  b.hops = s.hops;
  return b;
}

wire::BpduPayload bpdu_for(const TreeState& s, ConnHandle to, bool tc_flag) {
  auto b = advertised_bpdu(s, tc_flag);
  b.root_connection = s.root_connection == to;
  return b;
}

TreeState initial_state(BrokerId self, std::uint64_t capability, Timers timers, Timestamp now) {
  TreeState s;
  s.self_id = self;
  s.self_capability = capability;
  s.believed_root = self;
  s.believed_root_capability = capability;
  s.timers = timers;
  s.next_hello = now + timers.hello_interval;
  return s;
}

Step add_connection(TreeState s, ConnHandle handle, BrokerId peer, Timestamp now) {
  Step step;
  if (s.connections.contains(handle)) {
    step.state = std::move(s);
    step.error = "connection handle already registered";
    return step;
  }
  ConnectionEntry entry;
  entry.peer = peer;
  entry.last_heard = now;
  s.connections.emplace(handle, entry);
  const auto before_advert = advert_of(s);
  auto before_roles = roles_of(s);
  before_roles.erase(handle);
  recompute(s);
  emit_role_changes(s, before_roles, step.actions);
  if (advert_of(s) != before_advert) {
    send_to_all(s, false, step.actions);
  } else {
    step.actions.push_back(SendBpdu{handle, bpdu_for(s, handle)});
  }
  step.state = std::move(s);
  return step;
}

Step on_rtt_sample(TreeState s, ConnHandle handle, std::uint64_t sample_us, Timestamp now) {
  Step step;
  auto it = s.connections.find(handle);
  if (it == s.connections.end()) {
    step.state = std::move(s);
    step.error = "rtt sample for unknown connection";
    return step;
  }
  (void)now;
  const auto before_advert = advert_of(s);
  const auto before_roles = roles_of(s);
  it->second.rtt_us = smooth_rtt(it->second.rtt_us, sample_us);
  settle(s, before_advert, before_roles, step.actions);
  step.state = std::move(s);
  return step;
}

Step on_bpdu(TreeState s, ConnHandle handle, const wire::BpduPayload& bpdu, Timestamp now) {
  Step step;
  auto it = s.connections.find(handle);
  if (it == s.connections.end()) {
    step.state = std::move(s);
    step.error = "BPDU from unknown connection";
    return step;
  }
  const auto before_advert = advert_of(s);
  const auto before_roles = roles_of(s);
  it->second.last_heard = now;
  it->second.peer_capability = bpdu.sender_capability;

  if (bpdu.tc_flag && now >= s.tc_holdoff_until) {
    reset_to_self(s, now);
    s.connections.at(handle).last_bpdu = bpdu;
    recompute(s);
    emit_role_changes(s, before_roles, step.actions);
    send_to_all(s, true, step.actions);
    step.state = std::move(s);
    return step;
  }

  it->second.last_bpdu = bpdu;
  settle(s, before_advert, before_roles, step.actions);

  // Answer a neighbour that still believes in a worse root so it can catch up
  // without waiting for the next hello.
  const bool advertised_now = advert_of(s) != before_advert;
  if (!advertised_now &&
      better_root({s.believed_root_capability, s.believed_root}, {bpdu.root_capability, bpdu.root_id})) {
    step.actions.push_back(SendBpdu{handle, bpdu_for(s, handle)});
  }
  step.state = std::move(s);
  return step;
}

Step on_link_down(TreeState s, ConnHandle handle, Timestamp now) {
  Step step;
  if (!s.connections.contains(handle)) {
    step.state = std::move(s);
    return step;
  }
  s.connections.erase(handle);
  const auto before_roles = roles_of(s);
  reset_to_self(s, now);
  recompute(s);
  emit_role_changes(s, before_roles, step.actions);
  send_to_all(s, true, step.actions);
  step.state = std::move(s);
  return step;
}

Step tick(TreeState s, Timestamp now) {
  Step step;
  std::vector<ConnHandle> expired;
  for (const auto& [h, e] : s.connections) {
    if (now - e.last_heard > s.timers.keepalive_timeout) expired.push_back(h);
  }
  for (auto h : expired) {
    auto down = on_link_down(std::move(s), h, now);
    s = std::move(down.state);
    step.actions.push_back(ConnectionExpired{h});
    step.actions.insert(step.actions.end(), down.actions.begin(), down.actions.end());
  }
  if (now >= s.next_hello) {
    send_to_all(s, false, step.actions);
    s.next_hello = now + s.timers.hello_interval;
  }
  step.actions.push_back(ScheduleTick{s.next_hello - now});
  step.state = std::move(s);
  return step;
}

std::optional<std::string> check_invariants(const TreeState& s) {
  int root_roles = 0;
  for (const auto& [h, e] : s.connections) {
    if (e.role == Role::Root) ++root_roles;
  }
  if (root_roles > 1) return "more than one root connection";
  if (s.is_root()) {
    if (s.root_path_cost_us != 0) return "root broker with nonzero path cost";
    if (root_roles != 0) return "root broker with a root connection";
  } else if (root_roles != 1) {
    return "non-root broker without exactly one root connection";
  }
  return std::nullopt;
}

}  // namespace mqttst::tree
