#include <gtest/gtest.h>

#include "mqttst/client/client.hpp"
#include "mqttst/wire/codec.hpp"

namespace {

using namespace mqttst;
using namespace mqttst::client;

wire::Packet only_packet(const wire::Bytes& bytes) {
  auto p = wire::decode_packet(bytes);
  EXPECT_TRUE(p);
  return *p;
}

void feed(Client& c, const wire::Packet& p) { c.on_data(wire::encode_packet(p)); }

TEST(Client, ConnectCarriesOptions) {
  Options o;
  o.client_id = "abc";
  o.keep_alive_s = 7;
  o.will = wire::Will{"w", {1}, 1, true, {}};
  Client c(o);
  c.connect();
  auto p = only_packet(c.take_output());
  const auto& connect = std::get<wire::Connect>(p);
  EXPECT_EQ(connect.client_id, "abc");
  EXPECT_EQ(connect.keep_alive_s, 7);
  ASSERT_TRUE(connect.will);
  EXPECT_TRUE(connect.will->retain);
  EXPECT_FALSE(c.connected());
  feed(c, wire::Connack{});
  EXPECT_TRUE(c.connected());
  auto ev = c.take_events();
  ASSERT_EQ(ev.size(), 1u);
  EXPECT_TRUE(std::holds_alternative<Connected>(ev[0]));
}

TEST(Client, Qos2PublishCompletesOnPubcomp) {
  Client c({"p"});
  const auto id = c.publish("t", {1, 2}, 2);
  EXPECT_NE(id, 0);
  c.take_output();
  EXPECT_EQ(c.inflight(), 1u);
  feed(c, wire::Pubrec{id, 0, {}});
  auto rel = std::get<wire::Pubrel>(only_packet(c.take_output()));
  EXPECT_EQ(rel.packet_id, id);
  EXPECT_TRUE(c.take_events().empty());
  feed(c, wire::Pubcomp{id, 0, {}});
  auto ev = c.take_events();
  ASSERT_EQ(ev.size(), 1u);
  EXPECT_EQ(std::get<PublishComplete>(ev[0]).packet_id, id);
  EXPECT_EQ(c.inflight(), 0u);
}

TEST(Client, Qos0CompletesImmediately) {
  Client c({"p"});
  EXPECT_EQ(c.publish("t", {}, 0), 0);
  auto ev = c.take_events();
  ASSERT_EQ(ev.size(), 1u);
  EXPECT_TRUE(std::holds_alternative<PublishComplete>(ev[0]));
}

TEST(Client, Qos2ReceiveDeduplicatesUntilPubrel) {
  Client c({"s"});
  wire::Publish p;
  p.qos = 2;
  p.packet_id = 5;
  p.topic = "t";
  feed(c, p);
  feed(c, p);
  EXPECT_EQ(c.take_events().size(), 1u);
  feed(c, wire::Pubrel{5, 0, {}});
  c.take_output();
  feed(c, p);
  EXPECT_EQ(c.take_events().size(), 1u);
}

TEST(Client, PartialFramesAreBuffered) {
  Client c({"s"});
  wire::Publish p;
  p.topic = "topic";
  p.payload = wire::Bytes(300, 7);
  auto bytes = wire::encode_packet(p);
  for (auto b : bytes) c.on_data(std::span<const std::uint8_t>(&b, 1));
  auto ev = c.take_events();
  ASSERT_EQ(ev.size(), 1u);
  EXPECT_EQ(std::get<MessageReceived>(ev[0]).payload.size(), 300u);
}

TEST(Client, GarbageIsProtocolError) {
  Client c({"s"});
  const wire::Bytes junk{0x00, 0x00};
  c.on_data(junk);
  auto ev = c.take_events();
  ASSERT_EQ(ev.size(), 1u);
  EXPECT_TRUE(std::holds_alternative<ProtocolError>(ev[0]));
}

}  // namespace
