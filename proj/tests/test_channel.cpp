#include <gtest/gtest.h>

#include "zombieload/channel/covert.hpp"

using namespace zl;
using namespace zl::channel;

TEST(Packet, EncodeLayout) {
  const auto p = encode_packet(0x41, 7);
  EXPECT_EQ(p.bytes(), (std::array<Byte, 4>{0x41, 0xBF, 0x07, 0xC3}));
  EXPECT_EQ(p.word(), 0xC307BF41u);
  EXPECT_EQ(Packet::from_word(p.word()), p);
  EXPECT_TRUE(p.well_formed());
  EXPECT_EQ(encode_packet(0, 0).checksum, 0);
}

TEST(Packet, TransientVerifyExhaustive) {
  std::size_t accepted = 0;
  for (unsigned d = 0; d < 256; ++d) {
    for (unsigned c = 0; c < 256; ++c) {
      const Packet p{static_cast<Byte>(d), static_cast<Byte>(c), 0x55, kDefaultPrefix};
      const bool valid = (d + c) % 256 == 0;  // two's-complement checksum
      OracleArray oracle;
      oracle.touch(transient_verify(p));
      if (valid) {
        ++accepted;
        EXPECT_EQ(oracle.scan(), std::vector<Byte>{static_cast<Byte>(d)});
        oracle.touch(transient_verify_seq(p));
        EXPECT_EQ(oracle.scan(), std::vector<Byte>{0x55});
      } else {
        ASSERT_EQ(oracle.cached_count(), 0u) << d << "," << c;
      }
    }
  }
  EXPECT_EQ(accepted, 256u);
}

TEST(Packet, OracleScanResets) {
  OracleArray o;
  o.touch(3);
  o.touch(200);
  o.touch(256);
  EXPECT_EQ(o.scan(), (std::vector<Byte>{3, 200}));
  EXPECT_EQ(o.cached_count(), 0u);
  EXPECT_EQ(o.footprint_bytes(), 256u * kPageSize);
  EXPECT_THROW(OracleArray(BitEncoding{1, false}), Error);
  EXPECT_EQ(OracleArray(BitEncoding{2, false}).footprint_bytes(), 256u * 128u);
}

TEST(Receiver, RejectsAndCounts) {
  Receiver rx;
  auto bytes = [](Packet p) { return p.bytes(); };
  EXPECT_EQ(rx.on_candidate(bytes(encode_packet(10, 0))), std::optional<std::uint64_t>(0));
  EXPECT_EQ(rx.on_candidate(bytes(encode_packet(10, 0))), std::nullopt);  // duplicate
  Packet bad = encode_packet(11, 1);
  bad.checksum ^= 0x10;
  EXPECT_EQ(rx.on_candidate(bytes(bad)), std::nullopt);
  EXPECT_EQ(rx.on_candidate(bytes(encode_packet(11, 1, 0x00))), std::nullopt);  // foreign prefix
  EXPECT_EQ(rx.on_candidate(bytes(encode_packet(13, 3))), std::optional<std::uint64_t>(3));
  auto s = rx.stats();
  EXPECT_EQ(s.packets_ok, 2u);
  EXPECT_EQ(s.duplicates, 1u);
  EXPECT_EQ(s.packets_rejected, 1u);
  EXPECT_EQ(s.prefix_mismatch, 1u);
  EXPECT_EQ(s.gap, std::optional<std::uint64_t>(1));
  EXPECT_EQ(rx.delivered(), std::vector<Byte>{10});
  rx.on_candidate(bytes(encode_packet(12, 2)));
  rx.on_candidate(bytes(encode_packet(11, 1)));
  EXPECT_EQ(rx.delivered(), (std::vector<Byte>{10, 11, 12, 13}));
  EXPECT_EQ(rx.stats().gap, std::nullopt);
}

TEST(Receiver, SequenceWrapsAcrossWindows) {
  Receiver rx;
  std::vector<Byte> payload(700);
  for (std::size_t i = 0; i < payload.size(); ++i) payload[i] = static_cast<Byte>(i * 13);
  for (std::size_t i = 0; i < payload.size(); ++i)
    rx.on_candidate(encode_packet(payload[i], static_cast<Byte>(i)).bytes());
  EXPECT_EQ(rx.delivered(), payload);
  // An old sequence number after wrap-around is behind the window.
  EXPECT_EQ(rx.on_candidate(encode_packet(1, static_cast<Byte>(650)).bytes()), std::nullopt);
}

TEST(ReceiverProperty, ReordersDuplicatesAndCorruptionWithinWindow) {
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    Rng rng(seed);
    std::vector<Byte> payload(1 + uniform_below(rng, kSequenceWindow));
    for (auto& b : payload) b = static_cast<Byte>(uniform_below(rng, 256));
    std::vector<Packet> wire;
    for (std::size_t i = 0; i < payload.size(); ++i) {
      const auto p = encode_packet(payload[i], static_cast<Byte>(i));
      for (std::size_t c = 0, n = 1 + uniform_below(rng, 3); c < n; ++c) wire.push_back(p);
      Packet bad = p;
      bad.data ^= static_cast<Byte>(1 + uniform_below(rng, 255));
      wire.push_back(bad);
    }
    std::shuffle(wire.begin(), wire.end(), rng);
    Receiver rx;
    for (const auto& p : wire) rx.on_candidate(p.bytes());
    EXPECT_EQ(rx.delivered(), payload) << "seed " << seed;
    EXPECT_EQ(rx.stats().packets_ok, payload.size());
    EXPECT_EQ(rx.stats().packets_rejected, payload.size());
  }
}

TEST(Sender, SlotLayout) {
  uarch::Machine m;
  const std::vector<Byte> payload{1, 2, 3};
  SenderConfig cfg;
  const auto ops = send(payload, m, cfg, 100);
  EXPECT_EQ(ops.size(), 3 * (cfg.addresses + 2 * cfg.repeats));
  EXPECT_EQ(cfg.slot_ticks(), (2 + 2 * 64) * 2u);
  EXPECT_EQ(ops.front().at, 100u);
  EXPECT_EQ(ops[ops.size() / 3].at, 100 + cfg.slot_ticks());
  EXPECT_THROW(send(std::span<const Byte>{}, m), Error);
}

TEST(Sender, CopiesOccupyDistinctFillBufferEntries) {
  uarch::Machine m;
  std::vector<uarch::TimedOp> ops;
  setup_sender(m);
  append_slot(ops, 0, encode_packet(0x5A, 9), SenderConfig{});
  uarch::OpCursor cursor(ops);
  cursor.advance(m, ops.back().at);
  const Line want = packet_line(encode_packet(0x5A, 9));
  std::size_t copies = 0;
  for (const auto& e : m.fill_buffer().entries()) copies += e.state != uarch::SlotState::Empty && e.data == want;
  EXPECT_GE(copies, 2u);
}

TEST(Loopback, AllByteValuesNoiseFree) {
  std::vector<Byte> payload(256);
  for (unsigned i = 0; i < 256; ++i) payload[i] = static_cast<Byte>(i);
  uarch::Machine m;
  const auto r = run_loopback(m, sampler::noise_free(), payload, LoopbackConfig{}, 4);
  EXPECT_TRUE(r.complete);
  EXPECT_EQ(r.received, payload);
  EXPECT_EQ(r.payload_errors, 0u);
  EXPECT_EQ(r.stats.packets_rejected, 0u);
}

TEST(Loopback, NoisyPresetStillErrorFree) {
  std::vector<Byte> payload(1024);
  Rng rng(8);
  for (auto& b : payload) b = static_cast<Byte>(uniform_below(rng, 256));
  uarch::Machine m;
  const auto r = run_loopback(m, sampler::preset("v1-tsx"), payload, LoopbackConfig{}, 8);
  EXPECT_TRUE(r.complete);
  EXPECT_EQ(r.payload_errors, 0u);
  EXPECT_GT(r.stats.packets_rejected + r.stats.prefix_mismatch, 0u);  // noise did reach the receiver
  EXPECT_NEAR(r.kbit_per_s, 8.0 * 1024 / r.simulated_seconds / 1000.0, 1e-9);
}

TEST(Loopback, GivesUpAtTimeLimit) {
  std::vector<Byte> payload(64, 7);
  auto v = sampler::preset("v1-tsx");
  v.true_positive_rate = 0;
  LoopbackConfig cfg;
  cfg.max_seconds = 0.05;
  uarch::Machine m;
  const auto r = run_loopback(m, v, payload, cfg, 1);
  EXPECT_FALSE(r.complete);
  EXPECT_EQ(r.payload_errors, payload.size());
  cfg.window = 0;
  EXPECT_THROW(run_loopback(m, v, payload, cfg, 1), Error);
}

TEST(Receive, CollatesSamplesByTimestamp) {
  std::vector<sampler::ZombieSample> s;
  auto push = [&](Tick t, Packet p, unsigned n = 4) {
    auto b = p.bytes();
    for (unsigned i = 0; i < n; ++i) s.push_back({t, static_cast<Byte>(i), b[i]});
  };
  push(1, encode_packet(0x61, 0));
  push(2, encode_packet(0x62, 1), 3);  // incomplete candidate
  push(3, encode_packet(0x62, 1));
  const auto r = receive(s);
  EXPECT_EQ(r.payload, (std::vector<Byte>{0x61, 0x62}));
  EXPECT_EQ(r.stats.packets_ok, 2u);
}
