#include <gtest/gtest.h>

#include <map>
#include <random>
#include <set>
#include <vector>

#include "fba/core.hpp"
#include "support.hpp"

namespace fba {
namespace {

Config config_of(std::size_t n) {
  Config c;
  for (std::size_t i = 0; i < n; ++i) c.roster.push_back(NodeId{static_cast<NodeIndex>(i), Bytes{static_cast<std::uint8_t>(i), 1}});
  return c;
}

ProtocolMessage pc(NodeIndex s, Value v, Iteration r) { return ProtocolMessage::make_precommit(s, std::move(v), r); }

TEST(Quorum, SpecExamples) {
  EXPECT_EQ(config_of(4).t_max(), 1u);
  EXPECT_EQ(quorum(config_of(4)), 3u);
  EXPECT_EQ(config_of(21).t_max(), 6u);
  EXPECT_EQ(quorum(config_of(21)), 13u);
  EXPECT_EQ(config_of(1).t_max(), 0u);
  EXPECT_EQ(quorum(config_of(1)), 1u);
}

TEST(Quorum, NeverExceedsN) {
  for (std::size_t n = 1; n <= 200; ++n) EXPECT_LE(quorum_size(n), n) << n;
}

// Two quorums overlap in at least t_max+1 nodes, hence in an honest one,
// exactly when n = 3·t_max + 1. Other residues are pinned as known failures.
TEST(Quorum, IntersectionHoldsExactlyForOptimalN) {
  std::set<std::size_t> majority_fail, overlap_fail;
  for (std::size_t n = 4; n <= 64; ++n) {
    const auto q = static_cast<long>(quorum_size(n));
    const auto t = static_cast<long>(max_faults(n));
    if (!(2 * q > static_cast<long>(n))) majority_fail.insert(n);
    if (!(2 * q - static_cast<long>(n) >= t + 1)) overlap_fail.insert(n);
    if (n % 3 == 1) {
      EXPECT_GT(2 * q, static_cast<long>(n)) << n;
      EXPECT_GE(2 * q - static_cast<long>(n), t + 1) << n;
    }
  }
  EXPECT_EQ(majority_fail, (std::set<std::size_t>{6}));
  std::set<std::size_t> expected;
  for (std::size_t n = 4; n <= 64; ++n)
    if (n % 3 != 1) expected.insert(n);
  EXPECT_EQ(overlap_fail, expected);
}

TEST(Value, SentinelsAreDistinct) {
  EXPECT_NE(Value::bottom(), Value::skip());
  EXPECT_NE(Value::payload(""), Value::bottom());
  EXPECT_NE(Value::payload(""), Value::skip());
  EXPECT_NE(Value::payload(Bytes{1}), Value::bottom());
  EXPECT_NE(Value::payload(Bytes{2}), Value::skip());
  EXPECT_EQ(Value::payload("abc"), Value::payload("abc"));
  EXPECT_TRUE(Value::bottom().decidable());
  EXPECT_FALSE(Value::skip().decidable());
}

TEST(Value, EncodingRoundTrip) {
  for (const auto& v : {Value::payload("hello"), Value::payload(""), Value::bottom(), Value::skip()})
    EXPECT_EQ(Value::decode(v.encode()), v);
  EXPECT_THROW(Value::decode(Bytes{}), DecodeError);
  EXPECT_THROW(Value::decode(Bytes{9}), DecodeError);
  EXPECT_THROW(Value::decode(Bytes{1, 0}), DecodeError);
  EXPECT_THROW(Value::payload(Bytes(kMaxValueBytes + 1)), InvalidMessage);
}

TEST(Message, CanonicalLayout) {
  auto m = ProtocolMessage::make_precommit(0x01020304, Value::payload("x"), 0x0a0b);
  m.signature = Bytes{0xee};
  const Bytes expected{2,    0x01, 0x02, 0x03, 0x04, 0, 0, 0, 0, 0, 0, 0x0a, 0x0b, 0, 0, 0, 2, 0, 'x',
                       0, 0, 0, 1, 0xee};
  EXPECT_EQ(m.encode(), expected);
  EXPECT_EQ(m.signing_payload(), Bytes(expected.begin(), expected.end() - 5));
  EXPECT_EQ(ProtocolMessage::decode(expected), m);
}

TEST(Message, RoundTripAllKinds) {
  std::vector<ProtocolMessage> msgs{
      ProtocolMessage::make_init(3, Value::payload("a"), VrfOutput{Bytes(32, 7), Bytes{1, 2}}),
      ProtocolMessage::make_precommit(1, Value::bottom(), 4),
      ProtocolMessage::make_commit(2, Value::skip(), 0),
      ProtocolMessage::make_fast(0, Value::payload("f")),
  };
  for (auto m : msgs) {
    m.signature = Bytes{1, 2, 3};
    EXPECT_EQ(ProtocolMessage::decode(m.encode()), m);
  }
  auto enc = msgs[1].encode();
  enc.pop_back();
  EXPECT_THROW(ProtocolMessage::decode(enc), DecodeError);
}

TEST(Message, StructuralValidation) {
  auto fast = ProtocolMessage::make_fast(0, Value::payload("f"));
  fast.iteration = 1;
  EXPECT_THROW(fast.validate(), InvalidMessage);
  auto init = ProtocolMessage::make_init(0, Value::payload("a"), VrfOutput{});
  init.vrf.reset();
  EXPECT_THROW(init.validate(), InvalidMessage);
  auto vote = ProtocolMessage::make_commit(0, Value::payload("a"), 1);
  vote.iteration.reset();
  EXPECT_THROW(vote.validate(), InvalidMessage);
}

TEST(Config, Validation) {
  auto c = config_of(4);
  EXPECT_NO_THROW(c.validate());
  c.pioneer = 4;
  EXPECT_THROW(c.validate(), ConfigError);
  c = config_of(4);
  c.roster[2].pubkey = c.roster[1].pubkey;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(Config{}.validate(), ConfigError);
}

TEST(Tally, DuplicateInsertIsEmptyDelta) {
  Tally t;
  auto m = pc(1, Value::payload("v"), 1);
  EXPECT_TRUE(t.insert(m).changed());
  auto d = t.insert(m);
  EXPECT_FALSE(d.changed());
  EXPECT_TRUE(d.duplicate);
  EXPECT_FALSE(d.equivocation);
}

TEST(Tally, EquivocationFlaggedNotCounted) {
  Tally t;
  t.insert(pc(1, Value::payload("v1"), 2));
  auto d = t.insert(pc(1, Value::payload("v2"), 2));
  EXPECT_TRUE(d.equivocation);
  EXPECT_FALSE(d.changed());
  EXPECT_EQ(t.count(MessageKind::PreCommit, 2, Value::payload("v2")), 0u);
  EXPECT_EQ(t.count(MessageKind::PreCommit, 2, Value::payload("v1")), 1u);
  ASSERT_EQ(t.equivocations().size(), 1u);
  EXPECT_EQ(t.equivocations()[0].second.value, Value::payload("v2"));
  EXPECT_TRUE(t.insert(pc(1, Value::payload("v2"), 2)).duplicate);
  EXPECT_EQ(t.equivocations().size(), 1u);
}

TEST(Tally, DistinctSendersReachQuorum) {
  Tally t;
  for (NodeIndex s = 0; s < 3; ++s) t.insert(pc(s, Value::payload("v"), 1));
  EXPECT_EQ(t.count(MessageKind::PreCommit, 1, Value::payload("v")), quorum(config_of(4)));
}

TEST(Tally, CountExamples) {
  Tally t;
  EXPECT_EQ(t.count(MessageKind::Commit, 1, Value::payload("v")), 0u);
  for (NodeIndex s = 0; s < 3; ++s) t.insert(ProtocolMessage::make_commit(s, Value::payload("v"), 1));
  EXPECT_EQ(t.count(MessageKind::Commit, 1, Value::payload("v")), 3u);
  Tally u;
  for (int i = 0; i < 3; ++i) u.insert(ProtocolMessage::make_commit(5, Value::payload("v"), 1));
  EXPECT_EQ(u.count(MessageKind::Commit, 1, Value::payload("v")), 1u);
}

TEST(Tally, InitEquivocatorsTracked) {
  Tally t;
  t.insert(ProtocolMessage::make_init(2, Value::payload("a"), VrfOutput{Bytes(32, 1), {}}));
  t.insert(ProtocolMessage::make_init(2, Value::payload("b"), VrfOutput{Bytes(32, 1), {}}));
  EXPECT_EQ(t.init_equivocators(), (std::set<NodeIndex>{2}));
}

TEST(Tally, RejectsMalformed) {
  Tally t;
  auto f = ProtocolMessage::make_fast(0, Value::payload("x"));
  f.iteration = 3;
  EXPECT_THROW(t.insert(f), InvalidMessage);
  EXPECT_TRUE(t.empty());
}

// Randomised insert sequences: every sender is counted for at most one value
// per (kind, iteration), and deltas are a pure function of (tally, message).
TEST(TallyProperty, OneVotePerSenderAndPurity) {
  std::mt19937_64 rng(12345);
  for (int trial = 0; trial < 300; ++trial) {
    Tally t;
    for (int step = 0; step < 60; ++step) {
      auto sender = static_cast<NodeIndex>(rng() % 5);
      auto r = static_cast<Iteration>(rng() % 3);
      Value v = (rng() % 4 == 0) ? Value::bottom() : Value::payload(std::string(1, static_cast<char>('a' + rng() % 3)));
      auto kind = rng() % 2 ? MessageKind::PreCommit : MessageKind::Commit;
      ProtocolMessage m{kind, v, sender, r, std::nullopt, {}};
      Tally copy = t;
      auto d1 = t.insert(m);
      auto d2 = copy.insert(m);
      EXPECT_EQ(d1.changed(), d2.changed());
      EXPECT_EQ(d1.duplicate, d2.duplicate);
      EXPECT_EQ(d1.equivocation, d2.equivocation);
      EXPECT_TRUE(t == copy);
    }
    for (const auto& [key, values] : t.value_counts()) {
      std::map<NodeIndex, int> per_sender;
      for (const auto& [value, senders] : values)
        for (auto s : senders) ++per_sender[s];
      for (const auto& [s, c] : per_sender) EXPECT_EQ(c, 1);
    }
  }
}

}  // namespace
}  // namespace fba
