#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <set>
#include <vector>

#include "fba/crypto.hpp"
#include "support.hpp"

namespace fba {
namespace {

Bytes status_of(std::uint64_t i) {
  ByteWriter w;
  w.u64(i);
  return std::move(w).take();
}

class VrfModes : public ::testing::TestWithParam<VrfMode> {};

TEST(Keygen, Deterministic) {
  EXPECT_EQ(keygen("seed-a"), keygen("seed-a"));
  EXPECT_THROW(keygen(ByteView{}), std::invalid_argument);
}

TEST(Keygen, DistinctSeedsDistinctKeys) {
  std::set<Bytes> pks;
  for (int i = 0; i < 10000; ++i) pks.insert(keygen("k/" + std::to_string(i)).pk);
  EXPECT_EQ(pks.size(), 10000u);
}

TEST(Keygen, PubkeyVerifiesSignature) {
  auto kp = keygen("sig");
  auto msg = to_bytes("payload");
  EXPECT_TRUE(ed25519_verify(kp.pk, msg, ed25519_sign(kp, msg)));
}

TEST_P(VrfModes, ProveIsDeterministic) {
  VrfService a(GetParam(), 3), b(GetParam(), 3);
  auto kp = keygen("vrf");
  auto s = to_bytes("status");
  EXPECT_EQ(a.prove(kp, s), a.prove(kp, s));
  EXPECT_EQ(a.prove(kp, s), b.prove(kp, s));
  EXPECT_EQ(a.prove(kp, s).y.size(), kVrfOutputBytes);
}

TEST_P(VrfModes, CorrectnessUniquenessAndStatusBinding) {
  VrfService vrf(GetParam(), 11);
  std::mt19937_64 rng(99);
  for (int i = 0; i < 200; ++i) {
    auto kp = keygen("rt/" + std::to_string(i));
    auto s = status_of(rng());
    auto out = vrf.prove(kp, s);
    EXPECT_TRUE(vrf.verify(kp.pk, s, out));
    auto flipped = out;
    flipped.y[rng() % flipped.y.size()] ^= static_cast<std::uint8_t>(1u << (rng() % 8));
    EXPECT_FALSE(vrf.verify(kp.pk, s, flipped));
    auto other = status_of(rng());
    EXPECT_FALSE(vrf.verify(kp.pk, other, out));
  }
}

TEST_P(VrfModes, MalformedProofIsFalse) {
  VrfService vrf(GetParam(), 1);
  auto kp = keygen("m");
  auto s = to_bytes("s");
  auto out = vrf.prove(kp, s);
  EXPECT_FALSE(vrf.verify(kp.pk, s, VrfOutput{}));
  EXPECT_FALSE(vrf.verify(kp.pk, s, VrfOutput{out.y, Bytes{1, 2, 3}}));
  EXPECT_FALSE(vrf.verify(Bytes{1}, s, out));
}

TEST_P(VrfModes, DifferentStatusesDiffer) {
  VrfService vrf(GetParam(), 5);
  auto kp = keygen("dst");
  std::set<Bytes> ys;
  const int draws = GetParam() == VrfMode::Ideal ? 10000 : 2000;
  for (int i = 0; i < draws; ++i) ys.insert(vrf.prove(kp, status_of(static_cast<std::uint64_t>(i))).y);
  EXPECT_EQ(ys.size(), static_cast<std::size_t>(draws));
}

INSTANTIATE_TEST_SUITE_P(Both, VrfModes, ::testing::Values(VrfMode::Ideal, VrfMode::Cryptographic),
                         [](const auto& info) { return std::string(mode_name(info.param)); });

TEST(IdealVrf, LeadingBitsUniform) {
  IdealVrf vrf(2024);
  auto kp = keygen("uniform");
  std::array<int, 8> buckets{};
  for (std::uint64_t i = 0; i < 10000; ++i) ++buckets[vrf.prove(kp.pk, status_of(i)).y[0] >> 5];
  for (int c : buckets) {
    EXPECT_GE(c, 1250 - 150);
    EXPECT_LE(c, 1250 + 150);
  }
}

TEST(IdealVrf, GrantFixesDraw) {
  IdealVrf vrf(1);
  auto kp = keygen("g");
  auto s = to_bytes("s");
  vrf.grant(kp.pk, s, Bytes(32, 0));
  EXPECT_EQ(vrf.prove(kp.pk, s).y, Bytes(32, 0));
  EXPECT_TRUE(vrf.verify(kp.pk, s, vrf.prove(kp.pk, s)));
  EXPECT_THROW(vrf.grant(kp.pk, s, Bytes(3)), std::invalid_argument);
}

ProtocolMessage init_with_y(NodeIndex s, Bytes y) {
  return ProtocolMessage::make_init(s, Value::payload("v"), VrfOutput{std::move(y), {}});
}

TEST(ElectLeader, SingletonAndEmpty) {
  std::vector<ProtocolMessage> one{init_with_y(3, Bytes(32, 9))};
  EXPECT_EQ(elect_leader(one, {}), 3u);
  EXPECT_EQ(elect_leader(std::vector<ProtocolMessage>{}, {}), std::nullopt);
  EXPECT_EQ(elect_leader(one, {3}), std::nullopt);
}

TEST(ElectLeader, MatchesSortOracle) {
  testing::Cluster c(4);
  for (std::uint64_t run = 0; run < 200; ++run) {
    c.config.status = status_of(run);
    std::vector<ProtocolMessage> inits;
    std::vector<std::pair<Bytes, NodeIndex>> oracle;
    for (NodeIndex i = 0; i < 4; ++i) {
      inits.push_back(c.init(i));
      oracle.emplace_back(inits.back().vrf->y, i);
    }
    std::sort(oracle.begin(), oracle.end());
    EXPECT_EQ(elect_leader(inits, {}), oracle.front().second);
  }
}

TEST(ElectLeader, ByteEqualTieGoesToSmallerIndex) {
  std::vector<ProtocolMessage> tie{init_with_y(5, Bytes(32, 1)), init_with_y(2, Bytes(32, 1)), init_with_y(7, Bytes(32, 2))};
  EXPECT_EQ(elect_leader(tie, {}), 2u);
  EXPECT_EQ(elect_leader(tie, {2}), 5u);
}

TEST(ElectLeader, IdealUniformLeadership) {
  constexpr int kRuns = 10000;
  constexpr std::size_t kN = 5;
  IdealVrf vrf(77);
  std::vector<KeyPair> keys;
  for (std::size_t i = 0; i < kN; ++i) keys.push_back(keygen("lead/" + std::to_string(i)));
  std::vector<int> wins(kN);
  for (int r = 0; r < kRuns; ++r) {
    std::vector<ProtocolMessage> inits;
    for (std::size_t i = 0; i < kN; ++i)
      inits.push_back(ProtocolMessage::make_init(static_cast<NodeIndex>(i), Value::payload("v"),
                                                 vrf.prove(keys[i].pk, status_of(static_cast<std::uint64_t>(r)))));
    ++wins[*elect_leader(inits, {})];
  }
  const double p = 1.0 / kN;
  const double sigma = std::sqrt(p * (1 - p) / kRuns);
  for (int w : wins) EXPECT_NEAR(static_cast<double>(w) / kRuns, p, 3 * sigma);
}

TEST(ElectPioneer, SingleNode) {
  testing::Cluster c(1);
  EXPECT_EQ(elect_pioneer(c.config), 0u);
}

TEST(ElectPioneer, SortOracleAndPermutationInvariance) {
  testing::Cluster c(4, VrfMode::Ideal, std::chrono::milliseconds(1000), 7, 2);
  std::vector<Bytes> pks;
  for (const auto& id : c.config.roster) pks.push_back(id.pubkey);
  std::sort(pks.begin(), pks.end());
  auto pioneer = elect_pioneer(c.config);
  EXPECT_EQ(c.config.roster[pioneer].pubkey, pks[2]);

  Config permuted = c.config;
  std::vector<Bytes> shuffled{c.config.roster[3].pubkey, c.config.roster[0].pubkey, c.config.roster[2].pubkey,
                              c.config.roster[1].pubkey};
  for (NodeIndex i = 0; i < 4; ++i) permuted.roster[i].pubkey = shuffled[i];
  EXPECT_EQ(permuted.roster[elect_pioneer(permuted)].pubkey, pks[2]);

  c.config.pioneer = 4;
  EXPECT_THROW(elect_pioneer(c.config), ConfigError);
}

TEST(KeyDirectory, SignaturesBindSenderAndContent) {
  for (auto mode : {VrfMode::Ideal, VrfMode::Cryptographic}) {
    testing::Cluster c(4, mode);
    auto m = c.precommit(1, Value::payload("x"), 3);
    EXPECT_TRUE(c.directory.verify_signature(m));
    auto forged = m;
    forged.sender = 2;
    EXPECT_FALSE(c.directory.verify_signature(forged));
    auto altered = m;
    altered.iteration = 4;
    EXPECT_FALSE(c.directory.verify_signature(altered));
    auto stranger = m;
    stranger.sender = 99;
    EXPECT_FALSE(c.directory.verify_signature(stranger));
  }
}

}  // namespace
}  // namespace fba
