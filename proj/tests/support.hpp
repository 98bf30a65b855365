#ifndef FBA_TESTS_SUPPORT_HPP
#define FBA_TESTS_SUPPORT_HPP

#include <string>
#include <vector>

#include "fba/core.hpp"
#include "fba/crypto.hpp"
#include "fba/engine.hpp"

namespace fba::testing {

using namespace std::chrono_literals;

/// A roster, its keys, a VRF and a key directory for hand-driven nodes.
struct Cluster {
  Config config;
  std::vector<KeyPair> keys;
  VrfMode mode;
  VrfService vrf;
  KeyDirectory directory;

  explicit Cluster(std::size_t n, VrfMode m = VrfMode::Ideal, Duration lambda = 1000ms, std::uint64_t seed = 7,
                   std::uint32_t pioneer = 0)
      : mode(m), vrf(m, seed), directory(m, {}) {
    auto [roster, ks] = make_roster("cluster/" + std::to_string(seed), n);
    config.roster = std::move(roster);
    config.lambda = lambda;
    config.status = to_bytes("status");
    config.pioneer = pioneer;
    keys = std::move(ks);
    directory = KeyDirectory(m, keys);
  }

  std::size_t n() const { return config.n(); }

  static Value value_of(NodeIndex i) { return Value::payload("v" + std::to_string(i)); }

  NodeSetup setup(NodeIndex i) { return setup(i, value_of(i)); }
  NodeSetup setup(NodeIndex i, Value v) {
    return NodeSetup{config, i, keys[i], vrf.prove(keys[i], config.status), mode, std::move(v)};
  }

  ProtocolMessage sign(ProtocolMessage m) {
    sign_message(m, keys[m.sender], mode);
    return m;
  }
  ProtocolMessage init(NodeIndex from, Value v) {
    return sign(ProtocolMessage::make_init(from, std::move(v), vrf.prove(keys[from], config.status)));
  }
  ProtocolMessage init(NodeIndex from) { return init(from, value_of(from)); }
  ProtocolMessage precommit(NodeIndex from, Value v, Iteration r) {
    return sign(ProtocolMessage::make_precommit(from, std::move(v), r));
  }
  ProtocolMessage commit(NodeIndex from, Value v, Iteration r) {
    return sign(ProtocolMessage::make_commit(from, std::move(v), r));
  }
  ProtocolMessage fast(NodeIndex from, Value v) { return sign(ProtocolMessage::make_fast(from, std::move(v))); }
};

inline std::vector<ProtocolMessage> of_kind(const Output& out, MessageKind k) {
  std::vector<ProtocolMessage> r;
  for (const auto& m : out.messages)
    if (m.kind == k) r.push_back(m);
  return r;
}

}  // namespace fba::testing

#endif
