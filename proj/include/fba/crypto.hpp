#ifndef FBA_CRYPTO_HPP
#define FBA_CRYPTO_HPP

// Key generation, message signatures, the VRF in its two modes, and the two
// election rules (VRF leader, pubkey-ordered pioneer).
//
// Cryptographic mode signs with Ed25519 and derives the VRF as
// y = SHA-256(Ed25519 signature over the status), pi = that signature.
// Ideal mode replaces both with oracles: the VRF table is filled lazily with
// uniform values from a keyed PRF of the run seed, and signatures are MACs
// that only the key directory can check. Simulated adversaries never forge,
// so the two modes are interchangeable for the protocol logic.

#include <sodium.h>

#include <algorithm>
#include <map>
#include <optional>
#include <ranges>
#include <set>
#include <stdexcept>
#include <string_view>
#include <utility>
#include <vector>

#include "fba/core.hpp"

namespace fba {

namespace detail {

inline void ensure_sodium() {
  static const int rc = sodium_init();
  if (rc < 0) throw std::runtime_error("libsodium initialisation failed");
}

inline Bytes blake2b(ByteView message, ByteView key, std::size_t out_len = 32) {
  ensure_sodium();
  Bytes out(out_len);
  crypto_generichash(out.data(), out.size(), message.data(), message.size(),
                     key.empty() ? nullptr : key.data(), key.size());
  return out;
}

inline Bytes sha256(ByteView message) {
  ensure_sodium();
  Bytes out(crypto_hash_sha256_BYTES);
  crypto_hash_sha256(out.data(), message.data(), message.size());
  return out;
}

inline Bytes concat_prefixed(std::initializer_list<ByteView> parts) {
  ByteWriter w;
  for (auto p : parts) w.prefixed(p);
  return std::move(w).take();
}

inline constexpr std::string_view kVrfDomain = "fba/vrf/v1";

}  // namespace detail

enum class VrfMode { Ideal, Cryptographic };

inline const char* mode_name(VrfMode m) { return m == VrfMode::Ideal ? "ideal" : "cryptographic"; }

struct KeyPair {
  Bytes pk;
  Bytes sk;

  friend bool operator==(const KeyPair&, const KeyPair&) = default;
};

/// Deterministic Ed25519 key pair from an arbitrary non-empty seed.
inline KeyPair keygen(ByteView seed) {
  if (seed.empty()) throw std::invalid_argument("keygen seed must be non-empty");
  detail::ensure_sodium();
  auto seed32 = detail::blake2b(seed, {}, crypto_sign_SEEDBYTES);
  KeyPair kp{Bytes(crypto_sign_PUBLICKEYBYTES), Bytes(crypto_sign_SECRETKEYBYTES)};
  crypto_sign_seed_keypair(kp.pk.data(), kp.sk.data(), seed32.data());
  return kp;
}

inline KeyPair keygen(std::string_view seed) { return keygen(ByteView(to_bytes(seed))); }

inline Bytes ed25519_sign(const KeyPair& kp, ByteView payload) {
  detail::ensure_sodium();
  Bytes sig(crypto_sign_BYTES);
  crypto_sign_detached(sig.data(), nullptr, payload.data(), payload.size(), kp.sk.data());
  return sig;
}

inline bool ed25519_verify(ByteView pk, ByteView payload, ByteView sig) {
  detail::ensure_sodium();
  if (pk.size() != crypto_sign_PUBLICKEYBYTES || sig.size() != crypto_sign_BYTES) return false;
  return crypto_sign_verify_detached(sig.data(), payload.data(), payload.size(), pk.data()) == 0;
}

/// Oracle MAC used as the signature in ideal mode.
inline Bytes ideal_mac(const KeyPair& kp, ByteView payload) {
  return detail::blake2b(payload, ByteView(kp.sk).first(crypto_sign_SEEDBYTES), 32);
}

inline Bytes sign_payload(const KeyPair& kp, ByteView payload, VrfMode mode) {
  return mode == VrfMode::Cryptographic ? ed25519_sign(kp, payload) : ideal_mac(kp, payload);
}

inline void sign_message(ProtocolMessage& msg, const KeyPair& kp, VrfMode mode) {
  msg.signature = sign_payload(kp, msg.signing_payload(), mode);
}

// ---------------------------------------------------------------------------
// VRF

namespace crypto_vrf {

inline VrfOutput prove(const KeyPair& kp, ByteView status) {
  auto input = detail::concat_prefixed({ByteView(to_bytes(detail::kVrfDomain)), status});
  VrfOutput out;
  out.pi = ed25519_sign(kp, input);
  out.y = detail::sha256(out.pi);
  return out;
}

inline bool verify(ByteView pk, ByteView status, const VrfOutput& out) {
  if (out.y.size() != kVrfOutputBytes) return false;
  auto input = detail::concat_prefixed({ByteView(to_bytes(detail::kVrfDomain)), status});
  if (!ed25519_verify(pk, input, out.pi)) return false;
  return detail::sha256(out.pi) == out.y;
}

}  // namespace crypto_vrf

/// Ideal VRF functionality: a lazily filled table Q(pk, status) of uniform
/// outputs. Entries are a PRF of the run seed, so the table contents do not
/// depend on query order and replays are bit-identical.
class IdealVrf {
 public:
  explicit IdealVrf(std::uint64_t run_seed) {
    ByteWriter w;
    w.u64(run_seed);
    key_ = detail::blake2b(w.bytes(), {}, 32);
  }

  const VrfOutput& prove(ByteView pk, ByteView status) {
    auto k = std::make_pair(Bytes(pk.begin(), pk.end()), Bytes(status.begin(), status.end()));
    auto it = table_.find(k);
    if (it != table_.end()) return it->second;
    auto msg_y = detail::concat_prefixed({ByteView(to_bytes("y")), pk, status});
    auto msg_pi = detail::concat_prefixed({ByteView(to_bytes("pi")), pk, status});
    VrfOutput out{detail::blake2b(msg_y, key_, kVrfOutputBytes), detail::blake2b(msg_pi, key_, kVrfOutputBytes)};
    return table_.emplace(std::move(k), std::move(out)).first->second;
  }

  bool verify(ByteView pk, ByteView status, const VrfOutput& out) const {
    auto it = table_.find(std::make_pair(Bytes(pk.begin(), pk.end()), Bytes(status.begin(), status.end())));
    return it != table_.end() && it->second == out;
  }

  /// Test/stress fixture: fixes the table entry for (pk, status) before it is
  /// first queried. Used to hand the adversary favourable draws.
  void grant(ByteView pk, ByteView status, Bytes y) {
    if (y.size() != kVrfOutputBytes) throw std::invalid_argument("granted VRF output has wrong length");
    auto k = std::make_pair(Bytes(pk.begin(), pk.end()), Bytes(status.begin(), status.end()));
    auto msg_pi = detail::concat_prefixed({ByteView(to_bytes("pi")), pk, status});
    table_[std::move(k)] = VrfOutput{std::move(y), detail::blake2b(msg_pi, key_, kVrfOutputBytes)};
  }

  std::size_t size() const { return table_.size(); }

 private:
  Bytes key_;
  std::map<std::pair<Bytes, Bytes>, VrfOutput> table_;
};

/// Mode-dispatching VRF used by one simulation run.
class VrfService {
 public:
  explicit VrfService(VrfMode mode, std::uint64_t run_seed = 0) : mode_(mode) {
    if (mode == VrfMode::Ideal) ideal_.emplace(run_seed);
  }

  VrfMode mode() const { return mode_; }

  VrfOutput prove(const KeyPair& kp, ByteView status) {
    if (mode_ == VrfMode::Ideal) return ideal_->prove(kp.pk, status);
    return crypto_vrf::prove(kp, status);
  }

  /// Malformed or foreign outputs yield false.
  bool verify(ByteView pk, ByteView status, const VrfOutput& out) const {
    if (mode_ == VrfMode::Ideal) return ideal_->verify(pk, status, out);
    return crypto_vrf::verify(pk, status, out);
  }

  IdealVrf* ideal() { return ideal_ ? &*ideal_ : nullptr; }

 private:
  VrfMode mode_;
  std::optional<IdealVrf> ideal_;
};

/// Public-key directory of one run. In ideal mode it also holds the MAC keys,
/// standing in for the signature-verification oracle.
class KeyDirectory {
 public:
  KeyDirectory(VrfMode mode, std::vector<KeyPair> keys) : mode_(mode), keys_(std::move(keys)) {}

  VrfMode mode() const { return mode_; }
  std::size_t size() const { return keys_.size(); }
  const Bytes& pubkey(NodeIndex i) const { return keys_.at(i).pk; }
  const KeyPair& keypair(NodeIndex i) const { return keys_.at(i); }

  bool verify_signature(const ProtocolMessage& msg) const {
    if (msg.sender >= keys_.size()) return false;
    auto payload = msg.signing_payload();
    if (mode_ == VrfMode::Cryptographic) return ed25519_verify(keys_[msg.sender].pk, payload, msg.signature);
    return msg.signature == ideal_mac(keys_[msg.sender], payload);
  }

 private:
  VrfMode mode_;
  std::vector<KeyPair> keys_;
};

/// Lexicographically smallest y wins; byte-equal y falls back to the smaller
/// node index. Returns nothing when no eligible init exists.
template <std::ranges::input_range R>
  requires std::same_as<std::ranges::range_value_t<R>, ProtocolMessage>
std::optional<NodeIndex> elect_leader(const R& inits, const std::set<NodeIndex>& excluded) {
  const ProtocolMessage* best = nullptr;
  for (const ProtocolMessage& m : inits) {
    if (m.kind != MessageKind::Init || !m.vrf || excluded.contains(m.sender)) continue;
    if (!best || m.vrf->y < best->vrf->y || (m.vrf->y == best->vrf->y && m.sender < best->sender)) best = &m;
  }
  if (!best) return std::nullopt;
  return best->sender;
}

/// The p-th node (0-indexed) in ascending public-key order.
inline NodeIndex elect_pioneer(const Config& config) {
  if (config.pioneer >= config.n()) throw ConfigError("pioneer parameter out of range");
  std::vector<const NodeId*> order;
  order.reserve(config.n());
  for (const auto& id : config.roster) order.push_back(&id);
  std::ranges::sort(order, [](const NodeId* a, const NodeId* b) { return a->pubkey < b->pubkey; });
  return order[config.pioneer]->index;
}

/// Builds a roster and key set from a seed prefix: node i uses "<prefix>/<i>".
inline std::pair<std::vector<NodeId>, std::vector<KeyPair>> make_roster(std::string_view keygen_prefix, std::size_t n) {
  std::vector<NodeId> roster;
  std::vector<KeyPair> keys;
  for (std::size_t i = 0; i < n; ++i) {
    auto kp = keygen(std::string(keygen_prefix) + "/" + std::to_string(i));
    roster.push_back(NodeId{static_cast<NodeIndex>(i), kp.pk});
    keys.push_back(std::move(kp));
  }
  return {std::move(roster), std::move(keys)};
}

}  // namespace fba

#endif  // FBA_CRYPTO_HPP
