#ifndef FBA_RBA_HPP
#define FBA_RBA_HPP

// RBA node and status certificates.

#include <cstdint>
#include <optional>
#include <set>
#include <utility>
#include <vector>

#include "fba/core.hpp"
#include "fba/crypto.hpp"
#include "fba/engine.hpp"

namespace fba {

/// Round-based agreement node: r starts at 1, steps at 0, 2λ, 4λ.
class RbaNode : public AgreementNode {
 public:
  explicit RbaNode(NodeSetup setup) : AgreementNode(Protocol::Rba, std::move(setup)) {}
};

inline RbaNode rba_init(NodeSetup setup) { return RbaNode(std::move(setup)); }

enum class CertificateKind : std::uint8_t { Decision = 1, Lock = 2, IterationProof = 3 };

inline const char* certificate_kind_name(CertificateKind k) {
  switch (k) {
    case CertificateKind::Decision: return "decision";
    case CertificateKind::Lock: return "lock";
    case CertificateKind::IterationProof: return "iteration";
  }
  return "?";
}

/// Quorum of signed messages certifying a decision, a lock, or the current
/// iteration. An iteration proof is either a pre-commit quorum for one value
/// at `iteration`, or a commit quorum (any values) at `iteration - 1`.
struct StatusCertificate {
  CertificateKind kind = CertificateKind::Decision;
  Value value;
  Iteration iteration = 0;
  std::vector<ProtocolMessage> evidence;

  Bytes encode() const {
    ByteWriter w;
    w.u8(static_cast<std::uint8_t>(kind));
    w.u64(iteration);
    w.prefixed(value.encode());
    w.u32(static_cast<std::uint32_t>(evidence.size()));
    for (const auto& m : evidence) w.prefixed(m.encode());
    return std::move(w).take();
  }

  static StatusCertificate decode(ByteView raw) {
    ByteReader r(raw);
    StatusCertificate c;
    auto k = r.u8();
    if (k < 1 || k > 3) throw DecodeError("unknown certificate kind");
    c.kind = static_cast<CertificateKind>(k);
    c.iteration = r.u64();
    c.value = Value::decode(r.prefixed(kMaxValueBytes + 1));
    auto count = r.u32();
    if (count > r.remaining()) throw DecodeError("certificate evidence count exceeds buffer");
    for (std::uint32_t i = 0; i < count; ++i) c.evidence.push_back(ProtocolMessage::decode(r.prefixed(kMaxValueBytes + 4096)));
    if (!r.done()) throw DecodeError("trailing bytes after certificate");
    return c;
  }

  friend bool operator==(const StatusCertificate&, const StatusCertificate&) = default;
};

namespace detail {

inline std::vector<ProtocolMessage> first_quorum(std::vector<ProtocolMessage> msgs, std::size_t q) {
  if (msgs.size() < q) return {};
  msgs.resize(q);
  return msgs;
}

inline std::vector<ProtocolMessage> all_messages(const Tally& tally, MessageKind kind, Iteration r) {
  std::vector<ProtocolMessage> out;
  if (const auto* m = tally.messages(kind, r))
    for (const auto& [sender, msg] : *m) out.push_back(msg);
  return out;
}

}  // namespace detail

/// Strongest certificate the node can currently produce.
inline std::optional<StatusCertificate> make_status_certificate(const AgreementNode& node) {
  const auto q = quorum(node.config());
  const auto& tally = node.tally();
  if (const auto& d = node.decided()) {
    auto ev = detail::first_quorum(tally.evidence(MessageKind::Commit, d->iteration, d->value), q);
    if (!ev.empty()) return StatusCertificate{CertificateKind::Decision, d->value, d->iteration, std::move(ev)};
  }
  if (node.lock_iteration() >= 0) {
    auto r = static_cast<Iteration>(node.lock_iteration());
    auto ev = detail::first_quorum(tally.evidence(MessageKind::PreCommit, r, node.lock_value()), q);
    if (!ev.empty()) return StatusCertificate{CertificateKind::Lock, node.lock_value(), r, std::move(ev)};
  }
  const Iteration r = node.round();
  if (r > 1) {
    auto it = tally.value_counts().find(VoteKey{MessageKind::PreCommit, r});
    if (it != tally.value_counts().end()) {
      for (const auto& [value, senders] : it->second) {
        if (!value.decidable() || senders.size() < q) continue;
        auto ev = detail::first_quorum(tally.evidence(MessageKind::PreCommit, r, value), q);
        return StatusCertificate{CertificateKind::IterationProof, value, r, std::move(ev)};
      }
    }
    auto ev = detail::first_quorum(detail::all_messages(tally, MessageKind::Commit, r - 1), q);
    if (!ev.empty()) return StatusCertificate{CertificateKind::IterationProof, Value::skip(), r, std::move(ev)};
  }
  return std::nullopt;
}

/// Structural and signature check against the run's key directory.
inline bool verify_certificate(const StatusCertificate& cert, const Config& config, const KeyDirectory& keys) {
  if (cert.evidence.size() < quorum(config)) return false;
  std::set<NodeIndex> senders;
  const bool commit_proof = cert.kind == CertificateKind::IterationProof && cert.value.is_skip();
  for (const auto& m : cert.evidence) {
    try {
      m.validate();
    } catch (const InvalidMessage&) {
      return false;
    }
    if (m.sender >= config.n() || !senders.insert(m.sender).second) return false;
    if (!keys.verify_signature(m)) return false;
    switch (cert.kind) {
      case CertificateKind::Decision:
        if (m.kind != MessageKind::Commit || *m.iteration != cert.iteration || m.value != cert.value) return false;
        break;
      case CertificateKind::Lock:
        if (m.kind != MessageKind::PreCommit || *m.iteration != cert.iteration || m.value != cert.value) return false;
        break;
      case CertificateKind::IterationProof:
        if (commit_proof) {
          if (cert.iteration == 0 || m.kind != MessageKind::Commit || *m.iteration != cert.iteration - 1) return false;
        } else if (m.kind != MessageKind::PreCommit || *m.iteration != cert.iteration || m.value != cert.value) {
          return false;
        }
        break;
    }
  }
  if (cert.kind != CertificateKind::IterationProof && !cert.value.decidable()) return false;
  return true;
}

/// Feeds a verified certificate's evidence through the message handler.
/// Returns nothing, leaving the node untouched, when verification fails.
inline std::optional<Output> apply_status_certificate(AgreementNode& node, const StatusCertificate& cert,
                                                      const KeyDirectory& keys, Duration now) {
  if (!verify_certificate(cert, node.config(), keys)) return std::nullopt;
  Output total;
  for (const auto& m : cert.evidence) {
    auto out = node.on_message(m, now);
    for (auto& msg : out.messages) total.messages.push_back(std::move(msg));
    if (out.decision) total.decision = out.decision;
  }
  return total;
}

}  // namespace fba

#endif  // FBA_RBA_HPP
