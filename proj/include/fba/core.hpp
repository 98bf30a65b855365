#ifndef FBA_CORE_HPP
#define FBA_CORE_HPP

// Shared domain types for the RBA/HBA state machines: values with the two
// sentinels, signed protocol messages and their canonical encoding, the run
// configuration, quorum arithmetic and the per-node message tally.

#include <algorithm>
#include <chrono>
#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fba/bytes.hpp"

namespace fba {

using Duration = std::chrono::nanoseconds;
using NodeIndex = std::uint32_t;
using Iteration = std::uint64_t;

inline constexpr std::size_t kMaxValueBytes = 64 * 1024;
inline constexpr std::size_t kVrfOutputBytes = 32;

class InvalidMessage : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct NodeId {
  NodeIndex index = 0;
  Bytes pubkey;

  friend bool operator==(const NodeId&, const NodeId&) = default;
};

/// A proposable value, or one of the sentinels BOTTOM / SKIP. The sentinels
/// live in tag bytes outside the payload space, so plain equality works.
class Value {
 public:
  enum class Tag : std::uint8_t { Payload = 0, Bottom = 1, Skip = 2 };

  Value() = default;

  static Value payload(Bytes data) {
    if (data.size() > kMaxValueBytes) throw InvalidMessage("value exceeds size limit");
    Value v;
    v.tag_ = Tag::Payload;
    v.data_ = std::move(data);
    return v;
  }
  static Value payload(std::string_view s) { return payload(to_bytes(s)); }
  static Value bottom() {
    Value v;
    v.tag_ = Tag::Bottom;
    return v;
  }
  static Value skip() {
    Value v;
    v.tag_ = Tag::Skip;
    return v;
  }

  Tag tag() const { return tag_; }
  bool is_payload() const { return tag_ == Tag::Payload; }
  bool is_bottom() const { return tag_ == Tag::Bottom; }
  bool is_skip() const { return tag_ == Tag::Skip; }
  /// Member of V ∪ {BOTTOM}: the values that can be locked or decided.
  bool decidable() const { return tag_ != Tag::Skip; }
  const Bytes& data() const { return data_; }

  Bytes encode() const {
    Bytes out;
    out.reserve(data_.size() + 1);
    out.push_back(static_cast<std::uint8_t>(tag_));
    out.insert(out.end(), data_.begin(), data_.end());
    return out;
  }

  static Value decode(ByteView raw) {
    if (raw.empty()) throw DecodeError("empty value encoding");
    switch (raw[0]) {
      case 0: return payload(Bytes(raw.begin() + 1, raw.end()));
      case 1:
        if (raw.size() != 1) throw DecodeError("BOTTOM carries payload");
        return bottom();
      case 2:
        if (raw.size() != 1) throw DecodeError("SKIP carries payload");
        return skip();
      default: throw DecodeError("unknown value tag");
    }
  }

  /// Short stable digest for traces and CSV output.
  std::string digest() const {
    if (is_bottom()) return "BOT";
    if (is_skip()) return "SKIP";
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (auto b : data_) {
      h ^= b;
      h *= 0x100000001b3ULL;
    }
    Bytes be(8);
    for (int i = 0; i < 8; ++i) be[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(h >> (56 - 8 * i));
    return to_hex(be);
  }

  friend auto operator<=>(const Value&, const Value&) = default;

 private:
  Tag tag_ = Tag::Skip;
  Bytes data_;
};

struct VrfOutput {
  Bytes y;
  Bytes pi;

  friend auto operator<=>(const VrfOutput&, const VrfOutput&) = default;
};

enum class MessageKind : std::uint8_t { Init = 1, PreCommit = 2, Commit = 3, Fast = 4 };

inline const char* kind_name(MessageKind k) {
  switch (k) {
    case MessageKind::Init: return "init";
    case MessageKind::PreCommit: return "precommit";
    case MessageKind::Commit: return "commit";
    case MessageKind::Fast: return "fast";
  }
  return "?";
}

struct ProtocolMessage {
  MessageKind kind = MessageKind::Init;
  Value value;
  NodeIndex sender = 0;
  std::optional<Iteration> iteration;
  std::optional<VrfOutput> vrf;
  Bytes signature;

  static ProtocolMessage make_init(NodeIndex sender, Value v, VrfOutput out) {
    return {MessageKind::Init, std::move(v), sender, std::nullopt, std::move(out), {}};
  }
  static ProtocolMessage make_precommit(NodeIndex sender, Value v, Iteration r) {
    return {MessageKind::PreCommit, std::move(v), sender, r, std::nullopt, {}};
  }
  static ProtocolMessage make_commit(NodeIndex sender, Value v, Iteration r) {
    return {MessageKind::Commit, std::move(v), sender, r, std::nullopt, {}};
  }
  static ProtocolMessage make_fast(NodeIndex sender, Value v) {
    return {MessageKind::Fast, std::move(v), sender, std::nullopt, std::nullopt, {}};
  }

  /// Structural invariants per kind. Throws InvalidMessage.
  void validate() const {
    switch (kind) {
      case MessageKind::Init:
        if (iteration) throw InvalidMessage("init carries an iteration");
        if (!vrf) throw InvalidMessage("init without VRF output");
        if (!value.is_payload()) throw InvalidMessage("init value must be a payload");
        break;
      case MessageKind::PreCommit:
      case MessageKind::Commit:
        if (!iteration) throw InvalidMessage("vote without iteration");
        if (vrf) throw InvalidMessage("vote carries VRF output");
        break;
      case MessageKind::Fast:
        if (iteration) throw InvalidMessage("fast message carries an iteration");
        if (vrf) throw InvalidMessage("fast message carries VRF output");
        if (!value.is_payload()) throw InvalidMessage("fast value must be a payload");
        break;
      default: throw InvalidMessage("unknown message kind");
    }
  }

  /// Canonical encoding of every field except the signature.
  Bytes signing_payload() const {
    ByteWriter w;
    write_body(w);
    return std::move(w).take();
  }

  Bytes encode() const {
    ByteWriter w;
    write_body(w);
    w.prefixed(signature);
    return std::move(w).take();
  }

  static ProtocolMessage decode(ByteView raw) {
    ByteReader r(raw);
    auto msg = read(r);
    if (!r.done()) throw DecodeError("trailing bytes after message");
    return msg;
  }

  /// Reads one message from a stream of concatenated encodings.
  static ProtocolMessage read(ByteReader& r) {
    ProtocolMessage m;
    auto tag = r.u8();
    if (tag < 1 || tag > 4) throw DecodeError("unknown message kind tag");
    m.kind = static_cast<MessageKind>(tag);
    m.sender = r.u32();
    if (m.kind == MessageKind::PreCommit || m.kind == MessageKind::Commit) m.iteration = r.u64();
    m.value = Value::decode(r.prefixed(kMaxValueBytes + 1));
    if (m.kind == MessageKind::Init) {
      VrfOutput out;
      out.y = r.prefixed(1024);
      out.pi = r.prefixed(1024);
      m.vrf = std::move(out);
    }
    m.signature = r.prefixed(1024);
    return m;
  }

  friend bool operator==(const ProtocolMessage&, const ProtocolMessage&) = default;

 private:
  void write_body(ByteWriter& w) const {
    w.u8(static_cast<std::uint8_t>(kind));
    w.u32(sender);
    if (iteration) w.u64(*iteration);
    w.prefixed(value.encode());
    if (vrf) {
      w.prefixed(vrf->y);
      w.prefixed(vrf->pi);
    }
  }
};

/// Protocol parameters shared by every node of one agreement instance.
struct Config {
  std::vector<NodeId> roster;
  Duration lambda{std::chrono::milliseconds(1000)};
  Bytes status;
  std::uint32_t pioneer = 0;

  std::size_t n() const { return roster.size(); }
  std::size_t t_max() const { return roster.empty() ? 0 : (roster.size() - 1) / 3; }

  void validate() const {
    if (roster.empty()) throw ConfigError("configuration needs at least one node");
    std::set<NodeIndex> seen_idx;
    std::set<Bytes> seen_pk;
    for (std::size_t i = 0; i < roster.size(); ++i) {
      if (roster[i].index != i) throw ConfigError("roster indices must be 0..n-1 in order");
      if (!seen_idx.insert(roster[i].index).second) throw ConfigError("duplicate node index");
      if (!seen_pk.insert(roster[i].pubkey).second) throw ConfigError("duplicate public key");
    }
    if (pioneer >= roster.size()) throw ConfigError("pioneer parameter out of range");
    if (lambda < Duration::zero()) throw ConfigError("negative lambda");
  }

  friend bool operator==(const Config&, const Config&) = default;
};

/// Largest tolerated fault count for n nodes.
constexpr std::size_t max_faults(std::size_t n) { return n == 0 ? 0 : (n - 1) / 3; }

/// 2·t_max + 1 distinct senders.
constexpr std::size_t quorum_size(std::size_t n) { return 2 * max_faults(n) + 1; }

inline std::size_t quorum(const Config& config) { return quorum_size(config.n()); }

struct VoteKey {
  MessageKind kind = MessageKind::Init;
  std::optional<Iteration> iteration;

  friend auto operator<=>(const VoteKey&, const VoteKey&) = default;
};

inline VoteKey key_of(const ProtocolMessage& m) { return {m.kind, m.iteration}; }

struct Equivocation {
  ProtocolMessage first;
  ProtocolMessage second;

  friend bool operator==(const Equivocation&, const Equivocation&) = default;
};

struct TallyDelta {
  /// Set when the message was counted: the (kind, iteration) and value whose
  /// sender set grew.
  std::optional<VoteKey> key;
  std::optional<Value> value;
  bool duplicate = false;
  bool equivocation = false;

  bool changed() const { return key.has_value(); }
};

/// Distinct-sender message counts. A sender counts toward at most one value
/// per (kind, iteration); a conflicting later message is kept as evidence.
class Tally {
 public:
  TallyDelta insert(const ProtocolMessage& msg) {
    msg.validate();
    TallyDelta delta;
    auto key = key_of(msg);
    auto& senders = first_[key];
    auto it = senders.find(msg.sender);
    if (it != senders.end()) {
      const auto& prev = it->second;
      if (prev.value == msg.value && prev.vrf == msg.vrf) {
        delta.duplicate = true;
        return delta;
      }
      for (const auto& e : equivocations_)
        if (e.first.sender == msg.sender && key_of(e.first) == key && e.second.value == msg.value &&
            e.second.vrf == msg.vrf) {
          delta.duplicate = true;
          return delta;
        }
      equivocations_.push_back({prev, msg});
      if (msg.kind == MessageKind::Init) init_equivocators_.insert(msg.sender);
      delta.equivocation = true;
      return delta;
    }
    senders.emplace(msg.sender, msg);
    by_value_[key][msg.value].insert(msg.sender);
    delta.key = key;
    delta.value = msg.value;
    return delta;
  }

  std::size_t count(MessageKind kind, std::optional<Iteration> iteration, const Value& value) const {
    auto it = by_value_.find(VoteKey{kind, iteration});
    if (it == by_value_.end()) return 0;
    auto jt = it->second.find(value);
    return jt == it->second.end() ? 0 : jt->second.size();
  }

  /// Distinct senders for (kind, iteration), any value.
  std::size_t senders(MessageKind kind, std::optional<Iteration> iteration) const {
    auto it = first_.find(VoteKey{kind, iteration});
    return it == first_.end() ? 0 : it->second.size();
  }

  /// First message accepted from each sender for (kind, iteration).
  const std::map<NodeIndex, ProtocolMessage>* messages(MessageKind kind,
                                                        std::optional<Iteration> iteration) const {
    auto it = first_.find(VoteKey{kind, iteration});
    return it == first_.end() ? nullptr : &it->second;
  }

  /// Counted messages for one (kind, iteration, value), ordered by sender.
  std::vector<ProtocolMessage> evidence(MessageKind kind, std::optional<Iteration> iteration,
                                        const Value& value) const {
    std::vector<ProtocolMessage> out;
    if (const auto* m = messages(kind, iteration))
      for (const auto& [sender, msg] : *m)
        if (msg.value == value) out.push_back(msg);
    return out;
  }

  const std::map<VoteKey, std::map<Value, std::set<NodeIndex>>>& value_counts() const { return by_value_; }
  const std::vector<Equivocation>& equivocations() const { return equivocations_; }
  const std::set<NodeIndex>& init_equivocators() const { return init_equivocators_; }
  bool empty() const { return first_.empty(); }

  friend bool operator==(const Tally&, const Tally&) = default;

 private:
  std::map<VoteKey, std::map<NodeIndex, ProtocolMessage>> first_;
  std::map<VoteKey, std::map<Value, std::set<NodeIndex>>> by_value_;
  std::vector<Equivocation> equivocations_;
  std::set<NodeIndex> init_equivocators_;
};

}  // namespace fba

#endif  // FBA_CORE_HPP
