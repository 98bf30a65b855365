#ifndef FBA_ENGINE_HPP
#define FBA_ENGINE_HPP

// Transition core shared by the RBA and HBA state machines. The two
// protocols differ only in step offsets, the forward-jump entry clock and the
// HBA fast phase, so both run through this one class.

#include <array>
#include <cstdint>
#include <optional>
#include <ranges>
#include <utility>
#include <vector>

#include "fba/core.hpp"
#include "fba/crypto.hpp"

namespace fba {

enum class Protocol { Rba, Hba };

inline const char* protocol_name(Protocol p) { return p == Protocol::Rba ? "rba" : "hba"; }

struct Decision {
  Value value;
  Iteration iteration = 0;
  /// Node-local time since protocol start.
  Duration at{};

  friend bool operator==(const Decision&, const Decision&) = default;
};

/// Result of feeding one event to a state machine.
struct Output {
  std::vector<ProtocolMessage> messages;
  std::optional<Decision> decision;
};

/// Everything a node needs at construction.
struct NodeSetup {
  Config config;
  NodeIndex self = 0;
  KeyPair keys;
  VrfOutput vrf;
  VrfMode mode = VrfMode::Ideal;
  Value initial_value;
};

/// One node's agreement state machine. Pure transition object: no threads,
/// no I/O; copyable so drivers can snapshot or speculate.
class AgreementNode {
 public:
  AgreementNode(Protocol protocol, NodeSetup setup)
      : protocol_(protocol),
        config_(std::move(setup.config)),
        self_(setup.self),
        keys_(std::move(setup.keys)),
        vrf_(std::move(setup.vrf)),
        mode_(setup.mode),
        initial_(std::move(setup.initial_value)),
        round_(protocol == Protocol::Rba ? 1 : 0) {
    config_.validate();
    if (self_ >= config_.n()) throw ConfigError("node index outside roster");
    if (!initial_.is_payload()) throw ConfigError("initial value must be a member of V");
    if (protocol_ == Protocol::Hba) pioneer_ = elect_pioneer(config_);
  }

  Output on_tick(Duration now) {
    Output out;
    advance(now);
    started_ = true;
    settle(out, true);
    jumped_ = false;
    return out;
  }

  Output on_message(const ProtocolMessage& msg, Duration now) {
    Output out;
    advance(now);
    if (msg.kind == MessageKind::Fast && (protocol_ != Protocol::Hba || msg.sender != pioneer_)) return out;
    auto delta = tally_.insert(msg);
    if (!delta.changed() || decided_) return out;
    if (started_) {
      settle(out, false);
      jumped_ = false;
    } else {
      try_decide(out);
    }
    return out;
  }

  /// Local time of the next step boundary, if any step is still pending.
  std::optional<Duration> next_wakeup() const {
    if (decided_) return std::nullopt;
    if (!started_) return Duration::zero();
    const auto lambda = config_.lambda;
    if (protocol_ == Protocol::Hba && round_ == 0) return base_ + 3 * lambda;
    if (!precommitted(round_)) return base_ + precommit_offset();
    if (!committed(round_)) return base_ + commit_offset();
    return std::nullopt;
  }

  /// True when a tick at `local_now` would emit this iteration's pre-commit.
  bool precommit_due(Duration local_now) const {
    if (!started_ || decided_) return false;
    if (protocol_ == Protocol::Hba && round_ == 0 && local_now - base_ < 3 * config_.lambda) return false;
    const Iteration r = protocol_ == Protocol::Hba && round_ == 0 ? 1 : round_;
    return !precommitted(r) && local_now - base_ >= precommit_offset();
  }

  Protocol protocol() const { return protocol_; }
  const Config& config() const { return config_; }
  NodeIndex self() const { return self_; }
  const Value& initial_value() const { return initial_; }
  const VrfOutput& vrf() const { return vrf_; }
  Iteration round() const { return round_; }
  const Value& lock_value() const { return lock_; }
  std::int64_t lock_iteration() const { return lock_iter_; }
  /// clock_q: time since the current iteration's clock origin.
  Duration clock() const { return now_ - base_; }
  Duration now() const { return now_; }
  bool started() const { return started_; }
  const Tally& tally() const { return tally_; }
  const std::optional<Decision>& decided() const { return decided_; }
  NodeIndex pioneer() const { return pioneer_; }
  bool is_pioneer() const { return protocol_ == Protocol::Hba && pioneer_ == self_; }
  bool fast_precommitted() const { return fast_precommitted_; }
  bool fast_committed() const { return fast_committed_; }
  bool init_sent() const { return init_sent_; }

  enum class Condition : std::uint8_t { Lock, ForwardPreCommit, ForwardCommit, Decide };
  using ConditionOrder = std::array<Condition, 4>;
  static constexpr ConditionOrder kDefaultOrder{Condition::Lock, Condition::ForwardPreCommit,
                                                Condition::ForwardCommit, Condition::Decide};

  /// Overrides the evaluation order of the update conditions (testing hook).
  void set_condition_order(ConditionOrder order) { order_ = order; }

  friend bool operator==(const AgreementNode&, const AgreementNode&) = default;

 private:
  Duration precommit_offset() const { return config_.lambda * (protocol_ == Protocol::Rba ? 2 : 5); }
  Duration commit_offset() const { return config_.lambda * (protocol_ == Protocol::Rba ? 4 : 7); }
  Duration forward_entry() const { return precommit_offset(); }

  bool precommitted(Iteration r) const { return precommit_iter_ && *precommit_iter_ >= r; }
  bool committed(Iteration r) const { return commit_iter_ && *commit_iter_ >= r; }

  void advance(Duration now) {
    if (now > now_) now_ = now;
  }

  void emit(ProtocolMessage msg, Output& out) {
    sign_message(msg, keys_, mode_);
    tally_.insert(msg);
    out.messages.push_back(std::move(msg));
  }

  // Fast phase: pre-commit the pioneer's value while clock <= 3λ.
  bool fast_precommit(Output& out) {
    if (fast_precommitted_ || round_ != 0 || clock() > 3 * config_.lambda) return false;
    const auto* fast = tally_.messages(MessageKind::Fast, std::nullopt);
    if (!fast) return false;
    auto it = fast->find(pioneer_);
    if (it == fast->end()) return false;
    fast_precommitted_ = true;
    emit(ProtocolMessage::make_precommit(self_, it->second.value, 0), out);
    return true;
  }

  // A message landing exactly on a step boundary is counted before the step:
  // on a message, a boundary reached by the passage of time waits for the
  // tick at that instant; one reached by a forward jump fires at once.
  void settle(Output& out, bool on_tick) {
    if (decided_) return;
    for (int guard = 0; guard < 1'000'000; ++guard) {
      bool changed = apply_conditions(out);
      if (decided_) return;
      changed = fire_steps(out, on_tick) || changed;
      if (decided_) return;
      if (!changed) return;
    }
  }

  // Applies the conditions in order_, iterated until nothing changes.
  bool apply_conditions(Output& out) {
    bool any = false;
    for (;;) {
      bool step = false;
      for (auto c : order_) {
        switch (c) {
          case Condition::Lock: step = try_lock(out) || step; break;
          case Condition::ForwardPreCommit: step = try_forward_precommit() || step; break;
          case Condition::ForwardCommit: step = try_forward_commit() || step; break;
          case Condition::Decide: step = (!decided_ && try_decide(out)) || step; break;
        }
      }
      if (!step) return any;
      any = true;
    }
  }

  std::optional<Value> precommit_quorum_at(Iteration r) const {
    auto it = tally_.value_counts().find(VoteKey{MessageKind::PreCommit, r});
    if (it == tally_.value_counts().end()) return std::nullopt;
    for (const auto& [value, senders] : it->second)
      if (value.decidable() && senders.size() >= quorum(config_)) return value;
    return std::nullopt;
  }

  bool try_lock(Output& out) {
    auto v = precommit_quorum_at(round_);
    if (!v) return false;
    bool changed = false;
    if (lock_ != *v || lock_iter_ != static_cast<std::int64_t>(round_)) {
      lock_ = *v;
      lock_iter_ = static_cast<std::int64_t>(round_);
      changed = true;
    }
    if (protocol_ == Protocol::Hba && round_ == 0 && lock_.is_payload() && !fast_committed_ &&
        clock() <= 3 * config_.lambda) {
      fast_committed_ = true;
      emit(ProtocolMessage::make_commit(self_, lock_, 0), out);
      changed = true;
    }
    return changed;
  }

  void jump_to(Iteration r) {
    jumped_ = true;
    round_ = r;
    base_ = now_ - forward_entry();
  }

  bool try_forward_precommit() {
    const auto& counts = tally_.value_counts();
    std::optional<Iteration> best;
    for (auto it = counts.upper_bound(VoteKey{MessageKind::PreCommit, round_});
         it != counts.end() && it->first.kind == MessageKind::PreCommit; ++it) {
      for (const auto& [value, senders] : it->second)
        if (value.decidable() && senders.size() >= quorum(config_)) best = *it->first.iteration;
    }
    if (!best) return false;
    jump_to(*best);
    return true;
  }

  bool try_forward_commit() {
    const auto& counts = tally_.value_counts();
    std::optional<Iteration> best;
    for (auto it = counts.lower_bound(VoteKey{MessageKind::Commit, round_});
         it != counts.end() && it->first.kind == MessageKind::Commit; ++it) {
      if (tally_.senders(MessageKind::Commit, it->first.iteration) >= quorum(config_)) best = *it->first.iteration;
    }
    if (!best) return false;
    jump_to(*best + 1);
    return true;
  }

  bool try_decide(Output& out) {
    for (const auto& [key, values] : tally_.value_counts()) {
      if (key.kind != MessageKind::Commit) continue;
      for (const auto& [value, senders] : values) {
        if (value.decidable() && senders.size() >= quorum(config_)) {
          decided_ = Decision{value, *key.iteration, now_};
          out.decision = decided_;
          return true;
        }
      }
    }
    return false;
  }

  bool fire_steps(Output& out, bool on_tick) {
    bool changed = false;
    const auto lambda = config_.lambda;
    auto reached = [&](Duration offset) { return on_tick || jumped_ ? clock() >= offset : clock() > offset; };
    if (protocol_ == Protocol::Rba) {
      if (!init_sent_) {
        send_init(out);
        changed = true;
      }
    } else {
      if (is_pioneer() && !fast_sent_) {
        fast_sent_ = true;
        emit(ProtocolMessage::make_fast(self_, initial_), out);
        changed = true;
      }
      changed = fast_precommit(out) || changed;
      if (reached(3 * lambda)) {
        if (round_ == 0) {
          round_ = 1;
          changed = true;
        }
        if (!init_sent_) {
          send_init(out);
          changed = true;
        }
      }
      if (round_ == 0) return changed;
    }
    if (reached(precommit_offset()) && !precommitted(round_)) {
      precommit_iter_ = round_;
      emit(ProtocolMessage::make_precommit(self_, step_two_value(), round_), out);
      changed = true;
    }
    if (reached(commit_offset()) && !committed(round_)) {
      commit_iter_ = round_;
      emit(ProtocolMessage::make_commit(self_, lock_, round_), out);
      changed = true;
    }
    return changed;
  }

  void send_init(Output& out) {
    init_sent_ = true;
    emit(ProtocolMessage::make_init(self_, initial_, vrf_), out);
  }

  Value step_two_value() const {
    if (!lock_.is_skip() && !lock_.is_bottom()) return lock_;
    const auto* inits = tally_.messages(MessageKind::Init, std::nullopt);
    if (!inits) return Value::bottom();
    auto leader = elect_leader(*inits | std::views::values, tally_.init_equivocators());
    if (!leader) return Value::bottom();
    return inits->at(*leader).value;
  }

  Protocol protocol_;
  ConditionOrder order_ = kDefaultOrder;
  Config config_;
  NodeIndex self_;
  KeyPair keys_;
  VrfOutput vrf_;
  VrfMode mode_;
  Value initial_;

  Iteration round_;
  Value lock_ = Value::skip();
  std::int64_t lock_iter_ = -1;
  Duration base_{};
  Duration now_{};
  bool started_ = false;
  bool init_sent_ = false;
  std::optional<Iteration> precommit_iter_;
  std::optional<Iteration> commit_iter_;
  Tally tally_;
  std::optional<Decision> decided_;

  NodeIndex pioneer_ = 0;
  bool fast_sent_ = false;
  bool fast_precommitted_ = false;
  bool fast_committed_ = false;
  bool jumped_ = false;
};

}  // namespace fba

#endif  // FBA_ENGINE_HPP
