#ifndef FBA_ADVERSARY_HPP
#define FBA_ADVERSARY_HPP

// Byzantine behaviours and the corruption model.
//
// A corrupted node is driven by a Strategy. Most strategies keep the node's
// honest state machine running as a "shadow" and decide what to do with each
// message the shadow wants to send. The simulator exposes its full view of
// the run through AdversaryApi.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fba/core.hpp"
#include "fba/engine.hpp"

namespace fba {

class AdversaryApi {
 public:
  virtual ~AdversaryApi() = default;

  virtual NodeIndex self() const = 0;
  /// Global simulation time.
  virtual Duration now() const = 0;
  virtual Duration local_time(NodeIndex node) const = 0;
  virtual Protocol protocol() const = 0;
  virtual const Config& config() const = 0;
  virtual bool is_honest(NodeIndex node) const = 0;
  virtual std::size_t honest_count() const = 0;
  /// Honest state machine, or the shadow of a corrupted node.
  virtual const AgreementNode* node(NodeIndex node) const = 0;
  virtual const VrfOutput& vrf_of(NodeIndex node) const = 0;
  virtual const Value& initial_value() const = 0;

  /// Signs with this node's own key.
  virtual ProtocolMessage sign(ProtocolMessage msg) const = 0;
  /// `delay` overrides the sampled network delay.
  virtual void send(const ProtocolMessage& msg, NodeIndex to, std::optional<Duration> delay = std::nullopt) = 0;
  virtual void broadcast(const ProtocolMessage& msg, std::optional<Duration> delay = std::nullopt) = 0;
  /// Delivers to `to` immediately, ahead of its pending events.
  virtual void inject(const ProtocolMessage& msg, NodeIndex to) = 0;
  virtual void set_timer(Duration at, std::uint64_t tag) = 0;
  virtual std::mt19937_64& rng() = 0;
};

class Strategy {
 public:
  virtual ~Strategy() = default;

  virtual std::string name() const = 0;
  /// Whether the honest state machine keeps running as a shadow.
  virtual bool uses_shadow() const { return true; }

  virtual void on_corrupt(AdversaryApi&) {}
  /// A message the shadow state machine would send.
  virtual void on_shadow_output(AdversaryApi& api, const ProtocolMessage& msg) { api.broadcast(msg); }
  /// First receipt of a verified message.
  virtual void on_receive(AdversaryApi&, const ProtocolMessage&) {}
  virtual void on_timer(AdversaryApi&, std::uint64_t) {}
  /// Runs before every honest node's tick (`msg` null) or delivery.
  virtual void before_honest_event(AdversaryApi&, NodeIndex, const ProtocolMessage*) {}
};

/// State shared by all strategy instances of one run.
using SharedState = std::map<std::string, std::shared_ptr<void>>;
using StrategyFactory = std::function<std::unique_ptr<Strategy>(NodeIndex self, SharedState& shared)>;

// ---------------------------------------------------------------------------
// Built-in strategies

class CrashStrategy : public Strategy {
 public:
  std::string name() const override { return "crash"; }
  bool uses_shadow() const override { return false; }
  void on_shadow_output(AdversaryApi&, const ProtocolMessage&) override {}
};

/// Follows the protocol except that it never speaks in the fast phase.
class SilentPioneerStrategy : public Strategy {
 public:
  std::string name() const override { return "silent_pioneer"; }
  void on_shadow_output(AdversaryApi& api, const ProtocolMessage& msg) override {
    if (msg.kind == MessageKind::Fast) return;
    if (msg.iteration && *msg.iteration == 0 && api.protocol() == Protocol::Hba) return;
    api.broadcast(msg);
  }
};

/// Sends every recipient a different init value under the same VRF output.
class EquivocateInitStrategy : public Strategy {
 public:
  std::string name() const override { return "equivocate_init"; }
  void on_shadow_output(AdversaryApi& api, const ProtocolMessage& msg) override {
    if (msg.kind != MessageKind::Init) {
      api.broadcast(msg);
      return;
    }
    for (NodeIndex to = 0; to < api.config().n(); ++to) {
      if (to == api.self()) continue;
      auto forked = msg;
      auto data = msg.value.data();
      auto suffix = "/eq" + std::to_string(to);
      data.insert(data.end(), suffix.begin(), suffix.end());
      forked.value = Value::payload(std::move(data));
      api.send(api.sign(std::move(forked)), to);
    }
  }
};

/// Honest behaviour with every message held back for exactly λ.
class DelayMaxStrategy : public Strategy {
 public:
  std::string name() const override { return "delay_max"; }
  void on_shadow_output(AdversaryApi& api, const ProtocolMessage& msg) override {
    api.broadcast(msg, api.config().lambda);
  }
};

/// Plans leader grinding across the whole coalition. At each iteration, the
/// unrevealed grinder whose y is the largest still below every revealed y
/// hands its init to just enough unlocked honest nodes, right before they
/// pre-commit, that neither camp reaches a quorum.
class GrindCoordinator {
 public:
  void enlist(NodeIndex node, AdversaryApi* api) { members_[node] = api; }

  const std::set<NodeIndex>& revealed() const { return revealed_; }

  /// `msg` is the message about to be delivered to `target`, or null for a
  /// tick. The coordinator replays the event on a copy of the target's state
  /// machine and acts only if the event would make it pre-commit.
  void before_honest_event(AdversaryApi& caller, NodeIndex target, const ProtocolMessage* msg) {
    if (busy_ || members_.empty() || caller.self() != members_.begin()->first) return;
    const AgreementNode* hn = caller.node(target);
    if (!hn || !caller.is_honest(target) || hn->decided()) return;
    if (msg && msg->kind != MessageKind::PreCommit && msg->kind != MessageKind::Commit) return;
    if (!msg && !hn->precommit_due(caller.local_time(target))) return;

    AgreementNode probe = *hn;
    const Output out = msg ? probe.on_message(*msg, caller.local_time(target)) : probe.on_tick(caller.local_time(target));
    std::optional<Iteration> r;
    for (const auto& m : out.messages)
      if (m.kind == MessageKind::PreCommit && *m.iteration >= 1) r = *m.iteration;
    if (!r) return;
    if (!probe.lock_value().is_skip() && !probe.lock_value().is_bottom()) return;

    auto& plan = plans_[*r];
    if (!plan.decided) {
      plan.decided = true;
      plan.grinder = choose(caller);
      if (plan.grinder) revealed_.insert(*plan.grinder);
    }
    if (!plan.grinder) return;
    const auto h = static_cast<long>(caller.honest_count());
    const auto q = static_cast<long>(quorum(caller.config()));
    const auto want = static_cast<std::size_t>(std::max<long>(1, h - q + 1));
    if (plan.targets.size() >= want) return;
    if (const auto* inits = hn->tally().messages(MessageKind::Init, std::nullopt); inits && inits->contains(*plan.grinder))
      return;
    plan.targets.insert(target);
    AdversaryApi& g = *members_.at(*plan.grinder);
    auto init = g.sign(ProtocolMessage::make_init(*plan.grinder, g.initial_value(), g.vrf_of(*plan.grinder)));
    busy_ = true;
    g.inject(init, target);
    busy_ = false;
  }

  /// Iterations at which a grinder was released, with its targets.
  std::map<Iteration, std::pair<NodeIndex, std::set<NodeIndex>>> releases() const {
    std::map<Iteration, std::pair<NodeIndex, std::set<NodeIndex>>> out;
    for (const auto& [r, p] : plans_)
      if (p.grinder) out[r] = {*p.grinder, p.targets};
    return out;
  }

 private:
  struct Plan {
    bool decided = false;
    std::optional<NodeIndex> grinder;
    std::set<NodeIndex> targets;
  };

  std::optional<NodeIndex> choose(AdversaryApi& api) const {
    std::optional<Bytes> known_min;
    auto consider = [&](const Bytes& y) {
      if (!known_min || y < *known_min) known_min = y;
    };
    for (NodeIndex i = 0; i < api.config().n(); ++i)
      if (!members_.contains(i) || revealed_.contains(i)) consider(api.vrf_of(i).y);
    std::optional<NodeIndex> best;
    for (const auto& [g, _] : members_) {
      if (revealed_.contains(g)) continue;
      const auto& y = api.vrf_of(g).y;
      if (known_min && !(y < *known_min)) continue;
      if (!best || api.vrf_of(*best).y < y) best = g;
    }
    return best;
  }

  std::map<NodeIndex, AdversaryApi*> members_;
  std::set<NodeIndex> revealed_;
  std::map<Iteration, Plan> plans_;
  bool busy_ = false;
};

/// Withholds its init and votes; releases the init once, to a chosen subset,
/// when the coalition's coordinator says so.
class LeaderGrindStrategy : public Strategy {
 public:
  explicit LeaderGrindStrategy(std::shared_ptr<GrindCoordinator> coordinator) : coordinator_(std::move(coordinator)) {}

  std::string name() const override { return "leader_grind"; }
  bool uses_shadow() const override { return false; }
  void on_corrupt(AdversaryApi& api) override { coordinator_->enlist(api.self(), &api); }
  void before_honest_event(AdversaryApi& api, NodeIndex node, const ProtocolMessage* msg) override {
    coordinator_->before_honest_event(api, node, msg);
  }

  const GrindCoordinator& coordinator() const { return *coordinator_; }

 private:
  std::shared_ptr<GrindCoordinator> coordinator_;
};

/// Randomised equivocator: splits recipients and sends each half a different
/// signed version of the shadow's messages, and now and then votes ahead.
class ChaosStrategy : public Strategy {
 public:
  std::string name() const override { return "chaos"; }

  void on_shadow_output(AdversaryApi& api, const ProtocolMessage& msg) override {
    auto& rng = api.rng();
    if (rng() % 3 == 0) {
      api.broadcast(msg);
      return;
    }
    auto alt = msg;
    alt.value = pick_value(api, msg);
    for (NodeIndex to = 0; to < api.config().n(); ++to) {
      if (to == api.self()) continue;
      const bool flip = rng() % 2;
      if (rng() % 5 == 0) continue;
      api.send(flip ? api.sign(alt) : msg, to);
    }
    if (msg.iteration && rng() % 4 == 0) {
      auto ahead = api.sign(ProtocolMessage{msg.kind, pick_value(api, msg), msg.sender, *msg.iteration + 1, std::nullopt, {}});
      api.broadcast(ahead);
    }
  }

 private:
  static Value pick_value(AdversaryApi& api, const ProtocolMessage& msg) {
    auto& rng = api.rng();
    if (msg.kind == MessageKind::Init || msg.kind == MessageKind::Fast)
      return Value::payload("chaos/" + std::to_string(api.self()) + "/" + std::to_string(rng() % 4));
    switch (rng() % 4) {
      case 0: return Value::bottom();
      case 1: return Value::skip();
      default: {
        auto peer = static_cast<NodeIndex>(rng() % api.config().n());
        if (const auto* n = api.node(peer)) return n->initial_value();
        return Value::bottom();
      }
    }
  }
};

/// Strategy adapter over plain callbacks, for programmatic registration.
class CallbackStrategy : public Strategy {
 public:
  struct Hooks {
    std::string name = "custom";
    bool shadow = true;
    std::function<void(AdversaryApi&)> on_corrupt;
    std::function<void(AdversaryApi&, const ProtocolMessage&)> on_shadow_output;
    std::function<void(AdversaryApi&, const ProtocolMessage&)> on_receive;
    std::function<void(AdversaryApi&, std::uint64_t)> on_timer;
  };

  explicit CallbackStrategy(Hooks hooks) : hooks_(std::move(hooks)) {}

  std::string name() const override { return hooks_.name; }
  bool uses_shadow() const override { return hooks_.shadow; }
  void on_corrupt(AdversaryApi& api) override {
    if (hooks_.on_corrupt) hooks_.on_corrupt(api);
  }
  void on_shadow_output(AdversaryApi& api, const ProtocolMessage& msg) override {
    if (hooks_.on_shadow_output) hooks_.on_shadow_output(api, msg);
  }
  void on_receive(AdversaryApi& api, const ProtocolMessage& msg) override {
    if (hooks_.on_receive) hooks_.on_receive(api, msg);
  }
  void on_timer(AdversaryApi& api, std::uint64_t tag) override {
    if (hooks_.on_timer) hooks_.on_timer(api, tag);
  }

 private:
  Hooks hooks_;
};

/// Name → factory table. Built-ins are pre-registered; Custom strategies are
/// added with add().
class StrategyRegistry {
 public:
  StrategyRegistry() {
    add("crash", [](NodeIndex, SharedState&) { return std::make_unique<CrashStrategy>(); });
    add("silent_pioneer", [](NodeIndex, SharedState&) { return std::make_unique<SilentPioneerStrategy>(); });
    add("equivocate_init", [](NodeIndex, SharedState&) { return std::make_unique<EquivocateInitStrategy>(); });
    add("delay_max", [](NodeIndex, SharedState&) { return std::make_unique<DelayMaxStrategy>(); });
    add("chaos", [](NodeIndex, SharedState&) { return std::make_unique<ChaosStrategy>(); });
    add("leader_grind", [](NodeIndex, SharedState& shared) {
      auto& slot = shared["leader_grind"];
      if (!slot) slot = std::make_shared<GrindCoordinator>();
      return std::make_unique<LeaderGrindStrategy>(std::static_pointer_cast<GrindCoordinator>(slot));
    });
  }

  void add(std::string name, StrategyFactory factory) { factories_[std::move(name)] = std::move(factory); }
  bool contains(const std::string& name) const { return factories_.contains(name); }

  std::unique_ptr<Strategy> create(const std::string& name, NodeIndex self, SharedState& shared) const {
    auto it = factories_.find(name);
    if (it == factories_.end()) throw ConfigError("unknown adversary strategy: " + name);
    return it->second(self, shared);
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [k, _] : factories_) out.push_back(k);
    return out;
  }

 private:
  std::map<std::string, StrategyFactory> factories_;
};

inline const StrategyRegistry& builtin_strategies() {
  static const StrategyRegistry registry;
  return registry;
}

// ---------------------------------------------------------------------------
// Corruption model

enum class CorruptionMode { Static, Adaptive };
enum class CorruptionTrigger { Pioneer, AtTime };

struct AdversarySpec {
  CorruptionMode mode = CorruptionMode::Static;
  std::string strategy = "crash";
  /// Static: the corrupted set. Adaptive/AtTime: candidates in order.
  std::vector<NodeIndex> nodes;
  /// Optional per-node strategy overrides.
  std::map<NodeIndex, std::string> strategies;
  /// Adaptive budget.
  std::size_t budget = 0;
  CorruptionTrigger trigger = CorruptionTrigger::AtTime;
  Duration at{0};
  /// Ideal mode only: hand every corruptible node a VRF output below all
  /// honest draws.
  bool favorable_draws = false;

  const std::string& strategy_for(NodeIndex node) const {
    auto it = strategies.find(node);
    return it == strategies.end() ? strategy : it->second;
  }

  std::size_t max_corrupted() const { return mode == CorruptionMode::Static ? nodes.size() : budget; }
};

/// One planned corruption: which node, when, and with which strategy.
struct CorruptionEvent {
  NodeIndex node = 0;
  Duration at{0};
  std::string strategy;
};

/// Resolves an adaptive trigger into concrete corruption events. A budget of
/// zero, or a trigger that cannot fire, yields nothing.
inline std::vector<CorruptionEvent> adaptive_corrupt(const AdversarySpec& spec, const Config& config, Protocol protocol) {
  std::vector<CorruptionEvent> out;
  if (spec.mode != CorruptionMode::Adaptive || spec.budget == 0) return out;
  if (spec.trigger == CorruptionTrigger::Pioneer) {
    if (protocol != Protocol::Hba) return out;
    auto p = elect_pioneer(config);
    out.push_back({p, Duration::zero(), spec.strategy_for(p)});
    return out;
  }
  std::set<NodeIndex> taken;
  for (auto node : spec.nodes) {
    if (out.size() >= spec.budget) break;
    if (node >= config.n() || !taken.insert(node).second) continue;
    out.push_back({node, spec.at, spec.strategy_for(node)});
  }
  return out;
}

}  // namespace fba

#endif  // FBA_ADVERSARY_HPP
