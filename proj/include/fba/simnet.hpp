#ifndef FBA_SIMNET_HPP
#define FBA_SIMNET_HPP

// Deterministic discrete-event network for RBA/HBA runs.
//
// One run is a single-threaded loop over a priority queue ordered by
// (time, event class, sequence number). Broadcasts go straight to every
// peer; each honest node also forwards every message it receives for the
// first time to all its peers once. A forwarded copy that cannot arrive
// before a copy already on its way is counted but not scheduled, since its
// delivery would be a no-op.

#include <boost/random/normal_distribution.hpp>

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fba/adversary.hpp"
#include "fba/core.hpp"
#include "fba/crypto.hpp"
#include "fba/engine.hpp"

namespace fba {

inline std::string format_ms(Duration d) {
  using namespace std::chrono;
  if (d.count() % 1'000'000 == 0) return std::to_string(d.count() / 1'000'000) + "ms";
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(3);
  os << static_cast<double>(d.count()) / 1e6 << "ms";
  return os.str();
}

struct DelayModel {
  enum class Kind { Fixed, Gaussian };

  Kind kind = Kind::Fixed;
  Duration mean{std::chrono::milliseconds(50)};
  Duration sigma{0};
  Duration floor{std::chrono::milliseconds(1)};
  std::optional<Duration> cap;

  static DelayModel fixed(Duration d) {
    DelayModel m;
    m.kind = Kind::Fixed;
    m.mean = d;
    return m;
  }
  static DelayModel gaussian(Duration mu, Duration sigma, Duration floor = std::chrono::milliseconds(1)) {
    DelayModel m;
    m.kind = Kind::Gaussian;
    m.mean = mu;
    m.sigma = sigma;
    m.floor = floor;
    return m;
  }
  DelayModel capped_at(Duration c) const {
    DelayModel m = *this;
    m.cap = c;
    return m;
  }

  void validate() const {
    if (kind == Kind::Fixed && mean <= Duration::zero()) throw ConfigError("fixed delay must be positive");
    if (kind == Kind::Gaussian) {
      if (floor <= Duration::zero()) throw ConfigError("gaussian floor must be positive");
      if (sigma < Duration::zero()) throw ConfigError("gaussian sigma must be non-negative");
      if (cap && *cap < floor) throw ConfigError("gaussian cap below floor");
    }
  }

  Duration sample(std::mt19937_64& rng) const {
    if (kind == Kind::Fixed) return mean;
    boost::random::normal_distribution<double> dist(static_cast<double>(mean.count()), static_cast<double>(sigma.count()));
    auto d = Duration(static_cast<Duration::rep>(dist(rng)));
    if (d < floor) d = floor;
    if (cap && d > *cap) d = *cap;
    return d;
  }

  /// Largest delay the model can produce, when bounded.
  std::optional<Duration> max_delay() const {
    if (kind == Kind::Fixed) return mean;
    if (sigma == Duration::zero()) return std::max(mean, floor);
    return cap;
  }

  std::string describe() const {
    if (kind == Kind::Fixed) return "fixed(" + format_ms(mean) + ")";
    return "gaussian(" + format_ms(mean) + "," + format_ms(sigma) + (cap ? ",cap " + format_ms(*cap) : "") + ")";
  }
};

struct PartitionInterval {
  Duration start{0};
  Duration end{0};
  std::vector<std::vector<NodeIndex>> groups;
};

struct PartitionSchedule {
  std::vector<PartitionInterval> intervals;
  DelayModel cross = DelayModel::gaussian(std::chrono::milliseconds(4000), std::chrono::milliseconds(1000));

  bool empty() const { return intervals.empty(); }

  void validate(std::size_t n) const {
    cross.validate();
    auto sorted = intervals;
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.start < b.start; });
    for (std::size_t k = 0; k < sorted.size(); ++k) {
      const auto& iv = sorted[k];
      if (iv.end <= iv.start || iv.start < Duration::zero()) throw ConfigError("partition interval must have start < end");
      if (k > 0 && iv.start < sorted[k - 1].end) throw ConfigError("partition intervals overlap");
      std::vector<int> cover(n, 0);
      for (const auto& g : iv.groups)
        for (auto node : g) {
          if (node >= n) throw ConfigError("partition group names an unknown node");
          ++cover[node];
        }
      for (auto c : cover)
        if (c != 1) throw ConfigError("partition groups must be disjoint and cover all nodes");
    }
  }

  const PartitionInterval* active(Duration at) const {
    for (const auto& iv : intervals)
      if (iv.start <= at && at < iv.end) return &iv;
    return nullptr;
  }

  static bool same_group(const PartitionInterval& iv, NodeIndex a, NodeIndex b) {
    for (const auto& g : iv.groups) {
      const bool ha = std::find(g.begin(), g.end(), a) != g.end();
      const bool hb = std::find(g.begin(), g.end(), b) != g.end();
      if (ha || hb) return ha && hb;
    }
    return false;
  }

  Duration last_end() const {
    Duration e{0};
    for (const auto& iv : intervals) e = std::max(e, iv.end);
    return e;
  }

  std::string describe() const {
    if (intervals.empty()) return "none";
    std::string out;
    for (const auto& iv : intervals) {
      if (!out.empty()) out += "+";
      out += std::to_string(iv.groups.size()) + "way[" + format_ms(iv.start) + "-" + format_ms(iv.end) + "]";
    }
    return out;
  }
};

/// Contiguous split of 0..n-1 into k near-equal groups.
inline std::vector<std::vector<NodeIndex>> split_groups(std::size_t n, std::size_t k) {
  std::vector<std::vector<NodeIndex>> groups(std::max<std::size_t>(1, std::min(k, n)));
  for (std::size_t i = 0; i < n; ++i) groups[i * groups.size() / n].push_back(static_cast<NodeIndex>(i));
  return groups;
}

/// Per-node start offsets: explicit, or uniform in [0, max_random].
struct SkewModel {
  std::vector<Duration> offsets;
  Duration max_random{0};
};

struct Scenario {
  std::string name = "scenario";
  Protocol protocol = Protocol::Rba;
  std::size_t n = 4;
  Duration lambda{std::chrono::milliseconds(1000)};
  Bytes status = to_bytes("status");
  std::uint32_t pioneer = 0;
  std::uint64_t seed = 1;
  std::string keygen_prefix = "node";
  VrfMode mode = VrfMode::Ideal;
  DelayModel delay;
  std::map<std::pair<NodeIndex, NodeIndex>, DelayModel> link_delays;
  PartitionSchedule partitions;
  SkewModel skew;
  AdversarySpec adversary;
  /// Empty means "value-<i>" for node i.
  std::vector<Value> initial_values;
  /// Zero picks a default long enough for t_max+1 iterations after the last
  /// partition ends.
  Duration horizon{0};
  std::size_t instances = 1;

  std::size_t t_max() const { return max_faults(n); }

  Duration effective_horizon() const {
    if (horizon > Duration::zero()) return horizon;
    return partitions.last_end() + lambda * static_cast<Duration::rep>(4 * t_max() + 24);
  }

  void validate() const {
    if (n == 0) throw ConfigError("n must be at least 1");
    if (lambda <= Duration::zero()) throw ConfigError("lambda must be positive");
    if (pioneer >= n) throw ConfigError("pioneer parameter out of range");
    delay.validate();
    for (const auto& [link, m] : link_delays) {
      if (link.first >= n || link.second >= n) throw ConfigError("link delay names an unknown node");
      m.validate();
    }
    partitions.validate(n);
    if (!skew.offsets.empty() && skew.offsets.size() != n) throw ConfigError("skew offsets must list every node");
    for (auto s : skew.offsets)
      if (s < Duration::zero() || s > lambda) throw ConfigError("start skew must lie in [0, lambda]");
    if (skew.max_random < Duration::zero() || skew.max_random > lambda)
      throw ConfigError("start skew must lie in [0, lambda]");
    if (!initial_values.empty() && initial_values.size() != n) throw ConfigError("initial values must list every node");
    for (const auto& v : initial_values)
      if (!v.is_payload()) throw ConfigError("initial values must be payloads");
    for (auto node : adversary.nodes)
      if (node >= n) throw ConfigError("adversary names an unknown node");
    if (adversary.mode == CorruptionMode::Static) {
      std::set<NodeIndex> uniq(adversary.nodes.begin(), adversary.nodes.end());
      if (uniq.size() != adversary.nodes.size()) throw ConfigError("static corruption set has duplicates");
    }
    if (adversary.at < Duration::zero()) throw ConfigError("corruption time must be non-negative");
    if (instances == 0) throw ConfigError("instances must be at least 1");
  }
};

/// Per-link delay, honouring the partition active at send time. A
/// cross-group message arrives at the earlier of its cross-group sample and
/// the partition end plus an ordinary sample.
inline Duration sample_delay(const Scenario& sc, NodeIndex from, NodeIndex to, Duration at, std::mt19937_64& rng) {
  auto link_it = sc.link_delays.find({from, to});
  const DelayModel& link = link_it == sc.link_delays.end() ? sc.delay : link_it->second;
  if (const auto* iv = sc.partitions.active(at); iv && !PartitionSchedule::same_group(*iv, from, to)) {
    auto arrival = at + sc.partitions.cross.sample(rng);
    if (arrival > iv->end) arrival = std::min(arrival, iv->end + link.sample(rng));
    return arrival - at;
  }
  return link.sample(rng);
}

/// The node the scenario's roster and pioneer parameter elect as HBA pioneer.
inline NodeIndex scenario_pioneer(const Scenario& sc) {
  Config cfg;
  cfg.roster = make_roster(sc.keygen_prefix, sc.n).first;
  cfg.lambda = sc.lambda;
  cfg.status = sc.status;
  cfg.pioneer = sc.pioneer;
  return elect_pioneer(cfg);
}

struct NodeReport {
  NodeIndex index = 0;
  bool honest = true;
  bool ever_corrupted = false;
  std::string strategy;
  Duration skew{0};
  Value initial;
  std::optional<Decision> decision;
  /// Global simulation time of the decision.
  Duration decided_at{0};
  Iteration final_round = 0;
};

struct RunMetrics {
  std::string scenario;
  std::uint64_t seed = 0;
  Protocol protocol = Protocol::Rba;
  std::size_t n = 0;
  std::size_t t_max = 0;
  std::size_t corrupted = 0;
  Duration lambda{0};
  std::string delay_model;
  std::string partition;
  std::vector<NodeReport> nodes;
  std::optional<Value> decided_value;
  /// Latest honest decision, global time.
  Duration latency{0};
  /// Largest decision iteration among honest nodes.
  Iteration iterations = 0;
  std::array<std::uint64_t, 5> sent{};
  std::uint64_t relayed = 0;
  std::uint64_t delivered = 0;
  std::uint64_t dropped = 0;
  std::uint64_t adversarial_drops = 0;
  std::uint64_t equivocations = 0;
  std::uint64_t events = 0;
  Duration end_time{0};
  bool nonterm = false;
  std::vector<std::string> violations;
  /// Largest honest round at each RunOptions probe time.
  std::vector<Iteration> probe_rounds;

  std::uint64_t msgs(MessageKind k) const { return sent[static_cast<std::size_t>(k)]; }
  std::uint64_t total_msgs() const { return sent[1] + sent[2] + sent[3] + sent[4]; }
  bool disagreement() const {
    std::set<Value> values;
    for (const auto& r : nodes)
      if (!r.ever_corrupted && r.decision) values.insert(r.decision->value);
    return values.size() > 1;
  }
  bool ok() const { return violations.empty() && !nonterm; }
};

struct RunResult {
  RunMetrics metrics;
  std::vector<std::string> trace;
};

struct RunOptions {
  bool record_trace = true;
  /// Keep delivering in-flight messages after every honest node decided.
  bool drain = false;
  std::uint64_t max_events = 50'000'000;
  /// Global times at which the largest honest round is sampled, ascending.
  std::vector<Duration> probes;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Iteration token used in traces: "-" when absent, "fast" for the HBA
/// iteration 0.
inline std::string iteration_token(Protocol p, std::optional<Iteration> r) {
  if (!r) return "-";
  if (p == Protocol::Hba && *r == 0) return "fast";
  return std::to_string(*r);
}

}  // namespace detail

inline std::string message_token(Protocol p, const ProtocolMessage& m) {
  return std::string(kind_name(m.kind)) + "/" + std::to_string(m.sender) + "/" +
         detail::iteration_token(p, m.iteration) + "/" + m.value.digest();
}

class Simulator {
 public:
  explicit Simulator(Scenario scenario, RunOptions options = {},
                     const StrategyRegistry& registry = builtin_strategies())
      : sc_(std::move(scenario)),
        options_(options),
        registry_(registry),
        net_rng_(sc_.seed),
        adv_rng_(detail::splitmix64(sc_.seed ^ 0xadd0add0ULL)),
        vrf_(sc_.mode, sc_.seed) {
    sc_.validate();
  }

  RunResult run() {
    setup();
    const Duration horizon = sc_.effective_horizon();
    while (!queue_.empty() && (undecided_ > 0 || options_.drain)) {
      Event ev = queue_.top();
      if (ev.at > horizon) break;
      sample_probes(ev.at);
      queue_.pop();
      if (ev.at < now_) violation("causality: event at " + std::to_string(ev.at.count()) + " after " + std::to_string(now_.count()));
      now_ = ev.at;
      if (++metrics_.events > options_.max_events) {
        violation("event budget exhausted");
        break;
      }
      switch (ev.kind) {
        case EventKind::Corrupt: corrupt(ev.node, ev.strategy); break;
        case EventKind::Timer:
          if (peers_[ev.node].strategy) peers_[ev.node].strategy->on_timer(*peers_[ev.node].api, ev.tag);
          break;
        case EventKind::Deliver: deliver(ev.node, ev.env); break;
        case EventKind::Tick: tick(ev.node, ev.at); break;
      }
    }
    sample_probes(kNever);
    return finish(horizon);
  }

  const Config& config() const { return config_; }

 private:
  enum class EventKind : std::uint8_t { Corrupt = 0, Timer = 1, Deliver = 2, Tick = 3 };

  struct Envelope {
    std::uint64_t id;
    ProtocolMessage msg;
    NodeIndex origin;
  };
  using EnvPtr = std::shared_ptr<const Envelope>;

  struct Event {
    Duration at;
    EventKind kind;
    std::uint64_t seq;
    NodeIndex node;
    EnvPtr env;
    std::uint64_t tag = 0;
    std::string strategy;
  };
  struct Later {
    bool operator()(const Event& a, const Event& b) const {
      if (a.at != b.at) return a.at > b.at;
      if (a.kind != b.kind) return a.kind > b.kind;
      return a.seq > b.seq;
    }
  };

  static constexpr Duration kNever = Duration::max();

  class PeerApi;

  struct Peer {
    std::optional<AgreementNode> machine;
    KeyPair keys;
    VrfOutput vrf;
    Value initial;
    Duration skew{0};
    bool started = false;
    bool honest = true;
    bool ever_corrupted = false;
    std::unique_ptr<Strategy> strategy;
    std::unique_ptr<PeerApi> api;
    std::vector<EnvPtr> buffered;
    std::vector<std::uint8_t> seen;
    std::vector<Duration> earliest;
    Duration next_tick = kNever;
    std::optional<Decision> decision;
    Duration decided_at{0};
    std::set<std::pair<MessageKind, Iteration>> voted;
  };

  class PeerApi final : public AdversaryApi {
   public:
    PeerApi(Simulator& sim, NodeIndex self) : sim_(sim), self_(self) {}

    NodeIndex self() const override { return self_; }
    Duration now() const override { return sim_.now_; }
    Duration local_time(NodeIndex node) const override { return sim_.now_ - sim_.peers_.at(node).skew; }
    Protocol protocol() const override { return sim_.sc_.protocol; }
    const Config& config() const override { return sim_.config_; }
    bool is_honest(NodeIndex node) const override { return sim_.peers_.at(node).honest; }
    std::size_t honest_count() const override { return sim_.honest_count(); }
    const AgreementNode* node(NodeIndex node) const override {
      const auto& p = sim_.peers_.at(node);
      return p.machine ? &*p.machine : nullptr;
    }
    const VrfOutput& vrf_of(NodeIndex node) const override { return sim_.peers_.at(node).vrf; }
    const Value& initial_value() const override { return sim_.peers_.at(self_).initial; }
    ProtocolMessage sign(ProtocolMessage msg) const override {
      msg.sender = self_;
      sign_message(msg, sim_.peers_.at(self_).keys, sim_.sc_.mode);
      return msg;
    }
    void send(const ProtocolMessage& msg, NodeIndex to, std::optional<Duration> delay) override {
      if (to >= sim_.sc_.n || to == self_) return;
      sim_.unicast(self_, msg, to, delay);
    }
    void broadcast(const ProtocolMessage& msg, std::optional<Duration> delay) override {
      sim_.broadcast(self_, msg, delay);
    }
    void inject(const ProtocolMessage& msg, NodeIndex to) override {
      if (to >= sim_.sc_.n || to == self_) return;
      auto env = sim_.envelope(msg, self_);
      sim_.count_send(msg, 1);
      sim_.trace_line(self_, "send:" + message_token(sim_.sc_.protocol, msg) + ">" + std::to_string(to));
      sim_.deliver(to, env);
    }
    void set_timer(Duration at, std::uint64_t tag) override {
      sim_.push(Event{std::max(at, sim_.now_), EventKind::Timer, 0, self_, nullptr, tag, {}});
    }
    std::mt19937_64& rng() override { return sim_.adv_rng_; }

   private:
    Simulator& sim_;
    NodeIndex self_;
  };

  // -------------------------------------------------------------------------
  // Setup and teardown

  void setup() {
    auto [roster, keys] = make_roster(sc_.keygen_prefix, sc_.n);
    config_.roster = std::move(roster);
    config_.lambda = sc_.lambda;
    config_.status = sc_.status;
    config_.pioneer = sc_.pioneer;
    config_.validate();
    directory_.emplace(sc_.mode, keys);
    peers_.resize(sc_.n);

    std::vector<CorruptionEvent> plan;
    if (sc_.adversary.mode == CorruptionMode::Static)
      for (auto node : sc_.adversary.nodes) plan.push_back({node, Duration::zero(), sc_.adversary.strategy_for(node)});
    else
      plan = adaptive_corrupt(sc_.adversary, config_, sc_.protocol);

    if (sc_.adversary.favorable_draws && sc_.mode == VrfMode::Ideal) {
      std::uint8_t k = 0;
      for (const auto& c : plan) {
        Bytes y(kVrfOutputBytes, 0);
        y.back() = ++k;
        vrf_.ideal()->grant(keys[c.node].pk, config_.status, std::move(y));
      }
    }

    for (std::size_t i = 0; i < sc_.n; ++i) {
      auto& p = peers_[i];
      p.keys = keys[i];
      p.vrf = vrf_.prove(p.keys, config_.status);
      p.initial = sc_.initial_values.empty() ? Value::payload("value-" + std::to_string(i)) : sc_.initial_values[i];
      p.machine.emplace(sc_.protocol, NodeSetup{config_, static_cast<NodeIndex>(i), p.keys, p.vrf, sc_.mode, p.initial});
    }
    resolve_skew();
    undecided_ = sc_.n;

    if (options_.record_trace) {
      trace_.push_back("# fba-trace 1");
      std::ostringstream h;
      h << "# protocol=" << protocol_name(sc_.protocol) << " n=" << sc_.n << " t_max=" << sc_.t_max()
        << " quorum=" << quorum(config_) << " lambda_ns=" << sc_.lambda.count() << " seed=" << sc_.seed
        << " mode=" << mode_name(sc_.mode);
      trace_.push_back(h.str());
      trace_.push_back("# columns=time_ns,node,event,r_q,lock_digest,lockite,decided");
    }

    for (const auto& c : plan) {
      if (sc_.adversary.mode == CorruptionMode::Static)
        corrupt(c.node, c.strategy);
      else
        push(Event{c.at, EventKind::Corrupt, 0, c.node, nullptr, 0, c.strategy});
    }
    for (NodeIndex i = 0; i < sc_.n; ++i) {
      auto& p = peers_[i];
      if (!p.honest && !p.strategy->uses_shadow()) {
        p.started = true;
        continue;
      }
      reschedule(i);
    }
  }

  void resolve_skew() {
    for (std::size_t i = 0; i < sc_.n; ++i) {
      if (!sc_.skew.offsets.empty())
        peers_[i].skew = sc_.skew.offsets[i];
      else if (sc_.skew.max_random > Duration::zero())
        peers_[i].skew = Duration(static_cast<Duration::rep>(net_rng_() % static_cast<std::uint64_t>(sc_.skew.max_random.count() + 1)));
    }
  }

  RunResult finish(Duration horizon) {
    metrics_.scenario = sc_.name;
    metrics_.seed = sc_.seed;
    metrics_.protocol = sc_.protocol;
    metrics_.n = sc_.n;
    metrics_.t_max = sc_.t_max();
    metrics_.lambda = sc_.lambda;
    metrics_.delay_model = sc_.delay.describe();
    metrics_.partition = sc_.partitions.describe();
    metrics_.end_time = now_;
    std::set<std::tuple<NodeIndex, MessageKind, std::optional<Iteration>>> equivocations;
    std::optional<Value> common;
    bool agree = true;
    for (NodeIndex i = 0; i < sc_.n; ++i) {
      auto& p = peers_[i];
      NodeReport r;
      r.index = i;
      r.honest = p.honest;
      r.ever_corrupted = p.ever_corrupted;
      r.strategy = p.strategy ? p.strategy->name() : "honest";
      r.skew = p.skew;
      r.initial = p.initial;
      r.decision = p.decision;
      r.decided_at = p.decided_at;
      r.final_round = p.machine ? p.machine->round() : 0;
      if (p.ever_corrupted) ++metrics_.corrupted;
      if (!p.ever_corrupted) {
        if (p.decision) {
          metrics_.latency = std::max(metrics_.latency, p.decided_at);
          metrics_.iterations = std::max(metrics_.iterations, p.decision->iteration);
          if (!common)
            common = p.decision->value;
          else if (*common != p.decision->value)
            agree = false;
        } else {
          metrics_.nonterm = true;
        }
        for (const auto& e : p.machine->tally().equivocations())
          equivocations.insert({e.first.sender, e.first.kind, e.first.iteration});
        check_quorum_intersection(i);
      }
      metrics_.nodes.push_back(std::move(r));
    }
    if (agree) metrics_.decided_value = common;
    metrics_.equivocations = equivocations.size();
    if (metrics_.nonterm && options_.record_trace)
      trace_.push_back("# nonterm horizon_ns=" + std::to_string(horizon.count()));
    return RunResult{std::move(metrics_), std::move(trace_)};
  }

  // -------------------------------------------------------------------------
  // Event handling

  void push(Event ev) {
    ev.seq = seq_++;
    queue_.push(std::move(ev));
  }

  Duration local(NodeIndex i) const { return now_ - peers_[i].skew; }

  void sample_probes(Duration before) {
    while (metrics_.probe_rounds.size() < options_.probes.size() &&
           options_.probes[metrics_.probe_rounds.size()] < before) {
      Iteration r = 0;
      for (const auto& p : peers_)
        if (p.honest && p.machine) r = std::max(r, p.machine->round());
      metrics_.probe_rounds.push_back(r);
    }
  }

  std::size_t honest_count() const {
    std::size_t h = 0;
    for (const auto& p : peers_) h += p.honest ? 1 : 0;
    return h;
  }

  void reschedule(NodeIndex i) {
    auto& p = peers_[i];
    if (!p.honest && !p.strategy->uses_shadow()) {
      p.next_tick = kNever;
      return;
    }
    auto w = p.machine->next_wakeup();
    if (!w) {
      p.next_tick = kNever;
      return;
    }
    const Duration at = std::max(now_, *w + p.skew);
    if (at == p.next_tick) return;
    p.next_tick = at;
    push(Event{at, EventKind::Tick, 0, i, nullptr, 0, {}});
  }

  void tick(NodeIndex i, Duration at) {
    auto& p = peers_[i];
    if (at != p.next_tick) return;
    p.next_tick = kNever;
    if (p.honest) notify_adversary(i, nullptr);
    const bool first = !p.started;
    p.started = true;
    if (p.honest) {
      trace_line(i, "tick");
      auto before = lock_of(i);
      auto out = p.machine->on_tick(local(i));
      emit_honest(i, std::move(out));
      check_lock(i, before);
    } else if (p.strategy->uses_shadow()) {
      trace_line(i, "tick");
      auto out = p.machine->on_tick(local(i));
      for (const auto& m : out.messages) p.strategy->on_shadow_output(*p.api, m);
    }
    if (first) {
      auto pending = std::move(p.buffered);
      p.buffered.clear();
      for (auto& env : pending) deliver(i, env);
    }
    reschedule(i);
  }

  void deliver(NodeIndex i, const EnvPtr& env) {
    auto& p = peers_[i];
    if (!p.started) {
      p.buffered.push_back(env);
      return;
    }
    if (p.seen.size() <= env->id) p.seen.resize(env->id + 1, 0);
    if (p.seen[env->id]) return;
    p.seen[env->id] = 1;
    const auto& msg = env->msg;
    if (!verified(*env)) {
      ++metrics_.dropped;
      trace_line(i, "drop:" + message_token(sc_.protocol, msg));
      return;
    }
    ++metrics_.delivered;
    if (p.honest) {
      notify_adversary(i, &msg);
      if (env->origin != i) relay(i, env);
      trace_line(i, "recv:" + message_token(sc_.protocol, msg));
      auto before = lock_of(i);
      auto out = p.machine->on_message(msg, local(i));
      emit_honest(i, std::move(out));
      check_lock(i, before);
    } else {
      trace_line(i, "recv:" + message_token(sc_.protocol, msg));
      if (p.strategy->uses_shadow()) {
        auto out = p.machine->on_message(msg, local(i));
        for (const auto& m : out.messages) p.strategy->on_shadow_output(*p.api, m);
      }
      p.strategy->on_receive(*p.api, msg);
    }
    reschedule(i);
  }

  void notify_adversary(NodeIndex target, const ProtocolMessage* msg) {
    for (NodeIndex j = 0; j < sc_.n; ++j)
      if (!peers_[j].honest && peers_[j].strategy) peers_[j].strategy->before_honest_event(*peers_[j].api, target, msg);
  }

  void corrupt(NodeIndex i, const std::string& strategy) {
    auto& p = peers_[i];
    if (!p.honest) return;
    if (corrupted_so_far_ >= sc_.adversary.max_corrupted()) return;
    ++corrupted_so_far_;
    p.honest = false;
    p.ever_corrupted = true;
    if (!p.decision) --undecided_;
    p.api = std::make_unique<PeerApi>(*this, i);
    p.strategy = registry_.create(strategy, i, shared_);
    trace_line(i, "corrupt:" + p.strategy->name());
    p.strategy->on_corrupt(*p.api);
    if (!p.strategy->uses_shadow()) {
      p.started = true;
      p.next_tick = kNever;
      auto pending = std::move(p.buffered);
      p.buffered.clear();
      for (auto& env : pending) deliver(i, env);
    }
  }

  // -------------------------------------------------------------------------
  // Sending

  EnvPtr envelope(const ProtocolMessage& msg, NodeIndex origin) {
    auto env = std::make_shared<const Envelope>(Envelope{next_id_++, msg, origin});
    auto& p = peers_[origin];
    if (p.seen.size() <= env->id) p.seen.resize(env->id + 1, 0);
    p.seen[env->id] = 1;
    return env;
  }

  void count_send(const ProtocolMessage& msg, std::uint64_t copies) {
    metrics_.sent[static_cast<std::size_t>(msg.kind)] += copies;
  }

  void schedule(NodeIndex from, NodeIndex to, const EnvPtr& env, std::optional<Duration> fixed) {
    Duration d;
    if (fixed) {
      d = *fixed;
    } else {
      d = sample_delay(sc_, from, to, now_, net_rng_);
      if (sync_bound_ && peers_[from].honest && peers_[to].honest && !sc_.partitions.active(now_) && d > sc_.lambda)
        violation("synchrony: honest delay above lambda");
    }
    const Duration at = now_ + d;
    auto& p = peers_[to];
    if (p.seen.size() > env->id && p.seen[env->id]) return;
    if (p.earliest.size() <= env->id) p.earliest.resize(env->id + 1, kNever);
    if (p.earliest[env->id] <= at) return;
    p.earliest[env->id] = at;
    push(Event{at, EventKind::Deliver, 0, to, env, 0, {}});
  }

  void broadcast(NodeIndex from, const ProtocolMessage& msg, std::optional<Duration> fixed = std::nullopt) {
    auto env = envelope(msg, from);
    count_send(msg, sc_.n);
    trace_line(from, "send:" + message_token(sc_.protocol, msg));
    for (NodeIndex to = 0; to < sc_.n; ++to)
      if (to != from) schedule(from, to, env, fixed);
  }

  void unicast(NodeIndex from, const ProtocolMessage& msg, NodeIndex to, std::optional<Duration> fixed) {
    auto env = envelope(msg, from);
    count_send(msg, 1);
    trace_line(from, "send:" + message_token(sc_.protocol, msg) + ">" + std::to_string(to));
    schedule(from, to, env, fixed);
  }

  void relay(NodeIndex from, const EnvPtr& env) {
    for (NodeIndex to = 0; to < sc_.n; ++to) {
      if (to == from) continue;
      ++metrics_.relayed;
      schedule(from, to, env, std::nullopt);
    }
  }

  void emit_honest(NodeIndex i, Output out) {
    auto& p = peers_[i];
    if (out.decision) {
      if (p.decision) {
        violation("decide-once: node " + std::to_string(i) + " decided twice");
      } else {
        p.decision = out.decision;
        p.decided_at = now_;
        --undecided_;
        trace_line(i, "decide:" + out.decision->value.digest() + "/" +
                          detail::iteration_token(sc_.protocol, out.decision->iteration));
        if (!first_decision_)
          first_decision_ = out.decision->value;
        else if (*first_decision_ != out.decision->value)
          violation("agreement: node " + std::to_string(i) + " decided " + out.decision->value.digest() +
                    " against " + first_decision_->digest());
      }
    }
    for (const auto& m : out.messages) {
      if (m.kind != MessageKind::Init && m.kind != MessageKind::Fast) {
        if (!p.voted.insert({m.kind, *m.iteration}).second)
          violation("one-vote: node " + std::to_string(i) + " voted twice in " + kind_name(m.kind) + " " +
                    std::to_string(*m.iteration));
        if (m.kind == MessageKind::Commit && m.value.decidable()) honest_commits_[*m.iteration][m.value].insert(i);
      }
      broadcast(i, m);
    }
  }

  // -------------------------------------------------------------------------
  // Verification and invariant monitors

  bool verified(const Envelope& env) {
    if (verify_cache_.size() <= env.id) verify_cache_.resize(env.id + 1, -1);
    auto& slot = verify_cache_[env.id];
    if (slot >= 0) return slot == 1;
    const auto& m = env.msg;
    bool ok = true;
    try {
      m.validate();
    } catch (const InvalidMessage&) {
      ok = false;
    }
    ok = ok && m.sender < sc_.n && directory_->verify_signature(m);
    if (ok && m.kind == MessageKind::Init) ok = vrf_.verify(peers_[m.sender].keys.pk, config_.status, *m.vrf);
    if (ok && m.kind == MessageKind::Fast) {
      const bool from_pioneer = sc_.protocol == Protocol::Hba && m.sender == pioneer_index();
      if (!from_pioneer) {
        ok = false;
        ++metrics_.adversarial_drops;
      }
    }
    slot = ok ? 1 : 0;
    return ok;
  }

  NodeIndex pioneer_index() {
    if (!pioneer_) pioneer_ = elect_pioneer(config_);
    return *pioneer_;
  }

  std::pair<Value, std::int64_t> lock_of(NodeIndex i) const {
    const auto& m = *peers_[i].machine;
    return {m.lock_value(), m.lock_iteration()};
  }

  // Once t_max+1 honest nodes commit v at r, no honest lock on another value
  // may appear at a later iteration.
  void check_lock(NodeIndex i, const std::pair<Value, std::int64_t>& before) {
    auto after = lock_of(i);
    if (after == before || after.second < 0) return;
    const auto r_new = static_cast<Iteration>(after.second);
    for (const auto& [r, by_value] : honest_commits_) {
      if (r >= r_new) break;
      for (const auto& [v, senders] : by_value)
        if (senders.size() >= sc_.t_max() + 1 && v != after.first)
          violation("lock-stickiness: node " + std::to_string(i) + " locked " + after.first.digest() + " at " +
                    std::to_string(r_new) + " after honest commits of " + v.digest() + " at " + std::to_string(r));
    }
  }

  void check_quorum_intersection(NodeIndex i) {
    const auto q = quorum(config_);
    for (const auto& [key, values] : peers_[i].machine->tally().value_counts()) {
      if (key.kind != MessageKind::Commit) continue;
      std::size_t full = 0;
      for (const auto& [v, senders] : values)
        if (v.decidable() && senders.size() >= q) ++full;
      if (full > 1)
        violation("quorum-intersection: node " + std::to_string(i) + " holds two commit quorums at " +
                  std::to_string(*key.iteration));
    }
  }

  void violation(std::string what) {
    if (metrics_.violations.size() < 64) metrics_.violations.push_back(std::move(what));
  }

  void trace_line(NodeIndex i, const std::string& event) {
    if (!options_.record_trace) return;
    const auto& p = peers_[i];
    std::string line = std::to_string(now_.count()) + "," + std::to_string(i) + "," + event + ",";
    if (p.machine) {
      const auto& m = *p.machine;
      line += std::to_string(m.round()) + "," + m.lock_value().digest() + "," + std::to_string(m.lock_iteration()) + ",";
      line += m.decided() ? m.decided()->value.digest() : "-";
    } else {
      line += "-,-,-,-";
    }
    trace_.push_back(std::move(line));
  }

  Scenario sc_;
  RunOptions options_;
  const StrategyRegistry& registry_;
  std::mt19937_64 net_rng_;
  std::mt19937_64 adv_rng_;
  VrfService vrf_;
  Config config_;
  std::optional<KeyDirectory> directory_;
  std::vector<Peer> peers_;
  SharedState shared_;
  std::priority_queue<Event, std::vector<Event>, Later> queue_;
  std::uint64_t seq_ = 0;
  std::uint64_t next_id_ = 0;
  Duration now_{0};
  std::size_t undecided_ = 0;
  std::size_t corrupted_so_far_ = 0;
  std::vector<std::int8_t> verify_cache_;
  std::optional<NodeIndex> pioneer_;
  std::optional<Value> first_decision_;
  std::map<Iteration, std::map<Value, std::set<NodeIndex>>> honest_commits_;
  bool sync_bound_ = sc_.delay.max_delay() && *sc_.delay.max_delay() <= sc_.lambda && sc_.link_delays.empty();
  RunMetrics metrics_;
  std::vector<std::string> trace_;
};

inline RunResult run(const Scenario& scenario, RunOptions options = {},
                     const StrategyRegistry& registry = builtin_strategies()) {
  return Simulator(scenario, options, registry).run();
}

}  // namespace fba

#endif  // FBA_SIMNET_HPP
