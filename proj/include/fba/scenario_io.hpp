#ifndef FBA_SCENARIO_IO_HPP
#define FBA_SCENARIO_IO_HPP

// Scenario files (YAML) and metrics documents (JSON).
//
// Durations are given in milliseconds and may be fractional. Every key is
// optional; unknown keys are rejected so typos surface as errors.
//
//   name: hba-best-case
//   protocol: hba                # rba | hba
//   n: 4
//   lambda_ms: 1000
//   status: status               # VRF status string
//   pioneer: 0                   # HBA pioneer parameter p
//   seed: 7
//   keygen_prefix: node
//   vrf: ideal                   # ideal | cryptographic
//   delay: {kind: fixed, ms: 50} # or {kind: gaussian, mean_ms, sigma_ms, floor_ms, cap_ms}
//   link_delays: [{from: 0, to: 1, delay: {kind: fixed, ms: 5}}]
//   partitions:
//     cross: {kind: gaussian, mean_ms: 4000, sigma_ms: 1000}
//     intervals: [{start_ms: 0, end_ms: 60000, groups: 3}]   # or explicit [[0,1],[2,3]]
//   skew: {max_ms: 500}          # or {offsets_ms: [0, 10, ...]}
//   adversary:
//     mode: static               # static | adaptive
//     strategy: crash
//     nodes: [3]
//     strategies: {3: chaos}
//     budget: 1
//     trigger: at_time           # at_time | pioneer
//     at_ms: 0
//     favorable_draws: false
//   initial_values: [a, b, c, d]
//   horizon_ms: 0                # 0 = automatic
//   instances: 1

#include <yaml-cpp/yaml.h>

#include <nlohmann/json.hpp>

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "fba/harness.hpp"
#include "fba/simnet.hpp"
#include "fba/trace.hpp"

namespace fba {

namespace detail {

inline void check_keys(const YAML::Node& node, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!node.IsMap()) throw ConfigError(where + ": expected a mapping");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    if (!ok.contains(key)) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

template <typename T>
T scalar(const YAML::Node& node, const std::string& where) {
  try {
    return node.as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError(where + ": invalid value");
  }
}

inline Duration ms_field(const YAML::Node& node, const std::string& where) {
  const double ms = scalar<double>(node, where);
  if (!std::isfinite(ms)) throw ConfigError(where + ": invalid duration");
  return Duration(static_cast<Duration::rep>(std::llround(ms * 1e6)));
}

inline DelayModel parse_delay(const YAML::Node& node, const std::string& where) {
  check_keys(node, where, {"kind", "ms", "mean_ms", "sigma_ms", "floor_ms", "cap_ms"});
  const auto kind = node["kind"] ? scalar<std::string>(node["kind"], where + ".kind") : std::string("fixed");
  DelayModel m;
  if (kind == "fixed") {
    if (!node["ms"]) throw ConfigError(where + ": fixed delay needs 'ms'");
    m = DelayModel::fixed(ms_field(node["ms"], where + ".ms"));
  } else if (kind == "gaussian") {
    if (!node["mean_ms"] || !node["sigma_ms"]) throw ConfigError(where + ": gaussian delay needs 'mean_ms' and 'sigma_ms'");
    m = DelayModel::gaussian(ms_field(node["mean_ms"], where + ".mean_ms"), ms_field(node["sigma_ms"], where + ".sigma_ms"));
    if (node["floor_ms"]) m.floor = ms_field(node["floor_ms"], where + ".floor_ms");
    if (node["cap_ms"]) m.cap = ms_field(node["cap_ms"], where + ".cap_ms");
  } else {
    throw ConfigError(where + ".kind: expected fixed or gaussian");
  }
  try {
    m.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(where + ": " + e.what());
  }
  return m;
}

inline std::vector<NodeIndex> node_list(const YAML::Node& node, const std::string& where) {
  if (!node.IsSequence()) throw ConfigError(where + ": expected a list of node indices");
  std::vector<NodeIndex> out;
  for (std::size_t i = 0; i < node.size(); ++i) out.push_back(scalar<NodeIndex>(node[i], where + "[" + std::to_string(i) + "]"));
  return out;
}

inline YAML::Node delay_yaml(const DelayModel& m) {
  YAML::Node d;
  if (m.kind == DelayModel::Kind::Fixed) {
    d["kind"] = "fixed";
    d["ms"] = to_ms(m.mean);
  } else {
    d["kind"] = "gaussian";
    d["mean_ms"] = to_ms(m.mean);
    d["sigma_ms"] = to_ms(m.sigma);
    d["floor_ms"] = to_ms(m.floor);
    if (m.cap) d["cap_ms"] = to_ms(*m.cap);
  }
  return d;
}

}  // namespace detail

inline Protocol parse_protocol(const std::string& s) {
  if (s == "rba" || s == "RBA") return Protocol::Rba;
  if (s == "hba" || s == "HBA") return Protocol::Hba;
  throw ConfigError("protocol: expected rba or hba, got '" + s + "'");
}

inline Scenario scenario_from_yaml(const YAML::Node& root) {
  using detail::check_keys;
  using detail::ms_field;
  using detail::scalar;
  if (!root || root.IsNull()) throw ConfigError("scenario: empty document");
  check_keys(root, "scenario",
             {"name", "protocol", "n", "lambda_ms", "status", "pioneer", "seed", "keygen_prefix", "vrf", "delay",
              "link_delays", "partitions", "skew", "adversary", "initial_values", "horizon_ms", "instances"});
  Scenario sc;
  if (root["name"]) sc.name = scalar<std::string>(root["name"], "name");
  if (root["protocol"]) sc.protocol = parse_protocol(scalar<std::string>(root["protocol"], "protocol"));
  if (root["n"]) sc.n = scalar<std::size_t>(root["n"], "n");
  if (root["lambda_ms"]) sc.lambda = ms_field(root["lambda_ms"], "lambda_ms");
  if (root["status"]) sc.status = to_bytes(scalar<std::string>(root["status"], "status"));
  if (root["pioneer"]) sc.pioneer = scalar<std::uint32_t>(root["pioneer"], "pioneer");
  if (root["seed"]) sc.seed = scalar<std::uint64_t>(root["seed"], "seed");
  if (root["keygen_prefix"]) sc.keygen_prefix = scalar<std::string>(root["keygen_prefix"], "keygen_prefix");
  if (root["vrf"]) {
    auto v = scalar<std::string>(root["vrf"], "vrf");
    if (v == "ideal") sc.mode = VrfMode::Ideal;
    else if (v == "cryptographic") sc.mode = VrfMode::Cryptographic;
    else throw ConfigError("vrf: expected ideal or cryptographic");
  }
  if (root["delay"]) sc.delay = detail::parse_delay(root["delay"], "delay");
  if (const auto& links = root["link_delays"]) {
    if (!links.IsSequence()) throw ConfigError("link_delays: expected a list");
    for (std::size_t i = 0; i < links.size(); ++i) {
      const auto where = "link_delays[" + std::to_string(i) + "]";
      check_keys(links[i], where, {"from", "to", "delay"});
      if (!links[i]["from"] || !links[i]["to"] || !links[i]["delay"]) throw ConfigError(where + ": needs from, to and delay");
      sc.link_delays[{scalar<NodeIndex>(links[i]["from"], where + ".from"), scalar<NodeIndex>(links[i]["to"], where + ".to")}] =
          detail::parse_delay(links[i]["delay"], where + ".delay");
    }
  }
  if (const auto& parts = root["partitions"]) {
    check_keys(parts, "partitions", {"cross", "intervals"});
    if (parts["cross"]) sc.partitions.cross = detail::parse_delay(parts["cross"], "partitions.cross");
    if (const auto& ivs = parts["intervals"]) {
      if (!ivs.IsSequence()) throw ConfigError("partitions.intervals: expected a list");
      for (std::size_t i = 0; i < ivs.size(); ++i) {
        const auto where = "partitions.intervals[" + std::to_string(i) + "]";
        check_keys(ivs[i], where, {"start_ms", "end_ms", "groups"});
        PartitionInterval iv;
        if (ivs[i]["start_ms"]) iv.start = ms_field(ivs[i]["start_ms"], where + ".start_ms");
        if (!ivs[i]["end_ms"]) throw ConfigError(where + ": needs end_ms");
        iv.end = ms_field(ivs[i]["end_ms"], where + ".end_ms");
        const auto& g = ivs[i]["groups"];
        if (!g) throw ConfigError(where + ": needs groups");
        if (g.IsScalar()) {
          iv.groups = split_groups(sc.n, scalar<std::size_t>(g, where + ".groups"));
        } else if (g.IsSequence()) {
          for (std::size_t k = 0; k < g.size(); ++k) iv.groups.push_back(detail::node_list(g[k], where + ".groups"));
        } else {
          throw ConfigError(where + ".groups: expected a count or a list of groups");
        }
        sc.partitions.intervals.push_back(std::move(iv));
      }
    }
  }
  if (const auto& skew = root["skew"]) {
    check_keys(skew, "skew", {"max_ms", "offsets_ms"});
    if (skew["max_ms"]) sc.skew.max_random = ms_field(skew["max_ms"], "skew.max_ms");
    if (const auto& offs = skew["offsets_ms"]) {
      if (!offs.IsSequence()) throw ConfigError("skew.offsets_ms: expected a list");
      for (std::size_t i = 0; i < offs.size(); ++i) sc.skew.offsets.push_back(ms_field(offs[i], "skew.offsets_ms"));
    }
  }
  if (const auto& adv = root["adversary"]) {
    check_keys(adv, "adversary", {"mode", "strategy", "nodes", "strategies", "budget", "trigger", "at_ms", "favorable_draws"});
    auto& a = sc.adversary;
    if (adv["mode"]) {
      auto m = scalar<std::string>(adv["mode"], "adversary.mode");
      if (m == "static") a.mode = CorruptionMode::Static;
      else if (m == "adaptive") a.mode = CorruptionMode::Adaptive;
      else throw ConfigError("adversary.mode: expected static or adaptive");
    }
    if (adv["strategy"]) a.strategy = scalar<std::string>(adv["strategy"], "adversary.strategy");
    if (adv["nodes"]) a.nodes = detail::node_list(adv["nodes"], "adversary.nodes");
    if (const auto& per = adv["strategies"]) {
      if (!per.IsMap()) throw ConfigError("adversary.strategies: expected a mapping from node to strategy");
      for (const auto& kv : per)
        a.strategies[scalar<NodeIndex>(kv.first, "adversary.strategies")] = scalar<std::string>(kv.second, "adversary.strategies");
    }
    if (adv["budget"]) a.budget = scalar<std::size_t>(adv["budget"], "adversary.budget");
    if (adv["trigger"]) {
      auto t = scalar<std::string>(adv["trigger"], "adversary.trigger");
      if (t == "pioneer") a.trigger = CorruptionTrigger::Pioneer;
      else if (t == "at_time") a.trigger = CorruptionTrigger::AtTime;
      else throw ConfigError("adversary.trigger: expected pioneer or at_time");
    }
    if (adv["at_ms"]) a.at = ms_field(adv["at_ms"], "adversary.at_ms");
    if (adv["favorable_draws"]) a.favorable_draws = scalar<bool>(adv["favorable_draws"], "adversary.favorable_draws");
  }
  if (const auto& vals = root["initial_values"]) {
    if (!vals.IsSequence()) throw ConfigError("initial_values: expected a list");
    for (std::size_t i = 0; i < vals.size(); ++i)
      sc.initial_values.push_back(Value::payload(scalar<std::string>(vals[i], "initial_values")));
  }
  if (root["horizon_ms"]) sc.horizon = ms_field(root["horizon_ms"], "horizon_ms");
  if (root["instances"]) sc.instances = scalar<std::size_t>(root["instances"], "instances");
  sc.validate();
  return sc;
}

inline Scenario parse_scenario(const std::string& text) {
  try {
    return scenario_from_yaml(YAML::Load(text));
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("scenario: malformed YAML: ") + e.what());
  }
}

inline Scenario load_scenario(const std::string& path) {
  try {
    return scenario_from_yaml(YAML::LoadFile(path));
  } catch (const YAML::BadFile&) {
    throw ConfigError("scenario: cannot read " + path);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("scenario: malformed YAML: ") + e.what());
  }
}

inline std::string scenario_to_yaml(const Scenario& sc) {
  YAML::Node root;
  root["name"] = sc.name;
  root["protocol"] = protocol_name(sc.protocol);
  root["n"] = sc.n;
  root["lambda_ms"] = to_ms(sc.lambda);
  root["status"] = std::string(sc.status.begin(), sc.status.end());
  root["pioneer"] = sc.pioneer;
  root["seed"] = sc.seed;
  root["keygen_prefix"] = sc.keygen_prefix;
  root["vrf"] = mode_name(sc.mode);
  root["delay"] = detail::delay_yaml(sc.delay);
  for (const auto& [link, m] : sc.link_delays) {
    YAML::Node l;
    l["from"] = link.first;
    l["to"] = link.second;
    l["delay"] = detail::delay_yaml(m);
    root["link_delays"].push_back(l);
  }
  if (!sc.partitions.empty()) {
    root["partitions"]["cross"] = detail::delay_yaml(sc.partitions.cross);
    for (const auto& iv : sc.partitions.intervals) {
      YAML::Node y;
      y["start_ms"] = to_ms(iv.start);
      y["end_ms"] = to_ms(iv.end);
      for (const auto& g : iv.groups) {
        YAML::Node group(YAML::NodeType::Sequence);
        for (auto i : g) group.push_back(i);
        y["groups"].push_back(group);
      }
      root["partitions"]["intervals"].push_back(y);
    }
  }
  if (!sc.skew.offsets.empty())
    for (auto o : sc.skew.offsets) root["skew"]["offsets_ms"].push_back(to_ms(o));
  else if (sc.skew.max_random > Duration::zero())
    root["skew"]["max_ms"] = to_ms(sc.skew.max_random);
  const auto& a = sc.adversary;
  root["adversary"]["mode"] = a.mode == CorruptionMode::Static ? "static" : "adaptive";
  root["adversary"]["strategy"] = a.strategy;
  root["adversary"]["nodes"] = YAML::Node(YAML::NodeType::Sequence);
  for (auto i : a.nodes) root["adversary"]["nodes"].push_back(i);
  for (const auto& [i, s] : a.strategies) root["adversary"]["strategies"][i] = s;
  root["adversary"]["budget"] = a.budget;
  root["adversary"]["trigger"] = a.trigger == CorruptionTrigger::Pioneer ? "pioneer" : "at_time";
  root["adversary"]["at_ms"] = to_ms(a.at);
  root["adversary"]["favorable_draws"] = a.favorable_draws;
  for (const auto& v : sc.initial_values) {
    const auto& d = v.data();
    root["initial_values"].push_back(std::string(d.begin(), d.end()));
  }
  root["horizon_ms"] = to_ms(sc.horizon);
  root["instances"] = sc.instances;
  YAML::Emitter out;
  out << root;
  return std::string(out.c_str()) + "\n";
}

inline nlohmann::json metrics_to_json(const RunMetrics& m) {
  nlohmann::json j;
  j["scenario"] = m.scenario;
  j["seed"] = m.seed;
  j["protocol"] = protocol_name(m.protocol);
  j["n"] = m.n;
  j["t_max"] = m.t_max;
  j["corrupted"] = m.corrupted;
  j["lambda_ms"] = to_ms(m.lambda);
  j["delay_model"] = m.delay_model;
  j["partition"] = m.partition;
  j["decided_value_digest"] = m.decided_value ? nlohmann::json(m.decided_value->digest()) : nlohmann::json(nullptr);
  j["latency_ms"] = to_ms(m.latency);
  j["iterations"] = m.iterations;
  j["messages"] = {{"init", m.msgs(MessageKind::Init)},
                   {"precommit", m.msgs(MessageKind::PreCommit)},
                   {"commit", m.msgs(MessageKind::Commit)},
                   {"fast", m.msgs(MessageKind::Fast)},
                   {"total", m.total_msgs()},
                   {"relayed", m.relayed}};
  j["delivered"] = m.delivered;
  j["dropped"] = m.dropped;
  j["adversarial_drops"] = m.adversarial_drops;
  j["equivocations"] = m.equivocations;
  j["events"] = m.events;
  j["end_time_ms"] = to_ms(m.end_time);
  j["nonterm"] = m.nonterm;
  j["violations"] = m.violations;
  for (const auto& r : m.nodes) {
    nlohmann::json n;
    n["index"] = r.index;
    n["honest"] = !r.ever_corrupted;
    n["strategy"] = r.strategy;
    n["skew_ms"] = to_ms(r.skew);
    n["initial_value_digest"] = r.initial.digest();
    n["final_round"] = r.final_round;
    if (r.decision) {
      n["decided_value_digest"] = r.decision->value.digest();
      n["decision_iteration"] = r.decision->iteration;
      n["decided_at_ms"] = to_ms(r.decided_at);
      n["decided_at_local_ms"] = to_ms(r.decision->at);
    } else {
      n["decided_value_digest"] = nullptr;
    }
    j["nodes"].push_back(n);
  }
  return j;
}

inline nlohmann::json fairness_to_json(const FairnessReport& r) {
  nlohmann::json j;
  j["protocol"] = protocol_name(r.protocol);
  j["n"] = r.n;
  j["instances"] = r.instances;
  j["threshold"] = r.threshold();
  j["tolerance"] = r.tolerance();
  j["bottom"] = r.bottom;
  j["undecided"] = r.undecided;
  j["all_decided"] = r.all_decided;
  j["disagreements"] = r.disagreements;
  j["strong_ok"] = r.strong_ok();
  j["weak_ok"] = r.weak_ok();
  for (std::size_t i = 0; i < r.n; ++i)
    j["nodes"].push_back({{"index", i},
                          {"honest", static_cast<bool>(r.honest[i])},
                          {"wins", r.wins[i]},
                          {"frequency", r.frequency(i)},
                          {"conditional_frequency", r.conditional_frequency(i)},
                          {"strong", r.strong_pass(i)},
                          {"weak", r.weak_pass(i)}});
  return j;
}

}  // namespace fba

#endif  // FBA_SCENARIO_IO_HPP
