#ifndef FBA_HARNESS_HPP
#define FBA_HARNESS_HPP

// Experiment runner: repetitions over consecutive seeds, multi-instance
// fairness runs, CSV output.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "fba/simnet.hpp"
#include "fba/trace.hpp"

namespace fba {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitViolation = 2, kExitNonTermination = 3 };

/// Runs f(0..count-1) on a worker pool and returns results in index order.
/// Once `stop` returns true for a result, no new index is started; every
/// index below the largest one started is still completed.
template <typename R>
std::vector<std::optional<R>> parallel_indexed(std::size_t count, std::size_t workers,
                                               const std::function<R(std::size_t)>& f,
                                               const std::function<bool(const R&)>& stop = nullptr) {
  std::vector<std::optional<R>> out(count);
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, std::max<std::size_t>(count, 1));
  std::atomic<std::size_t> next{0};
  std::atomic<bool> halt{false};
  auto body = [&] {
    for (;;) {
      if (halt.load()) return;
      const auto i = next.fetch_add(1);
      if (i >= count) return;
      out[i] = f(i);
      if (stop && stop(*out[i])) halt.store(true);
    }
  };
  if (workers <= 1) {
    body();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(body);
  }
  return out;
}

struct Stat {
  std::size_t count = 0;
  double mean = 0;
  double stddev = 0;

  static Stat of(const std::vector<double>& xs) {
    Stat s;
    s.count = xs.size();
    if (xs.empty()) return s;
    s.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(s.count);
    if (s.count > 1) {
      double ss = 0;
      for (double x : xs) ss += (x - s.mean) * (x - s.mean);
      s.stddev = std::sqrt(ss / static_cast<double>(s.count - 1));
    }
    return s;
  }
  double sem() const { return count ? stddev / std::sqrt(static_cast<double>(count)) : 0.0; }
};

inline double to_ms(Duration d) { return std::chrono::duration<double, std::milli>(d).count(); }

// ---------------------------------------------------------------------------
// CSV

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string format_number(double x) {
  std::ostringstream os;
  os.precision(10);
  os << x;
  return os.str();
}

inline const char* kCsvHeader =
    "seed,protocol,n,t,lambda_ms,delay_model,partition,decided_value_digest,latency_ms,iterations,msgs_init,"
    "msgs_precommit,msgs_commit,msgs_fast,nonterm";

inline std::string csv_row(const RunMetrics& m) {
  std::ostringstream os;
  os << m.seed << ',' << protocol_name(m.protocol) << ',' << m.n << ',' << m.corrupted << ','
     << format_number(to_ms(m.lambda)) << ',' << csv_field(m.delay_model) << ',' << csv_field(m.partition) << ','
     << (m.decided_value ? m.decided_value->digest() : (m.disagreement() ? "DISAGREE" : "-")) << ','
     << format_number(to_ms(m.latency)) << ',' << m.iterations << ',' << m.msgs(MessageKind::Init) << ','
     << m.msgs(MessageKind::PreCommit) << ',' << m.msgs(MessageKind::Commit) << ',' << m.msgs(MessageKind::Fast)
     << ',' << (m.nonterm ? 1 : 0);
  return os.str();
}

// ---------------------------------------------------------------------------
// Repetitions

struct ExperimentOptions {
  std::size_t reps = 1;
  std::size_t workers = 0;
  /// Where a diagnostic trace goes when a run breaks agreement. Empty means
  /// the system temp directory.
  std::string out_dir;
};

struct ExperimentResult {
  Scenario scenario;
  /// Completed runs in seed order.
  std::vector<RunMetrics> runs;
  Stat latency_ms;
  Stat iterations;
  Stat messages;
  Stat relayed;
  std::size_t nonterm_runs = 0;
  std::size_t violation_runs = 0;
  std::optional<std::uint64_t> abort_seed;
  std::string abort_reason;
  std::string diagnostic_trace;

  int exit_code() const {
    if (abort_seed || violation_runs > 0) return kExitViolation;
    if (nonterm_runs > 0) return kExitNonTermination;
    return kExitOk;
  }

  std::string summary_row() const {
    std::vector<double> init, pc, cm, fast;
    for (const auto& m : runs) {
      init.push_back(static_cast<double>(m.msgs(MessageKind::Init)));
      pc.push_back(static_cast<double>(m.msgs(MessageKind::PreCommit)));
      cm.push_back(static_cast<double>(m.msgs(MessageKind::Commit)));
      fast.push_back(static_cast<double>(m.msgs(MessageKind::Fast)));
    }
    const auto& sc = scenario;
    std::ostringstream os;
    os << "mean," << protocol_name(sc.protocol) << ',' << sc.n << ',' << (runs.empty() ? 0 : runs.front().corrupted)
       << ',' << format_number(to_ms(sc.lambda)) << ',' << csv_field(sc.delay.describe()) << ','
       << csv_field(sc.partitions.describe()) << ",-," << format_number(latency_ms.mean) << ','
       << format_number(iterations.mean) << ',' << format_number(Stat::of(init).mean) << ','
       << format_number(Stat::of(pc).mean) << ',' << format_number(Stat::of(cm).mean) << ','
       << format_number(Stat::of(fast).mean) << ',' << nonterm_runs;
    return os.str();
  }

  std::string csv() const {
    std::string out = std::string(kCsvHeader) + "\n";
    for (const auto& m : runs) out += csv_row(m) + "\n";
    return out + summary_row() + "\n";
  }
};

inline Scenario with_seed(Scenario sc, std::uint64_t seed) {
  sc.seed = seed;
  return sc;
}

inline ExperimentResult run_experiment(const Scenario& scenario, const ExperimentOptions& opt,
                                       const StrategyRegistry& registry = builtin_strategies()) {
  if (opt.reps == 0) throw ConfigError("repetitions must be at least 1");
  scenario.validate();
  ExperimentResult res;
  res.scenario = scenario;
  std::function<RunMetrics(std::size_t)> one = [&](std::size_t i) {
    return Simulator(with_seed(scenario, scenario.seed + i), {.record_trace = false}, registry).run().metrics;
  };
  std::function<bool(const RunMetrics&)> stop = [](const RunMetrics& m) { return m.disagreement(); };
  auto slots = parallel_indexed(opt.reps, opt.workers, one, stop);

  for (auto& s : slots) {
    if (!s) break;
    res.runs.push_back(std::move(*s));
    if (res.runs.back().disagreement()) break;
  }
  std::vector<double> lat, it, msgs, rel;
  for (const auto& m : res.runs) {
    if (!m.nonterm) {
      lat.push_back(to_ms(m.latency));
      it.push_back(static_cast<double>(m.iterations));
    }
    msgs.push_back(static_cast<double>(m.total_msgs()));
    rel.push_back(static_cast<double>(m.relayed));
    res.nonterm_runs += m.nonterm ? 1 : 0;
    res.violation_runs += m.violations.empty() ? 0 : 1;
  }
  res.latency_ms = Stat::of(lat);
  res.iterations = Stat::of(it);
  res.messages = Stat::of(msgs);
  res.relayed = Stat::of(rel);

  if (!res.runs.empty() && res.runs.back().disagreement()) {
    const auto seed = res.runs.back().seed;
    res.abort_seed = seed;
    res.abort_reason = res.runs.back().violations.empty() ? "disagreement" : res.runs.back().violations.front();
    auto dir = opt.out_dir.empty() ? std::filesystem::temp_directory_path() : std::filesystem::path(opt.out_dir);
    std::filesystem::create_directories(dir);
    auto path = dir / (scenario.name + "-seed" + std::to_string(seed) + "-violation.trace");
    write_trace_file(path.string(), Simulator(with_seed(scenario, seed), {}, registry).run().trace);
    res.diagnostic_trace = path.string();
  }
  return res;
}

// ---------------------------------------------------------------------------
// Fairness

/// Instance k of a fairness run: fresh status (8-byte big-endian k), pioneer
/// parameter k mod n, seed advanced by k, and values unique to (node, k).
inline Scenario fairness_instance(const Scenario& templ, std::size_t k) {
  Scenario sc = templ;
  ByteWriter w;
  w.u64(k);
  sc.status = std::move(w).take();
  sc.pioneer = static_cast<std::uint32_t>(k % sc.n);
  sc.seed = templ.seed + k;
  sc.initial_values.clear();
  for (std::size_t i = 0; i < sc.n; ++i)
    sc.initial_values.push_back(Value::payload("node" + std::to_string(i) + "/instance" + std::to_string(k)));
  sc.name = templ.name + "-instance" + std::to_string(k);
  return sc;
}

struct FairnessReport {
  Protocol protocol = Protocol::Rba;
  std::size_t n = 0;
  std::size_t instances = 0;
  std::vector<std::uint64_t> wins;
  std::vector<bool> honest;
  std::uint64_t bottom = 0;
  std::uint64_t undecided = 0;
  std::uint64_t all_decided = 0;
  std::uint64_t disagreements = 0;

  std::uint64_t threshold() const { return instances / n; }
  double frequency(std::size_t i) const { return static_cast<double>(wins[i]) / static_cast<double>(instances); }
  double conditional_frequency(std::size_t i) const {
    return all_decided ? static_cast<double>(wins[i]) / static_cast<double>(all_decided) : 0.0;
  }
  double tolerance() const {
    const double p = 1.0 / static_cast<double>(n);
    return 4.0 * std::sqrt(p * (1 - p) / static_cast<double>(instances));
  }
  bool strong_pass(std::size_t i) const { return std::abs(frequency(i) - 1.0 / static_cast<double>(n)) <= tolerance(); }
  bool weak_pass(std::size_t i) const { return wins[i] >= threshold(); }
  bool strong_ok() const {
    for (std::size_t i = 0; i < n; ++i)
      if (honest[i] && !strong_pass(i)) return false;
    return disagreements == 0;
  }
  bool weak_ok() const {
    for (std::size_t i = 0; i < n; ++i)
      if (honest[i] && !weak_pass(i)) return false;
    return disagreements == 0;
  }
  std::uint64_t credited() const {
    std::uint64_t s = 0;
    for (auto w : wins) s += w;
    return s;
  }

  std::string describe() const {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(4);
    os << "protocol=" << protocol_name(protocol) << " n=" << n << " instances=" << instances
       << " threshold=" << threshold() << " tolerance=" << tolerance() << " bottom=" << bottom
       << " undecided=" << undecided << " all_decided=" << all_decided << " disagreements=" << disagreements << "\n";
    os << "node,honest,wins,frequency,conditional_frequency,strong,weak\n";
    for (std::size_t i = 0; i < n; ++i)
      os << i << ',' << (honest[i] ? 1 : 0) << ',' << wins[i] << ',' << frequency(i) << ','
         << conditional_frequency(i) << ',' << (strong_pass(i) ? "pass" : "fail") << ','
         << (weak_pass(i) ? "pass" : "fail") << "\n";
    return os.str();
  }
};

/// Credits instance k to node i when the honest nodes agree on i's initial
/// value for that instance.
inline std::optional<NodeIndex> credited_node(const RunMetrics& m) {
  if (!m.decided_value || !m.decided_value->is_payload()) return std::nullopt;
  for (const auto& r : m.nodes)
    if (r.initial == *m.decided_value) return r.index;
  return std::nullopt;
}

inline FairnessReport fairness_experiment(const Scenario& templ, std::size_t instances, std::size_t workers = 0,
                                          const StrategyRegistry& registry = builtin_strategies()) {
  templ.validate();
  if (instances < templ.n) throw ConfigError("fairness needs at least n instances");
  FairnessReport rep;
  rep.protocol = templ.protocol;
  rep.n = templ.n;
  rep.instances = instances;
  rep.wins.assign(templ.n, 0);
  rep.honest.assign(templ.n, true);
  std::function<RunMetrics(std::size_t)> one = [&](std::size_t k) {
    return Simulator(fairness_instance(templ, k), {.record_trace = false}, registry).run().metrics;
  };
  auto runs = parallel_indexed(instances, workers, one);
  for (const auto& slot : runs) {
    const auto& m = *slot;
    for (const auto& r : m.nodes)
      if (r.ever_corrupted) rep.honest[r.index] = false;
    if (m.disagreement()) ++rep.disagreements;
    if (!m.nonterm) ++rep.all_decided;
    if (!m.decided_value) {
      ++rep.undecided;
      continue;
    }
    if (m.decided_value->is_bottom()) {
      ++rep.bottom;
      continue;
    }
    if (auto who = credited_node(m)) ++rep.wins[*who];
  }
  return rep;
}

}  // namespace fba

#endif  // FBA_HARNESS_HPP
