// fba: run scenarios, repetitions and fairness experiments; check traces.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "fba/harness.hpp"
#include "fba/scenario_io.hpp"
#include "fba/trace.hpp"

namespace fs = std::filesystem;
using namespace fba;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::optional<double> horizon_ms;
  std::size_t workers = 0;
};

/// A bare name such as "hba-best-case" resolves to the bundled scenario.
std::string resolve_scenario(const std::string& arg) {
  if (fs::exists(arg)) return arg;
#ifdef FBA_SCENARIO_DIR
  for (const auto& candidate : {fs::path(FBA_SCENARIO_DIR) / arg, fs::path(FBA_SCENARIO_DIR) / (arg + ".yaml")})
    if (fs::exists(candidate)) return candidate.string();
#endif
  return arg;
}

Scenario load(const std::string& arg, const Globals& g) {
  auto sc = load_scenario(resolve_scenario(arg));
  if (g.seed) sc.seed = *g.seed;
  if (g.horizon_ms) sc.horizon = Duration(static_cast<Duration::rep>(*g.horizon_ms * 1e6));
  sc.validate();
  return sc;
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

int cmd_run(const std::string& file, const Globals& g) {
  auto sc = load(file, g);
  auto result = run(sc);
  const auto& m = result.metrics;
  const fs::path dir = g.out_dir.empty() ? fs::path(".") : fs::path(g.out_dir);
  const auto stem = sc.name + "-seed" + std::to_string(sc.seed);
  fs::create_directories(dir);
  write_trace_file((dir / (stem + ".trace")).string(), result.trace);
  write_file(dir / (stem + ".json"), metrics_to_json(m).dump(2) + "\n");

  std::cout << "scenario " << sc.name << " protocol=" << protocol_name(sc.protocol) << " n=" << sc.n
            << " seed=" << sc.seed << "\n";
  std::cout << "decided " << (m.decided_value ? m.decided_value->digest() : "-") << " at " << to_ms(m.latency)
            << " ms (" << to_ms(m.latency) / to_ms(sc.lambda) << " lambda), iteration " << m.iterations << "\n";
  std::cout << "messages init=" << m.msgs(MessageKind::Init) << " precommit=" << m.msgs(MessageKind::PreCommit)
            << " commit=" << m.msgs(MessageKind::Commit) << " fast=" << m.msgs(MessageKind::Fast)
            << " total=" << m.total_msgs() << " relayed=" << m.relayed << "\n";
  std::cout << "trace " << (dir / (stem + ".trace")).string() << "\n";
  for (const auto& v : m.violations) std::cout << "violation " << v << "\n";
  if (!m.violations.empty()) return kExitViolation;
  if (m.nonterm) {
    std::cout << "non-termination at horizon " << to_ms(sc.effective_horizon()) << " ms\n";
    return kExitNonTermination;
  }
  return kExitOk;
}

int cmd_experiment(const std::string& file, std::size_t reps, const Globals& g) {
  auto sc = load(file, g);
  auto res = run_experiment(sc, {.reps = reps, .workers = g.workers, .out_dir = g.out_dir});
  const auto csv = res.csv();
  std::cout << csv;
  if (!g.out_dir.empty()) write_file(fs::path(g.out_dir) / (sc.name + ".csv"), csv);
  std::cerr << "runs=" << res.runs.size() << " latency_ms mean=" << res.latency_ms.mean
            << " sd=" << res.latency_ms.stddev << " messages mean=" << res.messages.mean
            << " sd=" << res.messages.stddev << " nonterm=" << res.nonterm_runs << "\n";
  if (res.abort_seed)
    std::cerr << "aborted at seed " << *res.abort_seed << ": " << res.abort_reason << "; trace "
              << res.diagnostic_trace << "\n";
  return res.exit_code();
}

int cmd_fairness(const std::string& protocol, std::size_t n, std::size_t instances, double lambda_ms,
                 double delay_ms, const std::vector<NodeIndex>& crashed, const Globals& g) {
  Scenario sc;
  sc.name = "fairness";
  sc.protocol = parse_protocol(protocol);
  sc.n = n;
  sc.lambda = Duration(static_cast<Duration::rep>(lambda_ms * 1e6));
  sc.delay = DelayModel::fixed(Duration(static_cast<Duration::rep>(delay_ms * 1e6)));
  sc.seed = g.seed.value_or(1);
  if (g.horizon_ms) sc.horizon = Duration(static_cast<Duration::rep>(*g.horizon_ms * 1e6));
  sc.adversary.nodes = crashed;
  sc.adversary.strategy = "crash";
  auto rep = fairness_experiment(sc, instances, g.workers);
  std::cout << rep.describe();
  std::cout << "strongly fair (4 sigma band): " << (rep.strong_ok() ? "pass" : "fail") << "\n";
  std::cout << "weakly fair (X_i >= " << rep.threshold() << "): " << (rep.weak_ok() ? "pass" : "fail") << "\n";
  if (!g.out_dir.empty())
    write_file(fs::path(g.out_dir) / ("fairness-" + protocol + ".json"), fairness_to_json(rep).dump(2) + "\n");
  return rep.disagreements ? kExitViolation : kExitOk;
}

int cmd_verify(const std::string& file) {
  auto lines = read_trace_file(file);
  auto rep = verify_trace(lines);
  for (const auto& e : rep.errors) std::cout << e << "\n";
  std::cout << (rep.ok() ? "ok" : "FAILED") << ": " << rep.events << " events checked\n";
  return rep.ok() ? kExitOk : kExitViolation;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RBA/HBA Byzantine agreement simulator"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Override the run seed");
  app.add_option("--out-dir", g.out_dir, "Directory for traces, metrics and CSV files");
  app.add_option("--horizon", g.horizon_ms, "Simulation horizon in milliseconds");
  app.add_option("--workers", g.workers, "Worker threads for repetitions (0 = all cores)");

  std::string scenario_file;
  auto* run_cmd = app.add_subcommand("run", "Run one scenario; write its trace and metrics");
  run_cmd->fallthrough();
  run_cmd->add_option("scenario", scenario_file, "Scenario file or bundled scenario name")->required();

  std::size_t reps = 1;
  auto* exp_cmd = app.add_subcommand("experiment", "Repeat a scenario over consecutive seeds; print CSV");
  exp_cmd->fallthrough();
  exp_cmd->add_option("scenario", scenario_file, "Scenario file or bundled scenario name")->required();
  exp_cmd->add_option("--reps", reps, "Number of repetitions")->check(CLI::PositiveNumber);

  std::string protocol = "rba";
  std::size_t n = 7, instances = 700;
  double lambda_ms = 1000, delay_ms = 50;
  std::vector<NodeIndex> crashed;
  auto* fair_cmd = app.add_subcommand("fairness", "Multi-instance fairness experiment");
  fair_cmd->fallthrough();
  fair_cmd->add_option("--protocol", protocol, "rba or hba")->check(CLI::IsMember({"rba", "hba"}));
  fair_cmd->add_option("--n", n, "Number of nodes")->check(CLI::PositiveNumber);
  fair_cmd->add_option("--instances", instances, "Number of instances M")->check(CLI::PositiveNumber);
  fair_cmd->add_option("--lambda-ms", lambda_ms, "Delay bound lambda in ms")->check(CLI::PositiveNumber);
  fair_cmd->add_option("--delay-ms", delay_ms, "Fixed network delay in ms")->check(CLI::PositiveNumber);
  fair_cmd->add_option("--crash", crashed, "Nodes that crash from the start");

  std::string trace_file;
  auto* verify_cmd = app.add_subcommand("verify-trace", "Check the safety invariants of an emitted trace");
  verify_cmd->fallthrough();
  verify_cmd->add_option("trace", trace_file, "Trace file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*run_cmd) return cmd_run(scenario_file, g);
    if (*exp_cmd) return cmd_experiment(scenario_file, reps, g);
    if (*fair_cmd) return cmd_fairness(protocol, n, instances, lambda_ms, delay_ms, crashed, g);
    if (*verify_cmd) return cmd_verify(trace_file);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
