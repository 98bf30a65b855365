#include <gtest/gtest.h>

#include <filesystem>
#include <regex>

#include "fba/harness.hpp"
#include "fba/scenario_io.hpp"
#include "fba/trace.hpp"
#include "splitter.hpp"

namespace fba {
namespace {

using namespace std::chrono_literals;

Scenario gaussian(Protocol p, std::size_t n, std::uint64_t seed = 1) {
  Scenario sc;
  sc.name = "g";
  sc.protocol = p;
  sc.n = n;
  sc.lambda = 1000ms;
  sc.delay = DelayModel::gaussian(250ms, 50ms);
  sc.seed = seed;
  return sc;
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

TEST(Stat, SampleMeanAndDeviation) {
  auto s = Stat::of({2, 4, 4, 4, 5, 5, 7, 9});
  EXPECT_DOUBLE_EQ(s.mean, 5.0);
  EXPECT_NEAR(s.stddev, std::sqrt(32.0 / 7.0), 1e-12);
  EXPECT_NEAR(s.sem(), s.stddev / std::sqrt(8.0), 1e-12);
  EXPECT_EQ(Stat::of({}).count, 0u);
  EXPECT_DOUBLE_EQ(Stat::of({3}).stddev, 0.0);
}

TEST(ParallelIndexed, ResultsInIndexOrder) {
  std::function<int(std::size_t)> sq = [](std::size_t i) { return static_cast<int>(i * i); };
  for (std::size_t w : {1u, 3u, 8u}) {
    auto out = parallel_indexed(50, w, sq);
    ASSERT_EQ(out.size(), 50u);
    for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(*out[i], static_cast<int>(i * i));
  }
}

TEST(Csv, FieldQuoting) {
  EXPECT_EQ(csv_field("plain"), "plain");
  EXPECT_EQ(csv_field("a,b"), "\"a,b\"");
  EXPECT_EQ(csv_field("say \"x\""), "\"say \"\"x\"\"\"");
}

TEST(Experiment, CsvHasOneRowPerRunAndSummary) {
  auto res = run_experiment(gaussian(Protocol::Rba, 7), {.reps = 12, .workers = 4});
  const auto csv = res.csv();
  EXPECT_EQ(count_lines(csv), 1u + 12u + 1u);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), kCsvHeader);
  EXPECT_NE(csv.find("\nmean,rba,7,"), std::string::npos);
  for (std::size_t i = 0; i < res.runs.size(); ++i) EXPECT_EQ(res.runs[i].seed, 1 + i);
  EXPECT_EQ(res.exit_code(), kExitOk);
  EXPECT_EQ(res.latency_ms.count, 12u);
}

TEST(Experiment, ParallelMatchesSerial) {
  auto sc = gaussian(Protocol::Hba, 10, 40);
  sc.skew.max_random = 400ms;
  auto serial = run_experiment(sc, {.reps = 16, .workers = 1});
  auto parallel = run_experiment(sc, {.reps = 16, .workers = 6});
  EXPECT_EQ(serial.csv(), parallel.csv());
}

TEST(Experiment, CsvTotalsMatchTrace) {
  for (auto p : {Protocol::Rba, Protocol::Hba}) {
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
      auto sc = gaussian(p, 7, seed);
      sc.adversary.nodes = {1};
      sc.adversary.strategy = "chaos";
      auto r = run(sc);
      auto counts = trace_message_counts(r.trace);
      for (std::size_t k = 1; k < 5; ++k) EXPECT_EQ(counts[k], r.metrics.sent[k]) << "kind " << k;
      // The CSV row carries the same numbers.
      const auto row = csv_row(r.metrics);
      const auto expect = std::to_string(r.metrics.sent[1]) + "," + std::to_string(r.metrics.sent[2]) + "," +
                          std::to_string(r.metrics.sent[3]) + "," + std::to_string(r.metrics.sent[4]);
      EXPECT_NE(row.find(expect), std::string::npos) << row;
    }
  }
}

TEST(Experiment, AbortsOnDisagreementWithTrace) {
  Scenario sc;
  sc.name = "split";
  sc.protocol = Protocol::Rba;
  sc.n = 5;
  sc.lambda = 1000ms;
  sc.delay = DelayModel::fixed(50ms);
  sc.seed = 3;
  sc.adversary.nodes = {4};
  sc.adversary.strategy = "splitter";
  sc.adversary.favorable_draws = true;
  sc.partitions.cross = DelayModel::fixed(30s);
  sc.partitions.intervals.push_back({0ms, 40s, {{0, 1, 4}, {2, 3}}});
  const auto dir = std::filesystem::temp_directory_path() / "fba-abort-test";
  std::filesystem::remove_all(dir);
  auto res = run_experiment(sc, {.reps = 5, .workers = 1, .out_dir = dir.string()},
                            testing::splitter_registry({0, 1}, {2, 3}));
  ASSERT_TRUE(res.abort_seed.has_value());
  EXPECT_EQ(*res.abort_seed, 3u);
  EXPECT_EQ(res.runs.size(), 1u);
  EXPECT_EQ(res.exit_code(), kExitViolation);
  ASSERT_TRUE(std::filesystem::exists(res.diagnostic_trace));
  EXPECT_EQ(std::filesystem::path(res.diagnostic_trace).filename(), "split-seed3-violation.trace");
  auto rep = verify_trace(read_trace_file(res.diagnostic_trace));
  EXPECT_FALSE(rep.ok());
  EXPECT_NE(csv_row(res.runs[0]).find("DISAGREE"), std::string::npos);
}

TEST(Experiment, ZeroRepsRejected) {
  EXPECT_THROW(run_experiment(gaussian(Protocol::Rba, 4), {.reps = 0}), ConfigError);
}

// ---------------------------------------------------------------------------

TEST(VerifyTrace, EmittedTracesPass) {
  for (auto p : {Protocol::Rba, Protocol::Hba}) {
    for (std::uint64_t seed = 1; seed <= 6; ++seed) {
      auto sc = gaussian(p, 7, seed);
      sc.skew.max_random = 700ms;
      sc.adversary.nodes = {0, 3};
      sc.adversary.strategy = seed % 2 ? "chaos" : "equivocate_init";
      auto r = run(sc);
      auto rep = verify_trace(r.trace);
      EXPECT_TRUE(rep.ok()) << rep.errors.front();
      EXPECT_GT(rep.events, 0u);
    }
  }
}

class Tamper : public ::testing::Test {
 protected:
  void SetUp() override {
    auto sc = gaussian(Protocol::Rba, 4, 5);
    lines = run(sc).trace;
    ASSERT_TRUE(verify_trace(lines).ok());
  }

  std::size_t find(const std::string& needle) const {
    for (std::size_t i = 0; i < lines.size(); ++i)
      if (lines[i].find(needle) != std::string::npos) return i;
    return lines.size();
  }

  bool reports(const std::string& what) const {
    auto rep = verify_trace(lines);
    for (const auto& e : rep.errors)
      if (e.find(what) != std::string::npos) return true;
    return false;
  }

  std::vector<std::string> lines;
};

TEST_F(Tamper, SecondDecisionWithOtherValue) {
  auto i = find(",decide:");
  ASSERT_LT(i, lines.size());
  auto j = find(",decide:") + 1;
  for (; j < lines.size(); ++j)
    if (lines[j].find(",decide:") != std::string::npos) break;
  ASSERT_LT(j, lines.size());
  lines[j] = std::regex_replace(lines[j], std::regex("[0-9a-f]{16}"), "ffffffffffffffff");
  EXPECT_TRUE(reports("agreement violated"));
}

TEST_F(Tamper, DoubleVote) {
  auto i = find(",send:commit/");
  ASSERT_LT(i, lines.size());
  auto dup = std::regex_replace(lines[i], std::regex("/[0-9a-f]{16},"), "/eeeeeeeeeeeeeeee,", std::regex_constants::format_first_only);
  lines.insert(lines.begin() + static_cast<std::ptrdiff_t>(i) + 1, dup);
  EXPECT_TRUE(reports("voted twice"));
}

TEST_F(Tamper, TimeReversal) {
  auto i = find(",decide:");
  ASSERT_LT(i, lines.size());
  lines[i] = "0" + lines[i].substr(lines[i].find(','));
  EXPECT_TRUE(reports("time goes backwards"));
}

TEST_F(Tamper, DeliveryWithoutSend) {
  auto i = find(",recv:");
  ASSERT_LT(i, lines.size());
  lines[i] = std::regex_replace(lines[i], std::regex("recv:([a-z]+)/[0-9]+/"), "recv:$1/3/");
  lines[i] = std::regex_replace(lines[i], std::regex("recv:([a-z]+/[0-9]+/[^/]+)/[0-9a-f]{16}"), "recv:$1/0000000000000000");
  EXPECT_TRUE(reports("never sent"));
}

TEST_F(Tamper, ForgedIdentity) {
  auto i = find(",send:init/");
  ASSERT_LT(i, lines.size());
  const auto node = lines[i].substr(lines[i].find(',') + 1, 1);
  const auto other = node == "0" ? "1" : "0";
  lines[i] = std::regex_replace(lines[i], std::regex("send:init/[0-9]+/"), std::string("send:init/") + other + "/");
  EXPECT_TRUE(reports("another identity"));
}

TEST_F(Tamper, MissingHeader) {
  lines.erase(lines.begin(), lines.begin() + 3);
  EXPECT_TRUE(reports("missing header"));
}

// ---------------------------------------------------------------------------

TEST(ScenarioYaml, BundledFilesLoadAndRoundTrip) {
  std::size_t seen = 0;
  for (const auto& e : std::filesystem::directory_iterator(FBA_SCENARIO_DIR)) {
    if (e.path().extension() != ".yaml") continue;
    ++seen;
    auto sc = load_scenario(e.path().string());
    EXPECT_EQ(sc.name, e.path().stem().string());
    const auto text = scenario_to_yaml(sc);
    auto back = parse_scenario(text);
    EXPECT_EQ(scenario_to_yaml(back), text);
    auto shorter = back;
    shorter.horizon = 1ms;
    auto a = run(shorter).trace, b = run([&] {
      auto s = sc;
      s.horizon = 1ms;
      return s;
    }()).trace;
    EXPECT_EQ(a, b) << sc.name;
  }
  EXPECT_GE(seen, 7u);
}

TEST(ScenarioYaml, FullSchema) {
  auto sc = parse_scenario(R"(
name: everything
protocol: hba
n: 7
lambda_ms: 500
status: s1
pioneer: 3
seed: 42
keygen_prefix: k
vrf: cryptographic
delay: {kind: gaussian, mean_ms: 100, sigma_ms: 20, floor_ms: 5, cap_ms: 400}
link_delays: [{from: 0, to: 1, delay: {kind: fixed, ms: 2.5}}]
partitions:
  cross: {kind: fixed, ms: 3000}
  intervals:
    - {start_ms: 0, end_ms: 1000, groups: 2}
    - {start_ms: 1000, end_ms: 2000, groups: [[0, 1, 2], [3, 4, 5, 6]]}
skew: {offsets_ms: [0, 1, 2, 3, 4, 5, 6]}
adversary:
  mode: adaptive
  strategy: chaos
  nodes: [1, 2]
  strategies: {2: crash}
  budget: 2
  trigger: pioneer
  at_ms: 10
  favorable_draws: true
initial_values: [a, b, c, d, e, f, g]
horizon_ms: 90000
instances: 1
)");
  EXPECT_EQ(sc.protocol, Protocol::Hba);
  EXPECT_EQ(sc.lambda, 500ms);
  EXPECT_EQ(sc.pioneer, 3u);
  EXPECT_EQ(sc.mode, VrfMode::Cryptographic);
  EXPECT_EQ(sc.delay.cap, 400ms);
  ASSERT_EQ(sc.link_delays.size(), 1u);
  EXPECT_EQ(sc.partitions.intervals.size(), 2u);
  EXPECT_EQ(sc.partitions.intervals[1].groups[1].size(), 4u);
  EXPECT_EQ(sc.skew.offsets[6], 6ms);
  EXPECT_EQ(sc.adversary.budget, 2u);
  EXPECT_EQ(sc.initial_values[6], Value::payload("g"));
  EXPECT_EQ(sc.horizon, 90s);
  EXPECT_EQ(scenario_to_yaml(parse_scenario(scenario_to_yaml(sc))), scenario_to_yaml(sc));
}

TEST(ScenarioYaml, ErrorsNameTheField) {
  auto message = [](const std::string& text) -> std::string {
    try {
      parse_scenario(text);
    } catch (const ConfigError& e) {
      return e.what();
    }
    return "";
  };
  EXPECT_NE(message("n: 4\nlamda_ms: 5\n").find("lamda_ms"), std::string::npos);
  EXPECT_NE(message("protocol: pbft\n").find("protocol"), std::string::npos);
  EXPECT_NE(message("n: 4\ndelay: {kind: gaussian, mean_ms: 10, sigma_ms: -1}\n").find("sigma"), std::string::npos);
  EXPECT_NE(message("n: 4\nadversary: {nodes: [9]}\n"), "");
  EXPECT_NE(message("n: 0\n"), "");
  EXPECT_NE(message("n: [1\n"), "");
  EXPECT_THROW(load_scenario("/nonexistent/x.yaml"), ConfigError);
}

TEST(MetricsJson, CarriesCountsAndNodes) {
  auto r = run(gaussian(Protocol::Hba, 4));
  auto j = metrics_to_json(r.metrics);
  EXPECT_EQ(j["n"], 4);
  EXPECT_EQ(j["nodes"].size(), 4u);
  EXPECT_EQ(j["messages"]["fast"].get<std::uint64_t>(), r.metrics.msgs(MessageKind::Fast));
}

// ---------------------------------------------------------------------------

Scenario fairness_template(Protocol p, std::size_t n) {
  Scenario sc;
  sc.name = "fair";
  sc.protocol = p;
  sc.n = n;
  sc.lambda = 1000ms;
  sc.delay = DelayModel::fixed(50ms);
  sc.seed = 1;
  return sc;
}

TEST(Fairness, InstanceParameters) {
  auto sc = fairness_instance(fairness_template(Protocol::Hba, 7), 9);
  EXPECT_EQ(sc.pioneer, 2u);
  EXPECT_EQ(sc.seed, 10u);
  EXPECT_EQ(sc.status, (Bytes{0, 0, 0, 0, 0, 0, 0, 9}));
  EXPECT_EQ(sc.initial_values[4], Value::payload("node4/instance9"));
}

TEST(Fairness, HbaRotatesPioneerExactly) {
  auto rep = fairness_experiment(fairness_template(Protocol::Hba, 7), 70, 4);
  for (std::size_t i = 0; i < 7; ++i) EXPECT_EQ(rep.wins[i], 10u) << i;
  EXPECT_TRUE(rep.weak_ok());
  EXPECT_EQ(rep.credited(), 70u);
  EXPECT_EQ(rep.disagreements, 0u);
}

TEST(Fairness, AttributionMatchesTrace) {
  auto templ = fairness_template(Protocol::Hba, 7);
  for (std::size_t k : {0u, 5u, 13u}) {
    auto r = run(fairness_instance(templ, k));
    auto who = credited_node(r.metrics);
    ASSERT_TRUE(who.has_value());
    const auto digest = r.metrics.decided_value->digest();
    const auto token = "send:fast/" + std::to_string(*who) + "/-/" + digest;
    bool found = false;
    for (const auto& l : r.trace) found = found || l.find(token) != std::string::npos;
    EXPECT_TRUE(found) << token;
  }
}

TEST(Fairness, CrashedNodeNeverCredited) {
  auto templ = fairness_template(Protocol::Hba, 7);
  templ.adversary.nodes = {2};
  templ.adversary.strategy = "crash";
  auto rep = fairness_experiment(templ, 70, 4);
  EXPECT_EQ(rep.wins[2], 0u);
  EXPECT_FALSE(rep.honest[2]);
  EXPECT_EQ(rep.credited() + rep.bottom + rep.undecided, 70u);
  EXPECT_EQ(rep.disagreements, 0u);
}

TEST(Fairness, TooFewInstancesRejected) {
  EXPECT_THROW(fairness_experiment(fairness_template(Protocol::Rba, 7), 6), ConfigError);
}

TEST(Fairness, JsonReport) {
  auto rep = fairness_experiment(fairness_template(Protocol::Rba, 4), 8, 2);
  auto j = fairness_to_json(rep);
  EXPECT_EQ(j["instances"], 8);
  EXPECT_EQ(j["nodes"].size(), 4u);
}

}  // namespace
}  // namespace fba
