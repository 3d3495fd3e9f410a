#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "support.hpp"

using namespace orbitfed;
namespace fs = std::filesystem;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("orbitfed_test_" + name);
  fs::remove_all(p);
  return p;
}

ScenarioConfig small() { return parse_scenario_config(support::small_learning_json(2, 2, 40, {20, 10}, 3)); }

SeriesRun series_run(std::string name, std::uint64_t seed, std::vector<double> acc) {
  SeriesRun r;
  r.series = std::move(name);
  r.seed = seed;
  r.accuracy = std::move(acc);
  for (std::size_t i = 0; i < r.accuracy.size(); ++i) r.clock.push_back(100.0 * double(i + 1));
  return r;
}

}  // namespace

TEST(TimeToTarget, FirstCrossing) {
  std::vector<double> clock, acc;
  for (int r = 0; r < 12; ++r) {
    clock.push_back(10.0 * (r + 1));
    acc.push_back(r < 7 ? 0.1 * r : 0.8);
  }
  EXPECT_EQ(time_to_target(clock, acc, 0.75), 80.0);
  EXPECT_EQ(time_to_target(clock, acc, 0.0), 10.0);
  EXPECT_TRUE(std::isinf(time_to_target(clock, acc, 0.81)));
  EXPECT_TRUE(std::isinf(time_to_target({}, {}, 0.5)));
}

TEST(TimeToTarget, SkipsUnevaluatedRounds) {
  EXPECT_EQ(time_to_target({1, 2, 3}, {kNaN, kNaN, 0.9}, 0.5), 3.0);
}

TEST(Asymptote, MeanOfLastFive) {
  EXPECT_DOUBLE_EQ(asymptotic_accuracy({0.0, 0.0, 0.5, 0.6, 0.7, 0.8, 0.9}), 0.7);
  EXPECT_DOUBLE_EQ(asymptotic_accuracy({0.2, 0.4}), 0.3);
  EXPECT_DOUBLE_EQ(asymptotic_accuracy({0.1, 0.2, 0.3, 0.4, 0.5, kNaN, kNaN}), 0.3);
  EXPECT_TRUE(std::isnan(asymptotic_accuracy({})));
}

TEST(Summary, ExplicitAndAutomaticTargets) {
  const std::vector<SeriesRun> runs = {series_run("fast", 1, {0.2, 0.5, 0.8, 0.8, 0.8, 0.8}),
                                       series_run("slow", 1, {0.1, 0.2, 0.3, 0.5, 0.7, 0.75}),
                                       series_run("fast", 2, {0.9, 0.9, 0.9, 0.9, 0.9})};
  const auto fixed = summarize_runs(runs, 0.7);
  EXPECT_EQ(fixed["series"]["fast"]["seeds"][0]["time_to_target_s"].get<double>(), 300.0);
  EXPECT_EQ(fixed["series"]["fast"]["seeds"][1]["time_to_target_s"].get<double>(), 100.0);
  EXPECT_EQ(fixed["series"]["slow"]["seeds"][0]["time_to_target_s"].get<double>(), 500.0);
  EXPECT_EQ(fixed["series"]["fast"]["reached"].get<int>(), 2);

  // Seed 1's asymptotes are 0.74 and 0.53, so both series chase 0.9 * 0.74.
  const auto automatic = summarize_runs(runs, 0.0);
  EXPECT_EQ(automatic["target_accuracy"], "auto");
  const auto& slow = automatic["series"]["slow"]["seeds"][0];
  EXPECT_NEAR(slow["target_accuracy"].get<double>(), 0.9 * 0.74, 1e-12);
  EXPECT_EQ(slow["time_to_target_s"].get<double>(), 500.0);
  EXPECT_NEAR(automatic["series"]["fast"]["seeds"][1]["target_accuracy"].get<double>(), 0.81, 1e-12);

  const auto never = summarize_runs({series_run("flat", 1, {0.1, 0.1})}, 0.5);
  EXPECT_TRUE(never["series"]["flat"]["seeds"][0]["time_to_target_s"].is_null());
  EXPECT_TRUE(never["series"]["flat"]["median_time_to_target_s"].is_null());
  EXPECT_NE(summary_table(never).find("not reached"), std::string::npos);
  EXPECT_NE(summary_table(fixed).find("2/2"), std::string::npos);
}

TEST(Baselines, NamesAndParsing) {
  EXPECT_EQ(series_name(Baseline::fixed_ratio, 0.3), "ratio-0.3");
  EXPECT_EQ(series_name(Baseline::terrestrial_only, 0), "terrestrial_only");
  EXPECT_EQ(parse_baseline("full"), Baseline::full_offload);
  EXPECT_THROW(parse_baseline("sideways"), InvalidArgument);
  EXPECT_THROW(parse_mode("train"), InvalidArgument);
  ExperimentPlan plan;
  std::vector<std::string> names;
  for (const auto& s : sweep_series(plan)) names.push_back(s.name);
  EXPECT_EQ(names, (std::vector<std::string>{"ratio-0", "ratio-0.3", "ratio-0.4", "ratio-0.8", "optimized"}));
}

TEST(Baselines, DecisionsPinAlpha) {
  const auto cfg = small();
  const auto terr = decide(cfg, Baseline::terrestrial_only);
  for (double a : terr.decision.alpha) EXPECT_EQ(a, 0.0);
  const auto full = decide(cfg, Baseline::full_offload);
  for (std::size_t k = 0; k < full.decision.alpha.size(); ++k)
    EXPECT_EQ(full.decision.alpha[k], cfg.scenario.clients[k].max_offload_fraction);
  const auto fixed = decide(cfg, Baseline::fixed_ratio, 0.3);
  for (double a : fixed.decision.alpha) EXPECT_EQ(a, 0.3);
  EXPECT_THROW(decide(cfg, Baseline::fixed_ratio, 0.95), InvalidArgument);
  EXPECT_THROW(decide(cfg, Baseline::fixed_ratio, -0.1), InvalidArgument);
  const auto opt = decide(cfg, Baseline::optimized);
  EXPECT_LE(opt.cost.tau_round_s, terr.cost.tau_round_s * (1 + 1e-9));
}

TEST(Run, WritesTheRunLayout) {
  const auto cfg = small();
  ExperimentPlan plan;
  plan.out_dir = scratch("layout").string();
  plan.seeds = {1, 2};
  plan.rounds = 3;
  plan.baseline = Baseline::fixed_ratio;
  plan.ratio = 0.4;
  const auto summary = run(cfg, plan);
  const fs::path out(plan.out_dir);
  EXPECT_TRUE(fs::exists(out / "manifest.json"));
  EXPECT_TRUE(fs::exists(out / "summary.json"));
  EXPECT_TRUE(fs::exists(out / "ratio-0.4" / "decision.json"));
  for (int seed : {1, 2}) {
    const auto dir = out / "ratio-0.4" / ("seed-" + std::to_string(seed));
    const auto csv = slurp(dir / "metrics.csv");
    EXPECT_EQ(csv.rfind("round,clock_s,accuracy,loss,tau_round_s\n", 0), 0u);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
    EXPECT_FALSE(slurp(dir / "timeline.jsonl").empty());
  }
  const auto back = read_run_directory(out);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(summarize(out, plan.target_acc), summary);
  fs::remove_all(out);
}

TEST(Run, ProxWithZeroMuMatchesFedAvg) {
  const auto cfg = small();
  ExperimentPlan a;
  a.out_dir = scratch("avg").string();
  a.rounds = 3;
  ExperimentPlan b = a;
  b.out_dir = scratch("prox").string();
  b.prox_mu = 0.0;
  run(cfg, a);
  run(cfg, b);
  const auto rel = fs::path("optimized") / "seed-1";
  EXPECT_EQ(slurp(fs::path(a.out_dir) / rel / "metrics.csv"), slurp(fs::path(b.out_dir) / rel / "metrics.csv"));
  fs::remove_all(a.out_dir);
  fs::remove_all(b.out_dir);
}

TEST(Run, RejectsBadPlans) {
  const auto cfg = small();
  ExperimentPlan plan;
  plan.out_dir = scratch("bad").string();
  plan.seeds.clear();
  EXPECT_THROW(run(cfg, plan), InvalidArgument);
  plan.seeds = {1};
  plan.rounds = -1;
  EXPECT_THROW(run(cfg, plan), InvalidArgument);
  plan.rounds.reset();
  plan.prox_mu = -0.5;
  EXPECT_THROW(run(cfg, plan), InvalidArgument);
}

TEST(Run, MalformedRunDirectory) {
  EXPECT_THROW(read_run_directory(scratch("missing")), FormatError);
  const auto out = scratch("malformed");
  detail::write_text(out / "s" / "seed-1" / "metrics.csv", "round,clock_s\n7\n");
  EXPECT_THROW(read_run_directory(out), FormatError);
  fs::remove_all(out);
}
