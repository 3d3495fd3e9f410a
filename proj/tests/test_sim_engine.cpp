#include <gtest/gtest.h>

#include "support.hpp"

using namespace orbitfed;
using support::close_rel;

namespace {

CoverageSchedule schedule(const std::vector<double>& lengths, std::size_t count, double gap = 0.0) {
  std::vector<CoverageInterval> iv;
  double t = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double len = lengths[i % lengths.size()];
    iv.push_back({t, t + len});
    t += len + gap;
  }
  return CoverageSchedule::from_intervals(std::move(iv));
}

std::size_t count_kind(const std::vector<TimelineEvent>& ev, const std::string& kind) {
  return static_cast<std::size_t>(std::count_if(ev.begin(), ev.end(), [&](const auto& e) { return e.kind == kind; }));
}

SimOptions quiet() {
  SimOptions o;
  o.workers = 1;
  return o;
}

}  // namespace

TEST(Simulator, ClockMatchesAnalyticLatency) {
  support::Gen g(1);
  int runs = 0;
  for (int i = 0; i < 30; ++i) {
    const auto s = support::random_scenario(g);
    OptimizeResult opt;
    try {
      opt = optimize(s);
    } catch (const Infeasible&) {
      continue;
    }
    ++runs;
    const auto run = run_experiment(s, opt.decision, 3, quiet());
    const double tau = round_latency(s, run.decision).tau_round_s;
    double clock = 0.0;
    for (const auto& r : run.rounds) {
      EXPECT_TRUE(close_rel(r.tau_round_s, tau, 1e-9)) << r.tau_round_s << " vs " << tau;
      EXPECT_GT(r.clock_s, clock);
      clock += r.tau_round_s;
      EXPECT_TRUE(close_rel(r.clock_s, clock, 1e-12));
    }
  }
  EXPECT_GE(runs, 20);
}

TEST(Simulator, WorkedExampleUsesThreeSatellites) {
  const auto s = support::worked_example_scenario();
  const auto d = support::uniform_decision(s, 0.5, 2e8);
  const auto run = run_experiment(s, d, 1, quiet());
  const auto& c = run.rounds[0].clusters[0];
  EXPECT_EQ(c.n_satellites_used, 3u);
  ASSERT_EQ(c.handoffs.size(), 3u);
  EXPECT_EQ(count_kind(run.timeline, "handoff"), 2u);
  EXPECT_NEAR(c.tau_rep_s, 939.2, 0.05);
  EXPECT_NEAR(run.rounds[0].tau_round_s, 942.2, 0.05);
  EXPECT_DOUBLE_EQ(c.handoffs[1].arrival_s, 1.0 + 360.0);
}

TEST(Simulator, TerrestrialOnlyHasNoSatelliteCompute) {
  const auto s = support::worked_example_scenario();
  const auto d = support::uniform_decision(s, 0.0, 2e8);
  const auto run = run_experiment(s, d, 2, quiet());
  EXPECT_EQ(count_kind(run.timeline, "satellite_compute_done"), 0u);
  EXPECT_EQ(count_kind(run.timeline, "handoff"), 0u);
  EXPECT_EQ(count_kind(run.timeline, "isl_transfer_done"), 2u);
  EXPECT_EQ(count_kind(run.timeline, "intra_cluster_aggregation"), 2u);
  EXPECT_EQ(count_kind(run.timeline, "global_aggregation"), 2u);
  for (const auto& r : run.rounds) EXPECT_EQ(r.clusters[0].cycles_processed, 0.0);
}

TEST(Simulator, ZeroRoundsIsEmpty) {
  const auto s = support::worked_example_scenario();
  const auto run = run_experiment(s, support::uniform_decision(s, 0.5, 2e8), 0, quiet());
  EXPECT_TRUE(run.rounds.empty());
  EXPECT_EQ(count_kind(run.timeline, "offload"), s.clients.size());
  EXPECT_THROW(run_experiment(s, support::uniform_decision(s, 0.5, 2e8), -1), InvalidArgument);
}

TEST(Simulator, ConservationAcrossRandomScenarios) {
  support::Gen g(2);
  for (int i = 0; i < 30; ++i) {
    const auto s = support::random_scenario(g);
    OptimizeResult opt;
    try {
      opt = optimize(s);
    } catch (const Infeasible&) {
      continue;
    }
    const auto run = run_experiment(s, opt.decision, 2, quiet());
    const auto cost = round_latency(s, run.decision);
    for (const auto& r : run.rounds) {
      for (std::size_t j = 0; j < r.clusters.size(); ++j) {
        const auto& c = r.clusters[j];
        const auto& cl = s.clusters[j];
        const double f = run.decision.sat_freq_hz[j];
        double cycles = 0.0, energy = 0.0;
        for (const auto& h : c.handoffs) cycles += h.compute_s * f;
        EXPECT_TRUE(close_rel(cycles, c.cycles_required, 1e-9) || c.cycles_required == 0.0);
        EXPECT_TRUE(close_rel(c.cycles_processed, c.cycles_required, 1e-12) || c.cycles_required == 0.0);
        EXPECT_EQ(c.n_satellites_used, cost.clusters[j].satellites());
        for (const auto& le : c.ledger) {
          EXPECT_TRUE(close_rel(le.residual_j, le.initial_j - le.consumed_j + le.charged_j, 1e-9));
          EXPECT_DOUBLE_EQ(le.initial_j, cl.sat_initial_energy_j);
          EXPECT_GE(le.residual_j, cl.sat_min_residual_j * (1 - 1e-9));
          EXPECT_DOUBLE_EQ(le.charged_j, le.dwell_s * cl.charge_power_w());
          energy += le.consumed_j;
        }
        EXPECT_TRUE(close_rel(energy, cost.clusters[j].total_satellite_energy(), 1e-9));
      }
    }
  }
}

TEST(Simulator, DeterministicWithData) {
  const auto cfg = parse_scenario_config(support::small_learning_json(2, 3, 60, {20, 10}, 3));
  const auto d = optimize(cfg.scenario).decision;
  auto opt = quiet();
  opt.train = cfg.train;
  const auto a = run_experiment(cfg.scenario, d, 3, opt);
  opt.workers = 3;
  const auto b = run_experiment(cfg.scenario, d, 3, opt);
  ASSERT_EQ(a.rounds.size(), 3u);
  for (std::size_t r = 0; r < 3; ++r) {
    EXPECT_FALSE(std::isnan(a.rounds[r].accuracy));
    EXPECT_EQ(std::memcmp(&a.rounds[r].accuracy, &b.rounds[r].accuracy, sizeof(double)), 0);
    EXPECT_EQ(std::memcmp(&a.rounds[r].loss, &b.rounds[r].loss, sizeof(double)), 0);
    EXPECT_EQ(a.rounds[r].clock_s, b.rounds[r].clock_s);
  }
  ASSERT_EQ(a.timeline.size(), b.timeline.size());
  for (std::size_t i = 0; i < a.timeline.size(); ++i) {
    EXPECT_EQ(a.timeline[i].t_s, b.timeline[i].t_s);
    EXPECT_EQ(a.timeline[i].kind, b.timeline[i].kind);
    EXPECT_EQ(a.timeline[i].detail, b.timeline[i].detail);
  }
}

TEST(Simulator, HandoffsDoNotChangeTheLearnedModel) {
  auto j = support::small_learning_json(1, 3, 60, {20, 10}, 5);
  const auto cfg = parse_scenario_config(j);
  auto d = support::uniform_decision(cfg.scenario, 0.5, 0.0);
  auto opt = quiet();
  opt.train = cfg.train;
  // Same offload, two satellite speeds: one finishes in a single pass, the other hands off.
  d.sat_freq_hz[0] = cfg.scenario.clusters[0].sat_max_freq_hz;
  Simulator fast(cfg.scenario, d, opt);
  const auto rf = fast.run_round();
  d.sat_freq_hz[0] = 2e6;
  Simulator slow(cfg.scenario, d, opt);
  const auto rs = slow.run_round();
  ASSERT_EQ(rf.clusters[0].n_satellites_used, 1u);
  ASSERT_GT(rs.clusters[0].n_satellites_used, 1u);
  EXPECT_EQ(fast.model()->values, slow.model()->values);
}

TEST(Simulator, PersistentBatteryCarriesResidual) {
  const auto s = support::worked_example_scenario();
  const auto d = support::uniform_decision(s, 0.5, 2e8);
  auto opt = quiet();
  opt.persistent_battery = true;
  const auto run = run_experiment(s, d, 2, opt);
  const auto& first = run.rounds[0].clusters[0].ledger;
  const auto& second = run.rounds[1].clusters[0].ledger;
  ASSERT_EQ(first.size(), second.size());
  for (std::size_t i = 0; i < first.size(); ++i) EXPECT_DOUBLE_EQ(second[i].initial_j, first[i].residual_j);
}

TEST(Replay, ConstantIntervalsMatchFixedMode) {
  const auto fixed = support::worked_example_scenario();
  auto s = fixed;
  s.clusters[0].coverage = schedule({360.0}, 64);
  const auto d = support::uniform_decision(fixed, 0.5, 2e8);
  const auto a = run_experiment(fixed, d, 4, quiet());
  const auto b = replay_varying_coverage(s, d, 4, quiet());
  for (std::size_t r = 0; r < 4; ++r) {
    const auto& ca = a.rounds[r].clusters[0];
    const auto& cb = b.rounds[r].clusters[0];
    EXPECT_TRUE(close_rel(a.rounds[r].tau_round_s, b.rounds[r].tau_round_s, 1e-12));
    EXPECT_TRUE(close_rel(a.rounds[r].clock_s, b.rounds[r].clock_s, 1e-12));
    EXPECT_EQ(ca.n_satellites_used, cb.n_satellites_used);
    EXPECT_EQ(ca.y_case, cb.y_case);
    ASSERT_EQ(ca.ledger.size(), cb.ledger.size());
    for (std::size_t i = 0; i < ca.ledger.size(); ++i)
      EXPECT_TRUE(close_rel(ca.ledger[i].residual_j, cb.ledger[i].residual_j, 1e-12));
  }
  EXPECT_THROW(replay_varying_coverage(fixed, d, 1), InvalidArgument);
}

TEST(Replay, LongerWindowsChangeHandoffsButNotWork) {
  const auto fixed = support::worked_example_scenario();
  auto s = fixed;
  s.clusters[0].coverage = schedule({300, 408, 516, 340, 476}, 400);
  ASSERT_NEAR(s.clusters[0].coverage.mean(), 408.0, 1e-9);
  // About 400 s of satellite compute: two fixed windows, but a single 516-s window suffices.
  const auto d = support::uniform_decision(fixed, 0.5, 4.5e8);
  const auto a = run_experiment(fixed, d, 10, quiet());
  const auto b = replay_varying_coverage(s, d, 10, quiet());
  std::size_t used_a = 0, used_b = 0;
  for (std::size_t r = 0; r < 10; ++r) {
    const auto& ca = a.rounds[r].clusters[0];
    const auto& cb = b.rounds[r].clusters[0];
    used_a += ca.n_satellites_used;
    used_b += cb.n_satellites_used;
    EXPECT_TRUE(close_rel(ca.cycles_processed, cb.cycles_processed, 1e-12));
    EXPECT_TRUE(close_rel(cb.cycles_processed, cb.cycles_required, 1e-12));
  }
  EXPECT_NE(used_a, used_b);
}

TEST(Replay, ShortWindowRelaysOnly) {
  const auto fixed = support::worked_example_scenario();
  auto s = fixed;
  std::vector<CoverageInterval> iv{{0, 360}, {360, 365}};
  double t = 365;
  for (int i = 0; i < 20; ++i, t += 360) iv.push_back({t, t + 360});
  s.clusters[0].coverage = CoverageSchedule::from_intervals(iv);
  const auto d = support::uniform_decision(fixed, 0.5, 2e8);
  const auto run = replay_varying_coverage(s, d, 1, quiet());
  const auto& c = run.rounds[0].clusters[0];
  ASSERT_GE(c.handoffs.size(), 3u);
  EXPECT_TRUE(c.handoffs[1].relay_only);
  EXPECT_EQ(c.handoffs[1].cycles, 0.0);
  EXPECT_EQ(count_kind(run.timeline, "relay_only"), 1u);
  EXPECT_TRUE(close_rel(c.cycles_processed, c.cycles_required, 1e-12));
}

TEST(Replay, ExhaustedScheduleIsReported) {
  const auto fixed = support::worked_example_scenario();
  auto s = fixed;
  s.clusters[0].coverage = schedule({360.0}, 3);
  const auto d = support::uniform_decision(fixed, 0.5, 2e8);
  EXPECT_THROW(replay_varying_coverage(s, d, 5, quiet()), Error);
}
