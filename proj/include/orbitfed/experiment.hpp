#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "orbitfed/analysis.hpp"
#include "orbitfed/config.hpp"
#include "orbitfed/grid_oracle.hpp"
#include "orbitfed/optimizer.hpp"
#include "orbitfed/parallel.hpp"
#include "orbitfed/sim_engine.hpp"

namespace orbitfed {

enum class Baseline { terrestrial_only, full_offload, fixed_ratio, optimized };
enum class Mode { optimize, simulate, analyze, sweep };

inline const char* to_string(Baseline b) {
  switch (b) {
    case Baseline::terrestrial_only: return "terrestrial_only";
    case Baseline::full_offload: return "full_offload";
    case Baseline::fixed_ratio: return "fixed_ratio";
    case Baseline::optimized: return "optimized";
  }
  return "?";
}

inline Baseline parse_baseline(const std::string& s) {
  if (s == "terrestrial_only" || s == "terrestrial") return Baseline::terrestrial_only;
  if (s == "full_offload" || s == "full") return Baseline::full_offload;
  if (s == "fixed_ratio" || s == "fixed") return Baseline::fixed_ratio;
  if (s == "optimized") return Baseline::optimized;
  throw InvalidArgument("unknown baseline '" + s + "'");
}

inline Mode parse_mode(const std::string& s) {
  if (s == "optimize") return Mode::optimize;
  if (s == "simulate") return Mode::simulate;
  if (s == "analyze") return Mode::analyze;
  if (s == "sweep") return Mode::sweep;
  throw InvalidArgument("unknown mode '" + s + "'");
}

struct ExperimentPlan {
  std::string scenario_path;  ///< empty: built-in reference scenario
  Mode mode = Mode::simulate;
  Baseline baseline = Baseline::optimized;
  double ratio = 0.0;  ///< fixed_ratio only
  std::optional<double> prox_mu;  ///< set: FedProx
  std::optional<int> rounds;      ///< unset: scenario's train.rounds
  std::vector<std::uint64_t> seeds{1};
  std::string out_dir = "out";
  double target_acc = 0.0;  ///< ≤ 0: 90% of the asymptotic accuracy
  bool single_step = false;
  bool persistent_battery = false;
  bool grid_oracle = false;
  std::vector<double> sweep_ratios{0.0, 0.3, 0.4, 0.8};
};

/// One series: a named decision simulated under every seed.
struct Series {
  std::string name;
  Baseline baseline = Baseline::optimized;
  double ratio = 0.0;
};

inline std::string series_name(Baseline b, double ratio) {
  if (b == Baseline::fixed_ratio) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "ratio-%g", ratio);
    return buf;
  }
  return to_string(b);
}

/// Decision for a baseline. Non-optimized baselines pin α and optimize f_S and b.
inline OptimizeResult decide(const ScenarioConfig& cfg, Baseline b, double ratio = 0.0) {
  const Scenario& s = cfg.scenario;
  OptimizerOptions opt = cfg.optimizer;
  if (b != Baseline::optimized) {
    std::vector<double> alpha(s.clients.size(), 0.0);
    double cap = std::numeric_limits<double>::infinity();
    for (const auto& c : s.clients) cap = std::min(cap, c.max_offload_fraction);
    for (std::size_t k = 0; k < s.clients.size(); ++k) {
      if (b == Baseline::full_offload) alpha[k] = s.clients[k].max_offload_fraction;
      if (b == Baseline::fixed_ratio) {
        if (!(ratio >= 0.0 && ratio <= cap + 1e-12))
          throw InvalidArgument("fixed ratio must lie in [0, min alpha_max]");
        alpha[k] = std::min(ratio, s.clients[k].max_offload_fraction);
      }
    }
    opt.pinned_alpha = alpha;
  }
  return optimize(s, opt);
}

namespace detail {

inline std::string num(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline json num_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw FormatError("cannot write " + p.string());
  out << text;
  if (!out) throw FormatError("write failed: " + p.string());
}

inline void write_json(const std::filesystem::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

}  // namespace detail

inline json decision_json(const Scenario& s, const DecisionVector& d) {
  json clients = json::array();
  for (std::size_t k = 0; k < s.clients.size(); ++k)
    clients.push_back({{"id", s.clients[k].id},
                       {"cluster_id", s.clients[k].cluster_id},
                       {"alpha", d.alpha[k]},
                       {"bandwidth_hz", d.bandwidth_hz[k]}});
  json clusters = json::array();
  for (std::size_t j = 0; j < s.clusters.size(); ++j)
    clusters.push_back({{"id", s.clusters[j].id},
                        {"sat_freq_hz", d.sat_freq_hz[j]},
                        {"offloaded_samples", cluster_offloaded_samples(s, j, d.alpha)}});
  return {{"clients", clients}, {"clusters", clusters}};
}

inline json optimize_json(const Scenario& s, const OptimizeResult& r) {
  json j = decision_json(s, r.decision);
  j["tau_round_s"] = r.cost.tau_round_s;
  j["iterations"] = r.iterations;
  j["early_stopped"] = r.early_stopped;
  json trace = json::array();
  for (const auto& t : r.trace)
    trace.push_back({{"iteration", t.iteration}, {"block", t.block}, {"tau_round_s", detail::num_or_null(t.tau_round_s)}});
  j["trace"] = trace;
  for (std::size_t c = 0; c < r.cost.clusters.size(); ++c) {
    const auto& cc = r.cost.clusters[c];
    j["clusters"][c]["cost"] = {{"tau_j_s", cc.tau_j_s},   {"tau_c_s", cc.tau_c_s},     {"tau_s_s", cc.tau_s_s},
                                {"tau_rep_s", cc.tau_rep_s}, {"y_j_s", cc.y_j_s},       {"y_case", cc.y_case},
                                {"n_handoffs", cc.n_handoffs}, {"tau_trans_s", cc.tau_trans_s},
                                {"satellite_energy_j", cc.total_satellite_energy()}};
  }
  json checks = json::array();
  for (const auto& c : r.feasibility.checks)
    checks.push_back({{"id", c.id},
                      {"cluster", c.cluster},
                      {"client", c.client},
                      {"slack", detail::num_or_null(c.slack)},
                      {"pass", c.pass},
                      {"report_only", c.report_only}});
  j["feasibility"] = {{"feasible", r.feasibility.feasible()}, {"checks", checks}};
  return j;
}

inline std::string metrics_csv(const std::vector<RoundRecord>& rounds) {
  std::string out = "round,clock_s,accuracy,loss,tau_round_s\n";
  for (const auto& r : rounds)
    out += std::to_string(r.round) + "," + detail::num(r.clock_s) + "," + detail::num(r.accuracy) + "," +
           detail::num(r.loss) + "," + detail::num(r.tau_round_s) + "\n";
  return out;
}

inline std::string timeline_jsonl(const std::vector<TimelineEvent>& ev) {
  std::string out;
  for (const auto& e : ev) {
    nlohmann::ordered_json j = {{"t_s", e.t_s}, {"cluster", e.cluster}, {"kind", e.kind}, {"detail", e.detail}};
    out += j.dump() + "\n";
  }
  return out;
}

inline SimOptions sim_options(const ScenarioConfig& cfg, const ExperimentPlan& plan, std::uint64_t seed,
                              unsigned workers) {
  SimOptions so;
  so.train = cfg.train;
  so.train.seed = seed;
  if (plan.prox_mu) so.train.prox_mu = *plan.prox_mu;
  if (plan.rounds) so.train.rounds = *plan.rounds;
  so.train.single_step = plan.single_step || cfg.train.single_step;
  so.persistent_battery = plan.persistent_battery;
  so.offload_seed = seed;
  so.workers = workers;
  return so;
}

/// Clock time at which accuracy first reaches the target; infinity when it never does.
inline double time_to_target(const std::vector<double>& clock, const std::vector<double>& acc, double target) {
  for (std::size_t i = 0; i < acc.size() && i < clock.size(); ++i)
    if (!std::isnan(acc[i]) && acc[i] >= target) return clock[i];
  return std::numeric_limits<double>::infinity();
}

/// Mean of the last min(5, n) evaluated accuracies.
inline double asymptotic_accuracy(const std::vector<double>& acc) {
  std::vector<double> v;
  for (double a : acc)
    if (!std::isnan(a)) v.push_back(a);
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t n = std::min<std::size_t>(5, v.size());
  double s = 0.0;
  for (std::size_t i = v.size() - n; i < v.size(); ++i) s += v[i];
  return s / static_cast<double>(n);
}

struct SeriesRun {
  std::string series;
  std::uint64_t seed = 0;
  std::vector<double> clock, accuracy;
};

inline std::vector<SeriesRun> read_run_directory(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw FormatError("not a run directory: " + dir.string());
  std::vector<SeriesRun> runs;
  std::vector<fs::path> series;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) series.push_back(e.path());
  std::sort(series.begin(), series.end());
  for (const auto& sp : series) {
    std::vector<fs::path> seeds;
    for (const auto& e : fs::directory_iterator(sp))
      if (e.is_directory() && e.path().filename().string().rfind("seed-", 0) == 0 && fs::exists(e.path() / "metrics.csv"))
        seeds.push_back(e.path());
    std::sort(seeds.begin(), seeds.end());
    for (const auto& p : seeds) {
      SeriesRun r;
      r.series = sp.filename().string();
      r.seed = std::stoull(p.filename().string().substr(5));
      std::ifstream in(p / "metrics.csv");
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line)) {
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
        if (f.size() < 2) throw FormatError("malformed metrics row in " + (p / "metrics.csv").string());
        r.clock.push_back(std::stod(f[1]));
        r.accuracy.push_back(f.size() < 3 || f[2].empty() ? std::numeric_limits<double>::quiet_NaN() : std::stod(f[2]));
      }
      runs.push_back(std::move(r));
    }
  }
  return runs;
}

/// Time to target per series and seed. A non-positive target means 90% of the best
/// asymptotic accuracy among the series of the same seed.
inline json summarize_runs(const std::vector<SeriesRun>& runs, double target) {
  std::map<std::uint64_t, double> seed_target;
  for (const auto& r : runs) {
    const double a = asymptotic_accuracy(r.accuracy);
    auto& t = seed_target[r.seed];
    if (std::isfinite(a)) t = std::max(t, 0.9 * a);
  }
  json series = json::object();
  for (const auto& r : runs) {
    const double tgt = target > 0.0 ? target : seed_target[r.seed];
    const double t = time_to_target(r.clock, r.accuracy, tgt);
    auto& entry = series[r.series];
    entry["seeds"].push_back({{"seed", r.seed},
                              {"target_accuracy", tgt},
                              {"time_to_target_s", detail::num_or_null(t)},
                              {"final_accuracy", r.accuracy.empty() ? json(nullptr) : detail::num_or_null(r.accuracy.back())},
                              {"asymptotic_accuracy", detail::num_or_null(asymptotic_accuracy(r.accuracy))}});
  }
  for (auto it = series.begin(); it != series.end(); ++it) {
    std::vector<double> times;
    for (const auto& s : it.value()["seeds"])
      times.push_back(s["time_to_target_s"].is_null() ? std::numeric_limits<double>::infinity()
                                                       : s["time_to_target_s"].get<double>());
    std::sort(times.begin(), times.end());
    const std::size_t reached = static_cast<std::size_t>(std::count_if(times.begin(), times.end(), [](double v) { return std::isfinite(v); }));
    it.value()["reached"] = reached;
    it.value()["median_time_to_target_s"] = times.empty() ? json(nullptr) : detail::num_or_null(times[times.size() / 2]);
  }
  return {{"target_accuracy", target > 0.0 ? json(target) : json("auto")}, {"series", series}};
}

inline std::string summary_table(const json& summary) {
  std::string out = "series                 reached  median_time_to_target_s\n";
  for (auto it = summary["series"].begin(); it != summary["series"].end(); ++it) {
    char buf[160];
    const auto& m = it.value()["median_time_to_target_s"];
    const std::string t = m.is_null() ? "not reached" : detail::num(m.get<double>());
    std::snprintf(buf, sizeof buf, "%-22s %3zu/%-4zu %s\n", it.key().c_str(), it.value()["reached"].get<std::size_t>(),
                  it.value()["seeds"].size(), t.c_str());
    out += buf;
  }
  return out;
}

inline json summarize(const std::filesystem::path& run_dir, double target) {
  return summarize_runs(read_run_directory(run_dir), target);
}

inline json manifest_json(const ScenarioConfig& cfg, const ExperimentPlan& plan, const std::vector<Series>& series) {
  json seeds = plan.seeds;
  json names = json::array();
  for (const auto& s : series) names.push_back(s.name);
  const char* modes[] = {"optimize", "simulate", "analyze", "sweep"};
  return {{"tool", "orbitfed"},
          {"version", "1.0.0"},
          {"plan",
           {{"mode", modes[static_cast<int>(plan.mode)]},
            {"baseline", to_string(plan.baseline)},
            {"ratio", plan.ratio},
            {"algorithm", plan.prox_mu ? "fedprox" : "fedavg"},
            {"prox_mu", plan.prox_mu ? json(*plan.prox_mu) : json(nullptr)},
            {"rounds", plan.rounds ? *plan.rounds : cfg.train.rounds},
            {"seeds", seeds},
            {"target_accuracy", plan.target_acc},
            {"single_step", plan.single_step},
            {"persistent_battery", plan.persistent_battery},
            {"grid_oracle", plan.grid_oracle},
            {"series", names}}},
          {"scenario", describe(cfg)}};
}

/// Simulates every (series, seed) pair, writes per-run metrics and timelines, then the summary.
inline json run_series(const ScenarioConfig& cfg, const ExperimentPlan& plan, const std::vector<Series>& series) {
  namespace fs = std::filesystem;
  const fs::path out(plan.out_dir);
  std::vector<OptimizeResult> decisions;
  for (const auto& s : series) {
    decisions.push_back(decide(cfg, s.baseline, s.ratio));
    detail::write_json(out / s.name / "decision.json", optimize_json(cfg.scenario, decisions.back()));
  }
  const std::size_t n = series.size() * plan.seeds.size();
  const unsigned outer = worker_limit();
  const unsigned inner = outer >= n ? std::max(1u, outer / static_cast<unsigned>(std::max<std::size_t>(n, 1))) : 1u;
  const int R = plan.rounds ? *plan.rounds : cfg.train.rounds;
  std::vector<SeriesRun> runs(n);
  parallel_for(
      n,
      [&](std::size_t i) {
        const std::size_t si = i / plan.seeds.size();
        const std::uint64_t seed = plan.seeds[i % plan.seeds.size()];
        const auto run = run_experiment(cfg.scenario, decisions[si].decision, R, sim_options(cfg, plan, seed, inner));
        const fs::path dir = out / series[si].name / ("seed-" + std::to_string(seed));
        detail::write_text(dir / "metrics.csv", metrics_csv(run.rounds));
        detail::write_text(dir / "timeline.jsonl", timeline_jsonl(run.timeline));
        runs[i].series = series[si].name;
        runs[i].seed = seed;
        for (const auto& r : run.rounds) {
          runs[i].clock.push_back(r.clock_s);
          runs[i].accuracy.push_back(r.accuracy);
        }
      },
      outer);
  json summary = summarize_runs(runs, plan.target_acc);
  detail::write_json(out / "summary.json", summary);
  return summary;
}

inline json run_optimize(const ScenarioConfig& cfg, const ExperimentPlan& plan) {
  const auto r = decide(cfg, plan.baseline, plan.ratio);
  json j = optimize_json(cfg.scenario, r);
  if (plan.grid_oracle) {
    const auto g = grid_search(cfg.scenario);
    j["grid_oracle"] = {{"tau_round_s", g.tau_round_s}, {"evaluated", g.evaluated},
                        {"decision", decision_json(cfg.scenario, g.decision)}};
  }
  detail::write_json(std::filesystem::path(plan.out_dir) / "decision.json", j);
  return j;
}

inline json run_analyze(const ScenarioConfig& cfg, const ExperimentPlan& plan) {
  const auto r = decide(cfg, plan.baseline, plan.ratio);
  const Scenario s = apply_offload(cfg.scenario, r.decision.alpha, plan.seeds.empty() ? 1 : plan.seeds.front());
  const auto alpha = effective_alpha(s, r.decision.alpha);
  BoundCheckOptions bo;
  bo.rounds = plan.rounds ? *plan.rounds : cfg.train.rounds;
  bo.seeds = plan.seeds;
  if (!plan.single_step) {
    bo.client_batch = cfg.train.batch_client;
    bo.satellite_batch = cfg.train.batch_satellite;
  }
  const auto rep = verify_bound_empirically(s, alpha, bo);
  json terms = json::array();
  for (const auto& t : rep.client_terms) terms.push_back({{"kind", "client"}, {"batch", t.batch}, {"set_size", t.set_size}, {"variance", t.variance}});
  for (const auto& t : rep.satellite_terms)
    terms.push_back({{"kind", "satellite"}, {"batch", t.batch}, {"set_size", t.set_size}, {"variance", t.variance}});
  json seeds = json::array();
  for (const auto& sr : rep.seeds)
    seeds.push_back({{"seed", sr.seed}, {"lhs", sr.lhs}, {"bound", sr.bound}, {"f0", sr.f0}, {"f_star", sr.f_star}, {"pass", sr.pass}});
  json j = {{"status", "reported, not certified"},
            {"note", "L and rho are empirical maxima over sampled pairs, so they may underestimate the true constants"},
            {"l_hat", rep.l_hat},
            {"rho_hat", rep.rho_hat},
            {"eta0", rep.eta0},
            {"omega", rep.omega},
            {"gamma_r", rep.gamma},
            {"mean_lhs", rep.mean_lhs},
            {"mean_bound", rep.mean_bound},
            {"all_pass", rep.all_pass()},
            {"variance_terms", terms},
            {"seeds", seeds}};
  detail::write_json(std::filesystem::path(plan.out_dir) / "bounds.json", j);
  return j;
}

inline std::vector<Series> sweep_series(const ExperimentPlan& plan) {
  std::vector<Series> out;
  for (double r : plan.sweep_ratios) out.push_back({series_name(Baseline::fixed_ratio, r), Baseline::fixed_ratio, r});
  out.push_back({"optimized", Baseline::optimized, 0.0});
  return out;
}

/// Executes a plan and writes its artifacts, including manifest.json.
inline json run(const ScenarioConfig& cfg, const ExperimentPlan& plan) {
  namespace fs = std::filesystem;
  if (plan.seeds.empty()) throw InvalidArgument("at least one seed is required");
  if (plan.rounds && *plan.rounds < 0) throw InvalidArgument("rounds must be non-negative");
  if (plan.prox_mu && *plan.prox_mu < 0.0) throw InvalidArgument("prox mu must be non-negative");
  fs::create_directories(plan.out_dir);
  std::vector<Series> series;
  json result;
  switch (plan.mode) {
    case Mode::optimize:
      detail::write_json(fs::path(plan.out_dir) / "manifest.json", manifest_json(cfg, plan, series));
      return run_optimize(cfg, plan);
    case Mode::analyze:
      detail::write_json(fs::path(plan.out_dir) / "manifest.json", manifest_json(cfg, plan, series));
      return run_analyze(cfg, plan);
    case Mode::simulate:
      series.push_back({series_name(plan.baseline, plan.ratio), plan.baseline, plan.ratio});
      break;
    case Mode::sweep:
      series = sweep_series(plan);
      break;
  }
  detail::write_json(fs::path(plan.out_dir) / "manifest.json", manifest_json(cfg, plan, series));
  return run_series(cfg, plan, series);
}

}  // namespace orbitfed
