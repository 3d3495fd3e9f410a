#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "orbitfed/cost_model.hpp"
#include "orbitfed/error.hpp"
#include "orbitfed/fl_core.hpp"
#include "orbitfed/optimizer.hpp"
#include "orbitfed/parallel.hpp"
#include "orbitfed/scenario.hpp"

namespace orbitfed {

struct HandoffEvent {
  std::size_t satellite = 0;  ///< index in the cluster's coverage schedule
  double arrival_s = 0.0;     ///< seconds since the round started
  double departure_s = 0.0;
  double compute_s = 0.0;
  double cycles = 0.0;
  bool relay_only = false;
};

struct LedgerEntry {
  std::size_t satellite = 0;
  double initial_j = 0.0;
  double consumed_j = 0.0;
  double charged_j = 0.0;
  double residual_j = 0.0;
  double dwell_s = 0.0;
};

struct ClusterRound {
  int cluster_id = 0;
  std::vector<HandoffEvent> handoffs;  ///< the relay chain, first to last
  std::size_t n_satellites_used = 0;
  std::size_t aggregation_satellite = 0;  ///< may lie beyond the chain
  int y_case = 1;
  double y_s = 0.0;
  double tau_rep_s = 0.0;
  double tau_j_s = 0.0;
  double cycles_required = 0.0;
  double cycles_processed = 0.0;
  std::vector<LedgerEntry> ledger;
  std::vector<double> client_energy_j;  ///< per member
};

struct RoundRecord {
  int round = 0;
  std::vector<ClusterRound> clusters;
  double tau_round_s = 0.0;
  double clock_s = 0.0;  ///< cumulative, at the end of the round
  double accuracy = std::numeric_limits<double>::quiet_NaN();
  double loss = std::numeric_limits<double>::quiet_NaN();
};

struct TimelineEvent {
  double t_s = 0.0;
  int cluster = -1;  ///< -1 for global events
  std::string kind;
  std::string detail;
};

struct SimOptions {
  TrainConfig train;
  bool persistent_battery = false;
  bool learn = true;            ///< train models when the scenario carries data
  std::uint64_t offload_seed = 1;
  unsigned workers = 0;         ///< 0: worker_limit()
};

namespace detail {
inline std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

inline void sort_timeline(std::vector<TimelineEvent>& ev) {
  std::stable_sort(ev.begin(), ev.end(), [](const TimelineEvent& a, const TimelineEvent& b) {
    if (a.t_s != b.t_s) return a.t_s < b.t_s;
    if (a.cluster != b.cluster) return a.cluster < b.cluster;
    return a.kind < b.kind;
  });
}
}  // namespace detail

/// Runs the protocol round by round on a simulated clock.
class Simulator {
 public:
  Simulator(const Scenario& s, const DecisionVector& d, SimOptions opt = {})
      : s_(apply_offload(s, d.alpha, opt.offload_seed)), opt_(std::move(opt)) {
    check_decision_shape(s, d);
    d_ = d;
    d_.alpha = effective_alpha(s_, d.alpha);
    repair_decision();
    next_interval_.assign(s_.clusters.size(), 0);
    battery_.assign(s_.clusters.size(), {});
    learning_ = opt_.learn && s_.has_data() && !s_.layout.empty();
    if (learning_) model_ = init_model(s_.layout, opt_.train.seed);
    for (std::size_t k = 0; k < s_.clients.size(); ++k) {
      const double n = std::nearbyint(d_.alpha[k] * static_cast<double>(s_.clients[k].dataset_size));
      timeline_.push_back({0.0, s_.clusters[s_.cluster_of[k]].id, "offload",
                           "client=" + std::to_string(s_.clients[k].id) + " samples=" + detail::fmt("%.0f", n)});
    }
  }

  /// Decision after integer rounding of α|D| (f and b re-solved where rounding broke feasibility).
  const DecisionVector& decision() const noexcept { return d_; }
  const Scenario& scenario() const noexcept { return s_; }
  const std::vector<TimelineEvent>& timeline() const noexcept { return timeline_; }
  const std::optional<ModelParams>& model() const noexcept { return model_; }
  double clock() const noexcept { return clock_; }
  int rounds_done() const noexcept { return round_; }

  RoundRecord run_round() {
    RoundRecord rec;
    rec.round = round_;
    const double start = clock_;
    std::vector<ClusterRound> cr(s_.clusters.size());
    for (std::size_t j = 0; j < s_.clusters.size(); ++j) cr[j] = simulate_cluster(j, start);
    for (const auto& c : cr) rec.tau_round_s = std::max(rec.tau_round_s, c.tau_j_s);
    rec.clusters = std::move(cr);

    if (learning_) train_round(rec);
    clock_ = start + rec.tau_round_s;
    rec.clock_s = clock_;
    timeline_.push_back({clock_, -1, "global_aggregation", "round=" + std::to_string(round_)});
    ++round_;
    return rec;
  }

  /// Timeline sorted by (time, cluster, kind).
  std::vector<TimelineEvent> sorted_timeline() const {
    auto ev = timeline_;
    detail::sort_timeline(ev);
    return ev;
  }

 private:
  void repair_decision() {
    for (std::size_t j = 0; j < s_.clusters.size(); ++j) {
      if (cluster_feasible(s_, j, d_)) continue;
      const auto fs = solve_freq_cluster(s_, j, cluster_offloaded_samples(s_, j, d_.alpha));
      if (fs.feasible) d_.sat_freq_hz[j] = fs.freq_hz;
      if (!cluster_feasible(s_, j, d_)) {
        try {
          const auto b = solve_bandwidth_cluster(s_, j, d_.alpha, d_.sat_freq_hz[j]);
          for (std::size_t i = 0; i < b.size(); ++i) d_.bandwidth_hz[s_.members[j][i]] = b[i];
        } catch (const Infeasible&) {
        }
      }
      if (!cluster_feasible(s_, j, d_))
        throw Infeasible("cluster " + std::to_string(s_.clusters[j].id) +
                         ": decision is infeasible after rounding offloaded samples");
    }
  }

  ClusterRound simulate_cluster(std::size_t j, double start) {
    const auto& cl = s_.clusters[j];
    const auto& mem = s_.members[j];
    const auto& cov = cl.coverage;
    ClusterRound out;
    out.cluster_id = cl.id;
    const double sync = cl.sync_delay_s;
    const double f = d_.sat_freq_hz[j];
    const double A = cluster_offloaded_samples(s_, j, d_.alpha);
    const SatelliteWork w = satellite_work(s_, j, A, f);
    const double tau = w.tau_trans_s;
    const double e_tr = w.e_trans();
    const double P = cl.charge_power_w();
    const bool fixed = cov.is_fixed();

    const std::size_t first = fixed ? 0 : next_interval_[j];
    const double base = cov.interval(first).start_s;
    auto win = [&](std::size_t i) {
      const auto iv = cov.interval(first + i);
      return CoverageInterval{iv.start_s - base, iv.end_s - base};
    };
    auto emit = [&](double t, const char* kind, std::string detail) {
      timeline_.push_back({start + t, cl.id, kind, std::move(detail)});
    };

    // Relay chain.
    const double C = w.cycles();
    out.cycles_required = C;
    const std::int64_t n_fixed = fixed ? w.handoffs() : 0;
    double R = C;
    double rep = 0.0;
    auto& bat = battery_[j];
    for (std::size_t i = 0;; ++i) {
      const auto iv = win(i);
      const double cw = iv.length() - tau;
      HandoffEvent h;
      h.satellite = first + i;
      h.arrival_s = sync + iv.start_s;
      double dwell = 0.0, cycles = 0.0;
      bool last = false;
      if (!(cw > 0.0)) {
        h.relay_only = true;
        dwell = iv.length();
        h.departure_s = sync + iv.end_s;
        emit(h.arrival_s, "relay_only", "satellite=" + std::to_string(h.satellite) + " window_s=" + detail::fmt("%.9g", iv.length()));
      } else if (fixed ? static_cast<std::int64_t>(i) < n_fixed : (C > 0.0 && R >= cw * f)) {
        cycles = cw * f;
        R -= cycles;
        h.compute_s = cw;
        dwell = iv.length();
        h.departure_s = sync + iv.end_s;
      } else {
        cycles = std::max(R, 0.0);
        h.compute_s = cycles > 0.0 ? cycles / f : 0.0;
        dwell = tau + h.compute_s;
        h.departure_s = h.arrival_s + dwell;
        rep = iv.start_s + dwell;
        last = true;
      }
      h.cycles = cycles;
      out.cycles_processed += cycles;

      LedgerEntry le;
      le.satellite = h.satellite;
      le.initial_j = opt_.persistent_battery && i < bat.size() ? bat[i] : cl.sat_initial_energy_j;
      le.consumed_j = cl.energy_coeff * cycles * f * f + e_tr;
      le.charged_j = dwell * P;
      le.residual_j = le.initial_j - le.consumed_j + le.charged_j;
      le.dwell_s = dwell;
      if (opt_.persistent_battery) {
        if (bat.size() <= i) bat.resize(i + 1, cl.sat_initial_energy_j);
        bat[i] = le.residual_j;
      }
      if (le.residual_j < cl.sat_min_residual_j)
        emit(h.departure_s, "battery_below_min", "satellite=" + std::to_string(h.satellite) + " residual_j=" + detail::fmt("%.9g", le.residual_j));

      emit(h.arrival_s, "satellite_arrival", "satellite=" + std::to_string(h.satellite));
      if (!h.relay_only) {
        emit(h.arrival_s + tau, "isl_transfer_done", "satellite=" + std::to_string(h.satellite));
        if (cycles > 0.0)
          emit(h.arrival_s + tau + h.compute_s, "satellite_compute_done",
               "satellite=" + std::to_string(h.satellite) + " cycles=" + detail::fmt("%.17g", cycles));
      }
      if (!last) emit(h.departure_s, "handoff", "from=" + std::to_string(h.satellite) + " to=" + std::to_string(h.satellite + 1));
      out.handoffs.push_back(h);
      out.ledger.push_back(le);
      if (last) break;
    }
    out.n_satellites_used = out.handoffs.size();
    out.tau_rep_s = rep;

    // Client path: wait for whichever satellite is overhead once local training is done.
    const std::size_t m = mem.size();
    std::vector<double> t(m), a(m);
    for (std::size_t i = 0; i < m; ++i) {
      const auto k = mem[i];
      const auto& c = s_.clients[k];
      const double gamma = 1.0 - d_.alpha[k];
      t[i] = c.cycles_per_sample * gamma * static_cast<double>(c.dataset_size) / c.cpu_freq_hz;
      const auto up = uplink_agg_latency_energy(s_, k, d_.bandwidth_hz[k]);
      a[i] = up.latency_s;
      out.client_energy_j.push_back(
          client_local_energy(c, std::clamp(gamma, 0.0, 1.0), c.dataset_size, cl.energy_coeff) + up.energy_j);
    }
    const double t_max = *std::max_element(t.begin(), t.end());
    const double a_max = *std::max_element(a.begin(), a.end());
    const std::size_t L = out.handoffs.size() - 1;
    const double s_last = win(L).start_s;
    std::vector<double> x(m);
    std::size_t agg = L;
    if (t_max <= s_last) {
      out.y_case = 1;
      std::fill(x.begin(), x.end(), s_last);
      out.y_s = s_last + a_max;
    } else {
      std::size_t i = L;
      while (!(t_max < win(i).end_s)) ++i;
      const auto iv = win(i);
      double c2 = 0.0;
      for (std::size_t q = 0; q < m; ++q) {
        x[q] = std::max(iv.start_s, t[q]);
        c2 = std::max(c2, x[q] + a[q]);
      }
      if (c2 <= iv.end_s) {
        out.y_case = 2;
        out.y_s = c2;
        agg = i;
      } else {
        out.y_case = 3;
        agg = i + 1;
        const double s_next = win(agg).start_s;
        std::fill(x.begin(), x.end(), s_next);
        out.y_s = s_next + a_max;
      }
    }
    out.aggregation_satellite = first + agg;
    for (std::size_t q = 0; q < m; ++q) {
      const int id = s_.clients[mem[q]].id;
      emit(sync + t[q], "client_compute_done", "client=" + std::to_string(id));
      emit(sync + x[q] + a[q], "client_upload_done", "client=" + std::to_string(id));
    }
    if (agg > L) emit(sync + win(agg).start_s, "aggregation_satellite", "satellite=" + std::to_string(first + agg));

    out.tau_j_s = std::max(sync + out.y_s, sync + out.tau_rep_s) + cl.glob_delay_s;
    emit(out.tau_j_s - cl.glob_delay_s, "intra_cluster_aggregation", "satellite=" + std::to_string(first + agg));
    if (!fixed) next_interval_[j] = first + std::max(agg, L) + 1;
    return out;
  }

  void train_round(RoundRecord& rec) {
    // One logical satellite pass, split across the relay chain by each satellite's cycle share.
    auto driver = [&](std::size_t j, SgdPass& pass) {
      const auto& cr = rec.clusters[j];
      double cum = 0.0;
      for (const auto& h : cr.handoffs) {
        cum += h.cycles;
        const double share = cr.cycles_required > 0.0 ? cum / cr.cycles_required : 1.0;
        pass.advance_to(static_cast<std::size_t>(std::floor(share * static_cast<double>(pass.total()) + 1e-9)));
      }
    };
    model_ = federated_round(s_, *model_, d_.alpha, opt_.train, round_, opt_.workers ? opt_.workers : worker_limit(),
                             driver);
    if (s_.test && !s_.test->empty()) {
      const auto ev = evaluate(*model_, *s_.test);
      rec.accuracy = ev.accuracy;
      rec.loss = ev.loss;
    }
  }

  Scenario s_;
  SimOptions opt_;
  DecisionVector d_;
  std::vector<std::size_t> next_interval_;
  std::vector<std::vector<double>> battery_;
  bool learning_ = false;
  std::optional<ModelParams> model_;
  std::vector<TimelineEvent> timeline_;
  double clock_ = 0.0;
  int round_ = 0;
};

struct ExperimentRun {
  std::vector<RoundRecord> rounds;
  std::vector<TimelineEvent> timeline;  ///< sorted
  DecisionVector decision;              ///< as simulated
};

/// Offload preprocessing once, then R rounds.
inline ExperimentRun run_experiment(const Scenario& s, const DecisionVector& d, int rounds,
                                    const SimOptions& opt = {}) {
  if (rounds < 0) throw InvalidArgument("rounds must be non-negative");
  Simulator sim(s, d, opt);
  ExperimentRun run;
  for (int r = 0; r < rounds; ++r) run.rounds.push_back(sim.run_round());
  run.timeline = sim.sorted_timeline();
  run.decision = sim.decision();
  return run;
}

/// Same protocol over explicit coverage intervals; the decision should come from the
/// optimizer run on the schedule's mean dwell.
inline ExperimentRun replay_varying_coverage(const Scenario& s, const DecisionVector& d, int rounds,
                                             const SimOptions& opt = {}) {
  for (const auto& cl : s.clusters)
    if (cl.coverage.is_fixed()) throw InvalidArgument("replay needs explicit coverage intervals");
  return run_experiment(s, d, rounds, opt);
}

}  // namespace orbitfed
