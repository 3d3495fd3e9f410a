#pragma once

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <vector>

#include "orbitfed/cost_model.hpp"
#include "orbitfed/error.hpp"
#include "orbitfed/optimizer.hpp"
#include "orbitfed/scenario.hpp"

namespace orbitfed {

/// Exhaustive reference search. α on a uniform grid, f_S on a geometric grid, b on the
/// simplex of B/bandwidth_units slices. Meant for clusters of two to four clients.
struct GridOptions {
  double alpha_step = 1e-3;
  std::size_t freq_points = 96;
  double freq_min_ratio = 1e-3;    ///< lowest grid frequency as a fraction of f_max
  std::size_t bandwidth_units = 0;  ///< 0: 24 for two clients, 12 otherwise
  std::size_t max_members = 4;
};

struct GridResult {
  DecisionVector decision;
  double tau_round_s = kInf;
  std::vector<double> tau_cluster_s;
  std::size_t evaluated = 0;
};

namespace detail {

inline std::vector<double> alpha_grid(double max_fraction, double step) {
  std::vector<double> g;
  const auto n = static_cast<std::size_t>(std::floor(max_fraction / step + 1e-9));
  for (std::size_t i = 0; i <= n; ++i) g.push_back(static_cast<double>(i) * step);
  if (max_fraction - g.back() > 1e-12) g.push_back(max_fraction);
  return g;
}

/// All compositions of `units` into `parts` positive integers.
inline std::vector<std::vector<std::size_t>> compositions(std::size_t units, std::size_t parts) {
  std::vector<std::vector<std::size_t>> out;
  std::vector<std::size_t> cur(parts, 1);
  auto rec = [&](auto&& self, std::size_t i, std::size_t left) -> void {
    if (i + 1 == parts) {
      cur[i] = left;
      out.push_back(cur);
      return;
    }
    for (std::size_t u = 1; u + (parts - i - 1) <= left; ++u) {
      cur[i] = u;
      self(self, i + 1, left - u);
    }
  };
  if (parts > 0 && units >= parts) rec(rec, 0, units);
  return out;
}

}  // namespace detail

/// Cluster-by-cluster exhaustive minimization of τ_j (clusters are independent).
/// τ_j is non-increasing in f_S, so each α point takes the largest feasible grid frequency.
inline GridResult grid_search(const Scenario& s, const GridOptions& opt = {}) {
  GridResult res;
  const std::size_t K = s.clients.size();
  res.decision.alpha.assign(K, 0.0);
  res.decision.bandwidth_hz.assign(K, 0.0);
  res.decision.sat_freq_hz.assign(s.clusters.size(), 0.0);
  res.tau_round_s = 0.0;

  for (std::size_t j = 0; j < s.clusters.size(); ++j) {
    const auto& cl = s.clusters[j];
    const auto& mem = s.members[j];
    const std::size_t m = mem.size();
    if (m > opt.max_members) throw InvalidArgument("grid search supports at most max_members clients per cluster");
    const std::size_t units = opt.bandwidth_units ? opt.bandwidth_units : (m == 2 ? 24 : 12);
    const auto splits = detail::compositions(units, m);
    if (splits.empty()) throw InvalidArgument("too few bandwidth units for the cluster size");

    // Per-client tables.
    std::vector<std::vector<double>> a_grid(m), t_loc(m), e_loc(m);
    std::vector<std::vector<double>> t_agg(m, std::vector<double>(units + 1, kInf));
    std::vector<std::vector<double>> e_agg(m, std::vector<double>(units + 1, kInf));
    for (std::size_t i = 0; i < m; ++i) {
      const auto k = mem[i];
      const auto& c = s.clients[k];
      a_grid[i] = detail::alpha_grid(c.max_offload_fraction, opt.alpha_step);
      for (double a : a_grid[i]) {
        const double g = std::clamp(1.0 - a, 0.0, 1.0);
        t_loc[i].push_back(c.cycles_per_sample * g * static_cast<double>(c.dataset_size) / c.cpu_freq_hz);
        e_loc[i].push_back(client_local_energy(c, g, c.dataset_size, cl.energy_coeff));
      }
      for (std::size_t u = 1; u <= units; ++u) {
        const auto up = uplink_agg_latency_energy(s, k, cl.bandwidth_hz * static_cast<double>(u) / static_cast<double>(units));
        t_agg[i][u] = up.latency_s;
        e_agg[i][u] = up.energy_j;
      }
    }
    std::vector<double> f_grid(opt.freq_points);
    for (std::size_t p = 0; p < opt.freq_points; ++p) {
      const double x = opt.freq_points > 1 ? static_cast<double>(p) / static_cast<double>(opt.freq_points - 1) : 0.0;
      f_grid[p] = cl.sat_max_freq_hz * std::pow(opt.freq_min_ratio, x);
    }
    f_grid[0] = cl.sat_max_freq_hz;

    std::unordered_map<double, double> f_cache;  // A -> best feasible grid f (0: none)
    auto best_f = [&](double A) {
      if (auto it = f_cache.find(A); it != f_cache.end()) return it->second;
      double found = 0.0;
      SatelliteWork w = satellite_work(s, j, A, cl.sat_max_freq_hz);
      if (w.coverage_s > w.tau_trans_s) {
        for (double f : f_grid) {
          w.freq_hz = f;
          bool ok = false;
          try {
            ok = battery_slack(s, j, w) >= 0.0;
          } catch (const Infeasible&) {
          }
          if (ok) {
            found = f;
            break;
          }
          if (A == 0.0) break;  // frequency is irrelevant without offloaded data
        }
      }
      f_cache.emplace(A, found);
      return found;
    };

    double best = kInf;
    std::vector<std::size_t> best_idx(m, 0), best_split;
    double best_freq = 0.0;
    std::vector<std::size_t> idx(m, 0);
    std::vector<double> tl(m), ta(m);
    const double a_limit = cl.max_offload_samples;
    for (;;) {
      double A = 0.0;
      for (std::size_t i = 0; i < m; ++i) A += a_grid[i][idx[i]] * static_cast<double>(s.clients[mem[i]].dataset_size);
      if (A <= a_limit) {
        const double f = best_f(A);
        if (f > 0.0 || A == 0.0) {
          const SatelliteWork w = satellite_work(s, j, A, f > 0.0 ? f : cl.sat_max_freq_hz);
          const auto n = w.handoffs();
          const double rep = satellite_step_latency(w);
          for (std::size_t i = 0; i < m; ++i) tl[i] = t_loc[i][idx[i]];
          for (const auto& sp : splits) {
            bool ok = true;
            for (std::size_t i = 0; i < m && ok; ++i) {
              ta[i] = t_agg[i][sp[i]];
              ok = e_loc[i][idx[i]] + e_agg[i][sp[i]] <= s.clients[mem[i]].energy_budget_j;
            }
            ++res.evaluated;
            if (!ok) continue;
            const double y = cluster_client_path(tl, ta, w.coverage_s, n).y_s;
            const double tau = std::max(y, rep) + cl.sync_delay_s + cl.glob_delay_s;
            if (tau < best) {
              best = tau;
              best_idx = idx;
              best_split = sp;
              best_freq = f > 0.0 ? f : cl.sat_max_freq_hz;
            }
          }
        }
      }
      std::size_t i = 0;
      while (i < m && ++idx[i] == a_grid[i].size()) idx[i++] = 0;
      if (i == m) break;
    }

    res.tau_cluster_s.push_back(best);
    res.tau_round_s = std::max(res.tau_round_s, best);
    if (!std::isfinite(best)) continue;
    for (std::size_t i = 0; i < m; ++i) {
      res.decision.alpha[mem[i]] = a_grid[i][best_idx[i]];
      res.decision.bandwidth_hz[mem[i]] = cl.bandwidth_hz * static_cast<double>(best_split[i]) / static_cast<double>(units);
    }
    res.decision.sat_freq_hz[j] = best_freq;
  }
  return res;
}

}  // namespace orbitfed
