#pragma once
// Shared generators and independent recomputations for the test suite and the acceptance run.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "orbitfed/orbitfed.hpp"

namespace support {

using namespace orbitfed;

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : eng_(seed) {}
  double uni(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(eng_); }
  double log_uni(double lo, double hi) { return std::exp(uni(std::log(lo), std::log(hi))); }
  long integer(long lo, long hi) { return std::uniform_int_distribution<long>(lo, hi)(eng_); }
  bool coin(double p = 0.5) { return uni(0.0, 1.0) < p; }
  std::mt19937_64& engine() { return eng_; }

 private:
  std::mt19937_64 eng_;
};

struct DrawRanges {
  long clusters_lo = 1, clusters_hi = 3;
  long clients_lo = 2, clients_hi = 5;
  long samples_lo = 200, samples_hi = 1500;
  double coverage_lo = 300.0, coverage_hi = 420.0;
  double energy_lo = 400.0, energy_hi = 700.0;
  double fmax_lo = 2e9, fmax_hi = 1e10;
  double sun_probability = 0.5;
};

/// Cost-only scenario with parameters drawn around the simulation table.
inline Scenario random_scenario(Gen& g, const DrawRanges& r = {}) {
  Scenario s;
  s.name = "random";
  s.footprint.param_count = static_cast<std::size_t>(g.integer(20000, 200000));
  s.footprint.sample_bits = 6272.0;
  const long J = g.integer(r.clusters_lo, r.clusters_hi);
  int next = 0;
  for (long j = 0; j < J; ++j) {
    ClusterSpec cl;
    cl.id = static_cast<int>(j);
    cl.bandwidth_hz = g.uni(5e6, 2e7);
    cl.sun_facing = g.coin(r.sun_probability);
    cl.sun_power_w = cl.sun_facing ? g.uni(1.0, 5.0) : 0.0;
    cl.sat_max_freq_hz = g.uni(r.fmax_lo, r.fmax_hi);
    cl.sat_cycles_per_sample = g.uni(2e7, 4e7);
    cl.sat_tx_power_w = g.uni(5.0, 15.0);
    cl.isl_rate_bps = g.uni(2e6, 5e6);
    cl.sat_initial_energy_j = g.uni(r.energy_lo, r.energy_hi);
    cl.sat_min_residual_j = g.uni(50.0, 150.0);
    cl.coverage = CoverageSchedule::fixed(g.uni(r.coverage_lo, r.coverage_hi));
    cl.glob_delay_s = g.uni(0.5, 2.0);
    cl.sync_delay_s = g.uni(0.5, 2.0);
    cl.noise_density_w_per_hz = 3.98e-21;
    cl.sat_distance_m = g.uni(5e5, 1.2e6);
    const long m = g.integer(r.clients_lo, r.clients_hi);
    for (long i = 0; i < m; ++i) {
      ClientProfile c;
      c.id = next++;
      c.cluster_id = cl.id;
      c.cpu_freq_hz = g.uni(1e8, 3e8);
      c.cycles_per_sample = g.uni(2e7, 4e7);
      c.tx_power_w = g.uni(0.1, 0.3);
      c.max_offload_fraction = g.uni(0.5, 0.9);
      c.energy_budget_j = g.uni(5.0, 15.0);
      c.dataset_size = static_cast<std::size_t>(g.integer(r.samples_lo, r.samples_hi));
      if (g.coin(0.3)) c.distance_m = g.uni(5e5, 1.2e6);
      cl.client_ids.push_back(c.id);
      s.clients.push_back(c);
    }
    s.clusters.push_back(cl);
  }
  return validate_scenario(std::move(s));
}

/// A decision that satisfies the shape constraints, not necessarily feasibility.
inline DecisionVector random_decision(Gen& g, const Scenario& s) {
  DecisionVector d;
  for (const auto& c : s.clients) {
    d.alpha.push_back(g.uni(0.0, c.max_offload_fraction));
  }
  d.bandwidth_hz.resize(s.clients.size());
  for (std::size_t j = 0; j < s.clusters.size(); ++j) {
    d.sat_freq_hz.push_back(g.uni(0.2, 1.0) * s.clusters[j].sat_max_freq_hz);
    std::vector<double> w;
    for (std::size_t i = 0; i < s.members[j].size(); ++i) w.push_back(g.uni(0.2, 1.0));
    double tot = 0.0;
    for (double v : w) tot += v;
    for (std::size_t i = 0; i < w.size(); ++i) d.bandwidth_hz[s.members[j][i]] = s.clusters[j].bandwidth_hz * w[i] / tot;
  }
  return d;
}

inline bool close_rel(double a, double b, double tol) {
  if (a == b) return true;
  if (!std::isfinite(a) || !std::isfinite(b)) return false;
  return std::abs(a - b) <= tol * std::max(std::abs(a), std::abs(b));
}

// ---------------------------------------------------------------------------
// Spreadsheet-style recomputation from raw numbers. Nothing here calls the library's
// cost functions.
namespace sheet {

struct ClusterRow {
  double A = 0.0;          // offloaded samples
  double tau_trans = 0.0;
  double e_trans = 0.0;
  long n = 0;
  double remaining = 0.0;
  double dwell_first = 0.0, energy_first = 0.0;
  double dwell_last = 0.0, energy_last = 0.0;
  double tau_rep = 0.0;
  std::vector<double> t_local, t_up, e_client;
  double y = 0.0;
  int y_case = 0;
  double tau_c = 0.0, tau_s = 0.0, tau_j = 0.0;
};

struct Sheet {
  std::vector<ClusterRow> rows;
  double tau_round = 0.0;
};

inline Sheet compute(const Scenario& s, const DecisionVector& d) {
  Sheet out;
  const double S = 32.0 * static_cast<double>(s.footprint.param_count);
  const double q = s.footprint.sample_bits;
  for (std::size_t j = 0; j < s.clusters.size(); ++j) {
    const ClusterSpec& cl = s.clusters[j];
    ClusterRow row;
    std::vector<std::size_t> idx;
    for (std::size_t k = 0; k < s.clients.size(); ++k)
      if (s.clients[k].cluster_id == cl.id) idx.push_back(k);
    for (auto k : idx) row.A += d.alpha[k] * double(s.clients[k].dataset_size);

    const double Q = *cl.isl_rate_bps;
    row.tau_trans = (S + q * row.A) / Q;
    row.e_trans = cl.sat_tx_power_w * row.tau_trans;
    const double T = cl.coverage.mean();
    const double f = d.sat_freq_hz[j];
    const double cycles = cl.sat_cycles_per_sample * row.A;
    const double per_window = (T - row.tau_trans) * f;
    row.n = cycles > 0 ? long(std::floor(cycles / per_window)) : 0;
    row.remaining = cycles - double(row.n) * per_window;
    if (row.remaining < 0) row.remaining = 0;
    const double k3 = cl.energy_coeff;
    row.dwell_first = T;
    row.energy_first = k3 * (T - row.tau_trans) * f * f * f + row.e_trans;
    row.dwell_last = (row.remaining > 0 ? row.remaining / f : 0.0) + row.tau_trans;
    row.energy_last = k3 * row.remaining * f * f + row.e_trans;
    row.tau_rep = T * double(row.n) + row.dwell_last;

    for (auto k : idx) {
      const auto& c = s.clients[k];
      const double n_local = (1.0 - d.alpha[k]) * double(c.dataset_size);
      row.t_local.push_back(c.cycles_per_sample * n_local / c.cpu_freq_hz);
      const double dist = c.distance_m ? *c.distance_m : cl.sat_distance_m;
      const double b = d.bandwidth_hz[k];
      const double snr = c.tx_power_w / std::pow(dist, cl.pathloss_exponent) / (b * cl.noise_density_w_per_hz);
      const double rate = b * std::log(1.0 + snr) / std::log(2.0);
      const double up = S / rate;
      row.t_up.push_back(up);
      row.e_client.push_back(k3 * c.cycles_per_sample * n_local * c.cpu_freq_hz * c.cpu_freq_hz + c.tx_power_w * up);
    }

    // Y_j, case by case.
    double t_max = 0.0, a_max = 0.0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      t_max = std::max(t_max, row.t_local[i]);
      a_max = std::max(a_max, row.t_up[i]);
    }
    if (t_max <= T * double(row.n)) {
      row.y_case = 1;
      row.y = T * double(row.n) + a_max;
    } else {
      const double nn = std::floor(t_max / T);
      double c2 = 0.0;
      for (std::size_t i = 0; i < idx.size(); ++i) c2 = std::max(c2, std::max(T * nn, row.t_local[i]) + row.t_up[i]);
      if (c2 <= T * (nn + 1)) {
        row.y_case = 2;
        row.y = c2;
      } else {
        row.y_case = 3;
        row.y = T * (nn + 1) + a_max;
      }
    }
    row.tau_c = cl.sync_delay_s + row.y;
    row.tau_s = cl.sync_delay_s + row.tau_rep;
    row.tau_j = std::max(row.tau_c, row.tau_s) + cl.glob_delay_s;
    out.tau_round = std::max(out.tau_round, row.tau_j);
    out.rows.push_back(row);
  }
  return out;
}

/// Largest f in [0, f_max] with E − (κ(T−τ)f³ + E_tr) + T·P ≥ ψ, by plain bisection.
inline double energy_bisection(double E, double psi, double P, double T, double tau, double e_tr, double kappa,
                               double f_max) {
  auto ok = [&](double f) { return E - (kappa * (T - tau) * f * f * f + e_tr) + T * P >= psi; };
  if (ok(f_max)) return f_max;
  if (!ok(0.0)) return 0.0;
  double lo = 0.0, hi = f_max;
  for (int i = 0; i < 200 && hi - lo > 1e-13 * hi; ++i) {
    const double mid = 0.5 * (lo + hi);
    (ok(mid) ? lo : hi) = mid;
  }
  return lo;
}

}  // namespace sheet

/// One cluster of ten identical clients (|D| = 1200, f = 2e8, m = 3e7), S(w) = 3.2e6 bits,
/// Q = 3.125e6 bps, T = 360 s, τ_sync = 1 s, τ_glob = 2 s. With α = 0.5 and f_S = 2e8 the chain
/// carries 6000 samples and needs two handoffs.
inline Scenario worked_example_scenario() {
  Scenario s;
  s.name = "worked";
  s.footprint.param_count = 100000;
  s.footprint.sample_bits = 6272.0;
  ClusterSpec cl;
  cl.id = 0;
  cl.sun_facing = true;
  cl.sun_power_w = 5.0;
  cl.sync_delay_s = 1.0;
  cl.glob_delay_s = 2.0;
  for (int k = 0; k < 10; ++k) {
    ClientProfile c;
    c.id = k;
    c.cluster_id = 0;
    c.cpu_freq_hz = 2e8;
    c.cycles_per_sample = 3e7;
    c.dataset_size = 1200;
    cl.client_ids.push_back(k);
    s.clients.push_back(c);
  }
  s.clusters.push_back(cl);
  return validate_scenario(std::move(s));
}

inline DecisionVector uniform_decision(const Scenario& s, double alpha, double freq_hz) {
  DecisionVector d;
  d.alpha.assign(s.clients.size(), alpha);
  d.sat_freq_hz.assign(s.clusters.size(), freq_hz);
  d.bandwidth_hz.resize(s.clients.size());
  for (std::size_t j = 0; j < s.clusters.size(); ++j)
    for (auto k : s.members[j]) d.bandwidth_hz[k] = s.clusters[j].bandwidth_hz / double(s.members[j].size());
  return d;
}

/// Small data-carrying scenario built through the JSON loader.
inline json small_learning_json(int clusters, int clients, std::size_t per_client, ModelLayout layout,
                                std::uint64_t seed = 1) {
  json cl = json::array();
  for (int j = 0; j < clusters; ++j) cl.push_back({{"id", j}, {"clients", clients}, {"sun_facing", j == 0}, {"sun_power_w", j == 0 ? 5.0 : 0.0}});
  const std::size_t dim = layout.front();
  const int classes = static_cast<int>(layout.back());
  return {{"name", "small"},
          {"seed", seed},
          {"model", {{"layout", layout}, {"bits_per_param", 32}, {"sample_bits", 6272}}},
          {"data",
           {{"source", "synthetic"},
            {"classes", classes},
            {"dim", dim},
            {"train_samples", per_client * std::size_t(clusters * clients)},
            {"test_samples", 300},
            {"mean_scale", 1.0},
            {"noise_sigma", 1.0},
            {"partition", "shard_noniid"},
            {"shards_per_client", 2},
            {"samples_per_client", per_client},
            {"sensitive_fraction", 0.2}}},
          {"train", {{"lr", 0.05}, {"batch_client", 16}, {"batch_satellite", 16}, {"momentum", 0.0}, {"rounds", 5}}},
          {"defaults", {{"cluster", {{"coverage", 360.0}}}}},
          {"client_ranges", {{"cpu_freq_hz", {1e8, 3e8}}, {"tx_power_w", {0.1, 0.3}}}},
          {"clusters", cl}};
}

}  // namespace support
