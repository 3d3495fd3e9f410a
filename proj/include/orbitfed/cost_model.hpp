#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "orbitfed/error.hpp"
#include "orbitfed/scenario.hpp"

namespace orbitfed {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// The optimizer's variables. γ_k is always 1 − α_k.
struct DecisionVector {
  std::vector<double> alpha;         ///< per client
  std::vector<double> sat_freq_hz;   ///< per cluster
  std::vector<double> bandwidth_hz;  ///< per client
};

// ---------------------------------------------------------------------------
// Client side

/// m·γ|D|/f. The checked form requires γ in (0, 1 − α].
inline double client_local_latency(const ClientProfile& c, double gamma, std::size_t dataset_size,
                                   double alpha = 0.0) {
  if (!(gamma > 0.0) || gamma > 1.0 - alpha + 1e-12)
    throw InvalidArgument("gamma outside (0, 1 - alpha]");
  return c.cycles_per_sample * gamma * static_cast<double>(dataset_size) / c.cpu_freq_hz;
}

/// κ·m·γ|D|·f².
inline double client_local_energy(const ClientProfile& c, double gamma, std::size_t dataset_size,
                                  double kappa) {
  if (!(gamma >= 0.0) || gamma > 1.0) throw InvalidArgument("gamma outside [0, 1]");
  return kappa * c.cycles_per_sample * gamma * static_cast<double>(dataset_size) * c.cpu_freq_hz *
         c.cpu_freq_hz;
}

struct UplinkCost {
  double latency_s = 0.0;
  double energy_j = 0.0;
};

/// Received SNR numerator p·d^−ξ/N0 (divide by b for the per-Hz SNR).
inline double uplink_gain(double tx_power_w, double distance_m, double pathloss_exponent,
                          double noise_density) {
  return tx_power_w * std::pow(distance_m, -pathloss_exponent) / noise_density;
}

/// Rate b·log2(1 + c/b) in bits/s; increasing in b with limit c/ln 2.
inline double uplink_rate(double bandwidth_hz, double gain) {
  if (!(bandwidth_hz > 0.0)) return 0.0;
  return bandwidth_hz * std::log2(1.0 + gain / bandwidth_hz);
}

/// Model upload time and energy: S/(b·log2(1 + p d^−ξ/(b N0))), E = p·τ.
inline UplinkCost uplink_agg_latency_energy(double tx_power_w, double bandwidth_hz,
                                            double size_bits, double distance_m,
                                            double pathloss_exponent, double noise_density) {
  if (!(bandwidth_hz > 0.0)) throw Infeasible("uplink bandwidth must be positive");
  const double rate = uplink_rate(bandwidth_hz, uplink_gain(tx_power_w, distance_m,
                                                            pathloss_exponent, noise_density));
  if (!(rate > 0.0)) throw Infeasible("uplink SNR underflows to zero");
  const double tau = size_bits / rate;
  return {tau, tx_power_w * tau};
}

inline UplinkCost uplink_agg_latency_energy(const Scenario& s, std::size_t k, double bandwidth_hz) {
  const auto& cl = s.clusters[s.cluster_of[k]];
  return uplink_agg_latency_energy(s.clients[k].tx_power_w, bandwidth_hz, s.footprint.size_bits(),
                                   s.client_distance(k), cl.pathloss_exponent,
                                   cl.noise_density_w_per_hz);
}

// ---------------------------------------------------------------------------
// Satellite side

inline double isl_rate(const IslLinkParams& l) {
  for (double v : {l.bandwidth_hz, l.rx_gain, l.tx_gain, l.pathloss, l.noise_density_w_per_hz,
                   l.tx_power_w})
    if (!(v > 0.0)) throw InvalidArgument("ISL link parameters must be positive");
  const double snr = l.tx_power_w * l.rx_gain * l.tx_gain / (l.pathloss * l.noise_density_w_per_hz);
  return l.bandwidth_hz * std::log2(1.0 + snr);
}

inline double cluster_isl_rate(const ClusterSpec& cl) {
  if (cl.isl_link) return isl_rate(*cl.isl_link);
  if (!cl.isl_rate_bps || !(*cl.isl_rate_bps > 0.0)) throw InvalidArgument("cluster has no ISL rate");
  return *cl.isl_rate_bps;
}

/// (S(w) + q·Σα|D|)/Q.
inline double isl_transfer_latency(const ModelFootprint& m, double offloaded_samples, double rate_bps) {
  if (!(rate_bps > 0.0)) throw InvalidArgument("ISL rate must be positive");
  if (!(offloaded_samples >= 0.0)) throw InvalidArgument("negative offloaded sample count");
  return (m.size_bits() + m.sample_bits * offloaded_samples) / rate_bps;
}

inline double isl_transfer_energy(double tau_trans_s, double sat_tx_power_w) {
  return sat_tx_power_w * tau_trans_s;
}

/// floor(m_S·Σα|D| / ((T − τ_trans)·f_S)).
inline std::int64_t handoff_count(double offloaded_samples, double m_s, double coverage_s,
                                  double tau_trans_s, double f_s) {
  if (!(coverage_s > tau_trans_s)) throw Infeasible("coverage time does not exceed the ISL transfer time");
  const double cycles = m_s * offloaded_samples;
  if (cycles <= 0.0) return 0;
  if (!(f_s > 0.0)) throw Infeasible("satellite frequency must be positive when data is offloaded");
  const double n = std::floor(cycles / ((coverage_s - tau_trans_s) * f_s));
  if (!(n < 1e15)) throw Infeasible("satellite frequency too low: handoff count overflows");
  return static_cast<std::int64_t>(n);
}

/// Everything the satellite chain of one cluster needs for one round.
struct SatelliteWork {
  double offloaded_samples = 0.0;  ///< Σα|D|
  double cycles_per_sample = 3e7;  ///< m_S
  double coverage_s = 360.0;       ///< T
  double tau_trans_s = 0.0;
  double freq_hz = 0.0;
  double kappa = 1e-28;
  double tx_power_w = 10.0;

  double cycles() const noexcept { return cycles_per_sample * offloaded_samples; }
  double e_trans() const noexcept { return isl_transfer_energy(tau_trans_s, tx_power_w); }
  std::int64_t handoffs() const {
    return handoff_count(offloaded_samples, cycles_per_sample, coverage_s, tau_trans_s, freq_hz);
  }
  /// Cycles left for the last satellite after N full windows.
  double remaining_cycles() const {
    const auto n = handoffs();
    if (n == 0) return cycles();
    const double rem = cycles() - static_cast<double>(n) * (coverage_s - tau_trans_s) * freq_hz;
    if (rem < -1e-9 * cycles()) throw Error("negative remaining cycles");
    return std::max(rem, 0.0);
  }
};

inline SatelliteWork satellite_work(const Scenario& s, std::size_t j, double offloaded_samples,
                                    double freq_hz) {
  const auto& cl = s.clusters[j];
  SatelliteWork w;
  w.offloaded_samples = offloaded_samples;
  w.cycles_per_sample = cl.sat_cycles_per_sample;
  w.coverage_s = cl.coverage_seconds();
  w.tau_trans_s = isl_transfer_latency(s.footprint, offloaded_samples, cluster_isl_rate(cl));
  w.freq_hz = freq_hz;
  w.kappa = cl.energy_coeff;
  w.tx_power_w = cl.sat_tx_power_w;
  return w;
}

enum class SatelliteRole { first_n, last };

struct DwellEnergy {
  double dwell_s = 0.0;
  double energy_j = 0.0;
};

/// First-N satellites: dwell T, energy κ(T−τ)f³ + E_trans.
/// Last satellite: dwell rem/f + τ, energy κ·rem·f² + E_trans.
inline DwellEnergy satellite_dwell_and_energy(SatelliteRole role, const SatelliteWork& w) {
  const double f = w.freq_hz;
  if (role == SatelliteRole::first_n) {
    return {w.coverage_s, w.kappa * (w.coverage_s - w.tau_trans_s) * f * f * f + w.e_trans()};
  }
  const double rem = w.remaining_cycles();
  const double compute = rem > 0.0 ? rem / f : 0.0;
  return {compute + w.tau_trans_s, w.kappa * rem * f * f + w.e_trans()};
}

/// τ^rep = T·N + rem/f + τ_trans.
inline double satellite_step_latency(const SatelliteWork& w) {
  const auto n = w.handoffs();
  const double rem = w.remaining_cycles();
  const double compute = rem > 0.0 ? rem / w.freq_hz : 0.0;
  return w.coverage_s * static_cast<double>(n) + compute + w.tau_trans_s;
}

/// Battery left when a satellite leaves: E_orig − E_local + dwell·P_charge.
inline double satellite_residual(const ClusterSpec& cl, const DwellEnergy& de) {
  return cl.sat_initial_energy_j - de.energy_j + de.dwell_s * cl.charge_power_w();
}

// ---------------------------------------------------------------------------
// Client path Y_j

struct ClientPath {
  double y_s = 0.0;
  int y_case = 1;
  std::size_t k_prime = 0;  ///< index of the slowest local computation
};

/// Three-case completion time of the client path, evaluated in order 1, 2, 3.
inline ClientPath cluster_client_path(std::span<const double> tau_local,
                                      std::span<const double> tau_agg, double coverage_s,
                                      std::int64_t n_handoffs) {
  if (tau_local.empty() || tau_local.size() != tau_agg.size())
    throw InvalidArgument("client path needs matching non-empty latency lists");
  ClientPath p;
  p.k_prime = static_cast<std::size_t>(
      std::max_element(tau_local.begin(), tau_local.end()) - tau_local.begin());
  const double t_max = tau_local[p.k_prime];
  const double a_max = *std::max_element(tau_agg.begin(), tau_agg.end());
  const double T = coverage_s;
  const double tn = T * static_cast<double>(n_handoffs);
  if (!std::isfinite(t_max) || !std::isfinite(a_max)) {
    p.y_s = kInf;
    p.y_case = 3;
    return p;
  }
  if (t_max <= tn) {
    p.y_s = tn + a_max;
    p.y_case = 1;
    return p;
  }
  const double n = std::floor(t_max / T);
  double c2 = 0.0;
  for (std::size_t k = 0; k < tau_local.size(); ++k)
    c2 = std::max(c2, std::max(T * n, tau_local[k]) + tau_agg[k]);
  if (c2 <= T * (n + 1.0)) {
    p.y_s = c2;
    p.y_case = 2;
  } else {
    p.y_s = T * (n + 1.0) + a_max;
    p.y_case = 3;
  }
  return p;
}

// ---------------------------------------------------------------------------
// Composition

struct ClusterCost {
  double offloaded_samples = 0.0;
  double tau_trans_s = 0.0;
  double e_trans_j = 0.0;
  std::int64_t n_handoffs = 0;
  double remaining_cycles = 0.0;
  double tau_rep_s = 0.0;
  double y_j_s = 0.0;
  int y_case = 1;
  std::size_t k_prime = 0;   ///< member position of the slowest client
  double tau_c_s = 0.0;
  double tau_s_s = 0.0;
  double tau_j_s = 0.0;      ///< max(τ_C, τ_S) + τ_glob
  DwellEnergy first_sat;     ///< shared by each of the first N satellites
  DwellEnergy last_sat;
  std::vector<double> tau_local_s;  ///< per member
  std::vector<double> tau_agg_s;
  std::vector<double> client_energy_j;  ///< E_local + E_agg per member

  std::size_t satellites() const noexcept { return static_cast<std::size_t>(n_handoffs) + 1; }
  const DwellEnergy& satellite(std::size_t i) const noexcept {
    return i + 1 < satellites() ? first_sat : last_sat;
  }
  double total_satellite_energy() const noexcept {
    return static_cast<double>(n_handoffs) * first_sat.energy_j + last_sat.energy_j;
  }
};

struct CostBreakdown {
  std::vector<ClusterCost> clusters;
  double tau_round_s = 0.0;
};

inline double cluster_offloaded_samples(const Scenario& s, std::size_t j,
                                        const std::vector<double>& alpha) {
  double a = 0.0;
  for (auto k : s.members[j]) a += alpha[k] * static_cast<double>(s.clients[k].dataset_size);
  return a;
}

/// Cost of cluster j under `d`; throws Infeasible when a quantity is undefined
/// (coverage shorter than the ISL transfer, zero frequency with offloaded data, zero bandwidth).
inline ClusterCost cluster_cost(const Scenario& s, std::size_t j, const DecisionVector& d) {
  const auto& cl = s.clusters[j];
  const auto& mem = s.members[j];
  ClusterCost c;
  c.offloaded_samples = cluster_offloaded_samples(s, j, d.alpha);
  const SatelliteWork w = satellite_work(s, j, c.offloaded_samples, d.sat_freq_hz[j]);
  c.tau_trans_s = w.tau_trans_s;
  c.e_trans_j = w.e_trans();
  c.n_handoffs = w.handoffs();
  c.remaining_cycles = w.remaining_cycles();
  c.tau_rep_s = satellite_step_latency(w);
  c.first_sat = satellite_dwell_and_energy(SatelliteRole::first_n, w);
  c.last_sat = satellite_dwell_and_energy(SatelliteRole::last, w);

  c.tau_local_s.resize(mem.size());
  c.tau_agg_s.resize(mem.size());
  c.client_energy_j.resize(mem.size());
  for (std::size_t i = 0; i < mem.size(); ++i) {
    const auto k = mem[i];
    const auto& client = s.clients[k];
    const double gamma = 1.0 - d.alpha[k];
    c.tau_local_s[i] = client.cycles_per_sample * gamma * static_cast<double>(client.dataset_size) /
                       client.cpu_freq_hz;
    const auto up = uplink_agg_latency_energy(s, k, d.bandwidth_hz[k]);
    c.tau_agg_s[i] = up.latency_s;
    c.client_energy_j[i] =
        client_local_energy(client, std::clamp(gamma, 0.0, 1.0), client.dataset_size, cl.energy_coeff) +
        up.energy_j;
  }
  const auto path = cluster_client_path(c.tau_local_s, c.tau_agg_s, w.coverage_s, c.n_handoffs);
  c.y_j_s = path.y_s;
  c.y_case = path.y_case;
  c.k_prime = path.k_prime;
  c.tau_c_s = cl.sync_delay_s + c.y_j_s;
  c.tau_s_s = cl.sync_delay_s + c.tau_rep_s;
  c.tau_j_s = std::max(c.tau_c_s, c.tau_s_s) + cl.glob_delay_s;
  return c;
}

inline void check_decision_shape(const Scenario& s, const DecisionVector& d) {
  if (d.alpha.size() != s.clients.size() || d.bandwidth_hz.size() != s.clients.size() ||
      d.sat_freq_hz.size() != s.clusters.size())
    throw InvalidArgument("decision vector does not match the scenario");
}

/// τ^round = max_j [max(τ_C,j, τ_S,j) + τ_glob,j] with the full per-cluster breakdown.
inline CostBreakdown round_latency(const Scenario& s, const DecisionVector& d) {
  check_decision_shape(s, d);
  CostBreakdown b;
  b.clusters.reserve(s.clusters.size());
  for (std::size_t j = 0; j < s.clusters.size(); ++j) {
    b.clusters.push_back(cluster_cost(s, j, d));
    b.tau_round_s = std::max(b.tau_round_s, b.clusters.back().tau_j_s);
  }
  return b;
}

}  // namespace orbitfed
