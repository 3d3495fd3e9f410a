#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "orbitfed/bisection.hpp"
#include "orbitfed/cost_model.hpp"
#include "orbitfed/error.hpp"
#include "orbitfed/scenario.hpp"

namespace orbitfed {

/// How the α-block treats the satellite frequency.
///  battery_coupled: every candidate A_j is scored with the best battery-feasible f_S(A_j);
///                   blocks only replace a cluster's variables when its latency does not grow.
///  fixed_frequency: the α-block keeps f_S fixed and applies no acceptance test.
enum class AlphaMode { battery_coupled, fixed_frequency };

struct OptimizerOptions {
  int iterations = 10;
  double early_stop_rel = 1e-6;
  BisectOptions bisect{};
  AlphaMode alpha_mode = AlphaMode::battery_coupled;
  std::optional<std::vector<double>> pinned_alpha;  ///< baselines: α fixed, f and b optimized
};

// ---------------------------------------------------------------------------
// Feasibility

struct ConstraintCheck {
  std::string id;        ///< "25b" ... "25j", or "coverage"
  long cluster = -1;     ///< cluster position, -1 when global
  long client = -1;      ///< client position, -1 when cluster-level
  double slack = 0.0;
  bool pass = true;
  bool report_only = false;
};

struct FeasibilityReport {
  std::vector<ConstraintCheck> checks;

  bool feasible() const {
    return std::all_of(checks.begin(), checks.end(),
                       [](const ConstraintCheck& c) { return c.pass || c.report_only; });
  }
  bool cluster_feasible(std::size_t j) const {
    return std::all_of(checks.begin(), checks.end(), [&](const ConstraintCheck& c) {
      return c.cluster != static_cast<long>(j) || c.pass || c.report_only;
    });
  }
  std::vector<ConstraintCheck> violations() const {
    std::vector<ConstraintCheck> out;
    for (const auto& c : checks)
      if (!c.pass && !c.report_only) out.push_back(c);
    return out;
  }
};

/// Optional learning-bound constraint U ≤ ε; reported, never enforced.
struct BoundCheck {
  double bound = 0.0;
  double epsilon = 0.0;
};

/// Smallest battery margin (residual − ψ) over the satellite roles that occur.
inline double battery_slack(const Scenario& s, std::size_t j, const SatelliteWork& w) {
  const auto& cl = s.clusters[j];
  double slack = satellite_residual(cl, satellite_dwell_and_energy(SatelliteRole::last, w)) -
                 cl.sat_min_residual_j;
  if (w.handoffs() > 0)
    slack = std::min(slack, satellite_residual(cl, satellite_dwell_and_energy(SatelliteRole::first_n, w)) -
                                cl.sat_min_residual_j);
  return slack;
}

namespace detail {
inline void check_cluster(const Scenario& s, std::size_t j, const DecisionVector& d,
                          FeasibilityReport& r) {
  const auto& cl = s.clusters[j];
  const long jj = static_cast<long>(j);
  auto add = [&](const char* id, long client, double slack) {
    r.checks.push_back({id, jj, client, slack, slack >= 0.0, false});
  };

  double a_sum = 0.0, cap = 0.0, b_sum = 0.0;
  for (auto k : s.members[j]) {
    const auto& c = s.clients[k];
    const long kk = static_cast<long>(k);
    const double n = static_cast<double>(c.dataset_size);
    add("25b", kk, std::min(d.alpha[k], c.max_offload_fraction - d.alpha[k]));
    add("25c", kk, 0.0);  // γ = 1 − α holds by construction
    a_sum += d.alpha[k] * n;
    cap += c.max_offload_fraction * n;
    b_sum += d.bandwidth_hz[k];
    double e = kInf;
    if (d.bandwidth_hz[k] > 0.0) {
      const double gamma = std::clamp(1.0 - d.alpha[k], 0.0, 1.0);
      e = client_local_energy(c, gamma, c.dataset_size, cl.energy_coeff) +
          uplink_agg_latency_energy(s, k, d.bandwidth_hz[k]).energy_j;
    }
    add("25f", kk, std::isfinite(e) ? c.energy_budget_j - e : -c.energy_budget_j);
  }
  const double f = d.sat_freq_hz[j];
  add("25d", -1, std::min(cl.sat_max_freq_hz - f, a_sum > 0.0 ? f : 0.0));
  add("25e", -1, cl.bandwidth_hz - b_sum);
  const double a_limit = std::isfinite(cl.max_offload_samples) ? cl.max_offload_samples : cap;
  add("25j", -1, a_limit - a_sum);

  const SatelliteWork w = satellite_work(s, j, a_sum, f);
  const double cover = w.coverage_s - w.tau_trans_s;
  add("coverage", -1, cover > 0.0 ? cover : std::min(cover, -1e-300));
  double bat = -cl.sat_initial_energy_j;
  if (cover > 0.0 && (f > 0.0 || a_sum == 0.0)) {
    try {
      bat = battery_slack(s, j, w);
    } catch (const Infeasible&) {
    }
  }
  add(cl.sun_facing ? "25g" : "25h", -1, bat);
}
}  // namespace detail

/// Evaluates every constraint with its slack (positive means satisfied with margin).
inline FeasibilityReport check_feasibility(const Scenario& s, const DecisionVector& d,
                                           const BoundCheck* bound = nullptr) {
  check_decision_shape(s, d);
  FeasibilityReport r;
  for (std::size_t j = 0; j < s.clusters.size(); ++j) detail::check_cluster(s, j, d, r);
  if (bound) {
    const double slack = bound->epsilon - bound->bound;
    r.checks.push_back({"25i", -1, -1, slack, slack >= 0.0, true});
  }
  return r;
}

inline bool cluster_feasible(const Scenario& s, std::size_t j, const DecisionVector& d) {
  FeasibilityReport r;
  detail::check_cluster(s, j, d, r);
  return r.feasible();
}

// ---------------------------------------------------------------------------
// Frequency block

struct FreqSolution {
  double freq_hz = 0.0;
  bool feasible = false;
  int branch = 0;  ///< 1: single-satellite bisection / f_max, 2: closed form, 3: closed form after
                   ///< the single-satellite range was energy-infeasible
  double battery_slack_j = 0.0;
  std::string reason;
};

/// min{f_max, cbrt(max{E_orig − E_trans + T·P_charge − ψ, 0} / (κ(T − τ_trans)))}.
inline double closed_form_frequency(const ClusterSpec& cl, double tau_trans_s, double e_trans_j) {
  const double T = cl.coverage_seconds();
  const double num = std::max(
      cl.sat_initial_energy_j - e_trans_j + T * cl.charge_power_w() - cl.sat_min_residual_j, 0.0);
  return std::min(cl.sat_max_freq_hz, std::cbrt(num / (cl.energy_coeff * (T - tau_trans_s))));
}

/// Largest battery-feasible satellite frequency for cluster j carrying A offloaded samples.
inline FreqSolution solve_freq_cluster(const Scenario& s, std::size_t j, double offloaded_samples,
                                       const BisectOptions& opt = {}) {
  const auto& cl = s.clusters[j];
  FreqSolution out;
  SatelliteWork w = satellite_work(s, j, offloaded_samples, cl.sat_max_freq_hz);
  const double T = w.coverage_s;
  const double tau = w.tau_trans_s;
  if (!(T > tau)) {
    out.reason = "coverage time does not exceed the ISL transfer time";
    return out;
  }
  const double cycles = w.cycles();
  const double p = cl.charge_power_w();
  const double e_tr = w.e_trans();
  auto slack_at = [&](double f) {
    w.freq_hz = f;
    return battery_slack(s, j, w);
  };

  double f = cl.sat_max_freq_hz;
  if (cycles <= 0.0) {
    out.branch = 1;
  } else {
    const double nu_l = cycles / (T - tau);
    if (cl.sat_max_freq_hz >= nu_l) {
      out.branch = 1;
      auto ok = [&](double x) {
        return cl.sat_initial_energy_j - cl.energy_coeff * cycles * x * x - e_tr +
                   (cycles / x + tau) * p >= cl.sat_min_residual_j;
      };
      if (!ok(cl.sat_max_freq_hz)) {
        if (ok(nu_l)) {
          f = bisect_last_true(ok, nu_l, cl.sat_max_freq_hz, opt).x;
        } else {
          out.branch = 3;
          f = closed_form_frequency(cl, tau, e_tr);
        }
      }
    } else {
      out.branch = 2;
      f = closed_form_frequency(cl, tau, e_tr);
    }
    if (!(f > 0.0)) {
      out.freq_hz = 0.0;
      out.battery_slack_j = cl.sat_initial_energy_j - e_tr + T * p - cl.sat_min_residual_j;
      out.reason = "battery cannot power any computation";
      return out;
    }
  }
  // Absorb rounding so the returned point is feasible under the exact ledger formulas.
  double slack = slack_at(f);
  for (int i = 0; i < 60 && slack < 0.0 && f > 0.0; ++i) {
    const double shrink = std::ldexp(1.0, -52 + i);
    if (shrink > 1e-6) break;
    const double g = f * (1.0 - shrink);
    const double sg = slack_at(g);
    if (sg < slack - 1e-6 * std::abs(slack) - 1e-9) break;  // not a rounding issue
    f = g;
    slack = sg;
  }
  out.freq_hz = f;
  out.battery_slack_j = slack;
  out.feasible = slack >= 0.0;
  if (!out.feasible) out.reason = "satellite battery constraint violated";
  return out;
}

/// Per-cluster frequencies for fixed α; throws Infeasible naming the first failing cluster.
inline std::vector<double> solve_freq(const Scenario& s, const std::vector<double>& alpha,
                                      const BisectOptions& opt = {}) {
  std::vector<double> f(s.clusters.size());
  for (std::size_t j = 0; j < s.clusters.size(); ++j) {
    const auto sol = solve_freq_cluster(s, j, cluster_offloaded_samples(s, j, alpha), opt);
    if (!sol.feasible)
      throw Infeasible("cluster " + std::to_string(s.clusters[j].id) + ": " + sol.reason +
                       " (slack " + std::to_string(sol.battery_slack_j) + " J)");
    f[j] = sol.freq_hz;
  }
  return f;
}

// ---------------------------------------------------------------------------
// α block

namespace detail {

/// Per-member data of the within-cluster α problem.
struct AlphaProblem {
  std::vector<double> c;     ///< local compute seconds at α = 0: m|D|/f
  std::vector<double> size;  ///< |D|
  std::vector<double> lo, hi;
  std::vector<double> agg;   ///< τ_agg
  double coverage_s = 0.0;
  std::int64_t n_handoffs = 0;

  double sum(const std::vector<double>& a) const {
    double t = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) t += a[i] * size[i];
    return t;
  }
  std::vector<double> local(const std::vector<double>& a) const {
    std::vector<double> t(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) t[i] = c[i] * (1.0 - a[i]);
    return t;
  }
  ClientPath path(const std::vector<double>& a) const {
    const auto t = local(a);
    return cluster_client_path(t, agg, coverage_s, n_handoffs);
  }
};

/// Smallest α_k meeting the client energy budget with bandwidth b_k; > α^max when impossible.
inline double client_alpha_floor(const Scenario& s, std::size_t k, double bandwidth_hz) {
  const auto& c = s.clients[k];
  const auto& cl = s.clusters[s.cluster_of[k]];
  if (!(bandwidth_hz > 0.0)) return kInf;
  const double e_agg = uplink_agg_latency_energy(s, k, bandwidth_hz).energy_j;
  const double full = client_local_energy(c, 1.0, c.dataset_size, cl.energy_coeff);
  const double room = c.energy_budget_j - e_agg;
  if (!(room > 0.0)) return kInf;
  if (full <= room) return 0.0;
  double lo = 1.0 - room / full;
  auto energy = [&](double a) {
    return client_local_energy(c, std::clamp(1.0 - a, 0.0, 1.0), c.dataset_size, cl.energy_coeff) + e_agg;
  };
  for (int i = 0; i < 64 && energy(lo) > c.energy_budget_j; ++i) lo = std::nextafter(lo, 2.0);
  return lo;
}

inline AlphaProblem make_alpha_problem(const Scenario& s, std::size_t j, double offloaded_samples,
                                       double freq_hz, const std::vector<double>& bandwidth) {
  AlphaProblem p;
  const auto& mem = s.members[j];
  for (auto k : mem) {
    const auto& c = s.clients[k];
    const double n = static_cast<double>(c.dataset_size);
    p.c.push_back(c.cycles_per_sample * n / c.cpu_freq_hz);
    p.size.push_back(n);
    p.lo.push_back(client_alpha_floor(s, k, bandwidth[k]));
    p.hi.push_back(c.max_offload_fraction);
    p.agg.push_back(bandwidth[k] > 0.0 ? uplink_agg_latency_energy(s, k, bandwidth[k]).latency_s : kInf);
  }
  const SatelliteWork w = satellite_work(s, j, offloaded_samples, freq_hz);
  p.coverage_s = w.coverage_s;
  p.n_handoffs = w.handoffs();
  return p;
}

/// α_k(ν) = clamp(1 − ν/c_k, lo_k, hi_k) with Σα|D| = A; equalizes local compute time
/// among unclamped members. The bracket ends are blended so the sum is exact.
inline std::vector<double> waterfill(const AlphaProblem& p, const std::vector<double>& lo, double A,
                                     const BisectOptions& opt) {
  const std::size_t m = p.c.size();
  auto alpha_at = [&](double nu) {
    std::vector<double> a(m);
    for (std::size_t i = 0; i < m; ++i) a[i] = std::clamp(1.0 - nu / p.c[i], lo[i], p.hi[i]);
    return a;
  };
  const double s_lo = p.sum(lo);
  const double s_hi = p.sum(p.hi);
  if (A <= s_lo) return lo;
  if (A >= s_hi) return p.hi;
  const double cmax = *std::max_element(p.c.begin(), p.c.end());
  const auto r = bisect_last_true([&](double nu) { return p.sum(alpha_at(nu)) >= A; }, 0.0, cmax, opt);
  auto good = alpha_at(r.lower);
  const auto bad = alpha_at(r.upper);
  const double sg = p.sum(good);
  const double sb = p.sum(bad);
  if (!(sg > sb)) return good;
  const double theta = std::clamp((A - sb) / (sg - sb), 0.0, 1.0);
  for (std::size_t i = 0; i < m; ++i)
    good[i] = std::clamp(bad[i] + theta * (good[i] - bad[i]), lo[i], p.hi[i]);
  return good;
}

inline std::vector<double> solve_alpha_problem(const AlphaProblem& p, double A, const BisectOptions& opt) {
  auto a1 = waterfill(p, p.lo, A, opt);
  const auto y1 = p.path(a1);
  if (y1.y_case == 1) return a1;

  // Case-2 attempt at the smallest reachable slot n*: require max(T n*, t_k) + τ_agg,k ≤ ν.
  const double T = p.coverage_s;
  const auto t1 = p.local(a1);
  const double n = std::floor(*std::max_element(t1.begin(), t1.end()) / T);
  const double a_max = *std::max_element(p.agg.begin(), p.agg.end());
  const double nu_lo = T * n + a_max;
  const double nu_hi = T * (n + 1.0);
  if (!(nu_lo <= nu_hi)) return a1;
  auto floors = [&](double nu) {
    std::vector<double> lo2(p.c.size());
    for (std::size_t i = 0; i < lo2.size(); ++i)
      lo2[i] = std::max(p.lo[i], 1.0 - (nu - p.agg[i]) / p.c[i]);
    return lo2;
  };
  auto reachable = [&](double nu) {
    const auto lo2 = floors(nu);
    for (std::size_t i = 0; i < lo2.size(); ++i)
      if (lo2[i] > p.hi[i]) return false;
    return p.sum(lo2) <= A;
  };
  if (!reachable(nu_hi)) return a1;
  double nu = nu_lo;
  if (!reachable(nu_lo))
    nu = bisect_last_true([&](double x) { return !reachable(x); }, nu_lo, nu_hi, opt).upper;
  const auto a2 = waterfill(p, floors(nu), A, opt);
  return p.path(a2).y_s < y1.y_s ? a2 : a1;
}

}  // namespace detail

/// Per-member α of cluster j minimizing Y_j for a given offload total A (Σα|D| = A),
/// with f_S and b fixed. Bounds: client energy floor ≤ α_k ≤ α_k^max.
inline std::vector<double> solve_alpha_within_cluster(const Scenario& s, std::size_t j, double A,
                                                      double freq_hz,
                                                      const std::vector<double>& bandwidth,
                                                      const BisectOptions& opt = {}) {
  const auto p = detail::make_alpha_problem(s, j, A, freq_hz, bandwidth);
  for (std::size_t i = 0; i < p.lo.size(); ++i)
    if (p.lo[i] > p.hi[i]) throw Infeasible("client energy budget cannot be met at any offload fraction");
  const double a_min = p.sum(p.lo);
  const double a_max = std::min(p.sum(p.hi), s.clusters[j].max_offload_samples);
  const double tol = 1e-9 * std::max(1.0, a_max);
  if (A > a_max + tol) throw InvalidArgument("A_j exceeds aggregate capacity");
  if (A < a_min - tol) throw Infeasible("A_j below the clients' energy floors");
  return detail::solve_alpha_problem(p, std::clamp(A, a_min, a_max), opt);
}

namespace detail {

struct ClusterChoice {
  bool feasible = false;
  double offloaded = 0.0;
  std::vector<double> alpha;  ///< per member
  double freq_hz = 0.0;
  double y_s = kInf;
  double tau_rep_s = kInf;
  double tau_j_s = kInf;
  double t_max_s = kInf;
  double tn_s = 0.0;  ///< T·N_j
};

inline void write_cluster(const Scenario& s, std::size_t j, const ClusterChoice& c, DecisionVector& d) {
  const auto& mem = s.members[j];
  for (std::size_t i = 0; i < mem.size(); ++i) d.alpha[mem[i]] = c.alpha[i];
  d.sat_freq_hz[j] = c.freq_hz;
}

/// Clips Σα|D| back under A^max if blending rounded it just above.
inline void respect_offload_limit(const Scenario& s, std::size_t j, std::vector<double>& a) {
  const double limit = s.clusters[j].max_offload_samples;
  if (!std::isfinite(limit)) return;
  const auto& mem = s.members[j];
  for (int it = 0; it < 8; ++it) {
    double sum = 0.0;
    for (std::size_t i = 0; i < mem.size(); ++i) sum += a[i] * static_cast<double>(s.clients[mem[i]].dataset_size);
    if (sum <= limit) return;
    const auto i = static_cast<std::size_t>(std::max_element(a.begin(), a.end()) - a.begin());
    const double n = static_cast<double>(s.clients[mem[i]].dataset_size);
    a[i] = std::max(0.0, a[i] - (sum - limit) / n - 4.0 * std::numeric_limits<double>::epsilon());
  }
}

/// Algorithm-2 search over the offload total of one cluster.
inline std::optional<ClusterChoice> alpha_block_cluster(const Scenario& s, std::size_t j,
                                                        const DecisionVector& d,
                                                        const OptimizerOptions& opt) {
  const auto& cl = s.clusters[j];
  const bool coupled = opt.alpha_mode == AlphaMode::battery_coupled;
  AlphaProblem base = make_alpha_problem(s, j, 0.0, d.sat_freq_hz[j], d.bandwidth_hz);
  for (std::size_t i = 0; i < base.lo.size(); ++i)
    if (base.lo[i] > base.hi[i]) return std::nullopt;
  const double a_lo = base.sum(base.lo);
  const double a_hi = std::min(base.sum(base.hi), cl.max_offload_samples);
  if (a_lo > a_hi) return std::nullopt;

  std::map<double, ClusterChoice> cache;
  auto eval = [&](double A) -> const ClusterChoice& {
    if (auto it = cache.find(A); it != cache.end()) return it->second;
    ClusterChoice c;
    c.offloaded = A;
    double f = d.sat_freq_hz[j];
    bool ok = true;
    if (coupled) {
      const auto fs = solve_freq_cluster(s, j, A, opt.bisect);
      ok = fs.feasible;
      f = fs.freq_hz;
    }
    const SatelliteWork w = satellite_work(s, j, A, f);
    if (!(w.coverage_s > w.tau_trans_s) || (A > 0.0 && !(f > 0.0))) ok = false;
    if (ok) {
      AlphaProblem p = base;
      p.n_handoffs = w.handoffs();
      c.alpha = solve_alpha_problem(p, A, opt.bisect);
      respect_offload_limit(s, j, c.alpha);
      const auto path = p.path(c.alpha);
      const auto t = p.local(c.alpha);
      c.feasible = true;
      c.freq_hz = f;
      c.y_s = path.y_s;
      c.tau_rep_s = satellite_step_latency(w);
      c.tau_j_s = std::max(c.y_s, c.tau_rep_s) + cl.sync_delay_s + cl.glob_delay_s;
      c.t_max_s = *std::max_element(t.begin(), t.end());
      c.tn_s = w.coverage_s * static_cast<double>(p.n_handoffs);
    }
    return cache.emplace(A, std::move(c)).first->second;
  };

  // A^up: where the slowest client stops outlasting the N_j full satellite windows.
  auto before_up = [&](double A) {
    const auto& c = eval(A);
    return c.feasible && c.t_max_s > c.tn_s;
  };
  const double a_up = bisect_last_true(before_up, a_lo, a_hi, opt.bisect).x;
  // Push A up while the client path is still the bottleneck.
  auto client_bound = [&](double A) {
    const auto& c = eval(A);
    return c.feasible && c.y_s >= c.tau_rep_s;
  };
  const auto r = bisect_last_true(client_bound, a_lo, a_up, opt.bisect);

  const ClusterChoice* best = nullptr;
  for (double A : {r.x, r.lower, r.upper}) {
    const auto& c = eval(A);
    if (c.feasible && (!best || c.tau_j_s < best->tau_j_s)) best = &c;
  }
  if (!best) return std::nullopt;
  return *best;
}

inline double cluster_latency_or_inf(const Scenario& s, std::size_t j, const DecisionVector& d) {
  try {
    return cluster_cost(s, j, d).tau_j_s;
  } catch (const Infeasible&) {
    return kInf;
  }
}

/// Copies cluster j's variables from `cand` into `cur` when that keeps it feasible and not slower.
inline bool accept_if_not_worse(const Scenario& s, std::size_t j, DecisionVector& cur,
                                const DecisionVector& cand) {
  DecisionVector trial = cur;
  for (auto k : s.members[j]) {
    trial.alpha[k] = cand.alpha[k];
    trial.bandwidth_hz[k] = cand.bandwidth_hz[k];
  }
  trial.sat_freq_hz[j] = cand.sat_freq_hz[j];
  if (!cluster_feasible(s, j, trial)) return false;
  const bool cur_ok = cluster_feasible(s, j, cur);
  if (cur_ok && cluster_latency_or_inf(s, j, trial) > cluster_latency_or_inf(s, j, cur)) return false;
  cur = std::move(trial);
  return true;
}

}  // namespace detail

/// α-block. In battery-coupled mode the returned decision also carries f_S(A_j) for the
/// chosen offload totals. Clusters without any feasible candidate keep their inputs.
inline DecisionVector solve_alpha(const Scenario& s, const DecisionVector& d,
                                  const OptimizerOptions& opt = {}) {
  check_decision_shape(s, d);
  DecisionVector out = d;
  for (std::size_t j = 0; j < s.clusters.size(); ++j) {
    const auto choice = detail::alpha_block_cluster(s, j, d, opt);
    if (choice) detail::write_cluster(s, j, *choice, out);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bandwidth block

namespace detail {

/// Smallest b ≤ cap with upload time ≤ target; +inf when not reachable within cap.
inline double bandwidth_for_latency(double gain, double size_bits, double target_s, double cap,
                                    const BisectOptions& opt) {
  if (!(target_s > 0.0)) return kInf;
  auto too_slow = [&](double b) { return size_bits / uplink_rate(b, gain) > target_s; };
  if (too_slow(cap)) return kInf;
  const double tiny = cap * 1e-12;
  if (!too_slow(tiny)) return tiny;
  return bisect_last_true(too_slow, tiny, cap, opt).upper;
}

}  // namespace detail

/// Bandwidth of cluster j's members (Algorithm-4 equalization); throws Infeasible when the
/// client energy floors do not fit in B_j.
inline std::vector<double> solve_bandwidth_cluster(const Scenario& s, std::size_t j,
                                                   const std::vector<double>& alpha, double freq_hz,
                                                   const BisectOptions& opt = {}) {
  const auto& cl = s.clusters[j];
  const auto& mem = s.members[j];
  const std::size_t m = mem.size();
  const double B = cl.bandwidth_hz;
  const double S = s.footprint.size_bits();

  std::vector<double> gain(m), t(m), b_min(m);
  for (std::size_t i = 0; i < m; ++i) {
    const auto k = mem[i];
    const auto& c = s.clients[k];
    gain[i] = uplink_gain(c.tx_power_w, s.client_distance(k), cl.pathloss_exponent,
                          cl.noise_density_w_per_hz);
    const double gamma = std::clamp(1.0 - alpha[k], 0.0, 1.0);
    t[i] = c.cycles_per_sample * gamma * static_cast<double>(c.dataset_size) / c.cpu_freq_hz;
    const double e_local = client_local_energy(c, gamma, c.dataset_size, cl.energy_coeff);
    b_min[i] = detail::bandwidth_for_latency(gain[i], S, (c.energy_budget_j - e_local) / c.tx_power_w, B, opt);
    // Rounding guard: make the energy budget hold under the exact formula.
    for (int it = 0; it < 64 && std::isfinite(b_min[i]); ++it) {
      if (e_local + uplink_agg_latency_energy(s, k, b_min[i]).energy_j <= c.energy_budget_j) break;
      b_min[i] = std::nextafter(b_min[i], kInf);
    }
  }
  double floor_sum = 0.0;
  for (double b : b_min) floor_sum += b;
  if (!(floor_sum <= B))
    throw Infeasible("cluster " + std::to_string(cl.id) + ": minimum bandwidths exceed B_j");

  const double A = cluster_offloaded_samples(s, j, alpha);
  const SatelliteWork w = satellite_work(s, j, A, freq_hz);
  const double T = w.coverage_s;
  const double tn = T * static_cast<double>(w.handoffs());
  const double t_max = *std::max_element(t.begin(), t.end());

  std::vector<double> x(m, 0.0), floors = b_min;
  if (t_max > tn) {
    // Case-2 geometry: uploads to the satellite present when the slowest client finishes.
    const double n = std::floor(t_max / T);
    std::vector<double> x2(m), f2(m);
    double sum2 = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      x2[i] = std::max(T * n, t[i]);
      const double b_low = detail::bandwidth_for_latency(gain[i], S, T * (n + 1.0) - x2[i], B, opt);
      f2[i] = std::max(b_min[i], b_low);
      sum2 += f2[i];
    }
    if (sum2 <= B) {
      x = x2;
      floors = f2;
    }
  }

  // The equalization searches are cheap; run them near machine precision so Σb reaches B_j.
  BisectOptions fine = opt;
  fine.eps_rel = std::min(opt.eps_rel, 1e-13);
  auto alloc = [&](double nu) {
    std::vector<double> b(m);
    for (std::size_t i = 0; i < m; ++i)
      b[i] = std::max(floors[i], detail::bandwidth_for_latency(gain[i], S, nu - x[i], B, fine));
    return b;
  };
  auto total = [](const std::vector<double>& b) {
    double sum = 0.0;
    for (double v : b) sum += v;
    return sum;
  };
  double nu_l = *std::max_element(x.begin(), x.end());
  double nu_u = 0.0;
  for (std::size_t i = 0; i < m; ++i) nu_u = std::max(nu_u, x[i] + S / uplink_rate(floors[i], gain[i]));
  // Bisect on the offset above ν_L so the tolerance scales with τ_agg, not with X_k.
  const auto r = bisect_last_true([&](double t) { return total(alloc(nu_l + t)) > B; }, 0.0, nu_u - nu_l, fine);
  auto b = alloc(r.status == BisectStatus::at_upper ? nu_u : nu_l + r.upper);
  if (total(b) > B) b = floors;
  return b;
}

inline std::vector<double> solve_bandwidth(const Scenario& s, const std::vector<double>& alpha,
                                           const std::vector<double>& freq_hz,
                                           const BisectOptions& opt = {}) {
  std::vector<double> b(s.clients.size(), 0.0);
  for (std::size_t j = 0; j < s.clusters.size(); ++j) {
    const auto bj = solve_bandwidth_cluster(s, j, alpha, freq_hz[j], opt);
    for (std::size_t i = 0; i < bj.size(); ++i) b[s.members[j][i]] = bj[i];
  }
  return b;
}

// ---------------------------------------------------------------------------
// Block-coordinate descent

struct TraceEntry {
  int iteration = 0;
  std::string block;  ///< "init", "alpha", "freq", "bandwidth"
  double tau_round_s = 0.0;
};

struct OptimizeResult {
  DecisionVector decision;
  std::vector<TraceEntry> trace;
  CostBreakdown cost;
  FeasibilityReport feasibility;
  int iterations = 0;
  bool early_stopped = false;
};

/// α = α^max/2 (or the pinned α), f_S from the frequency block, equal bandwidth split
/// (re-solved when it breaks a client's energy budget).
inline DecisionVector initial_decision(const Scenario& s, const OptimizerOptions& opt = {}) {
  DecisionVector d;
  const std::size_t K = s.clients.size();
  d.alpha.assign(K, 0.0);
  d.bandwidth_hz.assign(K, 0.0);
  d.sat_freq_hz.assign(s.clusters.size(), 0.0);
  if (opt.pinned_alpha) {
    if (opt.pinned_alpha->size() != K) throw InvalidArgument("pinned alpha has wrong size");
    d.alpha = *opt.pinned_alpha;
  }
  for (std::size_t j = 0; j < s.clusters.size(); ++j) {
    const auto& cl = s.clusters[j];
    const auto& mem = s.members[j];
    for (auto k : mem) d.bandwidth_hz[k] = cl.bandwidth_hz / static_cast<double>(mem.size());
    if (!opt.pinned_alpha) {
      for (auto k : mem) {
        const double lo = detail::client_alpha_floor(s, k, d.bandwidth_hz[k]);
        d.alpha[k] = std::max(0.5 * s.clients[k].max_offload_fraction, std::min(lo, s.clients[k].max_offload_fraction));
      }
      double A = cluster_offloaded_samples(s, j, d.alpha);
      if (A > cl.max_offload_samples) {
        const double scale = cl.max_offload_samples / A;
        for (auto k : mem) d.alpha[k] *= scale;
      }
    }
    auto fs = solve_freq_cluster(s, j, cluster_offloaded_samples(s, j, d.alpha), opt.bisect);
    if (!fs.feasible && !opt.pinned_alpha) {
      for (auto k : mem)
        d.alpha[k] = std::min(detail::client_alpha_floor(s, k, d.bandwidth_hz[k]), s.clients[k].max_offload_fraction);
      fs = solve_freq_cluster(s, j, cluster_offloaded_samples(s, j, d.alpha), opt.bisect);
    }
    if (!fs.feasible)
      throw Infeasible("cluster " + std::to_string(cl.id) + ": no feasible initial frequency (" + fs.reason + ")");
    d.sat_freq_hz[j] = fs.freq_hz;
    if (!cluster_feasible(s, j, d)) {
      const auto bj = solve_bandwidth_cluster(s, j, d.alpha, d.sat_freq_hz[j], opt.bisect);
      for (std::size_t i = 0; i < mem.size(); ++i) d.bandwidth_hz[mem[i]] = bj[i];
    }
  }
  return d;
}

/// Runs up to `iterations` rounds of α → f_S → b block updates and records τ^round after
/// every block.
inline OptimizeResult optimize(const Scenario& s, const OptimizerOptions& opt = {},
                               std::optional<DecisionVector> init = std::nullopt) {
  OptimizeResult res;
  DecisionVector d = init ? *init : initial_decision(s, opt);
  check_decision_shape(s, d);
  if (opt.pinned_alpha) d.alpha = *opt.pinned_alpha;
  const bool guarded = opt.alpha_mode == AlphaMode::battery_coupled;

  auto record = [&](int it, const char* block) {
    double tau = kInf;
    try {
      tau = round_latency(s, d).tau_round_s;
    } catch (const Infeasible&) {
    }
    res.trace.push_back({it, block, tau});
    return tau;
  };
  auto halt_if_infeasible = [&](const char* block) {
    auto rep = check_feasibility(s, d);
    if (!rep.feasible()) {
      std::string msg = std::string(block) + " block produced an infeasible decision:";
      for (const auto& v : rep.violations())
        msg += " " + v.id + "(cluster " + std::to_string(v.cluster) + ", slack " + std::to_string(v.slack) + ")";
      throw Infeasible(msg);
    }
  };

  double tau = record(0, "init");
  for (int it = 1; it <= opt.iterations; ++it) {
    const double before = tau;

    if (!opt.pinned_alpha) {
      DecisionVector cand = solve_alpha(s, d, opt);
      if (guarded) {
        for (std::size_t j = 0; j < s.clusters.size(); ++j) detail::accept_if_not_worse(s, j, d, cand);
      } else {
        d = std::move(cand);
      }
      tau = record(it, "alpha");
    }

    {
      DecisionVector cand = d;
      for (std::size_t j = 0; j < s.clusters.size(); ++j) {
        const auto fs = solve_freq_cluster(s, j, cluster_offloaded_samples(s, j, d.alpha), opt.bisect);
        if (fs.feasible) {
          cand.sat_freq_hz[j] = fs.freq_hz;
        } else if (!guarded) {
          throw Infeasible("frequency block: cluster " + std::to_string(s.clusters[j].id) + ": " + fs.reason);
        }
      }
      if (guarded) {
        for (std::size_t j = 0; j < s.clusters.size(); ++j) detail::accept_if_not_worse(s, j, d, cand);
      } else {
        d = std::move(cand);
      }
      tau = record(it, "freq");
    }

    {
      DecisionVector cand = d;
      for (std::size_t j = 0; j < s.clusters.size(); ++j) {
        try {
          const auto bj = solve_bandwidth_cluster(s, j, d.alpha, d.sat_freq_hz[j], opt.bisect);
          for (std::size_t i = 0; i < bj.size(); ++i) cand.bandwidth_hz[s.members[j][i]] = bj[i];
        } catch (const Infeasible&) {
          if (!guarded) throw;
        }
      }
      if (guarded) {
        for (std::size_t j = 0; j < s.clusters.size(); ++j) detail::accept_if_not_worse(s, j, d, cand);
      } else {
        d = std::move(cand);
        halt_if_infeasible("bandwidth");
      }
      tau = record(it, "bandwidth");
    }

    res.iterations = it;
    if (std::isfinite(before) && before - tau < opt.early_stop_rel * before) {
      res.early_stopped = it < opt.iterations;
      break;
    }
  }

  res.decision = d;
  res.cost = round_latency(s, d);
  res.feasibility = check_feasibility(s, d);
  return res;
}

}  // namespace orbitfed
