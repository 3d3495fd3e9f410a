#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "orbitfed/coverage.hpp"
#include "orbitfed/dataset.hpp"
#include "orbitfed/error.hpp"
#include "orbitfed/rng.hpp"

namespace orbitfed {

/// Inter-satellite link budget; the rate is B log2(1 + p Grx Gtx / (Z N0)).
struct IslLinkParams {
  double bandwidth_hz = 0.0;
  double rx_gain = 1.0;
  double tx_gain = 1.0;
  double pathloss = 1.0;
  double noise_density_w_per_hz = 0.0;
  double tx_power_w = 0.0;
};

/// Bits moved over the air for one model and one training sample.
struct ModelFootprint {
  std::size_t param_count = 0;
  int bits_per_param = 32;
  double sample_bits = 6272.0;  // one 28x28 8-bit image

  double size_bits() const noexcept {
    return static_cast<double>(bits_per_param) * static_cast<double>(param_count);
  }
};

/// Dense layer widths [inputs, hidden..., classes].
using ModelLayout = std::vector<std::size_t>;

inline std::size_t layout_param_count(const ModelLayout& layout) {
  if (layout.size() < 2) throw InvalidArgument("model layout needs at least input and output");
  std::size_t n = 0;
  for (std::size_t l = 1; l < layout.size(); ++l) {
    if (layout[l - 1] == 0 || layout[l] == 0) throw InvalidArgument("zero-width layer");
    n += layout[l - 1] * layout[l] + layout[l];
  }
  return n;
}

struct ClientProfile {
  int id = 0;
  int cluster_id = 0;
  double cpu_freq_hz = 2e8;
  double cycles_per_sample = 3e7;
  double tx_power_w = 0.2;
  double max_offload_fraction = 0.8;
  double energy_budget_j = 10.0;
  std::size_t dataset_size = 0;        ///< |D_k|
  std::optional<double> distance_m;    ///< overrides the cluster's shared uplink distance
};

/// Per-client sample bookkeeping; indices point into Scenario::train.
struct DatasetHandle {
  IndexList sensitive;
  IndexList nonsensitive;
  IndexList offloaded;
  IndexList retained;

  std::size_t size() const noexcept { return sensitive.size() + nonsensitive.size(); }
};

struct ClusterSpec {
  int id = 0;
  std::vector<int> client_ids;
  double bandwidth_hz = 10e6;
  bool sun_facing = false;
  double sun_power_w = 0.0;
  double sat_max_freq_hz = 1e10;
  double sat_cycles_per_sample = 3e7;
  double sat_tx_power_w = 10.0;
  std::optional<double> isl_rate_bps = 3.125e6;
  std::optional<IslLinkParams> isl_link;
  double sat_initial_energy_j = 500.0;
  double sat_min_residual_j = 100.0;
  CoverageSchedule coverage = CoverageSchedule::fixed(360.0);
  double glob_delay_s = 1.0;
  double sync_delay_s = 1.0;
  double max_offload_samples = std::numeric_limits<double>::infinity();
  double pathloss_exponent = 2.0;
  double noise_density_w_per_hz = 3.98e-21;
  double sat_distance_m = 784e3;
  double energy_coeff = 1e-28;

  /// T used by the latency model (mean dwell for explicit schedules).
  double coverage_seconds() const noexcept { return coverage.mean(); }
  double charge_power_w() const noexcept { return sun_facing ? sun_power_w : 0.0; }
};

struct Scenario {
  std::string name = "scenario";
  std::vector<ClientProfile> clients;
  std::vector<ClusterSpec> clusters;
  ModelLayout layout;
  ModelFootprint footprint;

  std::shared_ptr<const SampleSet> train;  ///< null for cost-only scenarios
  std::shared_ptr<const SampleSet> test;
  std::vector<DatasetHandle> data;         ///< per client position, empty without data

  // Filled by validate_scenario.
  std::vector<std::vector<std::size_t>> members;  ///< client positions per cluster
  std::vector<std::size_t> cluster_of;            ///< cluster position per client

  bool has_data() const noexcept { return train != nullptr && !data.empty(); }

  double cluster_samples(std::size_t j) const {
    double s = 0.0;
    for (auto k : members[j]) s += static_cast<double>(clients[k].dataset_size);
    return s;
  }

  /// Largest Σα|D| allowed in cluster j, combining A^max and per-client α^max.
  double offload_capacity(std::size_t j) const {
    double cap = 0.0;
    for (auto k : members[j])
      cap += clients[k].max_offload_fraction * static_cast<double>(clients[k].dataset_size);
    return std::min(cap, clusters[j].max_offload_samples);
  }

  double client_distance(std::size_t k) const {
    return clients[k].distance_m.value_or(clusters[cluster_of[k]].sat_distance_m);
  }

  /// Union of the offloaded sets of cluster j, in client order.
  IndexList satellite_dataset(std::size_t j) const {
    IndexList out;
    if (data.empty()) return out;
    for (auto k : members[j]) out.insert(out.end(), data[k].offloaded.begin(), data[k].offloaded.end());
    return out;
  }
};

namespace detail {
inline void require_positive(std::vector<std::string>& problems, const std::string& what,
                             double v) {
  if (!(v > 0.0) || !std::isfinite(v)) problems.push_back(what + " must be positive and finite");
}
}  // namespace detail

/// Checks every invariant, resolves cluster membership and returns the validated scenario.
/// All problems are collected before throwing.
inline Scenario validate_scenario(Scenario s) {
  std::vector<std::string> problems;
  using detail::require_positive;

  if (s.clusters.empty()) problems.push_back("no clusters");
  if (s.clients.empty()) problems.push_back("no clients");

  std::map<int, std::size_t> client_pos;
  for (std::size_t k = 0; k < s.clients.size(); ++k) {
    const auto& c = s.clients[k];
    const std::string tag = "client " + std::to_string(c.id);
    if (!client_pos.emplace(c.id, k).second) problems.push_back("duplicate client id " + std::to_string(c.id));
    require_positive(problems, tag + " cpu_freq_hz", c.cpu_freq_hz);
    require_positive(problems, tag + " cycles_per_sample", c.cycles_per_sample);
    require_positive(problems, tag + " tx_power_w", c.tx_power_w);
    require_positive(problems, tag + " energy_budget_j", c.energy_budget_j);
    if (!(c.max_offload_fraction >= 0.0 && c.max_offload_fraction <= 1.0))
      problems.push_back(tag + ": offload fraction out of range");
    if (c.dataset_size == 0) problems.push_back(tag + ": empty dataset");
    if (c.distance_m) require_positive(problems, tag + " distance_m", *c.distance_m);
  }

  std::map<int, std::size_t> cluster_pos;
  std::vector<int> owner(s.clients.size(), -1);
  s.members.assign(s.clusters.size(), {});
  for (std::size_t j = 0; j < s.clusters.size(); ++j) {
    const auto& cl = s.clusters[j];
    const std::string tag = "cluster " + std::to_string(cl.id);
    if (!cluster_pos.emplace(cl.id, j).second) problems.push_back("duplicate cluster id " + std::to_string(cl.id));
    if (cl.client_ids.empty()) problems.push_back(tag + ": empty cluster");
    for (int id : cl.client_ids) {
      auto it = client_pos.find(id);
      if (it == client_pos.end()) {
        problems.push_back(tag + ": unknown client " + std::to_string(id));
        continue;
      }
      if (owner[it->second] >= 0) {
        problems.push_back("client " + std::to_string(id) + " assigned to multiple clusters");
        continue;
      }
      owner[it->second] = static_cast<int>(j);
      s.members[j].push_back(it->second);
      if (s.clients[it->second].cluster_id != cl.id)
        problems.push_back("client " + std::to_string(id) + " cluster_id disagrees with " + tag);
    }
    require_positive(problems, tag + " bandwidth_hz", cl.bandwidth_hz);
    require_positive(problems, tag + " sat_max_freq_hz", cl.sat_max_freq_hz);
    require_positive(problems, tag + " sat_cycles_per_sample", cl.sat_cycles_per_sample);
    require_positive(problems, tag + " sat_tx_power_w", cl.sat_tx_power_w);
    require_positive(problems, tag + " sat_initial_energy_j", cl.sat_initial_energy_j);
    require_positive(problems, tag + " pathloss_exponent", cl.pathloss_exponent);
    require_positive(problems, tag + " noise_density_w_per_hz", cl.noise_density_w_per_hz);
    require_positive(problems, tag + " sat_distance_m", cl.sat_distance_m);
    require_positive(problems, tag + " energy_coeff", cl.energy_coeff);
    require_positive(problems, tag + " coverage_seconds", cl.coverage_seconds());
    if (!(cl.sat_min_residual_j >= 0.0)) problems.push_back(tag + ": sat_min_residual_j negative");
    if (cl.sat_min_residual_j > cl.sat_initial_energy_j)
      problems.push_back(tag + ": sat_min_residual_j exceeds sat_initial_energy_j");
    if (cl.sun_facing && !(cl.sun_power_w > 0.0))
      problems.push_back(tag + ": sun_power_w must be positive for a sun-facing cluster");
    if (!(cl.glob_delay_s >= 0.0) || !(cl.sync_delay_s >= 0.0))
      problems.push_back(tag + ": negative fixed delay");
    if (!(cl.max_offload_samples >= 0.0)) problems.push_back(tag + ": negative max_offload_samples");
    if (cl.isl_link) {
      const auto& l = *cl.isl_link;
      for (double v : {l.bandwidth_hz, l.rx_gain, l.tx_gain, l.pathloss, l.noise_density_w_per_hz,
                       l.tx_power_w})
        if (!(v > 0.0)) {
          problems.push_back(tag + ": isl_link parameters must be positive");
          break;
        }
    } else if (!cl.isl_rate_bps) {
      problems.push_back(tag + ": needs isl_rate_bps or isl_link");
    } else {
      require_positive(problems, tag + " isl_rate_bps", *cl.isl_rate_bps);
    }
  }
  for (std::size_t k = 0; k < s.clients.size(); ++k)
    if (owner[k] < 0) problems.push_back("client " + std::to_string(s.clients[k].id) + " assigned to no cluster");

  if (s.footprint.bits_per_param <= 0) problems.push_back("bits_per_param must be positive");
  if (!(s.footprint.sample_bits > 0.0)) problems.push_back("sample_bits must be positive");
  if (!s.layout.empty()) {
    try {
      if (s.footprint.param_count != layout_param_count(s.layout))
        problems.push_back("footprint param_count disagrees with the model layout");
    } catch (const InvalidArgument& e) {
      problems.push_back(e.what());
    }
  }

  if (!s.data.empty()) {
    if (s.data.size() != s.clients.size()) {
      problems.push_back("dataset handles do not match client count");
    } else if (!s.train) {
      problems.push_back("dataset handles without a training corpus");
    } else {
      for (std::size_t k = 0; k < s.clients.size(); ++k) {
        const auto& d = s.data[k];
        const std::string tag = "client " + std::to_string(s.clients[k].id);
        if (d.size() != s.clients[k].dataset_size)
          problems.push_back(tag + ": dataset_size disagrees with its samples");
        std::set<std::size_t> sens(d.sensitive.begin(), d.sensitive.end());
        for (auto i : d.nonsensitive)
          if (sens.count(i)) {
            problems.push_back(tag + ": sensitive and nonsensitive sets overlap");
            break;
          }
        for (auto i : d.sensitive)
          if (i >= s.train->size()) {
            problems.push_back(tag + ": sample index out of range");
            break;
          }
        for (auto i : d.nonsensitive)
          if (i >= s.train->size()) {
            problems.push_back(tag + ": sample index out of range");
            break;
          }
      }
    }
  }

  if (!problems.empty()) throw ValidationError(std::move(problems));

  s.cluster_of.assign(s.clients.size(), 0);
  for (std::size_t j = 0; j < s.members.size(); ++j)
    for (auto k : s.members[j]) s.cluster_of[k] = j;
  return s;
}

/// Marks round(fraction·n) of a client's samples sensitive, chosen under `seed`.
inline DatasetHandle split_sensitive(const IndexList& samples, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw InvalidArgument("sensitive fraction out of range");
  IndexList perm = samples;
  Rng rng(derive_seed(seed, {0x73656e73ULL}));
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto n_sens = static_cast<std::size_t>(std::nearbyint(fraction * static_cast<double>(perm.size())));
  DatasetHandle h;
  h.sensitive.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_sens));
  h.nonsensitive.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_sens), perm.end());
  std::sort(h.sensitive.begin(), h.sensitive.end());
  std::sort(h.nonsensitive.begin(), h.nonsensitive.end());
  h.retained = samples;
  return h;
}

/// Number of samples moved for a fraction; ties round to even, never past α^max.
inline std::size_t offload_count(double alpha, std::size_t dataset_size,
                                 double max_fraction = 1.0) {
  const double n = static_cast<double>(dataset_size);
  const auto rounded = static_cast<std::size_t>(std::nearbyint(alpha * n));
  const auto cap = static_cast<std::size_t>(std::floor(max_fraction * n + 1e-9));
  return std::min(rounded, cap);
}

/// Materializes offloaded/retained sets. Offloaded samples are a uniform draw from the
/// nonsensitive pool keyed by (seed, client id), so repeated calls give identical sets.
inline Scenario apply_offload(const Scenario& s, const std::vector<double>& alpha, std::uint64_t seed) {
  if (alpha.size() != s.clients.size()) throw InvalidArgument("alpha size does not match client count");
  Scenario out = s;
  for (std::size_t k = 0; k < s.clients.size(); ++k) {
    const auto& c = s.clients[k];
    if (!(alpha[k] >= 0.0) || alpha[k] > c.max_offload_fraction + 1e-12)
      throw InvalidArgument("client " + std::to_string(c.id) + ": alpha exceeds max_offload_fraction");
    if (out.data.empty()) continue;
    auto& d = out.data[k];
    const std::size_t count = offload_count(alpha[k], d.size(), c.max_offload_fraction);
    if (count > d.nonsensitive.size())
      throw InvalidArgument("client " + std::to_string(c.id) + ": offload exceeds nonsensitive samples");
    IndexList pool = d.nonsensitive;
    Rng rng(derive_seed(seed, {0x6f66666cULL, static_cast<std::uint64_t>(c.id)}));
    std::shuffle(pool.begin(), pool.end(), rng);
    d.offloaded.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(count));
    std::sort(d.offloaded.begin(), d.offloaded.end());
    d.retained = d.sensitive;
    d.retained.insert(d.retained.end(), pool.begin() + static_cast<std::ptrdiff_t>(count), pool.end());
    std::sort(d.retained.begin(), d.retained.end());
  }
  return out;
}

/// Fractions actually realized after integer rounding of α|D|.
inline std::vector<double> effective_alpha(const Scenario& s, const std::vector<double>& alpha) {
  std::vector<double> out(alpha.size());
  for (std::size_t k = 0; k < alpha.size(); ++k) {
    const auto n = s.clients[k].dataset_size;
    out[k] = static_cast<double>(offload_count(alpha[k], n, s.clients[k].max_offload_fraction)) /
             static_cast<double>(n);
  }
  return out;
}

}  // namespace orbitfed
