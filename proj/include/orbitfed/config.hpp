#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "orbitfed/coverage.hpp"
#include "orbitfed/dataset.hpp"
#include "orbitfed/error.hpp"
#include "orbitfed/fl_core.hpp"
#include "orbitfed/optimizer.hpp"
#include "orbitfed/scenario.hpp"

namespace orbitfed {

using json = nlohmann::json;

enum class DataSource { none, synthetic, idx, csv };

struct DataConfig {
  DataSource source = DataSource::none;
  GaussianMixtureSpec mixture;
  std::size_t test_samples = 2000;
  std::string train_images, train_labels, test_images, test_labels;
  std::string train_csv, test_csv;
  PartitionSpec partition;
  double sensitive_fraction = 0.2;
};

/// A scenario plus everything else a run needs from the same file.
struct ScenarioConfig {
  Scenario scenario;
  TrainConfig train;
  OptimizerOptions optimizer;
  DataConfig data;
  std::uint64_t seed = 1;
  std::string source;  ///< path or "<builtin>"
};

namespace detail {

class Reader {
 public:
  Reader(const json& j, std::string where, std::vector<std::string>& problems)
      : j_(j), where_(std::move(where)), problems_(problems) {
    if (!j_.is_object()) problems_.push_back(where_ + ": expected an object");
  }
  ~Reader() {
    if (!j_.is_object()) return;
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) problems_.push_back(where_ + ": unknown key '" + it.key() + "'");
  }
  Reader(const Reader&) = delete;
  Reader& operator=(const Reader&) = delete;

  bool has(const std::string& k) {
    seen_.insert(k);
    return j_.is_object() && j_.contains(k) && !j_.at(k).is_null();
  }
  const json& at(const std::string& k) {
    seen_.insert(k);
    return j_.at(k);
  }
  template <class T>
  void get(const std::string& k, T& out) {
    if (!has(k)) return;
    try {
      out = j_.at(k).get<T>();
    } catch (const json::exception&) {
      problems_.push_back(where_ + "." + k + ": wrong type");
    }
  }
  void get_opt(const std::string& k, std::optional<double>& out) {
    if (!has(k)) return;
    double v = 0.0;
    get(k, v);
    out = v;
  }
  /// Numbers with null or the string "inf" meaning unbounded.
  void get_bound(const std::string& k, double& out) {
    seen_.insert(k);
    if (!j_.is_object() || !j_.contains(k)) return;
    const auto& v = j_.at(k);
    if (v.is_null() || (v.is_string() && v.get<std::string>() == "inf")) {
      out = std::numeric_limits<double>::infinity();
    } else if (v.is_number()) {
      out = v.get<double>();
    } else {
      problems_.push_back(where_ + "." + k + ": expected a number, null or \"inf\"");
    }
  }
  std::vector<std::string>& problems() { return problems_; }
  const std::string& where() const { return where_; }

 private:
  const json& j_;
  std::string where_;
  std::vector<std::string>& problems_;
  std::set<std::string> seen_;
};

inline std::string resolve_path(const std::string& p, const std::filesystem::path& base) {
  if (p.empty()) return p;
  std::filesystem::path path(p);
  return path.is_absolute() ? p : (base / path).lexically_normal().string();
}

inline void read_client_fields(Reader& r, ClientProfile& c) {
  r.get("cpu_freq_hz", c.cpu_freq_hz);
  r.get("cycles_per_sample", c.cycles_per_sample);
  r.get("tx_power_w", c.tx_power_w);
  r.get("max_offload_fraction", c.max_offload_fraction);
  r.get("energy_budget_j", c.energy_budget_j);
  r.get("dataset_size", c.dataset_size);
  r.get_opt("distance_m", c.distance_m);
}

inline CoverageSchedule read_coverage(const json& v, const std::string& where, const std::filesystem::path& base,
                                      std::vector<std::string>& problems) {
  try {
    if (v.is_number()) return CoverageSchedule::fixed(v.get<double>());
    Reader r(v, where, problems);
    if (r.has("fixed_s")) {
      double t = 0.0;
      r.get("fixed_s", t);
      return CoverageSchedule::fixed(t);
    }
    if (r.has("file")) {
      std::string f;
      r.get("file", f);
      return load_coverage_schedule(resolve_path(f, base));
    }
    if (r.has("intervals")) {
      std::vector<CoverageInterval> iv;
      for (const auto& p : r.at("intervals")) iv.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
      return CoverageSchedule::from_intervals(std::move(iv));
    }
    problems.push_back(where + ": needs fixed_s, file or intervals");
  } catch (const Error& e) {
    problems.push_back(where + ": " + e.what());
  } catch (const json::exception& e) {
    problems.push_back(where + ": " + e.what());
  }
  return CoverageSchedule::fixed(360.0);
}

inline void read_cluster_fields(Reader& r, ClusterSpec& c, const std::filesystem::path& base) {
  r.get("bandwidth_hz", c.bandwidth_hz);
  r.get("sun_facing", c.sun_facing);
  r.get("sun_power_w", c.sun_power_w);
  r.get("sat_max_freq_hz", c.sat_max_freq_hz);
  r.get("sat_cycles_per_sample", c.sat_cycles_per_sample);
  r.get("sat_tx_power_w", c.sat_tx_power_w);
  r.get_opt("isl_rate_bps", c.isl_rate_bps);
  if (r.has("isl_link")) {
    IslLinkParams l;
    Reader lr(r.at("isl_link"), r.where() + ".isl_link", r.problems());
    lr.get("bandwidth_hz", l.bandwidth_hz);
    lr.get("rx_gain", l.rx_gain);
    lr.get("tx_gain", l.tx_gain);
    lr.get("pathloss", l.pathloss);
    lr.get("noise_density_w_per_hz", l.noise_density_w_per_hz);
    lr.get("tx_power_w", l.tx_power_w);
    c.isl_link = l;
  }
  r.get("sat_initial_energy_j", c.sat_initial_energy_j);
  r.get("sat_min_residual_j", c.sat_min_residual_j);
  if (r.has("coverage")) c.coverage = read_coverage(r.at("coverage"), r.where() + ".coverage", base, r.problems());
  r.get("glob_delay_s", c.glob_delay_s);
  r.get("sync_delay_s", c.sync_delay_s);
  r.get_bound("max_offload_samples", c.max_offload_samples);
  r.get("pathloss_exponent", c.pathloss_exponent);
  r.get("noise_density_w_per_hz", c.noise_density_w_per_hz);
  r.get("sat_distance_m", c.sat_distance_m);
  r.get("energy_coeff", c.energy_coeff);
}

/// Evenly spaced value i of n over [lo, hi].
inline double spread(const std::vector<double>& range, std::size_t i, std::size_t n) {
  if (range.size() == 1 || n <= 1) return range.front();
  return range[0] + (range[1] - range[0]) * static_cast<double>(i) / static_cast<double>(n - 1);
}

}  // namespace detail

/// Builds and validates a scenario from its JSON description. Relative paths resolve
/// against `base_dir`. All problems are collected into one ValidationError.
inline ScenarioConfig parse_scenario_config(const json& root, const std::filesystem::path& base_dir = ".") {
  using detail::Reader;
  std::vector<std::string> problems;
  ScenarioConfig cfg;
  Scenario& s = cfg.scenario;
  {
    Reader r(root, "scenario", problems);
    r.get("name", s.name);
    r.get("seed", cfg.seed);

    if (r.has("model")) {
      Reader m(r.at("model"), "model", problems);
      m.get("layout", s.layout);
      m.get("bits_per_param", s.footprint.bits_per_param);
      m.get("sample_bits", s.footprint.sample_bits);
      if (m.has("param_count")) m.get("param_count", s.footprint.param_count);
    }
    if (!s.layout.empty()) {
      try {
        if (s.footprint.param_count == 0) s.footprint.param_count = layout_param_count(s.layout);
      } catch (const Error& e) {
        problems.push_back(std::string("model.layout: ") + e.what());
      }
    }

    DataConfig& d = cfg.data;
    if (r.has("data")) {
      Reader dr(r.at("data"), "data", problems);
      std::string src = "synthetic";
      dr.get("source", src);
      if (src == "synthetic") d.source = DataSource::synthetic;
      else if (src == "idx") d.source = DataSource::idx;
      else if (src == "csv") d.source = DataSource::csv;
      else if (src == "none") d.source = DataSource::none;
      else problems.push_back("data.source: unknown source '" + src + "'");
      dr.get("classes", d.mixture.classes);
      dr.get("dim", d.mixture.dim);
      dr.get("train_samples", d.mixture.samples);
      dr.get("test_samples", d.test_samples);
      dr.get("mean_scale", d.mixture.mean_scale);
      dr.get("noise_sigma", d.mixture.noise_sigma);
      dr.get("means", d.mixture.means);
      dr.get("train_images", d.train_images);
      dr.get("train_labels", d.train_labels);
      dr.get("test_images", d.test_images);
      dr.get("test_labels", d.test_labels);
      dr.get("train_csv", d.train_csv);
      dr.get("test_csv", d.test_csv);
      std::string part = "iid";
      dr.get("partition", part);
      if (part == "iid") d.partition.mode = PartitionMode::iid;
      else if (part == "shard_noniid") d.partition.mode = PartitionMode::shard_noniid;
      else problems.push_back("data.partition: unknown mode '" + part + "'");
      dr.get("shards_per_client", d.partition.shards_per_client);
      dr.get("total_shards", d.partition.total_shards);
      dr.get("samples_per_client", d.partition.samples_per_client);
      dr.get("sensitive_fraction", d.sensitive_fraction);
      for (auto* p : {&d.train_images, &d.train_labels, &d.test_images, &d.test_labels, &d.train_csv, &d.test_csv})
        *p = detail::resolve_path(*p, base_dir);
    }

    if (r.has("train")) {
      Reader t(r.at("train"), "train", problems);
      TrainConfig& tc = cfg.train;
      t.get("lr", tc.lr.eta0);
      std::string rule = "constant";
      t.get("lr_rule", rule);
      if (rule == "constant") tc.lr.rule = LrRule::constant;
      else if (rule == "inverse_round") tc.lr.rule = LrRule::inverse_round;
      else problems.push_back("train.lr_rule: unknown rule '" + rule + "'");
      t.get("batch_client", tc.batch_client);
      t.get("batch_satellite", tc.batch_satellite);
      t.get("momentum", tc.momentum);
      t.get("prox_mu", tc.prox_mu);
      t.get("rounds", tc.rounds);
      t.get("single_step", tc.single_step);
    }
    cfg.train.seed = cfg.seed;

    if (r.has("optimizer")) {
      Reader o(r.at("optimizer"), "optimizer", problems);
      o.get("iterations", cfg.optimizer.iterations);
      o.get("early_stop_rel", cfg.optimizer.early_stop_rel);
      o.get("eps_rel", cfg.optimizer.bisect.eps_rel);
      o.get("eps_abs", cfg.optimizer.bisect.eps_abs);
      o.get("max_iter", cfg.optimizer.bisect.max_iter);
      std::string mode = "battery_coupled";
      o.get("alpha_mode", mode);
      if (mode == "battery_coupled") cfg.optimizer.alpha_mode = AlphaMode::battery_coupled;
      else if (mode == "fixed_frequency") cfg.optimizer.alpha_mode = AlphaMode::fixed_frequency;
      else problems.push_back("optimizer.alpha_mode: unknown mode '" + mode + "'");
    }

    ClusterSpec cluster_default;
    ClientProfile client_default;
    client_default.dataset_size = d.partition.samples_per_client ? d.partition.samples_per_client : 1200;
    if (r.has("defaults")) {
      Reader df(r.at("defaults"), "defaults", problems);
      if (df.has("cluster")) {
        Reader c(df.at("cluster"), "defaults.cluster", problems);
        detail::read_cluster_fields(c, cluster_default, base_dir);
      }
      if (df.has("client")) {
        Reader c(df.at("client"), "defaults.client", problems);
        detail::read_client_fields(c, client_default);
      }
    }
    std::map<std::string, std::vector<double>> ranges;
    if (r.has("client_ranges")) {
      Reader cr(r.at("client_ranges"), "client_ranges", problems);
      for (const char* key : {"cpu_freq_hz", "cycles_per_sample", "tx_power_w", "max_offload_fraction", "energy_budget_j"}) {
        std::vector<double> v;
        cr.get(key, v);
        if (v.empty()) continue;
        if (v.size() > 2 || (v.size() == 2 && v[1] < v[0])) problems.push_back(std::string("client_ranges.") + key + ": expected [lo, hi]");
        else ranges[key] = v;
      }
    }

    int next_client_id = 0;
    if (r.has("clients")) {
      const auto& arr = r.at("clients");
      for (std::size_t i = 0; i < arr.size(); ++i) {
        ClientProfile c = client_default;
        Reader cr(arr[i], "clients[" + std::to_string(i) + "]", problems);
        cr.get("id", c.id);
        cr.get("cluster_id", c.cluster_id);
        detail::read_client_fields(cr, c);
        next_client_id = std::max(next_client_id, c.id + 1);
        s.clients.push_back(c);
      }
    }

    if (!r.has("clusters")) {
      problems.push_back("scenario: no clusters");
    } else {
      const auto& arr = r.at("clusters");
      for (std::size_t j = 0; j < arr.size(); ++j) {
        ClusterSpec cl = cluster_default;
        cl.id = static_cast<int>(j);
        const std::string where = "clusters[" + std::to_string(j) + "]";
        Reader cr(arr[j], where, problems);
        cr.get("id", cl.id);
        detail::read_cluster_fields(cr, cl, base_dir);
        if (cr.has("clients")) {
          const auto& cj = cr.at("clients");
          if (cj.is_number_unsigned() || cj.is_number_integer()) {
            const auto n = cj.get<long>();
            if (n <= 0) problems.push_back(where + ".clients: count must be positive");
            for (long i = 0; i < n; ++i) {
              ClientProfile c = client_default;
              c.id = next_client_id++;
              c.cluster_id = cl.id;
              for (const auto& [key, range] : ranges) {
                const double v = detail::spread(range, static_cast<std::size_t>(i), static_cast<std::size_t>(n));
                if (key == "cpu_freq_hz") c.cpu_freq_hz = v;
                else if (key == "cycles_per_sample") c.cycles_per_sample = v;
                else if (key == "tx_power_w") c.tx_power_w = v;
                else if (key == "max_offload_fraction") c.max_offload_fraction = v;
                else if (key == "energy_budget_j") c.energy_budget_j = v;
              }
              cl.client_ids.push_back(c.id);
              s.clients.push_back(c);
            }
          } else if (cj.is_array()) {
            for (std::size_t i = 0; i < cj.size(); ++i) {
              ClientProfile c = client_default;
              c.id = next_client_id;
              Reader ccr(cj[i], where + ".clients[" + std::to_string(i) + "]", problems);
              ccr.get("id", c.id);
              detail::read_client_fields(ccr, c);
              next_client_id = std::max(next_client_id, c.id + 1);
              c.cluster_id = cl.id;
              cl.client_ids.push_back(c.id);
              s.clients.push_back(c);
            }
          } else {
            problems.push_back(where + ".clients: expected a count or an array");
          }
        }
        s.clusters.push_back(std::move(cl));
      }
      // Flat client lists name their cluster.
      for (const auto& c : s.clients)
        for (auto& cl : s.clusters)
          if (c.cluster_id == cl.id &&
              std::find(cl.client_ids.begin(), cl.client_ids.end(), c.id) == cl.client_ids.end())
            cl.client_ids.push_back(c.id);
    }
  }
  if (!problems.empty()) throw ValidationError(std::move(problems));

  // Clients are kept in cluster order so partitions are reproducible.
  std::stable_sort(s.clients.begin(), s.clients.end(), [&](const ClientProfile& a, const ClientProfile& b) {
    auto pos = [&](int cid) {
      for (std::size_t j = 0; j < s.clusters.size(); ++j)
        if (s.clusters[j].id == cid) return j;
      return s.clusters.size();
    };
    return pos(a.cluster_id) < pos(b.cluster_id);
  });

  DataConfig& d = cfg.data;
  if (d.source != DataSource::none) {
    if (s.layout.empty()) throw ValidationError({"data given without a model layout"});
    std::shared_ptr<SampleSet> train, test;
    if (d.source == DataSource::synthetic) {
      d.mixture.seed = cfg.seed;
      train = std::make_shared<SampleSet>(generate_gaussian_mixture(d.mixture, 0));
      GaussianMixtureSpec ts = d.mixture;
      ts.samples = d.test_samples;
      test = std::make_shared<SampleSet>(generate_gaussian_mixture(ts, 1));
    } else if (d.source == DataSource::idx) {
      train = std::make_shared<SampleSet>(load_idx(d.train_images, d.train_labels));
      if (!d.test_images.empty()) test = std::make_shared<SampleSet>(load_idx(d.test_images, d.test_labels));
    } else {
      train = std::make_shared<SampleSet>(load_csv(d.train_csv));
      if (!d.test_csv.empty()) test = std::make_shared<SampleSet>(load_csv(d.test_csv));
    }
    const auto parts = partition_dataset(*train, s.clients.size(), d.partition, cfg.seed);
    s.data.resize(s.clients.size());
    for (std::size_t k = 0; k < s.clients.size(); ++k) {
      s.clients[k].dataset_size = parts[k].size();
      s.data[k] = split_sensitive(parts[k], d.sensitive_fraction,
                                  derive_seed(cfg.seed, {static_cast<std::uint64_t>(s.clients[k].id)}));
    }
    s.train = std::move(train);
    s.test = std::move(test);
  }
  cfg.scenario = validate_scenario(std::move(s));
  return cfg;
}

inline ScenarioConfig load_scenario_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open scenario file: " + path);
  json root;
  try {
    root = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw FormatError(path + ": " + e.what());
  }
  auto cfg = parse_scenario_config(root, std::filesystem::path(path).parent_path());
  cfg.source = path;
  return cfg;
}

/// Five clusters of ten clients, clients spread evenly over the simulation ranges, three
/// sun-facing clusters at 5 W, E = 500 J, ψ = 100 J, 2-shard non-IID synthetic data and a
/// [20, 32, 10] MLP.
inline json reference_scenario_json() {
  json clusters = json::array();
  for (int j = 0; j < 5; ++j) {
    json c = {{"id", j}, {"clients", 10}, {"sun_facing", j < 3}};
    if (j < 3) c["sun_power_w"] = 5.0;
    clusters.push_back(c);
  }
  return {
      {"name", "reference"},
      {"seed", 1},
      {"model", {{"layout", {20, 32, 10}}, {"bits_per_param", 32}, {"sample_bits", 6272}}},
      {"data",
       {{"source", "synthetic"},
        {"classes", 10},
        {"dim", 20},
        {"train_samples", 60000},
        {"test_samples", 2000},
        {"mean_scale", 1.0},
        {"noise_sigma", 2.0},
        {"partition", "shard_noniid"},
        {"shards_per_client", 2},
        {"total_shards", 100},
        {"samples_per_client", 1200},
        {"sensitive_fraction", 0.2}}},
      {"train",
       {{"lr", 0.01},
        {"lr_rule", "constant"},
        {"batch_client", 32},
        {"batch_satellite", 32},
        {"momentum", 0.0},
        {"prox_mu", 0.0},
        {"rounds", 25}}},
      {"optimizer", {{"iterations", 10}, {"eps_rel", 1e-6}, {"max_iter", 200}, {"alpha_mode", "battery_coupled"}}},
      {"defaults",
       {{"cluster",
         {{"bandwidth_hz", 10e6},
          {"sat_max_freq_hz", 1e10},
          {"sat_cycles_per_sample", 3e7},
          {"sat_tx_power_w", 10.0},
          {"isl_rate_bps", 3.125e6},
          {"sat_initial_energy_j", 500.0},
          {"sat_min_residual_j", 100.0},
          {"coverage", {{"fixed_s", 360.0}}},
          {"glob_delay_s", 1.0},
          {"sync_delay_s", 1.0},
          {"max_offload_samples", nullptr},
          {"pathloss_exponent", 2.0},
          {"noise_density_w_per_hz", 3.98e-21},
          {"sat_distance_m", 784e3},
          {"energy_coeff", 1e-28}}},
        {"client", {{"cycles_per_sample", 3e7}, {"max_offload_fraction", 0.8}, {"energy_budget_j", 10.0}}}}},
      {"client_ranges", {{"cpu_freq_hz", {1e8, 3e8}}, {"tx_power_w", {0.1, 0.3}}}},
      {"clusters", clusters},
  };
}

inline ScenarioConfig reference_config() {
  auto cfg = parse_scenario_config(reference_scenario_json());
  cfg.source = "<builtin>";
  return cfg;
}

/// Fully resolved description for manifests: every cluster and client with its values.
inline json describe(const ScenarioConfig& cfg) {
  const auto& s = cfg.scenario;
  json clusters = json::array();
  for (std::size_t j = 0; j < s.clusters.size(); ++j) {
    const auto& c = s.clusters[j];
    json cov;
    if (c.coverage.is_fixed()) cov = {{"fixed_s", c.coverage.mean()}};
    else cov = {{"intervals", c.coverage.intervals().size()}, {"mean_s", c.coverage.mean()}};
    json cj = {{"id", c.id},
               {"clients", c.client_ids},
               {"bandwidth_hz", c.bandwidth_hz},
               {"sun_facing", c.sun_facing},
               {"sun_power_w", c.sun_power_w},
               {"sat_max_freq_hz", c.sat_max_freq_hz},
               {"sat_cycles_per_sample", c.sat_cycles_per_sample},
               {"sat_tx_power_w", c.sat_tx_power_w},
               {"isl_rate_bps", cluster_isl_rate(c)},
               {"sat_initial_energy_j", c.sat_initial_energy_j},
               {"sat_min_residual_j", c.sat_min_residual_j},
               {"coverage", cov},
               {"glob_delay_s", c.glob_delay_s},
               {"sync_delay_s", c.sync_delay_s},
               {"max_offload_samples", std::isfinite(c.max_offload_samples) ? json(c.max_offload_samples) : json(nullptr)},
               {"pathloss_exponent", c.pathloss_exponent},
               {"noise_density_w_per_hz", c.noise_density_w_per_hz},
               {"sat_distance_m", c.sat_distance_m},
               {"energy_coeff", c.energy_coeff}};
    clusters.push_back(cj);
  }
  json clients = json::array();
  for (const auto& c : s.clients) {
    json cj = {{"id", c.id},
               {"cluster_id", c.cluster_id},
               {"cpu_freq_hz", c.cpu_freq_hz},
               {"cycles_per_sample", c.cycles_per_sample},
               {"tx_power_w", c.tx_power_w},
               {"max_offload_fraction", c.max_offload_fraction},
               {"energy_budget_j", c.energy_budget_j},
               {"dataset_size", c.dataset_size}};
    if (c.distance_m) cj["distance_m"] = *c.distance_m;
    clients.push_back(cj);
  }
  const auto& t = cfg.train;
  return {{"name", s.name},
          {"source", cfg.source},
          {"seed", cfg.seed},
          {"model",
           {{"layout", s.layout},
            {"param_count", s.footprint.param_count},
            {"bits_per_param", s.footprint.bits_per_param},
            {"sample_bits", s.footprint.sample_bits}}},
          {"train",
           {{"lr", t.lr.eta0},
            {"lr_rule", t.lr.rule == LrRule::constant ? "constant" : "inverse_round"},
            {"batch_client", t.batch_client},
            {"batch_satellite", t.batch_satellite},
            {"momentum", t.momentum},
            {"prox_mu", t.prox_mu},
            {"rounds", t.rounds},
            {"single_step", t.single_step}}},
          {"optimizer",
           {{"iterations", cfg.optimizer.iterations},
            {"early_stop_rel", cfg.optimizer.early_stop_rel},
            {"eps_rel", cfg.optimizer.bisect.eps_rel},
            {"max_iter", cfg.optimizer.bisect.max_iter},
            {"alpha_mode", cfg.optimizer.alpha_mode == AlphaMode::battery_coupled ? "battery_coupled" : "fixed_frequency"}}},
          {"has_data", s.has_data()},
          {"clusters", clusters},
          {"clients", clients}};
}

}  // namespace orbitfed
