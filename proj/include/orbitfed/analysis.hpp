#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "orbitfed/dataset.hpp"
#include "orbitfed/error.hpp"
#include "orbitfed/fl_core.hpp"
#include "orbitfed/rng.hpp"
#include "orbitfed/scenario.hpp"

namespace orbitfed {

/// Unbiased variance of feature vectors about their mean, Σ‖x − x̄‖² / (n − 1).
/// Single pass (Welford), coordinate by coordinate.
inline double sample_variance(const SampleSet& set, std::span<const std::size_t> indices) {
  const std::size_t n = indices.size();
  if (n < 2) throw InvalidArgument("sample variance needs at least two samples");
  const std::size_t d = set.dim();
  std::vector<double> mean(d, 0.0), m2(d, 0.0);
  std::size_t count = 0;
  for (auto i : indices) {
    ++count;
    const auto x = set.row(i);
    for (std::size_t c = 0; c < d; ++c) {
      const double delta = x[c] - mean[c];
      mean[c] += delta / static_cast<double>(count);
      m2[c] += delta * (x[c] - mean[c]);
    }
  }
  return std::accumulate(m2.begin(), m2.end(), 0.0) / static_cast<double>(n - 1);
}

inline double sample_variance(const SampleSet& set) {
  IndexList all(set.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return sample_variance(set, all);
}

/// One batch-variance term: a client's retained set or a cluster's offloaded union.
struct VarianceTerm {
  double batch = 0.0;     ///< λ
  double set_size = 0.0;  ///< |D̂|
  double variance = 0.0;  ///< V
};

struct BoundInputs {
  LrSchedule lr;
  int rounds = 1;
  double smoothness = 1.0;      ///< L
  double variability = 1.0;     ///< ρ
  double total_samples = 0.0;   ///< Σ_j Σ_k |D_k|
  std::vector<VarianceTerm> client_terms;
  std::vector<VarianceTerm> satellite_terms;
  double f0 = 0.0;
  double f_star = 0.0;

  double gamma() const {
    double g = 0.0;
    for (int r = 0; r < rounds; ++r) g += lr.at(r);
    return g;
  }
  double eta_sq_sum() const {
    double g = 0.0;
    for (int r = 0; r < rounds; ++r) g += lr.at(r) * lr.at(r);
    return g;
  }
};

/// (1 − λ/|D̂|)·((|D̂| − 1)ρ/λ)·V; sets with fewer than two samples contribute nothing.
inline double variance_term(const VarianceTerm& t, double rho) {
  if (t.set_size < 2.0) return 0.0;
  if (!(t.batch > 0.0) || t.batch > t.set_size) throw InvalidArgument("batch size outside (0, |D|]");
  return (1.0 - t.batch / t.set_size) * ((t.set_size - 1.0) * rho / t.batch) * t.variance;
}

/// Ω with batch sizes held constant across rounds.
inline double omega(const BoundInputs& in) {
  if (!(in.total_samples > 0.0)) throw InvalidArgument("total sample count must be positive");
  double per_round = 0.0;
  for (const auto& t : in.client_terms) per_round += variance_term(t, in.variability);
  for (const auto& t : in.satellite_terms) per_round += variance_term(t, in.variability);
  return 2.0 / in.total_samples * static_cast<double>(in.rounds) * per_round;
}

/// U = 2(F⁰ − F*)/Γ + 2LΩ·Ση²/Γ.
inline double convergence_bound(const BoundInputs& in, double omega_value) {
  const double g = in.gamma();
  if (!(g > 0.0)) throw InvalidArgument("learning-rate sum must be positive");
  return 2.0 * (in.f0 - in.f_star) / g + 2.0 * in.smoothness * omega_value * in.eta_sq_sum() / g;
}

/// Variance terms of an offload-applied scenario. Client batches are λ_C = round(γ|D|) capped
/// by the retained set unless `client_batch` is given; satellites use the whole union unless
/// `satellite_batch` is given.
inline void fill_variance_terms(BoundInputs& in, const Scenario& s, std::size_t client_batch = 0,
                                std::size_t satellite_batch = 0) {
  if (!s.has_data()) throw InvalidArgument("variance terms need scenario data");
  in.client_terms.clear();
  in.satellite_terms.clear();
  in.total_samples = 0.0;
  for (std::size_t j = 0; j < s.clusters.size(); ++j) {
    for (auto k : s.members[j]) {
      const auto& ret = s.data[k].retained;
      in.total_samples += static_cast<double>(s.clients[k].dataset_size);
      VarianceTerm t;
      t.set_size = static_cast<double>(ret.size());
      t.batch = static_cast<double>(client_batch ? std::min(client_batch, ret.size()) : ret.size());
      t.variance = ret.size() >= 2 ? sample_variance(*s.train, ret) : 0.0;
      in.client_terms.push_back(t);
    }
    const auto sat = s.satellite_dataset(j);
    VarianceTerm t;
    t.set_size = static_cast<double>(sat.size());
    t.batch = static_cast<double>(satellite_batch ? std::min(satellite_batch, sat.size()) : sat.size());
    t.variance = sat.size() >= 2 ? sample_variance(*s.train, sat) : 0.0;
    in.satellite_terms.push_back(t);
  }
}

// ---------------------------------------------------------------------------
// Empirical constants

using GradientFn = std::function<void(std::span<const double> w, std::vector<double>& grad)>;
/// Gradient of the loss of sample i at w.
using SampleGradientFn = std::function<void(std::size_t i, std::span<const double> w, std::vector<double>& grad)>;

struct SmoothnessEstimate {
  double l_hat = 0.0;
  double rho_hat = 0.0;
  std::size_t l_pairs = 0;
  std::size_t rho_pairs = 0;
};

namespace detail {
inline double dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}
}  // namespace detail

/// max ‖∇f(w) − ∇f(v)‖/‖w − v‖ over random pairs; w uniform in the box of radius `scale`,
/// v = w plus a perturbation of random length up to `scale`. A lower bound on L.
inline double estimate_smoothness(const GradientFn& grad, std::size_t dim, std::size_t trials,
                                  std::uint64_t seed, double scale = 1.0) {
  Rng rng(derive_seed(seed, {0x4c686174ULL}));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> w(dim), v(dim), gw, gv;
  double best = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    for (auto& x : w) x = scale * u(rng);
    const double step = scale * std::pow(10.0, -3.0 * (0.5 + 0.5 * u(rng)));
    for (std::size_t i = 0; i < dim; ++i) v[i] = w[i] + step * u(rng);
    const double d = detail::dist(w, v);
    if (!(d > 0.0)) continue;
    grad(w, gw);
    grad(v, gv);
    best = std::max(best, detail::dist(gw, gv) / d);
  }
  return best;
}

/// max ‖∇ℓ(x; w) − ∇ℓ(x'; w)‖/‖x − x'‖ over sample pairs at a few random w. All distinct
/// pairs are used when they fit in `trials`, otherwise random pairs; zero-distance pairs
/// are skipped.
inline double estimate_rho(const SampleGradientFn& grad, const SampleSet& data, std::size_t dim,
                           std::size_t trials, std::uint64_t seed, double scale = 1.0,
                           std::size_t w_draws = 4, std::size_t* used = nullptr) {
  const std::size_t n = data.size();
  if (n < 2) throw InvalidArgument("rho estimate needs at least two samples");
  Rng wrng(derive_seed(seed, {0x72686f77ULL}));
  Rng prng(derive_seed(seed, {0x72686f70ULL}));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  const std::size_t budget = std::max<std::size_t>(1, trials / std::max<std::size_t>(1, w_draws));
  if (n * (n - 1) / 2 <= budget) {
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = a + 1; b < n; ++b) pairs.emplace_back(a, b);
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (std::size_t t = 0; t < budget; ++t) pairs.emplace_back(pick(prng), pick(prng));
  }
  std::vector<double> w(dim), ga, gb;
  double best = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < w_draws; ++r) {
    for (auto& x : w) x = scale * u(wrng);
    for (auto [a, b] : pairs) {
      const double dx = detail::dist(data.row(a), data.row(b));
      if (!(dx > 0.0)) continue;
      grad(a, w, ga);
      grad(b, w, gb);
      best = std::max(best, detail::dist(ga, gb) / dx);
      ++count;
    }
  }
  if (used) *used = count;
  return best;
}

/// L̂ over the given sample subsets' mean losses (max over subsets) and ρ̂ over `rho_set`.
inline SmoothnessEstimate estimate_smoothness_and_rho(const ModelLayout& layout, const SampleSet& data,
                                                      const std::vector<IndexList>& subsets,
                                                      std::size_t trials, std::uint64_t seed,
                                                      double scale = 1.0) {
  SmoothnessEstimate est;
  const std::size_t dim = layout_param_count(layout);
  ModelParams m;
  m.layout = layout;
  for (std::size_t q = 0; q < subsets.size(); ++q) {
    if (subsets[q].empty()) continue;
    Network net(layout);
    GradientFn g = [&](std::span<const double> w, std::vector<double>& out) {
      m.values.assign(w.begin(), w.end());
      batch_loss_grad(m, data, subsets[q], &out, &net);
    };
    const std::size_t per = std::max<std::size_t>(1, trials / std::max<std::size_t>(1, subsets.size()));
    est.l_hat = std::max(est.l_hat, estimate_smoothness(g, dim, per, derive_seed(seed, {q}), scale));
    est.l_pairs += per;
  }
  Network net(layout);
  SampleGradientFn sg = [&](std::size_t i, std::span<const double> w, std::vector<double>& out) {
    out.assign(dim, 0.0);
    net.loss_grad(w, data.row(i), data.label(i), out);
  };
  est.rho_hat = estimate_rho(sg, data, dim, trials, seed, scale, 4, &est.rho_pairs);
  return est;
}

// ---------------------------------------------------------------------------
// Empirical bound check

struct BoundSeedResult {
  std::uint64_t seed = 0;
  double lhs = 0.0;  ///< Σ η_r‖∇F(w^r)‖² / Γ
  double bound = 0.0;
  double f0 = 0.0;
  double f_star = 0.0;
  bool pass = false;
};

struct BoundReport {
  double l_hat = 0.0;
  double rho_hat = 0.0;
  double eta0 = 0.0;
  double omega = 0.0;
  double gamma = 0.0;
  double mean_lhs = 0.0;
  double mean_bound = 0.0;
  std::vector<VarianceTerm> client_terms;
  std::vector<VarianceTerm> satellite_terms;
  std::vector<BoundSeedResult> seeds;

  bool all_pass() const {
    return !seeds.empty() && std::all_of(seeds.begin(), seeds.end(), [](const auto& s) { return s.pass; });
  }
};

struct BoundCheckOptions {
  int rounds = 50;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::size_t client_batch = 0;     ///< 0: full retained set
  std::size_t satellite_batch = 0;  ///< 0: full offloaded union
  double eta0 = 0.0;                ///< 0: 1/(2 L̂)
  LrRule rule = LrRule::inverse_round;
  std::size_t trials = 2000;
  double init_scale = 1.0;
};

/// F(w) = (1/J) Σ_j mean loss over cluster j's data, with its gradient.
inline double global_objective(const Scenario& s, const ModelParams& w, std::vector<double>* grad) {
  const double J = static_cast<double>(s.clusters.size());
  if (grad) grad->assign(w.values.size(), 0.0);
  double f = 0.0;
  std::vector<double> g;
  Network net(w.layout);
  for (std::size_t j = 0; j < s.clusters.size(); ++j) {
    IndexList all;
    for (auto k : s.members[j]) {
      all.insert(all.end(), s.data[k].sensitive.begin(), s.data[k].sensitive.end());
      all.insert(all.end(), s.data[k].nonsensitive.begin(), s.data[k].nonsensitive.end());
    }
    f += batch_loss_grad(w, *s.train, all, grad ? &g : nullptr, &net) / J;
    if (grad)
      for (std::size_t i = 0; i < g.size(); ++i) (*grad)[i] += g[i] / J;
  }
  return f;
}

/// Runs single-step federated rounds per seed and compares the η-weighted mean squared
/// gradient norm of F against U. `s` must carry data with offload applied; `alpha` are the
/// realized fractions. F* is the smallest F observed, so the bound is reported rather than
/// certified for non-convex models.
inline BoundReport verify_bound_empirically(const Scenario& s, const std::vector<double>& alpha,
                                            const BoundCheckOptions& opt) {
  if (!s.has_data() || s.layout.empty()) throw InvalidArgument("bound check needs a scenario with data and a model");
  if (opt.rounds < 1) throw InvalidArgument("bound check needs at least one round");
  BoundReport rep;

  std::vector<IndexList> subsets;
  for (std::size_t k = 0; k < s.clients.size(); ++k) subsets.push_back(s.data[k].retained);
  for (std::size_t j = 0; j < s.clusters.size(); ++j) subsets.push_back(s.satellite_dataset(j));
  const auto est = estimate_smoothness_and_rho(s.layout, *s.train, subsets, opt.trials, opt.seeds.empty() ? 1 : opt.seeds.front(),
                                               opt.init_scale);
  rep.l_hat = est.l_hat;
  rep.rho_hat = est.rho_hat;
  rep.eta0 = opt.eta0 > 0.0 ? opt.eta0 : 1.0 / (2.0 * est.l_hat);

  BoundInputs in;
  in.lr = {opt.rule, rep.eta0};
  in.rounds = opt.rounds;
  in.smoothness = est.l_hat;
  in.variability = est.rho_hat;
  fill_variance_terms(in, s, opt.client_batch, opt.satellite_batch);
  rep.omega = omega(in);
  rep.gamma = in.gamma();
  rep.client_terms = in.client_terms;
  rep.satellite_terms = in.satellite_terms;

  TrainConfig cfg;
  cfg.lr = in.lr;
  cfg.momentum = 0.0;
  cfg.single_step = true;
  cfg.batch_client = opt.client_batch ? opt.client_batch : std::numeric_limits<std::size_t>::max() / 4;
  cfg.batch_satellite = opt.satellite_batch ? opt.satellite_batch : std::numeric_limits<std::size_t>::max() / 4;

  for (auto seed : opt.seeds) {
    cfg.seed = seed;
    ModelParams w = init_model(s.layout, seed);
    std::vector<double> g;
    double weighted = 0.0;
    double f0 = 0.0, f_star = std::numeric_limits<double>::infinity();
    for (int r = 0; r < opt.rounds; ++r) {
      const double f = global_objective(s, w, &g);
      if (r == 0) f0 = f;
      f_star = std::min(f_star, f);
      double sq = 0.0;
      for (double v : g) sq += v * v;
      weighted += in.lr.at(r) * sq;
      w = federated_round(s, w, alpha, cfg, r, 1);
    }
    f_star = std::min(f_star, global_objective(s, w, nullptr));
    BoundInputs bi = in;
    bi.f0 = f0;
    bi.f_star = f_star;
    BoundSeedResult res;
    res.seed = seed;
    res.lhs = weighted / rep.gamma;
    res.bound = convergence_bound(bi, rep.omega);
    res.f0 = f0;
    res.f_star = f_star;
    res.pass = std::isfinite(res.lhs) && res.lhs <= res.bound;
    rep.mean_lhs += res.lhs / static_cast<double>(opt.seeds.size());
    rep.mean_bound += res.bound / static_cast<double>(opt.seeds.size());
    rep.seeds.push_back(res);
  }
  return rep;
}

}  // namespace orbitfed
