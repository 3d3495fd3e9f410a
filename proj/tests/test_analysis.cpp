#include <gtest/gtest.h>

#include "support.hpp"

using namespace orbitfed;
using support::close_rel;

namespace {

double two_pass_variance(const SampleSet& s) {
  const std::size_t n = s.size(), d = s.dim();
  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) mean[c] += s.row(i)[c];
  for (auto& m : mean) m /= double(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) ss += (s.row(i)[c] - mean[c]) * (s.row(i)[c] - mean[c]);
  return ss / double(n - 1);
}

SampleSet random_set(support::Gen& g, std::size_t n, std::size_t dim, double scale = 1.0, double shift = 0.0) {
  std::vector<double> f(n * dim);
  for (auto& v : f) v = scale * g.uni(-3, 3) + shift;
  return SampleSet(dim, std::move(f), std::vector<int>(n, 0));
}

BoundInputs single_client(double set_size, double batch, double variance) {
  BoundInputs in;
  in.rounds = 1;
  in.total_samples = set_size;
  in.client_terms.push_back({batch, set_size, variance});
  in.satellite_terms.push_back({0.0, 0.0, 0.0});
  return in;
}

ScenarioConfig toy_config() { return parse_scenario_config(support::small_learning_json(2, 2, 40, {20, 10}, 6)); }

}  // namespace

TEST(Variance, HandValues) {
  EXPECT_EQ(sample_variance(SampleSet(1, {5.0, 5.0}, {0, 0})), 0.0);
  EXPECT_DOUBLE_EQ(sample_variance(SampleSet(1, {0.0, 2.0}, {0, 0})), 2.0);
  EXPECT_DOUBLE_EQ(sample_variance(SampleSet(2, {0.0, 0.0, 2.0, 4.0}, {0, 0})), 10.0);
}

TEST(Variance, MatchesTwoPassFormula) {
  support::Gen g(1);
  for (int i = 0; i < 20; ++i) {
    const auto s = random_set(g, 100, 20);
    EXPECT_NEAR(sample_variance(s), two_pass_variance(s), 1e-12 * two_pass_variance(s));
  }
}

TEST(Variance, TranslationInvariantAndQuadraticInScale) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    support::Gen a(seed), b(seed), c(seed);
    const double shift = 1000.0 * double(seed);
    const auto base = random_set(a, 50, 4);
    const auto moved = random_set(b, 50, 4, 1.0, shift);
    const auto scaled = random_set(c, 50, 4, 3.0);
    EXPECT_NEAR(sample_variance(moved), sample_variance(base), 1e-9 * sample_variance(base));
    EXPECT_TRUE(close_rel(sample_variance(scaled), 9.0 * sample_variance(base), 1e-12));
  }
}

TEST(Variance, SubsetIndices) {
  const SampleSet s(1, {0.0, 100.0, 2.0, -50.0}, {0, 0, 0, 0});
  const IndexList idx{0, 2};
  EXPECT_DOUBLE_EQ(sample_variance(s, idx), 2.0);
}

TEST(Omega, HandEvaluation) {
  const auto in = single_client(4, 2, 3);
  EXPECT_DOUBLE_EQ(omega(in), 1.125);
}

TEST(Omega, FullBatchesGiveZero) {
  support::Gen g(2);
  for (int i = 0; i < 100; ++i) {
    BoundInputs in;
    in.rounds = static_cast<int>(g.integer(1, 100));
    in.variability = g.uni(0.1, 5);
    for (long k = 0; k < g.integer(1, 6); ++k) {
      const double n = double(g.integer(2, 500));
      in.client_terms.push_back({n, n, g.uni(0, 10)});
      in.total_samples += n;
    }
    const double sn = double(g.integer(2, 500));
    in.satellite_terms.push_back({sn, sn, g.uni(0, 10)});
    EXPECT_EQ(omega(in), 0.0);
  }
}

TEST(Omega, NonNegativeAndDecreasingInBatch) {
  support::Gen g(3);
  for (int i = 0; i < 200; ++i) {
    const double n = double(g.integer(4, 1000));
    const double v = g.uni(0.01, 10);
    double prev = kInf;
    for (double lam = 1; lam <= n; lam = std::ceil(lam * 1.5)) {
      auto in = single_client(n, lam, v);
      const double w = omega(in);
      EXPECT_GE(w, 0.0);
      EXPECT_LT(w, prev);
      prev = w;
    }
    auto half = single_client(n, std::floor(n / 2), v);
    auto full = single_client(n, std::floor(n / 4), v);
    EXPECT_GT(omega(full), omega(half));
  }
}

TEST(Omega, RejectsBatchLargerThanSet) {
  auto in = single_client(4, 5, 1);
  EXPECT_THROW(omega(in), InvalidArgument);
}

TEST(Bound, ConstantStepWithoutVariance) {
  BoundInputs in;
  in.rounds = 40;
  in.lr = {LrRule::constant, 0.05};
  in.f0 = 2.3;
  in.f_star = 0.4;
  EXPECT_TRUE(close_rel(convergence_bound(in, 0.0), 2 * (2.3 - 0.4) / (40 * 0.05), 1e-12));
}

TEST(Bound, HarmonicSums) {
  BoundInputs in;
  in.rounds = 200;
  in.lr = {LrRule::inverse_round, 0.3};
  in.smoothness = 2.0;
  in.f0 = 1.5;
  in.f_star = 0.2;
  double h = 0, h2 = 0;
  for (int r = 1; r <= 200; ++r) {
    h += 1.0 / r;
    h2 += 1.0 / (double(r) * r);
  }
  EXPECT_TRUE(close_rel(in.gamma(), 0.3 * h, 1e-12));
  EXPECT_TRUE(close_rel(in.eta_sq_sum(), 0.09 * h2, 1e-12));
  const double om = 0.7;
  const double expect = 2 * 1.3 / (0.3 * h) + 2 * 2.0 * om * 0.09 * h2 / (0.3 * h);
  EXPECT_TRUE(close_rel(convergence_bound(in, om), expect, 1e-12));
}

TEST(Bound, ShrinksWithMoreRoundsUnderDecay) {
  BoundInputs in;
  in.lr = {LrRule::inverse_round, 0.1};
  in.f0 = 1.0;
  in.rounds = 10000;
  const double u4 = convergence_bound(in, 0.5);
  in.rounds = 100000;
  const double u5 = convergence_bound(in, 0.5);
  EXPECT_GT(u4, 0.0);
  EXPECT_LT(u5, u4);
  in.rounds = 0;
  EXPECT_THROW(convergence_bound(in, 0.5), InvalidArgument);
}

TEST(Smoothness, QuadraticHasUnitConstant) {
  GradientFn g = [](std::span<const double> w, std::vector<double>& out) { out.assign(w.begin(), w.end()); };
  EXPECT_NEAR(estimate_smoothness(g, 7, 500, 1), 1.0, 1e-12);
  GradientFn g3 = [](std::span<const double> w, std::vector<double>& out) {
    out.resize(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) out[i] = 3.0 * w[i];
  };
  EXPECT_NEAR(estimate_smoothness(g3, 4, 500, 2), 3.0, 1e-12);
}

TEST(Smoothness, DuplicatedDataLeavesRhoUnchanged) {
  support::Gen g(4);
  const std::size_t n = 10, dim = 3;
  std::vector<double> f(n * dim);
  std::vector<int> l(n);
  for (auto& v : f) v = g.uni(-1, 1);
  for (auto& v : l) v = static_cast<int>(g.integer(0, 2));
  const SampleSet once(dim, f, l);
  auto f2 = f;
  f2.insert(f2.end(), f.begin(), f.end());
  auto l2 = l;
  l2.insert(l2.end(), l.begin(), l.end());
  const SampleSet twice(dim, f2, l2);
  const ModelLayout layout{dim, 3};
  const std::size_t p = layout_param_count(layout);
  auto grad_for = [&](const SampleSet& s) {
    return SampleGradientFn([&s, &layout, p](std::size_t i, std::span<const double> w, std::vector<double>& out) {
      Network net(layout);
      out.assign(p, 0.0);
      net.loss_grad(w, s.row(i), s.label(i), out);
    });
  };
  // Budget large enough that every pair is enumerated in both sets.
  const double a = estimate_rho(grad_for(once), once, p, 4 * 190, 9);
  const double b = estimate_rho(grad_for(twice), twice, p, 4 * 190, 9);
  EXPECT_GT(a, 0.0);
  EXPECT_DOUBLE_EQ(a, b);
}

TEST(Smoothness, LogisticEstimateGrowsWithTrials) {
  const auto cfg = toy_config();
  const auto& s = cfg.scenario;
  IndexList all(s.train->size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  // A sampled maximum over a fixed draw sequence: more trials can only raise it.
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    double prev = 0.0;
    for (std::size_t trials : {50, 200, 800}) {
      const double l = estimate_smoothness_and_rho(s.layout, *s.train, {all}, trials, seed).l_hat;
      EXPECT_TRUE(std::isfinite(l));
      EXPECT_GT(l, 0.0);
      EXPECT_GE(l, prev);
      prev = l;
    }
  }
}

TEST(Smoothness, VarianceTermsFollowOffload) {
  const auto cfg = toy_config();
  const std::vector<double> alpha(cfg.scenario.clients.size(), 0.5);
  const auto s = apply_offload(cfg.scenario, alpha, 1);
  BoundInputs in;
  fill_variance_terms(in, s);
  EXPECT_DOUBLE_EQ(in.total_samples, 160.0);
  ASSERT_EQ(in.client_terms.size(), 4u);
  ASSERT_EQ(in.satellite_terms.size(), 2u);
  for (const auto& t : in.client_terms) {
    EXPECT_DOUBLE_EQ(t.set_size, 20.0);
    EXPECT_DOUBLE_EQ(t.batch, 20.0);
    EXPECT_GT(t.variance, 0.0);
  }
  for (const auto& t : in.satellite_terms) EXPECT_DOUBLE_EQ(t.set_size, 40.0);
  EXPECT_EQ(omega(in), 0.0);
  fill_variance_terms(in, s, 5, 10);
  EXPECT_GT(omega(in), 0.0);
}

TEST(BoundCheck, SingleRoundIsFiniteAndHolds) {
  const auto cfg = toy_config();
  const std::vector<double> alpha(cfg.scenario.clients.size(), 0.5);
  const auto s = apply_offload(cfg.scenario, alpha, 1);
  BoundCheckOptions opt;
  opt.rounds = 1;
  opt.seeds = {1, 2};
  opt.trials = 200;
  const auto rep = verify_bound_empirically(s, effective_alpha(s, alpha), opt);
  ASSERT_EQ(rep.seeds.size(), 2u);
  for (const auto& r : rep.seeds) {
    EXPECT_TRUE(std::isfinite(r.lhs));
    EXPECT_TRUE(std::isfinite(r.bound));
    EXPECT_TRUE(r.pass);
  }
}

TEST(BoundCheck, FullBatchConvexToyHasMargin) {
  const auto cfg = toy_config();
  const std::vector<double> alpha(cfg.scenario.clients.size(), 0.5);
  const auto s = apply_offload(cfg.scenario, alpha, 1);
  BoundCheckOptions opt;
  opt.rounds = 20;
  opt.seeds = {1, 2, 3};
  opt.trials = 300;
  const auto rep = verify_bound_empirically(s, effective_alpha(s, alpha), opt);
  EXPECT_EQ(rep.omega, 0.0);
  EXPECT_TRUE(rep.all_pass());
  EXPECT_LT(rep.mean_lhs, 0.9 * rep.mean_bound);
  EXPECT_GT(rep.l_hat, 0.0);
}
