#include <doctest.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>
#include <vector>

#include "mlqmc/config.hpp"
#include "mlqmc/errors.hpp"
#include "mlqmc/estimators.hpp"
#include "mlqmc/pde_model.hpp"
#include "support/test_support.hpp"

using namespace mlqmc;
using testing::ConstantModel;
using testing::ShiftModel;
using testing::SmoothModel;

namespace {

EstimatorOptions mc_options(std::uint64_t seed) {
  EstimatorOptions o;
  o.seed = seed;
  o.workers = 1;
  return o;
}

EstimatorOptions qmc_options(std::uint64_t seed, StreamKind kind = StreamKind::SobolScrambled) {
  EstimatorOptions o = mc_options(seed);
  o.stream = kind;
  return o;
}

LevelSummary summary(int level, double mean_y, double v, double c) { return {level, 100, mean_y, v, c}; }

// Only level 1 carries variance: Q_0 = 1, Q_1 = f(u), Y_l = 0 beyond.
class SingleActiveLevel : public LevelModel {
 public:
  std::size_t dimension(int) const override { return 8; }
  LevelSample evaluate(int level, std::span<const double> xi) const override {
    const double c = std::ldexp(1.0, level);
    if (level == 0) return {1.0, 0.0, c};
    if (level == 1) return {testing::smooth_product(xi), 1.0, c};
    return {1.0, 1.0, c};
  }
};

double sum_of_means(const std::vector<LevelRecord>& levels) {
  double s = 0.0;
  for (const auto& r : levels) s += level_estimator_mean(r);
  return s;
}

}  // namespace

TEST_CASE("compensated moments") {
  Moments m;
  CHECK_THROWS_AS(m.mean(), InsufficientDataError);
  m.add(2.0);
  CHECK(m.variance() == 0.0);
  m.add(4.0);
  CHECK(m.mean() == 3.0);
  CHECK(m.variance() == 2.0);

  // Large offset with small spread keeps full precision.
  Moments shifted;
  for (int i = 0; i < 1000; ++i) shifted.add(1e9 + (i % 2 ? 1.0 : -1.0));
  CHECK(shifted.mean() == 1e9);
  CHECK(shifted.variance() == doctest::Approx(1000.0 / 999.0).epsilon(1e-12));

  CompensatedSum s;
  s.add(1.0);
  for (int i = 0; i < 1000; ++i) s.add(1e-16);
  CHECK(s.value() == doctest::Approx(1.0 + 1e-13).epsilon(1e-15));
}

TEST_CASE("level estimator mean") {
  LevelRecord r;
  CHECK_THROWS_AS(level_estimator_mean(r), InsufficientDataError);
  r.add({2.0, 0.0, 1.0});
  r.add({4.0, 0.0, 1.0});
  r.n_points = 2;
  CHECK(level_estimator_mean(r) == 3.0);
  CHECK(r.mean_q() == 3.0);

  // Level 0 is plain Monte Carlo on Q_0.
  const auto levels = fixed_sample_run(SmoothModel(), mc_options(4), std::vector<std::uint64_t>{500});
  Moments plain;
  NormalStream stream({StreamKind::PseudoRandom, 8, level_seed(4, 0), 0});
  std::vector<double> xi(8);
  for (int i = 0; i < 500; ++i) {
    stream.normals(i, xi);
    plain.add(SmoothModel().evaluate(0, xi).fine);
  }
  CHECK(level_estimator_mean(levels[0]) == doctest::Approx(plain.mean()).epsilon(1e-14));

  // Telescoping sum of the shift model equals E[Q_3] = 1/8.
  const std::vector<std::uint64_t> counts(4, 10000);
  const auto shift = fixed_sample_run(ShiftModel(), mc_options(5), counts);
  double var = 0.0;
  for (const auto& l : shift) var += l.estimator_variance();
  CHECK(std::abs(sum_of_means(shift) - 0.125) <= 4 * std::sqrt(var));
}

TEST_CASE("optimal allocation") {
  const double v1[] = {1.0}, c1[] = {1.0};
  CHECK(optimal_allocation(v1, c1, 0.1) == std::vector<std::uint64_t>{200});
  const double v2[] = {1.0, 0.25}, c2[] = {1.0, 4.0};
  CHECK(optimal_allocation(v2, c2, 0.1) == std::vector<std::uint64_t>{400, 100});
  const double zeros[] = {0.0, 0.0};
  CHECK(optimal_allocation(zeros, c2, 0.1) == std::vector<std::uint64_t>{1, 1});
  const double bad[] = {1.0, -1.0};
  CHECK_THROWS_AS(optimal_allocation(bad, c2, 0.1), ArgumentError);
  CHECK_THROWS_AS(optimal_allocation(v2, c2, 0.0), ArgumentError);

  int violations = 0;
  for (std::uint64_t t = 0; t < 1000; ++t) {
    NormalStream s({StreamKind::PseudoRandom, 13, t, 0});
    std::vector<double> u(13);
    s.uniforms(0, u);
    const std::size_t levels = 1 + static_cast<std::size_t>(u[0] * 6);
    std::vector<double> v(levels), c(levels);
    for (std::size_t l = 0; l < levels; ++l) {
      v[l] = std::exp2(-20 * u[1 + l]);
      c[l] = std::exp2(10 * u[7 + (l % 6)]);
    }
    const double eps = std::exp2(-8 * u[12]);
    const auto n = optimal_allocation(v, c, eps);
    double total = 0.0;
    for (std::size_t l = 0; l < levels; ++l) total += v[l] / static_cast<double>(n[l]);
    if (total > 0.5 * eps * eps * (1 + 1e-12)) ++violations;
  }
  CHECK(violations == 0);
}

TEST_CASE("rate estimation") {
  std::vector<LevelSummary> exact;
  for (int l = 0; l <= 5; ++l) exact.push_back(summary(l, std::exp2(-2.0 * l), std::exp2(-3.0 * l), std::exp2(2.0 * l)));
  const auto r = estimate_rates(std::span<const LevelSummary>(exact));
  CHECK(r.alpha == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(r.beta == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(r.gamma == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(r.beta_diagnostics.levels == std::vector<int>{1, 2, 3, 4, 5});

  std::vector<LevelSummary> noisy = exact;
  for (std::size_t l = 0; l < noisy.size(); ++l) {
    const auto z = pseudo_random_normals({StreamKind::PseudoRandom, 3, 31, 0}, l);
    noisy[l].mean_y *= 1 + 0.01 * z[0];
    noisy[l].variance_y *= 1 + 0.01 * z[1];
    noisy[l].cost *= 1 + 0.01 * z[2];
  }
  const auto rn = estimate_rates(std::span<const LevelSummary>(noisy));
  CHECK(std::abs(rn.alpha - 2) <= 0.1);
  CHECK(std::abs(rn.beta - 3) <= 0.1);
  CHECK(std::abs(rn.gamma - 2) <= 0.1);

  std::vector<LevelSummary> slow = exact;
  for (auto& s : slow) s.mean_y = std::exp2(-0.3 * s.level);
  const auto rs = estimate_rates(std::span<const LevelSummary>(slow));
  CHECK(rs.alpha_fit == doctest::Approx(0.3));
  CHECK(rs.alpha == 0.5);

  std::vector<LevelSummary> two(exact.begin(), exact.begin() + 2);
  CHECK_THROWS_AS(estimate_rates(std::span<const LevelSummary>(two)), InsufficientDataError);
}

TEST_CASE("weak error and regimes") {
  CHECK(weak_error_estimate(0.3, 1.0) == doctest::Approx(0.3));
  CHECK(weak_error_estimate(-0.3, 2.0) == doctest::Approx(0.1));
  CHECK(weak_error_estimate(0.0, 1.0) == 0.0);
  CHECK_THROWS_AS(weak_error_estimate(0.3, 0.0), ArgumentError);

  auto rates = [](double a, double b, double g) {
    RateEstimates r;
    r.alpha = a;
    r.beta = b;
    r.gamma = g;
    return r;
  };
  CHECK(regime(rates(2, 3, 2)) == Regime::BetaGtGamma);
  CHECK(regime(rates(1, 2, 2)) == Regime::BetaEqGamma);
  CHECK(regime(rates(1, 1, 2)) == Regime::BetaLtGamma);
  CHECK(regime(rates(1, std::numeric_limits<double>::infinity(), 2)) == Regime::BetaGtGamma);
}

TEST_CASE("MLMC on the shift model") {
  for (double eps : {0.1, 0.05}) {
    CAPTURE(eps);
    double se = 0.0;
    int outside = 0, constraint = 0;
    for (std::uint64_t run = 0; run < 20; ++run) {
      const auto r = mlmc_run(ShiftModel(), mc_options(1000 + run), eps);
      se += r.estimate * r.estimate;
      if (std::abs(r.estimate) > 3 * eps) ++outside;
      if (r.estimator_variance() > 0.5 * eps * eps) ++constraint;
      CHECK(r.estimate == doctest::Approx(sum_of_means(r.levels)).epsilon(1e-15));
      CHECK(r.levels.front().n_points >= 100);
    }
    CHECK(se / 20 <= eps * eps);
    CHECK(outside == 0);
    CHECK(constraint == 0);
  }
}

TEST_CASE("MLMC is unbiased for the finest-level expectation") {
  double sum = 0.0;
  const int runs = 200;
  for (int run = 0; run < runs; ++run) {
    const auto r = mlmc_run(ShiftModel(), mc_options(5000 + run), 0.1);
    sum += r.estimate - std::ldexp(1.0, -static_cast<int>(r.levels.size() - 1));
  }
  CHECK(std::abs(sum / runs) <= 3 * 0.1 / std::sqrt(200.0 * 2.0));
}

TEST_CASE("estimator variance adds up across levels") {
  const std::vector<std::uint64_t> counts{400, 200, 100, 50};
  Moments estimates;
  double predicted = 0.0;
  for (std::uint64_t run = 0; run < 300; ++run) {
    const auto levels = fixed_sample_run(SmoothModel(), mc_options(run), counts);
    estimates.add(sum_of_means(levels));
    double v = 0.0;
    for (const auto& l : levels) v += l.estimator_variance();
    predicted += v / 300;
  }
  const double ratio = estimates.variance() / predicted;
  CHECK(ratio > 0.5);
  CHECK(ratio < 2.0);
}

TEST_CASE("degenerate and failing runs") {
  const auto c = mlmc_run(ConstantModel(2.5), mc_options(1), 0.01);
  CHECK(c.levels.size() == 3);
  CHECK(c.estimate == 2.5);
  for (const auto& l : c.levels) {
    CHECK(l.variance_y() == 0.0);
    CHECK(l.n_points == 100);
  }

  EstimatorOptions capped = mc_options(2);
  capped.max_level = 3;
  try {
    mlmc_run(ShiftModel(), capped, 0.01);
    FAIL("expected MaxLevelError");
  } catch (const MaxLevelError& e) {
    CHECK(e.partial().levels.size() == 4);
  }
  CHECK_THROWS_AS(mlmc_run(ShiftModel(), mc_options(1), 0.0), ArgumentError);
  CHECK_THROWS_AS(mlmc_run(ShiftModel(), qmc_options(1), 0.1), ArgumentError);
  CHECK_THROWS_AS(mlqmc_run(ShiftModel(), mc_options(1), 0.1), ArgumentError);
}

TEST_CASE("MLQMC doubling") {
  const auto r = mlqmc_run(SingleActiveLevel(), qmc_options(3), 0.002);
  REQUIRE(r.levels.size() == 3);
  CHECK(r.levels[0].n_points == 8);
  CHECK(r.levels[1].n_points > 8);
  CHECK(std::has_single_bit(r.levels[1].n_points));
  CHECK(r.levels[2].n_points == 8);
  CHECK(r.estimator_variance() <= 0.5 * 0.002 * 0.002);
  CHECK(r.levels[1].samples() == r.levels[1].n_points * 24);

  for (StreamKind kind : {StreamKind::SobolScrambled, StreamKind::LatticeShifted}) {
    for (double eps : {0.02, 0.01}) {
      // The weak error 2^-L needs L = 8 at eps = 0.01.
      EstimatorOptions qo = qmc_options(8, kind), mo = mc_options(8);
      qo.max_level = mo.max_level = 10;
      const auto q = mlqmc_run(SmoothModel(), qo, eps);
      const auto m = mlmc_run(SmoothModel(), mo, eps);
      CHECK(q.estimator_variance() <= 0.5 * eps * eps);
      CHECK(q.total_work <= m.total_work);
      CHECK(q.estimate == doctest::Approx(sum_of_means(q.levels)).epsilon(1e-15));
    }
  }
}

TEST_CASE("QMC variance test") {
  std::vector<std::uint64_t> grid;
  for (int m = 4; m <= 10; ++m) grid.push_back(std::uint64_t{1} << m);
  EstimatorOptions sobol = qmc_options(17);
  const auto s24 = qmc_variance_test(SmoothModel(), 1, grid, sobol);
  EstimatorOptions mc = mc_options(17);
  mc.randomizations = 64;
  const auto m = qmc_variance_test(SmoothModel(), 1, grid, mc);
  CAPTURE(s24.slope);
  CAPTURE(m.slope);
  CHECK(s24.slope < -1.0);

  // A single fit scatters by about 0.1 between seeds, so compare seed averages.
  double mean24 = 0.0, mean48 = 0.0;
  for (std::uint64_t seed = 17; seed < 25; ++seed) {
    EstimatorOptions o = qmc_options(seed);
    mean24 += qmc_variance_test(SmoothModel(), 1, grid, o).slope / 8;
    o.randomizations = 48;
    mean48 += qmc_variance_test(SmoothModel(), 1, grid, o).slope / 8;
  }
  CAPTURE(mean24);
  CAPTURE(mean48);
  CHECK(std::abs(mean24 - mean48) <= 0.1);
  CHECK(std::abs(m.slope + 1.0) <= 0.15);
  CHECK(s24.n == grid);

  const std::vector<std::uint64_t> short_grid{16, 32};
  CHECK_THROWS_AS(qmc_variance_test(SmoothModel(), 1, short_grid, sobol), InsufficientDataError);
  const std::vector<std::uint64_t> not_pow2{16, 24, 64};
  CHECK_THROWS_AS(qmc_variance_test(SmoothModel(), 1, not_pow2, sobol), ArgumentError);
}

TEST_CASE("results do not depend on the worker count") {
  const std::vector<std::uint64_t> counts{64, 32, 16};
  for (StreamKind kind : {StreamKind::PseudoRandom, StreamKind::SobolScrambled}) {
    EstimatorOptions a = kind == StreamKind::PseudoRandom ? mc_options(9) : qmc_options(9);
    EstimatorOptions b = a;
    b.workers = 4;
    const auto ra = fixed_sample_run(SmoothModel(), a, counts);
    const auto rb = fixed_sample_run(SmoothModel(), b, counts);
    for (std::size_t l = 0; l < counts.size(); ++l) {
      CHECK(ra[l].mean_y() == rb[l].mean_y());
      CHECK(ra[l].variance_y() == rb[l].variance_y());
    }
    const auto x = multilevel_run(SmoothModel(), a, 0.02);
    const auto y = multilevel_run(SmoothModel(), b, 0.02);
    CHECK(x.estimate == y.estimate);
    CHECK(x.total_work == y.total_work);
  }
}

TEST_CASE("parallel_for") {
  std::vector<int> hits(1000, 0);
  parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i] += 1; });
  CHECK(std::count(hits.begin(), hits.end(), 1) == 1000);
  try {
    parallel_for(100, 4, [](std::size_t i) {
      if (i % 10 == 7) throw std::runtime_error(std::to_string(i));
    });
    FAIL("expected an exception");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()) == "7");
  }
}

TEST_CASE("level streams use disjoint seed namespaces") {
  std::set<std::uint64_t> seeds;
  for (std::uint64_t run = 0; run < 50; ++run)
    for (int l = 0; l <= 9; ++l) seeds.insert(level_seed(run, l));
  CHECK(seeds.size() == 500);
  CHECK_THROWS_AS(level_seed(0, -1), ArgumentError);
}

TEST_CASE("PDE level pairs") {
  const auto bases = testing::bases_for(4);
  PdeModelOptions fmg_opts;
  PdeModelOptions standalone_opts;
  standalone_opts.mode = SolverMode::Standalone;
  const PdeLevelModel fmg(case_one(), bases, fmg_opts);
  const PdeLevelModel standalone(case_one(), bases, standalone_opts);
  const std::vector<std::uint64_t> counts{40, 40, 40, 40};
  const auto a = fixed_sample_run(fmg, mc_options(3), counts);
  const auto b = fixed_sample_run(standalone, mc_options(3), counts);
  for (std::size_t l = 0; l < counts.size(); ++l) {
    CAPTURE(l);
    CHECK(std::abs(a[l].mean_y() - b[l].mean_y()) <= 10 * fmg_opts.multigrid.tau);
    CHECK(a[l].mean_q() == b[l].mean_q());
    if (l >= 1) {
      CHECK(a[l].variance_y() < a[l].variance_q());
      CHECK(a[l].cost_per_sample() < b[l].cost_per_sample());
    }
  }

  const PdeLevelModel unit(case_two(), nullptr, {SolverMode::Fmg, {}, true});
  CHECK(unit.dimension(3) == 1);
  const double xi[] = {0.7};
  const auto pair = unit.solve_pair(3, xi, SolverMode::Fmg);
  CHECK(std::abs(pair.fine_qoi - 100) <= 1e-6);
  CHECK(std::abs(pair.coarse_qoi - 100) <= 1e-6);
}

TEST_CASE("MLMC on Case I field 1 meets the variance constraint") {
  const PdeLevelModel model(case_one(), testing::bases_for(1));
  EstimatorOptions o = mc_options(11);
  o.max_level = 4;
  o.workers = 0;
  const auto r = mlmc_run(model, o, 0.5);
  CHECK(r.estimator_variance() <= 0.5 * 0.5 * 0.5);
  CHECK(r.estimate == doctest::Approx(sum_of_means(r.levels)).epsilon(1e-14));
  CHECK(r.levels.size() <= 5);
}
