#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mlqmc/sampler.hpp"

namespace mlqmc {

/// Neumaier-compensated running sum.
class CompensatedSum {
 public:
  void add(double x) noexcept;
  double value() const noexcept { return sum_ + correction_; }

 private:
  double sum_ = 0.0;
  double correction_ = 0.0;
};

/// Count, mean and unbiased variance from compensated sums shifted by the
/// first observation.
class Moments {
 public:
  void add(double x) noexcept;
  std::uint64_t count() const noexcept { return n_; }
  double mean() const;
  /// Unbiased sample variance; 0 for fewer than two observations.
  double variance() const;
  double sum() const noexcept;

 private:
  std::uint64_t n_ = 0;
  double shift_ = 0.0;
  CompensatedSum s1_;
  CompensatedSum s2_;
};

/// One evaluation of a level pair: Q_l, Q_{l-1} (0 on level 0) and its work.
struct LevelSample {
  double fine = 0.0;
  double coarse = 0.0;
  double cost = 0.0;
};

/// Source of coupled level pairs driven by standard-normal inputs.
/// evaluate() must be safe to call concurrently.
class LevelModel {
 public:
  virtual ~LevelModel() = default;
  virtual std::size_t dimension(int level) const = 0;
  virtual LevelSample evaluate(int level, std::span<const double> normals) const = 0;
};

/// Per-level statistics.
///
/// For MC levels every sample feeds one pool. For randomized QMC levels each
/// randomization keeps its own sums and `n_points` is the number of points per
/// randomization; `samples()` is the total number of evaluations either way.
struct LevelRecord {
  int level = 0;
  std::uint64_t n_points = 0;
  /// 0 for MC, R for randomized QMC.
  std::size_t randomizations = 0;
  Moments y;
  Moments q;
  std::vector<CompensatedSum> y_by_randomization;
  std::vector<CompensatedSum> q_by_randomization;
  CompensatedSum cost;

  bool is_qmc() const noexcept { return randomizations > 0; }
  std::uint64_t samples() const noexcept;
  double mean_y() const;
  double mean_q() const;
  /// Variance of the level estimator: V/N for MC, the across-randomization
  /// variance of the randomization means divided by R for QMC.
  double estimator_variance() const;
  /// Per-sample variance V_l with estimator_variance() = V_l / samples().
  /// For QMC this is the effective variance implied by the randomizations.
  double variance_y() const;
  double variance_q() const;
  /// Average work per evaluation.
  double cost_per_sample() const;
  double total_cost() const { return cost.value(); }

  void add(const LevelSample& s, std::size_t randomization = 0);
};

/// Y_l estimator mean; throws InsufficientDataError for an empty level.
double level_estimator_mean(const LevelRecord& record);

/// N_l = ceil(2 eps^-2 sqrt(V_l / C_l) sum_m sqrt(V_m C_m)), at least 1.
std::vector<std::uint64_t> optimal_allocation(std::span<const double> variances,
                                              std::span<const double> costs, double epsilon);

struct RateFit {
  double slope = 0.0;
  double intercept = 0.0;
  std::vector<int> levels;
  std::vector<double> residuals;
};

struct RateEstimates {
  double alpha = 0.5;
  double beta = 0.0;
  double gamma = 0.0;
  /// alpha before the floor is applied.
  double alpha_fit = 0.0;
  RateFit alpha_diagnostics;
  RateFit beta_diagnostics;
  RateFit gamma_diagnostics;
};

inline constexpr double kAlphaFloor = 0.5;

/// The per-level quantities the rate fits use, as stored in the levels table.
struct LevelSummary {
  int level = 0;
  std::uint64_t samples = 0;
  double mean_y = 0.0;
  double variance_y = 0.0;
  double cost = 0.0;
};

LevelSummary summarize(const LevelRecord& record);

/// Least-squares fits of log2 |mean Y_l|, log2 V_l and log2 C_l against l over
/// levels >= 1. Points with zero mean or variance are skipped; a variance fit
/// left with fewer than two points reports beta = +inf, an alpha fit alpha = floor.
RateEstimates estimate_rates(std::span<const LevelRecord> records, double alpha_floor = kAlphaFloor);
RateEstimates estimate_rates(std::span<const LevelSummary> levels, double alpha_floor = kAlphaFloor);

/// Least-squares line through (x, y).
RateFit fit_line(std::span<const double> x, std::span<const double> y);

/// |mean_Y_L| / (2^alpha - 1)
double weak_error_estimate(double mean_y_last, double alpha);

enum class Regime { BetaGtGamma, BetaEqGamma, BetaLtGamma };
Regime regime(const RateEstimates& rates);
std::string to_string(Regime r);

struct EstimatorResult {
  std::string method;
  double epsilon = 0.0;
  double estimate = 0.0;
  std::vector<LevelRecord> levels;
  RateEstimates rates;
  Regime regime = Regime::BetaGtGamma;
  double total_work = 0.0;
  double weak_error = 0.0;

  /// Sum of the level estimator variances.
  double estimator_variance() const;
};

struct EstimatorOptions {
  std::uint64_t seed = 0;
  StreamKind stream = StreamKind::PseudoRandom;
  int initial_max_level = 2;
  int max_level = 7;
  /// Initial MC samples on each new level.
  std::uint64_t initial_samples = 100;
  /// Initial QMC points per randomization on each new level.
  std::uint64_t initial_qmc_points = 8;
  std::size_t randomizations = 24;
  double alpha_floor = kAlphaFloor;
  /// Worker threads for sample evaluation; 0 uses the hardware concurrency.
  unsigned workers = 0;
};

/// Adding a level beyond max_level; carries the estimator state reached so far.
class MaxLevelError : public std::runtime_error {
 public:
  MaxLevelError(const std::string& what, EstimatorResult partial)
      : std::runtime_error(what), partial_(std::move(partial)) {}
  const EstimatorResult& partial() const noexcept { return partial_; }

 private:
  EstimatorResult partial_;
};

/// Seed of the sample stream for one level; distinct levels get unrelated streams.
std::uint64_t level_seed(std::uint64_t run_seed, int level);

/// Adaptive MLMC with pseudo-random samples.
EstimatorResult mlmc_run(const LevelModel& model, const EstimatorOptions& options, double epsilon);

/// Adaptive MLQMC with randomized lattice or Sobol' points.
EstimatorResult mlqmc_run(const LevelModel& model, const EstimatorOptions& options, double epsilon);

/// Dispatches on options.stream.
EstimatorResult multilevel_run(const LevelModel& model, const EstimatorOptions& options,
                               double epsilon);

/// Statistics for a fixed number of samples (MC) or points per
/// randomization (QMC) on each level 0..counts.size()-1.
std::vector<LevelRecord> fixed_sample_run(const LevelModel& model, const EstimatorOptions& options,
                                          std::span<const std::uint64_t> counts);

struct VarianceTestResult {
  int level = 0;
  std::vector<std::uint64_t> n;
  /// Variance of the N-point estimate of E[Y_l] across randomizations.
  std::vector<double> variance;
  double slope = 0.0;
};

/// Fits log2 Var[Y_hat] against log2 N over randomized point sets of the
/// configured stream kind (MC uses independent pseudo-random batches).
VarianceTestResult qmc_variance_test(const LevelModel& model, int level,
                                     std::span<const std::uint64_t> n_grid,
                                     const EstimatorOptions& options);

/// Runs fn(i) for i in [0, count) on up to `workers` threads. The exception of
/// the smallest failing index is rethrown.
void parallel_for(std::size_t count, unsigned workers, const std::function<void(std::size_t)>& fn);

}  // namespace mlqmc
