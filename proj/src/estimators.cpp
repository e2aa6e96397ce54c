#include "mlqmc/estimators.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <optional>
#include <thread>

#include "mlqmc/errors.hpp"

namespace mlqmc {

namespace {

constexpr std::uint64_t kTagLevel = 0x4c4556454c5f5331ULL;
constexpr std::uint64_t kMaxPoints = std::uint64_t{1} << 32;

}  // namespace

void CompensatedSum::add(double x) noexcept {
  const double t = sum_ + x;
  if (std::abs(sum_) >= std::abs(x)) {
    correction_ += (sum_ - t) + x;
  } else {
    correction_ += (x - t) + sum_;
  }
  sum_ = t;
}

void Moments::add(double x) noexcept {
  if (n_ == 0) shift_ = x;
  ++n_;
  const double d = x - shift_;
  s1_.add(d);
  s2_.add(d * d);
}

double Moments::mean() const {
  if (n_ == 0) throw InsufficientDataError("mean of an empty sample");
  return shift_ + s1_.value() / static_cast<double>(n_);
}

double Moments::variance() const {
  if (n_ < 2) return 0.0;
  const double n = static_cast<double>(n_);
  const double s1 = s1_.value();
  const double v = (s2_.value() - s1 * s1 / n) / (n - 1.0);
  return v > 0.0 ? v : 0.0;
}

double Moments::sum() const noexcept {
  return shift_ * static_cast<double>(n_) + s1_.value();
}

std::uint64_t LevelRecord::samples() const noexcept {
  return is_qmc() ? n_points * randomizations : n_points;
}

namespace {

Moments randomization_means(const std::vector<CompensatedSum>& sums, std::uint64_t n_points) {
  Moments m;
  for (const auto& s : sums) m.add(s.value() / static_cast<double>(n_points));
  return m;
}

}  // namespace

double LevelRecord::mean_y() const {
  if (n_points == 0) throw InsufficientDataError("level " + std::to_string(level) + " has no samples");
  return is_qmc() ? randomization_means(y_by_randomization, n_points).mean() : y.mean();
}

double LevelRecord::mean_q() const {
  if (n_points == 0) throw InsufficientDataError("level " + std::to_string(level) + " has no samples");
  return is_qmc() ? randomization_means(q_by_randomization, n_points).mean() : q.mean();
}

double LevelRecord::estimator_variance() const {
  if (n_points == 0) return std::numeric_limits<double>::infinity();
  if (is_qmc()) {
    return randomization_means(y_by_randomization, n_points).variance() /
           static_cast<double>(randomizations);
  }
  return y.variance() / static_cast<double>(n_points);
}

double LevelRecord::variance_y() const {
  if (!is_qmc()) return y.variance();
  if (n_points == 0) return 0.0;
  return estimator_variance() * static_cast<double>(samples());
}

double LevelRecord::variance_q() const {
  if (!is_qmc()) return q.variance();
  if (n_points == 0) return 0.0;
  return randomization_means(q_by_randomization, n_points).variance() /
         static_cast<double>(randomizations) * static_cast<double>(samples());
}

double LevelRecord::cost_per_sample() const {
  const std::uint64_t n = samples();
  return n == 0 ? 0.0 : cost.value() / static_cast<double>(n);
}

void LevelRecord::add(const LevelSample& s, std::size_t randomization) {
  const double yv = s.fine - s.coarse;
  y.add(yv);
  q.add(s.fine);
  cost.add(s.cost);
  if (is_qmc()) {
    if (randomization >= randomizations) throw ArgumentError("randomization index out of range");
    y_by_randomization[randomization].add(yv);
    q_by_randomization[randomization].add(s.fine);
  }
}

double level_estimator_mean(const LevelRecord& record) { return record.mean_y(); }

std::vector<std::uint64_t> optimal_allocation(std::span<const double> variances,
                                              std::span<const double> costs, double epsilon) {
  if (variances.empty() || variances.size() != costs.size()) {
    throw ArgumentError("allocation needs matching, non-empty variance and cost lists");
  }
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw ArgumentError("epsilon must be positive");
  double s = 0.0;
  for (std::size_t l = 0; l < variances.size(); ++l) {
    if (!(variances[l] >= 0.0) || !std::isfinite(variances[l])) {
      throw ArgumentError("variances must be finite and non-negative");
    }
    if (!(costs[l] > 0.0) || !std::isfinite(costs[l])) throw ArgumentError("costs must be positive");
    s += std::sqrt(variances[l] * costs[l]);
  }
  std::vector<std::uint64_t> n(variances.size(), 1);
  if (s == 0.0) return n;
  for (std::size_t l = 0; l < variances.size(); ++l) {
    const double x = std::ceil(2.0 * s * std::sqrt(variances[l] / costs[l]) / (epsilon * epsilon));
    if (x >= 0x1.0p62) throw ArgumentError("optimal allocation overflows the sample counter");
    n[l] = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(x));
  }
  return n;
}

RateFit fit_line(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw InsufficientDataError("line fit needs two points");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0.0) throw InsufficientDataError("line fit needs distinct abscissae");
  RateFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  for (std::size_t i = 0; i < x.size(); ++i) fit.residuals.push_back(y[i] - (fit.intercept + fit.slope * x[i]));
  return fit;
}

namespace {

// Fit of log2 value(record) against the level over levels >= 1 with positive values.
std::optional<RateFit> log_fit(std::span<const LevelSummary> records,
                               const std::function<double(const LevelSummary&)>& value) {
  std::vector<double> x, y;
  std::vector<int> levels;
  for (const auto& r : records) {
    if (r.level < 1 || r.samples < 2) continue;
    const double v = value(r);
    if (!(v > 0.0) || !std::isfinite(v)) continue;
    x.push_back(r.level);
    y.push_back(std::log2(v));
    levels.push_back(r.level);
  }
  if (x.size() < 2) return std::nullopt;
  RateFit fit = fit_line(x, y);
  fit.levels = std::move(levels);
  return fit;
}

}  // namespace

LevelSummary summarize(const LevelRecord& record) {
  return {record.level, record.samples(), record.samples() > 0 ? record.mean_y() : 0.0,
          record.variance_y(), record.cost_per_sample()};
}

RateEstimates estimate_rates(std::span<const LevelRecord> records, double alpha_floor) {
  std::vector<LevelSummary> summaries;
  for (const auto& r : records) summaries.push_back(summarize(r));
  return estimate_rates(std::span<const LevelSummary>(summaries), alpha_floor);
}

RateEstimates estimate_rates(std::span<const LevelSummary> records, double alpha_floor) {
  const auto usable = std::count_if(records.begin(), records.end(),
                                    [](const LevelSummary& r) { return r.samples >= 2; });
  if (usable < 3) {
    throw InsufficientDataError("rate estimation needs at least 3 levels with 2 or more samples");
  }
  RateEstimates rates;
  if (auto f = log_fit(records, [](const LevelSummary& r) { return std::abs(r.mean_y); })) {
    rates.alpha_fit = -f->slope;
    rates.alpha_diagnostics = std::move(*f);
  } else {
    rates.alpha_fit = std::numeric_limits<double>::quiet_NaN();
  }
  rates.alpha = std::isfinite(rates.alpha_fit) ? std::max(alpha_floor, rates.alpha_fit) : alpha_floor;

  if (auto f = log_fit(records, [](const LevelSummary& r) { return r.variance_y; })) {
    rates.beta = -f->slope;
    rates.beta_diagnostics = std::move(*f);
  } else {
    rates.beta = std::numeric_limits<double>::infinity();
  }

  auto g = log_fit(records, [](const LevelSummary& r) { return r.cost; });
  if (!g) throw InsufficientDataError("cost rate needs two levels >= 1 with positive cost");
  rates.gamma = g->slope;
  rates.gamma_diagnostics = std::move(*g);
  return rates;
}

double weak_error_estimate(double mean_y_last, double alpha) {
  if (!(alpha > 0.0)) throw ArgumentError("alpha must be positive");
  return std::abs(mean_y_last) / (std::exp2(alpha) - 1.0);
}

Regime regime(const RateEstimates& rates) {
  if (std::isnan(rates.beta) || !std::isfinite(rates.gamma)) {
    throw ArgumentError("regime needs finite rates");
  }
  if (std::abs(rates.beta - rates.gamma) <= 0.1) return Regime::BetaEqGamma;
  return rates.beta > rates.gamma ? Regime::BetaGtGamma : Regime::BetaLtGamma;
}

std::string to_string(Regime r) {
  switch (r) {
    case Regime::BetaGtGamma:
      return "BetaGtGamma";
    case Regime::BetaEqGamma:
      return "BetaEqGamma";
    case Regime::BetaLtGamma:
      return "BetaLtGamma";
  }
  return "unknown";
}

double EstimatorResult::estimator_variance() const {
  double s = 0.0;
  for (const auto& r : levels) s += r.estimator_variance();
  return s;
}

std::uint64_t level_seed(std::uint64_t run_seed, int level) {
  if (level < 0) throw ArgumentError("level must be >= 0");
  return hash_words({run_seed, kTagLevel, static_cast<std::uint64_t>(level)});
}

void parallel_for(std::size_t count, unsigned workers, const std::function<void(std::size_t)>& fn) {
  if (count == 0) return;
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, count));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::size_t error_index = count;
  std::exception_ptr error;
  auto body = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (i < error_index) {
          error_index = i;
          error = std::current_exception();
        }
      }
    }
  };
  std::vector<std::thread> threads;
  threads.reserve(workers - 1);
  for (unsigned w = 1; w < workers; ++w) threads.emplace_back(body);
  body();
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

namespace {

LevelRecord empty_record(int level, const EstimatorOptions& options) {
  LevelRecord r;
  r.level = level;
  if (options.stream != StreamKind::PseudoRandom) {
    r.randomizations = options.randomizations;
    r.y_by_randomization.resize(options.randomizations);
    r.q_by_randomization.resize(options.randomizations);
  }
  return r;
}

// Extends `record` to `target` points (per randomization for QMC).
void sample_level(const LevelModel& model, const EstimatorOptions& options, LevelRecord& record,
                  std::uint64_t target) {
  const std::uint64_t from = record.n_points;
  if (target <= from) return;
  if (record.is_qmc() && target > kMaxPoints) {
    throw ArgumentError("QMC point count on level " + std::to_string(record.level) +
                        " exceeds 2^32");
  }
  const int level = record.level;
  const std::size_t dim = model.dimension(level);
  const std::uint64_t seed = level_seed(options.seed, level);
  const std::size_t streams = record.is_qmc() ? record.randomizations : 1;
  const std::uint64_t per_stream = target - from;

  std::vector<NormalStream> generators;
  generators.reserve(streams);
  for (std::size_t r = 0; r < streams; ++r) {
    generators.emplace_back(SampleStream{options.stream, dim, seed, static_cast<std::uint32_t>(r)});
  }

  std::vector<LevelSample> out(streams * per_stream);
  parallel_for(out.size(), options.workers, [&](std::size_t k) {
    const std::size_t r = k / per_stream;
    const std::uint64_t index = from + k % per_stream;
    std::vector<double> xi(dim);
    generators[r].normals(index, xi);
    try {
      out[k] = model.evaluate(level, xi);
    } catch (const SolverDivergenceError& e) {
      throw SolverDivergenceError(std::string(e.what()) + " [level " + std::to_string(level) +
                                      ", sample " + std::to_string(index) + ", randomization " +
                                      std::to_string(r) + ", run seed " +
                                      std::to_string(options.seed) + "]",
                                  e.residual_history());
    }
  });
  for (std::size_t k = 0; k < out.size(); ++k) {
    const LevelSample& s = out[k];
    if (!std::isfinite(s.fine) || !std::isfinite(s.coarse) || !(s.cost >= 0.0)) {
      throw ConsistencyError("level " + std::to_string(level) + " produced a non-finite sample");
    }
    record.add(s, k / per_stream);
  }
  record.n_points = target;
}

void check_common(const EstimatorOptions& options, double epsilon) {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw ArgumentError("epsilon must be positive");
  if (options.initial_max_level < 0 || options.initial_max_level > options.max_level) {
    throw ArgumentError("initial level must lie in [0, max_level]");
  }
}

EstimatorResult assemble_result(std::string method, double epsilon, std::vector<LevelRecord> levels,
                                const EstimatorOptions& options) {
  EstimatorResult result;
  result.method = std::move(method);
  result.epsilon = epsilon;
  for (const auto& r : levels) {
    result.estimate += level_estimator_mean(r);
    result.total_work += r.total_cost();
  }
  result.rates = estimate_rates(levels, options.alpha_floor);
  result.regime = regime(result.rates);
  result.weak_error = weak_error_estimate(levels.back().mean_y(), result.rates.alpha);
  result.levels = std::move(levels);
  return result;
}

std::string method_name(StreamKind kind) {
  switch (kind) {
    case StreamKind::PseudoRandom:
      return "MLMC";
    case StreamKind::LatticeShifted:
      return "MLQMC_Lattice";
    case StreamKind::SobolScrambled:
      return "MLQMC_Sobol";
  }
  return "unknown";
}

// Weak-error test on the finest level; adds a level or throws when it fails.
bool weak_error_converged(std::vector<LevelRecord>& levels, const EstimatorOptions& options,
                          double epsilon) {
  if (levels.size() < 3) return false;
  const RateEstimates rates = estimate_rates(levels, options.alpha_floor);
  return weak_error_estimate(levels.back().mean_y(), rates.alpha) < epsilon / std::sqrt(2.0);
}

void add_level(std::vector<LevelRecord>& levels, const EstimatorOptions& options, double epsilon) {
  const int next = static_cast<int>(levels.size());
  if (next > options.max_level) {
    throw MaxLevelError("weak error still above epsilon/sqrt(2) at the maximum level " +
                            std::to_string(options.max_level),
                        assemble_result(method_name(options.stream), epsilon, levels, options));
  }
  levels.push_back(empty_record(next, options));
}

}  // namespace

EstimatorResult mlmc_run(const LevelModel& model, const EstimatorOptions& options, double epsilon) {
  check_common(options, epsilon);
  if (options.stream != StreamKind::PseudoRandom) throw ArgumentError("MLMC needs a pseudo-random stream");
  if (options.initial_samples < 2) throw ArgumentError("MLMC needs at least 2 initial samples");

  std::vector<LevelRecord> levels;
  std::vector<std::uint64_t> target;
  for (int l = 0; l <= options.initial_max_level; ++l) {
    levels.push_back(empty_record(l, options));
    target.push_back(options.initial_samples);
  }
  const double budget = 0.5 * epsilon * epsilon;
  for (;;) {
    for (std::size_t l = 0; l < levels.size(); ++l) sample_level(model, options, levels[l], target[l]);

    std::vector<double> v, c;
    for (const auto& r : levels) {
      v.push_back(r.variance_y());
      c.push_back(r.cost_per_sample());
    }
    const auto n_opt = optimal_allocation(v, c, epsilon);
    bool pending = false;
    for (std::size_t l = 0; l < levels.size(); ++l) {
      if (n_opt[l] > levels[l].n_points) {
        target[l] = n_opt[l];
        pending = true;
      }
    }
    if (pending) continue;

    double total = 0.0;
    for (const auto& r : levels) total += r.estimator_variance();
    if (total > budget) {
      // Rounding left the constraint marginally violated; top up the level
      // with the best variance reduction per unit cost.
      std::size_t best = 0;
      double best_profit = -1.0;
      for (std::size_t l = 0; l < levels.size(); ++l) {
        const double p = levels[l].estimator_variance() / c[l];
        if (p > best_profit) {
          best_profit = p;
          best = l;
        }
      }
      target[best] = levels[best].n_points + levels[best].n_points / 100 + 1;
      continue;
    }

    if (weak_error_converged(levels, options, epsilon)) break;
    add_level(levels, options, epsilon);
    target.push_back(options.initial_samples);
  }
  return assemble_result(method_name(options.stream), epsilon, std::move(levels), options);
}

EstimatorResult mlqmc_run(const LevelModel& model, const EstimatorOptions& options, double epsilon) {
  check_common(options, epsilon);
  if (options.stream == StreamKind::PseudoRandom) throw ArgumentError("MLQMC needs a QMC stream");
  if (options.randomizations < 2) throw ArgumentError("MLQMC needs at least 2 randomizations");
  if (!std::has_single_bit(options.initial_qmc_points)) {
    throw ArgumentError("initial QMC point count must be a power of two");
  }

  std::vector<LevelRecord> levels;
  for (int l = 0; l <= options.initial_max_level; ++l) {
    levels.push_back(empty_record(l, options));
    sample_level(model, options, levels.back(), options.initial_qmc_points);
  }
  const double budget = 0.5 * epsilon * epsilon;
  for (;;) {
    for (;;) {
      double total = 0.0;
      std::size_t best = 0;
      double best_profit = -1.0;
      for (std::size_t l = 0; l < levels.size(); ++l) {
        const double v = levels[l].estimator_variance();
        total += v;
        const double profit =
            v / (static_cast<double>(levels[l].samples()) * levels[l].cost_per_sample());
        if (profit > best_profit) {
          best_profit = profit;
          best = l;
        }
      }
      if (total <= budget) break;
      sample_level(model, options, levels[best], 2 * levels[best].n_points);
    }
    if (weak_error_converged(levels, options, epsilon)) break;
    add_level(levels, options, epsilon);
    sample_level(model, options, levels.back(), options.initial_qmc_points);
  }
  return assemble_result(method_name(options.stream), epsilon, std::move(levels), options);
}

EstimatorResult multilevel_run(const LevelModel& model, const EstimatorOptions& options,
                               double epsilon) {
  return options.stream == StreamKind::PseudoRandom ? mlmc_run(model, options, epsilon)
                                                    : mlqmc_run(model, options, epsilon);
}

std::vector<LevelRecord> fixed_sample_run(const LevelModel& model, const EstimatorOptions& options,
                                          std::span<const std::uint64_t> counts) {
  if (options.stream != StreamKind::PseudoRandom && options.randomizations < 2) {
    throw ArgumentError("randomized QMC needs at least 2 randomizations");
  }
  std::vector<LevelRecord> levels;
  for (std::size_t l = 0; l < counts.size(); ++l) {
    levels.push_back(empty_record(static_cast<int>(l), options));
    sample_level(model, options, levels.back(), counts[l]);
  }
  return levels;
}

VarianceTestResult qmc_variance_test(const LevelModel& model, int level,
                                     std::span<const std::uint64_t> n_grid,
                                     const EstimatorOptions& options) {
  if (n_grid.size() < 3) throw InsufficientDataError("variance test needs at least 3 values of N");
  for (std::size_t i = 0; i < n_grid.size(); ++i) {
    if (!std::has_single_bit(n_grid[i]) || (i > 0 && n_grid[i] <= n_grid[i - 1])) {
      throw ArgumentError("variance test needs increasing powers of two");
    }
  }
  if (options.randomizations < 2) throw ArgumentError("variance test needs at least 2 randomizations");
  if (level < 0) throw ArgumentError("level must be >= 0");

  const std::size_t r_count = options.randomizations;
  const std::uint64_t n_max = n_grid.back();
  const std::size_t dim = model.dimension(level);
  const std::uint64_t seed = level_seed(options.seed, level);
  std::vector<NormalStream> generators;
  for (std::size_t r = 0; r < r_count; ++r) {
    generators.emplace_back(SampleStream{options.stream, dim, seed, static_cast<std::uint32_t>(r)});
  }
  std::vector<double> y(r_count * n_max);
  parallel_for(y.size(), options.workers, [&](std::size_t k) {
    std::vector<double> xi(dim);
    generators[k / n_max].normals(k % n_max, xi);
    const LevelSample s = model.evaluate(level, xi);
    y[k] = s.fine - s.coarse;
  });

  VarianceTestResult result;
  result.level = level;
  std::vector<double> lx, ly;
  for (std::uint64_t n : n_grid) {
    Moments means;
    for (std::size_t r = 0; r < r_count; ++r) {
      CompensatedSum s;
      for (std::uint64_t i = 0; i < n; ++i) s.add(y[r * n_max + i]);
      means.add(s.value() / static_cast<double>(n));
    }
    const double v = means.variance();
    result.n.push_back(n);
    result.variance.push_back(v);
    if (v > 0.0) {
      lx.push_back(std::log2(static_cast<double>(n)));
      ly.push_back(std::log2(v));
    }
  }
  if (lx.size() < 2) throw InsufficientDataError("variance test found fewer than two non-zero variances");
  result.slope = fit_line(lx, ly).slope;
  return result;
}

}  // namespace mlqmc
