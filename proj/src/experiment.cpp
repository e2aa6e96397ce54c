#include "mlqmc/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <iterator>
#include <limits>
#include <map>
#include <memory>
#include <set>

#include "mlqmc/errors.hpp"
#include "mlqmc/kl.hpp"
#include "mlqmc/pde_model.hpp"

namespace mlqmc {

namespace fs = std::filesystem;

namespace {

std::string count_text(std::uint64_t n) { return std::to_string(n); }

std::vector<std::string> summary_row(const EstimatorResult& r) {
  return {format_real(r.epsilon), format_real(r.estimate), format_real(r.total_work),
          format_real(r.rates.alpha), format_real(r.rates.beta), format_real(r.rates.gamma),
          to_string(r.regime)};
}

double parse_cell(const std::string& cell, const std::string& what) {
  char* end = nullptr;
  const double v = std::strtod(cell.c_str(), &end);
  if (cell.empty() || *end != '\0') throw std::runtime_error("malformed " + what + " value '" + cell + "'");
  return v;
}

}  // namespace

std::string levels_file_name(double epsilon) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "levels_eps_%.6g.csv", epsilon);
  return buf;
}

CsvTable levels_table(const std::vector<LevelRecord>& levels) {
  CsvTable t(kLevelColumns);
  for (const auto& r : levels) {
    const bool any = r.n_points > 0;
    t.add_row({std::to_string(r.level), count_text(r.samples()),
               format_real(any ? r.mean_y() : 0.0), format_real(r.variance_y()),
               format_real(any ? r.mean_q() : 0.0), format_real(r.variance_q()),
               format_real(r.cost_per_sample())});
  }
  return t;
}

std::vector<LevelSummary> read_levels_table(const CsvTable& table) {
  const std::size_t level = table.column("level"), n = table.column("N_l"),
                    mean = table.column("mean_Y"), var = table.column("V_l"), cost = table.column("C_l");
  std::vector<LevelSummary> out;
  for (const auto& row : table.rows()) {
    out.push_back({static_cast<int>(parse_cell(row[level], "level")),
                   static_cast<std::uint64_t>(parse_cell(row[n], "N_l")), parse_cell(row[mean], "mean_Y"),
                   parse_cell(row[var], "V_l"), parse_cell(row[cost], "C_l")});
  }
  return out;
}

fs::path resolve_output_dir(const RunConfig& config) {
  if (const char* env = std::getenv("MLQMC_OUTPUT_DIR"); env && *env) return env;
  return config.output_dir;
}

ExperimentOutcome run_experiment(const RunConfig& config, unsigned workers) {
  validate_config(config);
  ExperimentOutcome outcome;
  outcome.output_dir = resolve_output_dir(config);
  fs::create_directories(outcome.output_dir);
  auto emit = [&](const std::string& name, const std::string& content) {
    const fs::path file = outcome.output_dir / name;
    write_file_atomic(file, content);
    outcome.artifacts.push_back(file);
  };
  emit("run.cfg", serialize_config(config));

  LevelBasisOptions basis_options;
  basis_options.cache_dir = config.kl_cache_dir;
  if (basis_options.cache_dir.empty()) {
    if (const char* env = std::getenv("MLQMC_KL_CACHE_DIR"); env && *env) basis_options.cache_dir = env;
  }
  if (!basis_options.cache_dir.empty()) fs::create_directories(basis_options.cache_dir);
  auto bases = std::make_shared<const LevelBasisProvider>(field_parameters(config.field_id), basis_options);

  PdeModelOptions model_options;
  model_options.mode = config.solver;
  model_options.multigrid.tau = config.tau;
  model_options.unit_coefficient = config.unit_coefficient;
  const PdeLevelModel model(problem_for(config.case_id), bases, model_options);

  EstimatorOptions options;
  options.seed = config.seed;
  options.stream = stream_for(config.method);
  options.max_level = config.max_level;
  options.initial_samples = config.initial_samples;
  options.initial_qmc_points = config.initial_qmc_points;
  options.randomizations = config.randomizations;
  options.workers = workers;

  CsvTable summary(kSummaryColumns);
  CsvTable cost({"epsilon", "total_work", "levels", "estimator_variance", "weak_error"});
  auto record = [&](const EstimatorResult& r) {
    emit(levels_file_name(r.epsilon), levels_table(r.levels).str());
    summary.add_row(summary_row(r));
  };

  for (double eps : config.epsilon_list) {
    try {
      EstimatorResult r = multilevel_run(model, options, eps);
      record(r);
      cost.add_row({format_real(eps), format_real(r.total_work), std::to_string(r.levels.size()),
                    format_real(r.estimator_variance()), format_real(r.weak_error)});
      outcome.results.push_back(std::move(r));
    } catch (const MaxLevelError& e) {
      record(e.partial());
      outcome.exit_code = 2;
      outcome.message = "epsilon " + format_real(eps) + ": " + e.what();
      break;
    } catch (const SolverDivergenceError& e) {
      outcome.exit_code = 2;
      outcome.message = "epsilon " + format_real(eps) + ": " + e.what();
      break;
    } catch (const InsufficientDataError& e) {
      outcome.exit_code = 2;
      outcome.message = "epsilon " + format_real(eps) + ": " + e.what();
      break;
    } catch (const ConsistencyError& e) {
      outcome.exit_code = 2;
      outcome.message = "epsilon " + format_real(eps) + ": " + e.what();
      break;
    }
  }
  emit("summary.csv", summary.str());
  emit("cost.csv", cost.str());

  if (outcome.results.size() >= 2) {
    std::vector<double> x, y;
    for (const auto& r : outcome.results) {
      x.push_back(std::log2(r.epsilon));
      y.push_back(std::log2(r.total_work));
    }
    CsvTable slope({"slope", "points"});
    slope.add_row({format_real(fit_line(x, y).slope), std::to_string(x.size())});
    emit("cost_slope.csv", slope.str());
  }

  if (outcome.exit_code == 0 && config.method != Method::MLMC && !config.unit_coefficient) {
    CsvTable table({"level", "N", "variance"});
    CsvTable rates({"level", "lambda"});
    for (int level : config.variance_test_levels) {
      try {
        const VarianceTestResult v = qmc_variance_test(model, level, config.variance_test_n, options);
        for (std::size_t i = 0; i < v.n.size(); ++i) {
          table.add_row({std::to_string(level), count_text(v.n[i]), format_real(v.variance[i])});
        }
        rates.add_row({std::to_string(level), format_real(v.slope)});
      } catch (const std::runtime_error& e) {
        outcome.exit_code = 2;
        outcome.message = "variance test on level " + std::to_string(level) + ": " + e.what();
        break;
      }
    }
    emit("variance_test.csv", table.str());
    emit("variance_test_rates.csv", rates.str());
  }
  return outcome;
}

ComparisonOutcome compare_methods(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir.string());
  std::vector<fs::path> runs;
  std::vector<std::string> absent;
  std::vector<fs::path> children;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory()) children.push_back(entry.path());
  }
  std::sort(children.begin(), children.end());
  for (const auto& p : children) {
    const bool has_cfg = fs::exists(p / "run.cfg");
    const bool has_summary = fs::exists(p / "summary.csv");
    if (has_cfg && has_summary) {
      runs.push_back(p);
    } else if (has_cfg || has_summary) {
      absent.push_back((p / (has_cfg ? "summary.csv" : "run.cfg")).string());
    }
  }
  auto fail = [&](const std::string& why) {
    std::string msg = why;
    for (const auto& a : absent) msg += "\n  missing: " + a;
    throw std::runtime_error(msg);
  };
  if (runs.size() < 2) fail("compare needs at least two run directories with run.cfg and summary.csv");

  struct Run {
    std::string name;
    RunConfig config;
    CsvTable summary;
  };
  std::vector<Run> loaded;
  for (const auto& p : runs) {
    loaded.push_back({p.filename().string(), load_config(p / "run.cfg"), CsvTable::read(p / "summary.csv")});
  }

  std::set<double> common;
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    std::set<double> eps;
    const auto col = loaded[i].summary.column("epsilon");
    for (const auto& row : loaded[i].summary.rows()) eps.insert(parse_cell(row[col], "epsilon"));
    if (i == 0) {
      common = eps;
    } else {
      std::set<double> both;
      std::set_intersection(common.begin(), common.end(), eps.begin(), eps.end(),
                            std::inserter(both, both.begin()));
      common = std::move(both);
    }
  }
  if (common.empty()) fail("the runs share no epsilon value");
  const double eps = *common.begin();

  std::vector<std::vector<LevelSummary>> levels;
  for (const auto& p : runs) {
    const fs::path f = p / levels_file_name(eps);
    if (!fs::exists(f)) absent.push_back(f.string());
  }
  if (!absent.empty()) fail("per-level tables are missing");
  for (const auto& p : runs) levels.push_back(read_levels_table(CsvTable::read(p / levels_file_name(eps))));

  std::size_t reference = 0;
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    if (loaded[i].config.method == Method::MLMC) {
      reference = i;
      break;
    }
  }
  std::map<int, double> reference_v;
  for (const auto& s : levels[reference]) reference_v[s.level] = s.variance_y;

  CsvTable table({"run", "method", "level", "N_l", "V_l", "variance_ratio"});
  CsvTable rates({"run", "method", "epsilon", "total_work", "beta"});
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    const std::string method = to_string(loaded[i].config.method);
    for (const auto& s : levels[i]) {
      const auto it = reference_v.find(s.level);
      double ratio = std::numeric_limits<double>::quiet_NaN();
      if (it != reference_v.end()) ratio = s.variance_y == it->second ? 1.0 : s.variance_y / it->second;
      table.add_row({loaded[i].name, method, std::to_string(s.level), count_text(s.samples),
                     format_real(s.variance_y), format_real(ratio)});
    }
    const auto& summary = loaded[i].summary;
    for (const auto& row : summary.rows()) {
      if (parse_cell(row[summary.column("epsilon")], "epsilon") != eps) continue;
      rates.add_row({loaded[i].name, method, format_real(eps), row[summary.column("total_work")],
                     row[summary.column("beta")]});
    }
  }
  ComparisonOutcome out{dir / "comparison.csv", dir / "comparison_rates.csv", eps};
  write_file_atomic(out.table, table.str());
  write_file_atomic(out.rates, rates.str());
  return out;
}

RateEstimates rates_from_levels_file(const fs::path& file) {
  const auto levels = read_levels_table(CsvTable::read(file));
  return estimate_rates(std::span<const LevelSummary>(levels));
}

}  // namespace mlqmc
