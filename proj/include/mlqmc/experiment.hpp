#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mlqmc/config.hpp"
#include "mlqmc/csv.hpp"
#include "mlqmc/estimators.hpp"

namespace mlqmc {

/// Column order of the per-level table.
inline const std::vector<std::string> kLevelColumns{"level", "N_l",   "mean_Y", "V_l",
                                                    "mean_Q", "var_Q", "C_l"};
inline const std::vector<std::string> kSummaryColumns{"epsilon", "estimate", "total_work", "alpha",
                                                      "beta",    "gamma",    "regime"};

struct ExperimentOutcome {
  /// 0 on success, 2 when an estimator or solver error stopped the run.
  int exit_code = 0;
  std::string message;
  std::filesystem::path output_dir;
  std::vector<std::filesystem::path> artifacts;
  std::vector<EstimatorResult> results;
};

/// File name of the per-level table for one epsilon.
std::string levels_file_name(double epsilon);
CsvTable levels_table(const std::vector<LevelRecord>& levels);
std::vector<LevelSummary> read_levels_table(const CsvTable& table);

/// Output directory: $MLQMC_OUTPUT_DIR when set, otherwise config.output_dir.
std::filesystem::path resolve_output_dir(const RunConfig& config);

/// Runs the configured estimator for every epsilon and writes the CSV
/// artifacts. Solver and estimator failures are reported through the exit
/// code after the artifacts produced so far have been written. The worker
/// count only affects speed; 0 uses the hardware concurrency.
ExperimentOutcome run_experiment(const RunConfig& config, unsigned workers = 0);

struct ComparisonOutcome {
  std::filesystem::path table;
  std::filesystem::path rates;
  double epsilon = 0.0;
};

/// Joins the per-level tables of the run directories below `dir` at the
/// smallest epsilon they share and writes comparison.csv and
/// comparison_rates.csv into `dir`.
ComparisonOutcome compare_methods(const std::filesystem::path& dir);

/// Rates fitted from a per-level table.
RateEstimates rates_from_levels_file(const std::filesystem::path& file);

}  // namespace mlqmc
