#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "mlqmc/grid.hpp"
#include "mlqmc/matern.hpp"
#include "mlqmc/pde_model.hpp"
#include "mlqmc/sampler.hpp"

namespace mlqmc {

enum class CaseId { CaseI, CaseII };
enum class Method { MLMC, MLQMC_Lattice, MLQMC_Sobol };

struct RunConfig {
  CaseId case_id = CaseId::CaseI;
  /// 1-4, see field_parameters().
  int field_id = 1;
  Method method = Method::MLMC;
  std::vector<double> epsilon_list{0.5, 0.25, 0.125, 0.0625};
  std::uint64_t seed = 0;
  int max_level = 6;
  double tau = 1e-10;
  std::filesystem::path output_dir = "output";
  SolverMode solver = SolverMode::Fmg;
  /// Debug: k = 1 everywhere.
  bool unit_coefficient = false;
  std::size_t randomizations = 24;
  std::uint64_t initial_samples = 100;
  std::uint64_t initial_qmc_points = 8;
  std::vector<int> variance_test_levels{0, 1, 2, 3};
  std::vector<std::uint64_t> variance_test_n{16, 32, 64, 128, 256};
  /// Directory for cached KL bases; empty disables the cache.
  std::filesystem::path kl_cache_dir;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Parses `key = value` lines; '#' starts a comment. `case`, `field_id` and
/// `method` are required, everything else has a default. Errors are
/// ConfigError with the offending line number.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& file);
/// Text that parse_config() turns back into an equal config.
std::string serialize_config(const RunConfig& config);
/// Checks ranges; throws ConfigError (line 0).
void validate_config(const RunConfig& config);

/// (nu, corr_length, variance) of random fields 1-4.
MaternParams field_parameters(int field_id);
ProblemSpec problem_for(CaseId id);
StreamKind stream_for(Method method);

std::string to_string(CaseId id);
std::string to_string(Method method);
std::string to_string(SolverMode mode);

}  // namespace mlqmc
