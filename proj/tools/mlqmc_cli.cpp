#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "mlqmc/config.hpp"
#include "mlqmc/errors.hpp"
#include "mlqmc/estimators.hpp"
#include "mlqmc/experiment.hpp"
#include "mlqmc/kl.hpp"

namespace {

unsigned env_workers() {
  if (const char* env = std::getenv("MLQMC_WORKERS"); env && *env) return static_cast<unsigned>(std::stoul(env));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multilevel Monte Carlo and quasi-Monte Carlo for lognormal diffusion problems"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::vector<double> epsilon;
  std::optional<int> max_level;
  std::optional<unsigned> workers;
  auto* run = app.add_subcommand("run", "Run the experiment described by a config file");
  run->add_option("config", config_path, "Config file (key = value lines)")->required()->check(CLI::ExistingFile);
  run->add_option("--seed", seed, "Override the config seed");
  run->add_option("--epsilon", epsilon, "Override the epsilon list (comma separated)")->delimiter(',');
  run->add_option("--max-level", max_level, "Override the maximum level");
  run->add_option("--workers", workers, "Worker threads (default $MLQMC_WORKERS or all cores)");

  std::string compare_dir;
  auto* compare = app.add_subcommand("compare", "Compare per-level variances across run directories");
  compare->add_option("dir", compare_dir, "Directory holding one subdirectory per run")->required();

  std::string levels_path;
  auto* rates = app.add_subcommand("rates", "Fit alpha, beta, gamma from a per-level table");
  rates->add_option("levels_csv", levels_path, "Per-level CSV written by run")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      mlqmc::restart_with_working_blas(argv);
      mlqmc::RunConfig config = mlqmc::load_config(config_path);
      if (seed) config.seed = *seed;
      if (!epsilon.empty()) config.epsilon_list = epsilon;
      if (max_level) config.max_level = *max_level;
      mlqmc::validate_config(config);
      const auto outcome = mlqmc::run_experiment(config, workers ? *workers : env_workers());
      for (const auto& r : outcome.results) {
        std::cout << "epsilon " << mlqmc::format_real(r.epsilon) << ": estimate "
                  << mlqmc::format_real(r.estimate) << ", levels " << r.levels.size() << ", work "
                  << mlqmc::format_real(r.total_work) << '\n';
      }
      std::cout << "artifacts in " << outcome.output_dir.string() << '\n';
      if (outcome.exit_code != 0) std::cerr << "error: " << outcome.message << '\n';
      return outcome.exit_code;
    }
    if (*compare) {
      const auto out = mlqmc::compare_methods(compare_dir);
      std::cout << "compared at epsilon " << mlqmc::format_real(out.epsilon) << ": " << out.table.string()
                << ", " << out.rates.string() << '\n';
      return 0;
    }
    const auto r = mlqmc::rates_from_levels_file(levels_path);
    std::cout << "alpha,beta,gamma,regime\n"
              << mlqmc::format_real(r.alpha) << ',' << mlqmc::format_real(r.beta) << ','
              << mlqmc::format_real(r.gamma) << ',' << mlqmc::to_string(mlqmc::regime(r)) << '\n';
    return 0;
  } catch (const mlqmc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
