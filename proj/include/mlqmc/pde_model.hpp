#pragma once

#include <memory>
#include <span>

#include "mlqmc/estimators.hpp"
#include "mlqmc/field.hpp"
#include "mlqmc/grid.hpp"
#include "mlqmc/kl.hpp"
#include "mlqmc/multigrid.hpp"

namespace mlqmc {

enum class SolverMode {
  /// One FMG solve per sample; the coarse QoI is the level-(l-1) byproduct.
  Fmg,
  /// Separate solves of the fine system and of the injected coarse system.
  Standalone,
};

struct PdeModelOptions {
  SolverMode mode = SolverMode::Fmg;
  MgOptions multigrid;
  /// Ignore the random inputs and use k = 1 everywhere.
  bool unit_coefficient = false;
};

struct PairSolution {
  CoefficientField fine_field;
  CoefficientField coarse_field;
  double fine_qoi = 0.0;
  double coarse_qoi = 0.0;
  /// Work in level-0 sweep units.
  double cost = 0.0;
};

/// Lognormal-coefficient elliptic problem as a multilevel model.
///
/// A level-l sample draws the level-l field from n_terms(l) normals; the
/// coarse member of the pair is always the injection of that field.
class PdeLevelModel : public LevelModel {
 public:
  PdeLevelModel(ProblemSpec problem, std::shared_ptr<const LevelBasisProvider> bases,
                PdeModelOptions options = {});

  std::size_t dimension(int level) const override;
  LevelSample evaluate(int level, std::span<const double> normals) const override;

  CoefficientField sample_field(int level, std::span<const double> normals) const;
  /// Both QoIs of one sample with the requested solver mode.
  PairSolution solve_pair(int level, std::span<const double> normals, SolverMode mode) const;

  const ProblemSpec& problem() const noexcept { return problem_; }
  const PdeModelOptions& options() const noexcept { return options_; }

 private:
  ProblemSpec problem_;
  std::shared_ptr<const LevelBasisProvider> bases_;
  PdeModelOptions options_;
};

/// Multilevel estimator with one FMG solve per sample; MLMC or MLQMC
/// depending on the stream kind in `options`.
EstimatorResult fmg_mlmc_run(const ProblemSpec& problem,
                             std::shared_ptr<const LevelBasisProvider> bases,
                             const MgOptions& multigrid, const EstimatorOptions& options,
                             double epsilon);

}  // namespace mlqmc
