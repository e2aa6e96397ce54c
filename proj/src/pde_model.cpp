#include "mlqmc/pde_model.hpp"

#include <cmath>
#include <string>

#include "mlqmc/errors.hpp"

namespace mlqmc {

PdeLevelModel::PdeLevelModel(ProblemSpec problem, std::shared_ptr<const LevelBasisProvider> bases,
                             PdeModelOptions options)
    : problem_(std::move(problem)), bases_(std::move(bases)), options_(options) {
  problem_.validate();
  if (!bases_ && !options_.unit_coefficient) throw ArgumentError("PDE model needs a KL basis provider");
}

std::size_t PdeLevelModel::dimension(int level) const {
  if (level < 0) throw ArgumentError("level must be >= 0");
  if (options_.unit_coefficient) return 1;
  return bases_->basis(level)->n_terms;
}

CoefficientField PdeLevelModel::sample_field(int level, std::span<const double> normals) const {
  if (options_.unit_coefficient) return constant_field(grid_for_level(level), 1.0);
  return sample_log_field(*bases_->basis(level), normals);
}

PairSolution PdeLevelModel::solve_pair(int level, std::span<const double> normals,
                                       SolverMode mode) const {
  PairSolution out{sample_field(level, normals), constant_field(grid_for_level(0), 1.0)};
  const double scale = std::ldexp(1.0, 2 * level);

  if (level == 0) {
    const LevelSolution s = solve_level(out.fine_field, problem_, options_.multigrid);
    out.fine_qoi = evaluate_qoi(s.solution, out.fine_field, problem_);
    out.cost = s.work_units;
    return out;
  }

  out.coarse_field = coarsen_field(out.fine_field);
  if (mode == SolverMode::Fmg) {
    const FmgResult r = fmg_solve(out.fine_field, problem_, options_.multigrid);
    out.fine_qoi = evaluate_qoi(r.fine_solution, out.fine_field, problem_);
    out.coarse_qoi = evaluate_qoi(r.coarse_solution, out.coarse_field, problem_);
    out.cost = r.work_units * scale;
  } else {
    const LevelSolution fine = solve_level(out.fine_field, problem_, options_.multigrid);
    const LevelSolution coarse = solve_level(out.coarse_field, problem_, options_.multigrid);
    out.fine_qoi = evaluate_qoi(fine.solution, out.fine_field, problem_);
    out.coarse_qoi = evaluate_qoi(coarse.solution, out.coarse_field, problem_);
    out.cost = fine.work_units * scale + coarse.work_units * (scale / 4.0);
  }
  return out;
}

LevelSample PdeLevelModel::evaluate(int level, std::span<const double> normals) const {
  const PairSolution p = solve_pair(level, normals, options_.mode);
  return {p.fine_qoi, p.coarse_qoi, p.cost};
}

EstimatorResult fmg_mlmc_run(const ProblemSpec& problem,
                             std::shared_ptr<const LevelBasisProvider> bases,
                             const MgOptions& multigrid, const EstimatorOptions& options,
                             double epsilon) {
  const PdeLevelModel model(problem, std::move(bases), {SolverMode::Fmg, multigrid, false});
  return multilevel_run(model, options, epsilon);
}

}  // namespace mlqmc
