#pragma once

#include <array>
#include <span>
#include <vector>

#include "mlqmc/field.hpp"
#include "mlqmc/fv.hpp"
#include "mlqmc/grid.hpp"

namespace mlqmc {

struct MgOptions {
  int pre_sweeps = 1;
  int post_sweeps = 1;
  /// Relative residual ||b - A u|| / ||b|| that counts as converged.
  double tau = 1e-10;
  int max_cycles = 50;
  /// Use each V-cycle as the preconditioner of a restarted GCR iteration
  /// instead of iterating V-cycles alone. Robust for strongly varying k.
  bool krylov = true;
  /// GCR restart length.
  int krylov_restart = 10;
};

/// Work charged per residual evaluation of a GCR step, in sweeps of its level.
inline constexpr double kMatvecSweeps = 1.0;

/// Work charged for the dense coarsest-level solve, in level-0 sweep equivalents.
inline constexpr double kCoarseSolveSweeps = 3.0;
/// Work charged once per hierarchy for factoring the coarsest operator.
inline constexpr double kCoarseFactorSweeps = 8.0;

/// Smoothing sweeps performed per hierarchy level (index = level).
struct WorkLog {
  std::vector<double> sweeps;

  void add(int level, double count);
  /// sum_t sweeps[t] 4^(t - reference_level)
  double work_units(int reference_level) const;
};

/// Red-black Gauss-Seidel; red cells are those with (i + j) even.
void smooth(const DiscreteSystem& system, std::span<double> u, std::span<const double> rhs,
            int sweeps);

/// Average of the four children of each coarse cell.
std::vector<double> restrict_to_coarse(std::span<const double> fine, const GridSpec& fine_grid);

/// How prolongation fills the missing neighbor beyond an edge.
enum class EdgeExtrapolation {
  /// Repeat the boundary cell value.
  Constant,
  /// Mirror with opposite sign, so the interpolant vanishes on the edge.
  ZeroDirichlet,
};
/// Indexed by Edge.
using EdgeRules = std::array<EdgeExtrapolation, 4>;

inline constexpr EdgeRules kConstantEdges{EdgeExtrapolation::Constant, EdgeExtrapolation::Constant,
                                          EdgeExtrapolation::Constant, EdgeExtrapolation::Constant};

/// Rules for coarse-grid error corrections: ZeroDirichlet on Dirichlet edges.
EdgeRules correction_rules(const ProblemSpec& problem);

/// Bilinear interpolation of cell-centered values to the children.
std::vector<double> prolong_to_fine(std::span<const double> coarse, const GridSpec& coarse_grid,
                                    const EdgeRules& rules = kConstantEdges);

/// Dense Cholesky factor of a small SPD system.
class DenseCholesky {
 public:
  explicit DenseCholesky(const DiscreteSystem& system);
  void solve(std::span<const double> rhs, std::span<double> x) const;

 private:
  std::size_t n_ = 0;
  std::vector<double> l_;  // row-major lower triangle
};

/// Rediscretized systems on levels 0..finest, each assembled from the
/// coefficient field injected down from the finest level.
class MgHierarchy {
 public:
  MgHierarchy(const CoefficientField& finest, const ProblemSpec& problem);

  int finest_level() const noexcept { return static_cast<int>(systems_.size()) - 1; }
  const DiscreteSystem& system(int level) const { return systems_.at(level); }
  const CoefficientField& field(int level) const { return fields_.at(level); }
  const DenseCholesky& coarse_solver() const noexcept { return coarse_; }
  const EdgeRules& correction() const noexcept { return correction_; }

 private:
  std::vector<CoefficientField> fields_;
  std::vector<DiscreteSystem> systems_;
  DenseCholesky coarse_;
  EdgeRules correction_;
};

/// One V(nu1, nu2) cycle on `level` for A u = rhs, updating u in place.
void v_cycle(const MgHierarchy& hierarchy, int level, std::span<double> u,
             std::span<const double> rhs, int nu1, int nu2, WorkLog* log = nullptr);

struct FmgResult {
  int level = 0;
  std::vector<double> fine_solution;
  /// Converged level-(level-1) solution captured before the final prolongation.
  std::vector<double> coarse_solution;
  /// Smoothing work in fine-grid sweep equivalents.
  double work_units = 0.0;
  std::vector<int> cycles_per_level;
  WorkLog work;
  std::vector<double> fine_residual_history;
};

/// Full multigrid from level 0 to the field's level (>= 1). Each level is
/// iterated until ||b - A u|| <= tau ||b||; cycles_per_level counts V-cycles.
FmgResult fmg_solve(const CoefficientField& field, const ProblemSpec& problem,
                    const MgOptions& options = {});
FmgResult fmg_solve(const MgHierarchy& hierarchy, const MgOptions& options = {});

struct LevelSolution {
  std::vector<double> solution;
  double work_units = 0.0;
};

/// Solution on the field's own level: FMG for level >= 1, a direct solve on level 0.
LevelSolution solve_level(const CoefficientField& field, const ProblemSpec& problem,
                          const MgOptions& options = {});

/// Work of an FMG solve reconstructed from its cycle counts.
double fmg_work_from_cycles(std::span<const int> cycles_per_level, const MgOptions& options);

/// Euclidean norm.
double norm2(std::span<const double> v);

}  // namespace mlqmc
