#include "mlqmc/multigrid.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mlqmc/errors.hpp"
#include "mlqmc/kl.hpp"

namespace mlqmc {

namespace {

void check_size(std::size_t got, std::size_t want, const char* what) {
  if (got != want) {
    throw ArgumentError(std::string(what) + " has " + std::to_string(got) + " entries, expected " +
                        std::to_string(want));
  }
}

// Parent and bilinear partner of fine index f along one axis; a partner
// beyond an edge is replaced by the parent times `weight`.
struct Axis {
  int parent;
  int partner;
  double weight;
};

Axis axis_of(int f, int coarse_n, EdgeExtrapolation low, EdgeExtrapolation high) {
  const int parent = f / 2;
  const int partner = (f % 2 == 0) ? parent - 1 : parent + 1;
  if (partner < 0) return {parent, parent, low == EdgeExtrapolation::Constant ? 1.0 : -1.0};
  if (partner >= coarse_n) return {parent, parent, high == EdgeExtrapolation::Constant ? 1.0 : -1.0};
  return {parent, partner, 1.0};
}

EdgeExtrapolation rule(const EdgeRules& rules, Edge e) { return rules[static_cast<int>(e)]; }

}  // namespace

double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

void WorkLog::add(int level, double count) {
  if (level < 0) throw ArgumentError("work level must be >= 0");
  if (sweeps.size() <= static_cast<std::size_t>(level)) sweeps.resize(level + 1, 0.0);
  sweeps[level] += count;
}

double WorkLog::work_units(int reference_level) const {
  double w = 0.0;
  for (std::size_t t = 0; t < sweeps.size(); ++t)
    w += sweeps[t] * std::ldexp(1.0, 2 * (static_cast<int>(t) - reference_level));
  return w;
}

void smooth(const DiscreteSystem& system, std::span<double> u, std::span<const double> rhs,
            int sweeps) {
  const std::size_t cells = system.grid.cell_count();
  check_size(u.size(), cells, "solution");
  check_size(rhs.size(), cells, "right-hand side");
  const int n = system.grid.cells_per_dim();
  for (int s = 0; s < sweeps; ++s) {
    for (int color = 0; color < 2; ++color) {
      for (int j = 0; j < n; ++j) {
        for (int i = (j + color) % 2; i < n; i += 2) {
          const std::size_t c = system.grid.index(i, j);
          double r = rhs[c];
          if (i > 0) r -= system.west[c] * u[c - 1];
          if (i + 1 < n) r -= system.east[c] * u[c + 1];
          if (j > 0) r -= system.south[c] * u[c - n];
          if (j + 1 < n) r -= system.north[c] * u[c + n];
          u[c] = r / system.diag[c];
        }
      }
    }
  }
}

std::vector<double> restrict_to_coarse(std::span<const double> fine, const GridSpec& fine_grid) {
  const int n = fine_grid.cells_per_dim();
  if (n % 2 != 0) throw ArgumentError("restriction needs an even number of cells per dimension");
  check_size(fine.size(), fine_grid.cell_count(), "fine vector");
  const GridSpec coarse = GridSpec::with_cells(n / 2);
  const int nc = n / 2;
  std::vector<double> out(coarse.cell_count());
  for (int J = 0; J < nc; ++J) {
    for (int I = 0; I < nc; ++I) {
      const std::size_t f = fine_grid.index(2 * I, 2 * J);
      out[coarse.index(I, J)] = 0.25 * (fine[f] + fine[f + 1] + fine[f + n] + fine[f + n + 1]);
    }
  }
  return out;
}

EdgeRules correction_rules(const ProblemSpec& problem) {
  EdgeRules rules = kConstantEdges;
  for (int e = 0; e < 4; ++e) {
    if (problem.boundary[e].kind == BoundaryKind::Dirichlet) rules[e] = EdgeExtrapolation::ZeroDirichlet;
  }
  return rules;
}

std::vector<double> prolong_to_fine(std::span<const double> coarse, const GridSpec& coarse_grid,
                                    const EdgeRules& rules) {
  check_size(coarse.size(), coarse_grid.cell_count(), "coarse vector");
  const int nc = coarse_grid.cells_per_dim();
  const GridSpec fine = GridSpec::with_cells(2 * nc);
  const int n = 2 * nc;
  std::vector<double> out(fine.cell_count());
  for (int j = 0; j < n; ++j) {
    const Axis ay = axis_of(j, nc, rule(rules, Edge::South), rule(rules, Edge::North));
    for (int i = 0; i < n; ++i) {
      const Axis ax = axis_of(i, nc, rule(rules, Edge::West), rule(rules, Edge::East));
      out[fine.index(i, j)] =
          0.5625 * coarse[coarse_grid.index(ax.parent, ay.parent)] +
          0.1875 * ax.weight * coarse[coarse_grid.index(ax.partner, ay.parent)] +
          0.1875 * ay.weight * coarse[coarse_grid.index(ax.parent, ay.partner)] +
          0.0625 * ax.weight * ay.weight * coarse[coarse_grid.index(ax.partner, ay.partner)];
    }
  }
  return out;
}

DenseCholesky::DenseCholesky(const DiscreteSystem& system) : n_(system.grid.cell_count()) {
  const int m = system.grid.cells_per_dim();
  l_.assign(n_ * n_, 0.0);
  auto a = [&](std::size_t r, std::size_t c) -> double& { return l_[r * n_ + c]; };
  for (int j = 0; j < m; ++j) {
    for (int i = 0; i < m; ++i) {
      const std::size_t c = system.grid.index(i, j);
      a(c, c) = system.diag[c];
      if (i > 0) a(c, c - 1) = system.west[c];
      if (j > 0) a(c, c - m) = system.south[c];
    }
  }
  for (std::size_t k = 0; k < n_; ++k) {
    double d = a(k, k);
    for (std::size_t p = 0; p < k; ++p) d -= a(k, p) * a(k, p);
    if (!(d > 0.0)) throw ConsistencyError("coarsest-level operator is not positive definite");
    a(k, k) = std::sqrt(d);
    for (std::size_t r = k + 1; r < n_; ++r) {
      double s = a(r, k);
      for (std::size_t p = 0; p < k; ++p) s -= a(r, p) * a(k, p);
      a(r, k) = s / a(k, k);
    }
  }
}

void DenseCholesky::solve(std::span<const double> rhs, std::span<double> x) const {
  check_size(rhs.size(), n_, "right-hand side");
  check_size(x.size(), n_, "solution");
  std::vector<double> y(n_);
  for (std::size_t r = 0; r < n_; ++r) {
    double s = rhs[r];
    for (std::size_t p = 0; p < r; ++p) s -= l_[r * n_ + p] * y[p];
    y[r] = s / l_[r * n_ + r];
  }
  for (std::size_t r = n_; r-- > 0;) {
    double s = y[r];
    for (std::size_t p = r + 1; p < n_; ++p) s -= l_[p * n_ + r] * x[p];
    x[r] = s / l_[r * n_ + r];
  }
}

namespace {

std::vector<CoefficientField> injected_fields(const CoefficientField& finest) {
  const int level = finest.grid.level();
  if (level < 0) throw ArgumentError("multigrid needs a grid with 2^(l+2) cells per dimension");
  std::vector<CoefficientField> fields;
  fields.reserve(level + 1);
  fields.push_back(finest);
  for (int t = level; t > 0; --t) fields.push_back(coarsen_field(fields.back()));
  std::reverse(fields.begin(), fields.end());
  return fields;
}

std::vector<DiscreteSystem> assemble_all(const std::vector<CoefficientField>& fields,
                                         const ProblemSpec& problem) {
  std::vector<DiscreteSystem> systems;
  systems.reserve(fields.size());
  for (const auto& f : fields) systems.push_back(assemble_system(f.grid, f, problem));
  return systems;
}

}  // namespace

MgHierarchy::MgHierarchy(const CoefficientField& finest, const ProblemSpec& problem)
    : fields_(injected_fields(finest)),
      systems_(assemble_all(fields_, problem)),
      coarse_(systems_.front()),
      correction_(correction_rules(problem)) {}

void v_cycle(const MgHierarchy& hierarchy, int level, std::span<double> u,
             std::span<const double> rhs, int nu1, int nu2, WorkLog* log) {
  if (level < 0 || level > hierarchy.finest_level()) {
    throw ArgumentError("V-cycle level " + std::to_string(level) + " outside the hierarchy");
  }
  const DiscreteSystem& sys = hierarchy.system(level);
  const std::size_t cells = sys.grid.cell_count();
  check_size(u.size(), cells, "solution");
  check_size(rhs.size(), cells, "right-hand side");

  if (level == 0) {
    hierarchy.coarse_solver().solve(rhs, u);
    if (log) log->add(0, kCoarseSolveSweeps);
    return;
  }

  smooth(sys, u, rhs, nu1);
  std::vector<double> r(cells);
  sys.residual(u, rhs, r);
  const std::vector<double> rc = restrict_to_coarse(r, sys.grid);
  std::vector<double> ec(rc.size(), 0.0);
  v_cycle(hierarchy, level - 1, ec, rc, nu1, nu2, log);
  const std::vector<double> e = prolong_to_fine(ec, hierarchy.system(level - 1).grid, hierarchy.correction());
  for (std::size_t c = 0; c < cells; ++c) u[c] += e[c];
  smooth(sys, u, rhs, nu2);
  if (log) log->add(level, nu1 + nu2);
}

namespace {

[[noreturn]] void diverged(int level, const MgOptions& options, std::vector<double> history) {
  throw SolverDivergenceError("multigrid did not reach the residual tolerance on level " +
                                  std::to_string(level) + " within " +
                                  std::to_string(options.max_cycles) + " cycles",
                              std::move(history));
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Plain V-cycle iteration; returns the residual history.
std::vector<double> solve_v_cycles(const MgHierarchy& h, int t, std::vector<double>& u, double target,
                                   const MgOptions& options, FmgResult& result) {
  const DiscreteSystem& sys = h.system(t);
  std::vector<double> r(u.size());
  std::vector<double> history;
  sys.residual(u, sys.rhs, r);
  history.push_back(norm2(r));
  while (history.back() > target) {
    if (!std::isfinite(history.back()) || result.cycles_per_level[t] >= options.max_cycles) {
      diverged(t, options, std::move(history));
    }
    v_cycle(h, t, u, sys.rhs, options.pre_sweeps, options.post_sweeps, &result.work);
    ++result.cycles_per_level[t];
    sys.residual(u, sys.rhs, r);
    history.push_back(norm2(r));
  }
  return history;
}

// Restarted GCR with one V-cycle as right preconditioner per step. The
// residual norm is non-increasing; convergence is confirmed on the true residual.
std::vector<double> solve_gcr(const MgHierarchy& h, int t, std::vector<double>& u, double target,
                              const MgOptions& options, FmgResult& result) {
  const DiscreteSystem& sys = h.system(t);
  const std::size_t n = u.size();
  const auto restart = static_cast<std::size_t>(std::max(1, options.krylov_restart));
  std::vector<double> r(n);
  std::vector<std::vector<double>> zs, qs;
  std::vector<double> history;
  sys.residual(u, sys.rhs, r);
  history.push_back(norm2(r));
  for (;;) {
    if (history.back() <= target) {
      sys.residual(u, sys.rhs, r);
      history.back() = norm2(r);
      if (history.back() <= target) break;
    }
    if (!std::isfinite(history.back()) || result.cycles_per_level[t] >= options.max_cycles) {
      diverged(t, options, std::move(history));
    }
    std::vector<double> z(n, 0.0), q(n);
    v_cycle(h, t, z, r, options.pre_sweeps, options.post_sweeps, &result.work);
    sys.apply(z, q);
    result.work.add(t, kMatvecSweeps);
    ++result.cycles_per_level[t];
    for (std::size_t j = 0; j < qs.size(); ++j) {
      const double b = dot(q, qs[j]);
      for (std::size_t i = 0; i < n; ++i) {
        q[i] -= b * qs[j][i];
        z[i] -= b * zs[j][i];
      }
    }
    const double nq = norm2(q);
    if (!(nq > 0.0) || !std::isfinite(nq)) diverged(t, options, std::move(history));
    for (std::size_t i = 0; i < n; ++i) {
      q[i] /= nq;
      z[i] /= nq;
    }
    const double a = dot(r, q);
    for (std::size_t i = 0; i < n; ++i) {
      u[i] += a * z[i];
      r[i] -= a * q[i];
    }
    history.push_back(norm2(r));
    zs.push_back(std::move(z));
    qs.push_back(std::move(q));
    if (qs.size() == restart) {
      zs.clear();
      qs.clear();
      sys.residual(u, sys.rhs, r);
      history.back() = norm2(r);
    }
  }
  return history;
}

}  // namespace

FmgResult fmg_solve(const CoefficientField& field, const ProblemSpec& problem,
                    const MgOptions& options) {
  if (field.grid.level() < 1) throw ArgumentError("FMG needs level >= 1");
  return fmg_solve(MgHierarchy(field, problem), options);
}

FmgResult fmg_solve(const MgHierarchy& hierarchy, const MgOptions& options) {
  const int level = hierarchy.finest_level();
  if (level < 1) throw ArgumentError("FMG needs level >= 1");
  if (!(options.tau > 0.0) || options.max_cycles < 1) throw ArgumentError("invalid multigrid options");

  FmgResult result;
  result.level = level;
  result.cycles_per_level.assign(level + 1, 0);
  result.work.add(0, kCoarseFactorSweeps);

  std::vector<double> u(hierarchy.system(0).grid.cell_count());
  v_cycle(hierarchy, 0, u, hierarchy.system(0).rhs, options.pre_sweeps, options.post_sweeps,
          &result.work);

  for (int t = 1; t <= level; ++t) {
    const DiscreteSystem& sys = hierarchy.system(t);
    if (t == level) result.coarse_solution = u;
    u = prolong_to_fine(u, hierarchy.system(t - 1).grid);

    const double target = options.tau * norm2(sys.rhs);
    std::vector<double> history =
        options.krylov ? solve_gcr(hierarchy, t, u, target, options, result)
                       : solve_v_cycles(hierarchy, t, u, target, options, result);
    if (t == level) result.fine_residual_history = std::move(history);
  }
  result.fine_solution = std::move(u);
  result.work_units = result.work.work_units(level);
  return result;
}

LevelSolution solve_level(const CoefficientField& field, const ProblemSpec& problem,
                          const MgOptions& options) {
  const int level = field.grid.level();
  if (level < 0) throw ArgumentError("solve_level needs a grid with 2^(l+2) cells per dimension");
  if (level >= 1) {
    FmgResult r = fmg_solve(field, problem, options);
    return {std::move(r.fine_solution), r.work_units};
  }
  const DiscreteSystem sys = assemble_system(field.grid, field, problem);
  LevelSolution out{std::vector<double>(sys.grid.cell_count()), 0.0};
  DenseCholesky(sys).solve(sys.rhs, out.solution);
  out.work_units = kCoarseFactorSweeps + kCoarseSolveSweeps;
  return out;
}

double fmg_work_from_cycles(std::span<const int> cycles_per_level, const MgOptions& options) {
  if (cycles_per_level.size() < 2) throw ArgumentError("cycle counts must cover levels 0..l, l >= 1");
  const int level = static_cast<int>(cycles_per_level.size()) - 1;
  WorkLog log;
  // Each level-s cycle visits every level t <= s once, ending in one coarse solve.
  long total_cycles = 0;
  for (int s = 1; s <= level; ++s) total_cycles += cycles_per_level[s];
  log.add(0, kCoarseFactorSweeps + kCoarseSolveSweeps * static_cast<double>(1 + total_cycles));
  for (int t = 1; t <= level; ++t) {
    long visits = 0;
    for (int s = t; s <= level; ++s) visits += cycles_per_level[s];
    log.add(t, static_cast<double>(visits) * (options.pre_sweeps + options.post_sweeps));
    if (options.krylov) log.add(t, kMatvecSweeps * cycles_per_level[t]);
  }
  return log.work_units(level);
}

}  // namespace mlqmc
