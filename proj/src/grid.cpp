#include <algorithm>
#include <bit>
#include <cmath>
#include <string>

#include "mlqmc/errors.hpp"
#include "mlqmc/field.hpp"
#include "mlqmc/fv.hpp"
#include "mlqmc/grid.hpp"

namespace mlqmc {

GridSpec GridSpec::with_cells(int cells_per_dim) {
  if (cells_per_dim < 1) {
    throw ArgumentError("grid needs at least one cell per dimension, got " +
                        std::to_string(cells_per_dim));
  }
  const auto n = static_cast<unsigned>(cells_per_dim);
  int level = -1;
  if (std::has_single_bit(n) && n >= 4) level = std::countr_zero(n) - 2;
  return GridSpec(level, cells_per_dim);
}

GridSpec grid_for_level(int level) {
  if (level < 0) throw ArgumentError("grid level must be >= 0, got " + std::to_string(level));
  if (level > 24) throw ArgumentError("grid level " + std::to_string(level) + " is too large");
  return GridSpec::with_cells(4 << level);
}

void ProblemSpec::validate() const {
  const bool any_dirichlet = std::any_of(boundary.begin(), boundary.end(), [](const auto& bc) {
    return bc.kind == BoundaryKind::Dirichlet;
  });
  if (!any_dirichlet) throw ArgumentError("problem needs at least one Dirichlet edge");
  if (const auto* p = std::get_if<PointValue>(&qoi)) {
    if (!(p->x >= 0.0 && p->x <= 1.0 && p->y >= 0.0 && p->y <= 1.0)) {
      throw ArgumentError("point QoI must lie in [0,1]^2");
    }
  }
}

ProblemSpec case_one() {
  ProblemSpec p;
  p.edge(Edge::West) = {BoundaryKind::Dirichlet, 100.0};
  p.edge(Edge::East) = {BoundaryKind::Dirichlet, 0.0};
  p.edge(Edge::North) = {BoundaryKind::Dirichlet, 50.0};
  p.edge(Edge::South) = {BoundaryKind::Dirichlet, 10.0};
  p.qoi = PointValue{0.5, 0.5};
  return p;
}

ProblemSpec case_two() {
  ProblemSpec p;
  p.edge(Edge::West) = {BoundaryKind::Dirichlet, 100.0};
  p.edge(Edge::East) = {BoundaryKind::Dirichlet, 0.0};
  p.edge(Edge::North) = {BoundaryKind::Neumann, 0.0};
  p.edge(Edge::South) = {BoundaryKind::Neumann, 0.0};
  p.qoi = EastBoundaryFlux{};
  return p;
}

std::vector<Point2> cell_centers(const GridSpec& grid) {
  const int n = grid.cells_per_dim();
  std::vector<Point2> pts(grid.cell_count());
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) pts[grid.index(i, j)] = {grid.center(i), grid.center(j)};
  return pts;
}

CoefficientField constant_field(const GridSpec& grid, double value) {
  return {grid, std::vector<double>(grid.cell_count(), value), cell_centers(grid)};
}

double face_transmissibility(double k_left, double k_right) {
  if (!(k_left > 0.0) || !(k_right > 0.0)) {
    throw ArgumentError("face transmissibility needs positive coefficients");
  }
  return 2.0 * k_left * k_right / (k_left + k_right);
}

void DiscreteSystem::apply(std::span<const double> u, std::span<double> out) const {
  const int n = grid.cells_per_dim();
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      const std::size_t c = grid.index(i, j);
      double s = diag[c] * u[c];
      if (i > 0) s += west[c] * u[c - 1];
      if (i + 1 < n) s += east[c] * u[c + 1];
      if (j > 0) s += south[c] * u[c - n];
      if (j + 1 < n) s += north[c] * u[c + n];
      out[c] = s;
    }
  }
}

void DiscreteSystem::residual(std::span<const double> u, std::span<const double> b,
                              std::span<double> out) const {
  apply(u, out);
  for (std::size_t c = 0; c < out.size(); ++c) out[c] = b[c] - out[c];
}

DiscreteSystem assemble_system(const GridSpec& grid, const CoefficientField& field,
                               const ProblemSpec& problem) {
  if (!(field.grid == grid) || field.values.size() != grid.cell_count()) {
    throw ArgumentError("coefficient field does not match the grid");
  }
  problem.validate();
  for (double k : field.values) {
    if (!(k > 0.0) || !std::isfinite(k)) throw ArgumentError("coefficient values must be positive");
  }

  const int n = grid.cells_per_dim();
  const double h = grid.cell_width();
  const double inv_h2 = 1.0 / (h * h);
  const std::size_t cells = grid.cell_count();

  DiscreteSystem sys{grid, std::vector<double>(cells, 0.0), std::vector<double>(cells, 0.0),
                     std::vector<double>(cells, 0.0), std::vector<double>(cells, 0.0),
                     std::vector<double>(cells, 0.0), std::vector<double>(cells, 0.0)};
  const auto& k = field.values;

  // Boundary face of cell c on edge e: Dirichlet couples to g at distance h/2
  // (transmissibility 2k), Neumann injects the flux k v through a face of length h.
  auto boundary_face = [&](std::size_t c, Edge e) {
    const BoundaryCondition& bc = problem.edge(e);
    if (bc.kind == BoundaryKind::Dirichlet) {
      const double t = 2.0 * k[c] * inv_h2;
      sys.diag[c] += t;
      sys.rhs[c] += t * bc.value;
    } else {
      sys.rhs[c] += k[c] * bc.value / h;
    }
  };

  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      const std::size_t c = grid.index(i, j);
      if (problem.source) sys.rhs[c] += problem.source(grid.center(i), grid.center(j));

      if (i > 0) {
        const double t = face_transmissibility(k[c], k[c - 1]) * inv_h2;
        sys.west[c] = -t;
        sys.diag[c] += t;
      } else {
        boundary_face(c, Edge::West);
      }
      if (i + 1 < n) {
        const double t = face_transmissibility(k[c], k[c + 1]) * inv_h2;
        sys.east[c] = -t;
        sys.diag[c] += t;
      } else {
        boundary_face(c, Edge::East);
      }
      if (j > 0) {
        const double t = face_transmissibility(k[c], k[c - n]) * inv_h2;
        sys.south[c] = -t;
        sys.diag[c] += t;
      } else {
        boundary_face(c, Edge::South);
      }
      if (j + 1 < n) {
        const double t = face_transmissibility(k[c], k[c + n]) * inv_h2;
        sys.north[c] = -t;
        sys.diag[c] += t;
      } else {
        boundary_face(c, Edge::North);
      }
    }
  }
  return sys;
}

namespace {

// Lower stencil index and weight along one axis; the index is clamped so the
// two-point stencil stays inside the grid.
std::pair<int, double> axis_stencil(double coord, const GridSpec& grid) {
  const int n = grid.cells_per_dim();
  const double h = grid.cell_width();
  const double s = coord / h - 0.5;
  const int lo = std::clamp(static_cast<int>(std::floor(s)), 0, n - 2);
  return {lo, s - lo};
}

}  // namespace

double qoi_point_value(std::span<const double> solution, const GridSpec& grid, double x, double y) {
  if (!(x >= 0.0 && x <= 1.0 && y >= 0.0 && y <= 1.0)) {
    throw ArgumentError("point QoI outside the unit square");
  }
  if (solution.size() != grid.cell_count()) throw ArgumentError("solution size mismatch");
  if (grid.cells_per_dim() == 1) return solution[0];

  const auto [i, tx] = axis_stencil(x, grid);
  const auto [j, ty] = axis_stencil(y, grid);
  const double u00 = solution[grid.index(i, j)];
  const double u10 = solution[grid.index(i + 1, j)];
  const double u01 = solution[grid.index(i, j + 1)];
  const double u11 = solution[grid.index(i + 1, j + 1)];
  // Exact hits on a cell center return the stored value untouched.
  if (tx == 0.0 && ty == 0.0) return u00;
  return (1.0 - ty) * ((1.0 - tx) * u00 + tx * u10) + ty * ((1.0 - tx) * u01 + tx * u11);
}

double qoi_east_flux(std::span<const double> solution, const CoefficientField& field,
                     const GridSpec& grid, const ProblemSpec& problem) {
  const BoundaryCondition& east = problem.edge(Edge::East);
  if (east.kind != BoundaryKind::Dirichlet) {
    throw UnsupportedError("east boundary flux requires a Dirichlet east edge");
  }
  if (solution.size() != grid.cell_count() || field.values.size() != grid.cell_count()) {
    throw ArgumentError("solution or field size mismatch");
  }
  const int n = grid.cells_per_dim();
  // Per face: transmissibility 2k/h times (u_cell - g) times face length h.
  double flux = 0.0;
  for (int j = 0; j < n; ++j) {
    const std::size_t c = grid.index(n - 1, j);
    flux += 2.0 * field.values[c] * (solution[c] - east.value);
  }
  return flux;
}

double evaluate_qoi(std::span<const double> solution, const CoefficientField& field,
                    const ProblemSpec& problem) {
  if (const auto* p = std::get_if<PointValue>(&problem.qoi)) {
    return qoi_point_value(solution, field.grid, p->x, p->y);
  }
  return qoi_east_flux(solution, field, field.grid, problem);
}

}  // namespace mlqmc
