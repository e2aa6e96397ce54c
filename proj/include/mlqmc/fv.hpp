#pragma once

#include <span>
#include <vector>

#include "mlqmc/field.hpp"
#include "mlqmc/grid.hpp"

namespace mlqmc {

/// Five-point cell-centered finite-volume operator.
///
/// Row c reads diag[c] u_c + west[c] u_W + east[c] u_E + south[c] u_S +
/// north[c] u_N = rhs[c]. Off-diagonals are stored with their sign (<= 0) and
/// are zero where the neighbor would lie outside the domain. Rows are scaled
/// by 1/h^2 so the operator approximates -div(k grad u) pointwise.
struct DiscreteSystem {
  GridSpec grid;
  std::vector<double> diag;
  std::vector<double> west;
  std::vector<double> east;
  std::vector<double> south;
  std::vector<double> north;
  std::vector<double> rhs;

  /// out = A u
  void apply(std::span<const double> u, std::span<double> out) const;
  /// out = b - A u
  void residual(std::span<const double> u, std::span<const double> b, std::span<double> out) const;
};

/// Harmonic mean 2 a b / (a + b) of two positive cell coefficients.
double face_transmissibility(double k_left, double k_right);

/// Harmonic face transmissibilities on interior faces, Dirichlet data imposed
/// at half-cell distance, Neumann data as a prescribed boundary flux.
DiscreteSystem assemble_system(const GridSpec& grid, const CoefficientField& field,
                               const ProblemSpec& problem);

/// Bilinear interpolation of cell-center values. Outside the band of cell
/// centers the stencil is clamped to the outermost pair and extrapolated.
double qoi_point_value(std::span<const double> solution, const GridSpec& grid, double x, double y);

/// Total outflow -k du/dn through the east edge, using the same half-cell
/// boundary transmissibility as the assembled system.
double qoi_east_flux(std::span<const double> solution, const CoefficientField& field,
                     const GridSpec& grid, const ProblemSpec& problem);

/// Dispatches on problem.qoi.
double evaluate_qoi(std::span<const double> solution, const CoefficientField& field,
                    const ProblemSpec& problem);

}  // namespace mlqmc
