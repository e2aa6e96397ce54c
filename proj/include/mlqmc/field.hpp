#pragma once

#include <vector>

#include "mlqmc/grid.hpp"

namespace mlqmc {

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2&, const Point2&) = default;
};

/// Cell-centered positive coefficient k(x, omega) on one grid.
///
/// `sample_coords[c]` is the physical point at which the underlying Gaussian
/// field was evaluated for cell `c`. For fields produced by injection these
/// are the selected fine-cell centers, not the coarse-cell centers.
struct CoefficientField {
  GridSpec grid;
  std::vector<double> values;
  std::vector<Point2> sample_coords;
};

/// k == value everywhere, evaluated at the cell centers.
CoefficientField constant_field(const GridSpec& grid, double value);

std::vector<Point2> cell_centers(const GridSpec& grid);

}  // namespace mlqmc
