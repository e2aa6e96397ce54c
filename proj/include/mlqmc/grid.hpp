#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <variant>

namespace mlqmc {

/// Uniform square grid on the unit square with `cells_per_dim` cells per axis.
///
/// Cells are indexed (i, j) with i along x and j along y; the linear index is
/// j * cells_per_dim + i. Hierarchy grids have 2^(level+2) cells per axis;
/// grids built directly from a cell count that is not of that form report
/// level -1.
class GridSpec {
 public:
  static GridSpec with_cells(int cells_per_dim);

  int level() const noexcept { return level_; }
  int cells_per_dim() const noexcept { return n_; }
  double cell_width() const noexcept { return h_; }
  std::size_t cell_count() const noexcept { return static_cast<std::size_t>(n_) * n_; }

  std::size_t index(int i, int j) const noexcept { return static_cast<std::size_t>(j) * n_ + i; }
  double center(int i) const noexcept { return (i + 0.5) * h_; }

  friend bool operator==(const GridSpec& a, const GridSpec& b) noexcept { return a.n_ == b.n_; }

 private:
  GridSpec(int level, int n) : level_(level), n_(n), h_(1.0 / n) {}

  int level_;
  int n_;
  double h_;
};

/// Grid of hierarchy level `level` (4 * 2^level cells per axis).
GridSpec grid_for_level(int level);

enum class Edge { West = 0, East = 1, North = 2, South = 3 };
enum class BoundaryKind { Dirichlet, Neumann };

/// Dirichlet value g, or Neumann value v = du/dn on the outward normal.
struct BoundaryCondition {
  BoundaryKind kind = BoundaryKind::Dirichlet;
  double value = 0.0;
};

struct PointValue {
  double x = 0.5;
  double y = 0.5;
};
struct EastBoundaryFlux {};

using QoiSelector = std::variant<PointValue, EastBoundaryFlux>;

/// Boundary data, source term and quantity of interest of
/// -div(k grad u) = f on the unit square.
struct ProblemSpec {
  std::array<BoundaryCondition, 4> boundary{};
  /// Empty means f == 0.
  std::function<double(double, double)> source;
  QoiSelector qoi = PointValue{};

  const BoundaryCondition& edge(Edge e) const { return boundary[static_cast<int>(e)]; }
  BoundaryCondition& edge(Edge e) { return boundary[static_cast<int>(e)]; }

  /// Throws ArgumentError unless at least one edge is Dirichlet and any
  /// point QoI lies in the closed unit square.
  void validate() const;
};

/// Dirichlet on all edges: W = 100, E = 0, N = 50, S = 10; QoI u(0.5, 0.5).
ProblemSpec case_one();
/// Dirichlet W = 100, E = 0; no-flow N and S; QoI is the east outflow.
ProblemSpec case_two();

}  // namespace mlqmc
