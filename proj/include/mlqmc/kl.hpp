#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <vector>

#include "mlqmc/field.hpp"
#include "mlqmc/grid.hpp"
#include "mlqmc/matern.hpp"

namespace mlqmc {

/// Truncated Karhunen-Loeve basis of a Matern field, discretized by the
/// Nystrom method with equal quadrature weights at a set of points.
///
/// Modes are unit-norm under the weighted inner product
/// sum_p cell_area * phi_s(x_p) phi_t(x_p). `eigenvalues` holds the full
/// discrete spectrum in descending order (clamped at zero); only the first
/// `n_terms` modes are stored.
struct KLBasis {
  std::optional<GridSpec> grid;
  std::vector<Point2> points;
  double cell_area = 0.0;
  MaternParams params;
  double energy_target = 0.99;
  std::vector<double> eigenvalues;
  std::size_t n_terms = 0;
  /// Column-major, point_count() x n_terms.
  std::vector<double> modes;
  /// True when the modes were extended from a coarser reference basis
  /// instead of being computed by a dense eigensolve at `points`.
  bool interpolated = false;

  std::size_t point_count() const noexcept { return points.size(); }
  std::span<const double> mode(std::size_t t) const {
    return {modes.data() + t * points.size(), points.size()};
  }
  /// Retained eigenvalue mass over sigma^2 |Omega|.
  double energy_ratio() const;
  /// Sum over the whole discrete spectrum.
  double total_energy() const;
};

/// Compares the linked BLAS matrix product against a plain loop on a few
/// shapes. Runs once per process; some optimized kernels return wrong
/// products on some CPUs (OpenBLAS: override with OPENBLAS_CORETYPE).
bool blas_self_check();

/// Throws ConsistencyError when blas_self_check() fails.
void require_working_blas();

/// When the self-check fails and OPENBLAS_CORETYPE is unset, sets it to
/// Haswell and re-executes the current program with `argv`; OpenBLAS only
/// reads the variable when it is loaded. Returns otherwise.
void restart_with_working_blas(char** argv);

/// Dense weighted covariance matrix cell_area * C(|x_p - x_q|), column-major.
std::vector<double> weighted_covariance_matrix(std::span<const Point2> points, double cell_area,
                                               const MaternParams& params);

/// KL basis at the cell centers of `grid`.
KLBasis build_kl_basis(const GridSpec& grid, const MaternParams& params,
                       double energy_target = 0.99);

/// KL basis at arbitrary distinct points of the unit square. Each point
/// carries weight 1 / points.size(). `grid`, when given, is attached to the
/// basis so samples can be turned into coefficient fields.
KLBasis kl_basis_at_points(std::span<const Point2> points, const MaternParams& params,
                           double energy_target = 0.99, std::optional<GridSpec> grid = {});

/// Extends `reference` to new points through the Nystrom interpolation
/// phi_t(x) = (w / theta_t) sum_q C(x, x_q) phi_t(x_q). Keeps the reference
/// spectrum and truncation.
KLBasis extend_kl_basis(const KLBasis& reference, std::span<const Point2> points,
                        std::optional<GridSpec> grid = {});

/// k(x_p) = exp(sum_t sqrt(theta_t) phi_t(x_p) xi_t).
CoefficientField sample_log_field(const KLBasis& basis, std::span<const double> xi);

/// Injection k^c(I, J) = k^f(2I-1, 2J-1) in 1-based indices.
CoefficientField coarsen_field(const CoefficientField& fine);

/// Centers of the fine cells that injection from the next finer grid selects
/// for each cell of `grid`: every coarse center shifted by -h/4 per axis.
std::vector<Point2> injected_points(const GridSpec& grid);

/// Binary cache of KL bases on disk. Files carry a versioned header plus the
/// full key and are ignored when the key does not match.
namespace kl_cache {

inline constexpr std::uint32_t kFormatVersion = 1;

struct Key {
  int level = 0;
  MaternParams params;
  double energy_target = 0.99;

  friend bool operator==(const Key&, const Key&) = default;
};

std::filesystem::path file_for(const std::filesystem::path& dir, const Key& key);
void write(const std::filesystem::path& file, const Key& key, const KLBasis& basis);
/// Empty when the file is missing, truncated, of another version, or keyed differently.
std::optional<KLBasis> read(const std::filesystem::path& file, const Key& key);

}  // namespace kl_cache

struct LevelBasisOptions {
  double energy_target = 0.99;
  /// Levels whose point count exceeds this are extended from the deepest
  /// level that fits instead of being solved densely.
  std::size_t max_dense_points = 4096;
  /// Disk cache directory; empty disables the disk cache.
  std::filesystem::path cache_dir;
};

/// Per-level KL bases for one Matern parameter set, built lazily and shared.
///
/// The level-l basis lives at injected_points(grid_for_level(l)), the
/// level-(l+1) cell centers that injection selects. The covariance matrix at
/// these points equals the one at the level-l centers (the shift is uniform),
/// so standalone and injected coarse fields follow the same law.
class LevelBasisProvider {
 public:
  LevelBasisProvider(MaternParams params, LevelBasisOptions options);

  std::shared_ptr<const KLBasis> basis(int level) const;
  const MaternParams& params() const noexcept { return params_; }
  const LevelBasisOptions& options() const noexcept { return options_; }

 private:
  std::shared_ptr<const KLBasis> build(int level) const;

  MaternParams params_;
  LevelBasisOptions options_;
  mutable std::recursive_mutex mutex_;
  mutable std::map<int, std::shared_ptr<const KLBasis>> bases_;
};

}  // namespace mlqmc
