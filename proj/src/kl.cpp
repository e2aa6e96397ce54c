#include "mlqmc/kl.hpp"

#include <cblas.h>
#include <lapacke.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <numeric>
#include <string>

#include "mlqmc/errors.hpp"

namespace mlqmc {

double KLBasis::total_energy() const {
  return std::accumulate(eigenvalues.begin(), eigenvalues.end(), 0.0);
}

double KLBasis::energy_ratio() const {
  const double domain_measure = cell_area * static_cast<double>(points.size());
  const double retained =
      std::accumulate(eigenvalues.begin(), eigenvalues.begin() + static_cast<long>(n_terms), 0.0);
  return retained / (params.variance * domain_measure);
}

std::vector<double> weighted_covariance_matrix(std::span<const Point2> points, double cell_area,
                                               const MaternParams& params) {
  params.validate();
  const std::size_t n = points.size();
  std::vector<double> a(n * n);
  for (std::size_t q = 0; q < n; ++q) {
    a[q * n + q] = cell_area * params.variance;
    for (std::size_t p = q + 1; p < n; ++p) {
      const double d = std::hypot(points[p].x - points[q].x, points[p].y - points[q].y);
      const double c = cell_area * matern_covariance(d, params);
      if (!std::isfinite(c)) throw ConsistencyError("non-finite covariance entry");
      a[q * n + p] = c;
      a[p * n + q] = c;
    }
  }
  return a;
}

namespace {

std::size_t truncation_size(std::span<const double> descending, double target_mass) {
  double cumulative = 0.0;
  for (std::size_t i = 0; i < descending.size(); ++i) {
    cumulative += descending[i];
    if (cumulative >= target_mass) return i + 1;
  }
  return descending.size();
}

void check_energy_target(double energy_target) {
  if (!(energy_target > 0.0 && energy_target <= 1.0)) {
    throw ArgumentError("energy target must lie in (0, 1]");
  }
}

// Fixes the sign of each mode so its largest-magnitude entry is positive.
void normalize_signs(std::vector<double>& modes, std::size_t n_points, std::size_t n_terms) {
  for (std::size_t t = 0; t < n_terms; ++t) {
    double* col = modes.data() + t * n_points;
    std::size_t arg = 0;
    for (std::size_t p = 1; p < n_points; ++p)
      if (std::abs(col[p]) > std::abs(col[arg])) arg = p;
    if (col[arg] < 0.0)
      for (std::size_t p = 0; p < n_points; ++p) col[p] = -col[p];
  }
}

// Max relative error of cblas_dgemm against a plain triple loop for an
// m x k times k x n product with deterministic entries in [-1, 1].
double gemm_error(int m, int n, int k) {
  auto entry = [](std::uint64_t i) {
    i = (i + 0x9e3779b97f4a7c15ull) * 0xbf58476d1ce4e5b9ull;
    i ^= i >> 31;
    return static_cast<double>(i >> 11) * 0x1.0p-52 - 1.0;
  };
  const auto mu = static_cast<std::size_t>(m), nu = static_cast<std::size_t>(n),
             ku = static_cast<std::size_t>(k);
  std::vector<double> a(mu * ku), b(ku * nu), c(mu * nu, 0.0), r(mu * nu, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = entry(i);
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = entry(i + a.size());
  cblas_dgemm(CblasColMajor, CblasNoTrans, CblasNoTrans, m, n, k, 1.0, a.data(), m, b.data(), k, 0.0,
              c.data(), m);
  for (std::size_t j = 0; j < nu; ++j)
    for (std::size_t p = 0; p < ku; ++p)
      for (std::size_t i = 0; i < mu; ++i) r[j * mu + i] += a[p * mu + i] * b[j * ku + p];
  double err = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) err = std::max(err, std::abs(c[i] - r[i]));
  return err / std::sqrt(static_cast<double>(k));
}

}  // namespace

bool blas_self_check() {
  static const bool ok = [] {
    for (const auto& [m, n, k] : {std::array{320, 320, 320}, std::array{512, 96, 1024},
                                  std::array{33, 17, 65}}) {
      const double e = gemm_error(m, n, k);
      if (!(e < 1e-12)) return false;
    }
    return true;
  }();
  return ok;
}

void require_working_blas() {
  if (!blas_self_check()) {
    throw ConsistencyError(
        "the linked BLAS returns wrong matrix products on this CPU; with OpenBLAS set "
        "OPENBLAS_CORETYPE (for example Haswell) before starting the program");
  }
}

void restart_with_working_blas(char** argv) {
  if (blas_self_check() || std::getenv("OPENBLAS_CORETYPE")) return;
  std::fprintf(stderr, "note: BLAS self-check failed, restarting with OPENBLAS_CORETYPE=Haswell\n");
  ::setenv("OPENBLAS_CORETYPE", "Haswell", 1);
  ::execv("/proc/self/exe", argv);
}

KLBasis kl_basis_at_points(std::span<const Point2> points, const MaternParams& params,
                           double energy_target, std::optional<GridSpec> grid) {
  params.validate();
  require_working_blas();
  check_energy_target(energy_target);
  if (points.empty()) throw ArgumentError("KL basis needs at least one point");
  if (grid && grid->cell_count() != points.size()) {
    throw ArgumentError("KL points do not match the attached grid");
  }
  {
    std::vector<std::pair<double, double>> sorted;
    sorted.reserve(points.size());
    for (const auto& p : points) sorted.emplace_back(p.x, p.y);
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw ArgumentError("KL evaluation points must be distinct");
    }
  }

  const std::size_t n = points.size();
  const double cell_area = 1.0 / static_cast<double>(n);
  std::vector<double> a = weighted_covariance_matrix(points, cell_area, params);

  std::vector<double> values(n);
  std::vector<double> vectors(n * n);
  std::vector<lapack_int> support(2 * n);
  lapack_int found = 0;
  const auto ln = static_cast<lapack_int>(n);
  const lapack_int info =
      LAPACKE_dsyevr(LAPACK_COL_MAJOR, 'V', 'A', 'L', ln, a.data(), ln, 0.0, 0.0, 0, 0, 0.0, &found,
                     values.data(), vectors.data(), ln, support.data());
  if (info != 0 || found != ln) {
    throw ConsistencyError("symmetric eigensolver failed (info " + std::to_string(info) + ")");
  }

  KLBasis basis;
  basis.grid = grid;
  basis.points.assign(points.begin(), points.end());
  basis.cell_area = cell_area;
  basis.params = params;
  basis.energy_target = energy_target;
  basis.eigenvalues.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(values[n - 1 - i])) throw ConsistencyError("non-finite eigenvalue");
    // Round-off can push the tail of a PSD spectrum slightly negative.
    basis.eigenvalues[i] = std::max(values[n - 1 - i], 0.0);
  }

  const double target_mass = energy_target * params.variance * cell_area * static_cast<double>(n);
  basis.n_terms = energy_target >= 1.0 ? n : truncation_size(basis.eigenvalues, target_mass);

  // Euclidean-unit eigenvectors of w C become weighted-unit modes after dividing by sqrt(w).
  const double scale = 1.0 / std::sqrt(cell_area);
  basis.modes.resize(n * basis.n_terms);
  for (std::size_t t = 0; t < basis.n_terms; ++t) {
    const double* src = vectors.data() + (n - 1 - t) * n;
    double* dst = basis.modes.data() + t * n;
    for (std::size_t p = 0; p < n; ++p) dst[p] = src[p] * scale;
  }
  normalize_signs(basis.modes, n, basis.n_terms);
  return basis;
}

KLBasis build_kl_basis(const GridSpec& grid, const MaternParams& params, double energy_target) {
  const auto centers = cell_centers(grid);
  return kl_basis_at_points(centers, params, energy_target, grid);
}

KLBasis extend_kl_basis(const KLBasis& reference, std::span<const Point2> points,
                        std::optional<GridSpec> grid) {
  if (grid && grid->cell_count() != points.size()) {
    throw ArgumentError("KL points do not match the attached grid");
  }
  require_working_blas();
  const std::size_t n_ref = reference.point_count();
  const std::size_t n_new = points.size();
  const std::size_t k = reference.n_terms;

  KLBasis out;
  out.grid = grid;
  out.points.assign(points.begin(), points.end());
  out.cell_area = 1.0 / static_cast<double>(n_new);
  out.params = reference.params;
  out.energy_target = reference.energy_target;
  out.eigenvalues = reference.eigenvalues;
  out.n_terms = k;
  out.interpolated = true;
  out.modes.assign(n_new * k, 0.0);

  // Scaled reference modes: w phi_t(x_q) / theta_t.
  std::vector<double> scaled(n_ref * k, 0.0);
  for (std::size_t t = 0; t < k; ++t) {
    const double theta = reference.eigenvalues[t];
    if (!(theta > 0.0)) continue;
    const auto phi = reference.mode(t);
    for (std::size_t q = 0; q < n_ref; ++q)
      scaled[t * n_ref + q] = reference.cell_area * phi[q] / theta;
  }

  constexpr std::size_t kBlock = 512;
  std::vector<double> cov;
  for (std::size_t row0 = 0; row0 < n_new; row0 += kBlock) {
    const std::size_t rows = std::min(kBlock, n_new - row0);
    cov.assign(rows * n_ref, 0.0);  // column-major rows x n_ref
    for (std::size_t q = 0; q < n_ref; ++q) {
      for (std::size_t r = 0; r < rows; ++r) {
        const Point2& x = points[row0 + r];
        const double d = std::hypot(x.x - reference.points[q].x, x.y - reference.points[q].y);
        cov[q * rows + r] = matern_covariance(d, reference.params);
      }
    }
    cblas_dgemm(CblasColMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(rows),
                static_cast<int>(k), static_cast<int>(n_ref), 1.0, cov.data(),
                static_cast<int>(rows), scaled.data(), static_cast<int>(n_ref), 0.0,
                out.modes.data() + row0, static_cast<int>(n_new));
  }
  return out;
}

CoefficientField sample_log_field(const KLBasis& basis, std::span<const double> xi) {
  if (xi.size() != basis.n_terms) {
    throw ArgumentError("xi has " + std::to_string(xi.size()) + " entries, basis has " +
                        std::to_string(basis.n_terms) + " modes");
  }
  if (!basis.grid) throw ArgumentError("KL basis has no grid attached");
  const std::size_t n = basis.point_count();
  std::vector<double> log_k(n, 0.0);
  for (std::size_t t = 0; t < basis.n_terms; ++t) {
    const double a = std::sqrt(basis.eigenvalues[t]) * xi[t];
    if (a == 0.0) continue;
    const double* phi = basis.modes.data() + t * n;
    for (std::size_t p = 0; p < n; ++p) log_k[p] += a * phi[p];
  }
  for (double& v : log_k) v = std::exp(v);
  return {*basis.grid, std::move(log_k), basis.points};
}

CoefficientField coarsen_field(const CoefficientField& fine) {
  const int nf = fine.grid.cells_per_dim();
  if (nf < 2 || nf % 2 != 0) {
    throw ArgumentError("injection needs an even number of cells per dimension, got " +
                        std::to_string(nf));
  }
  const GridSpec coarse = GridSpec::with_cells(nf / 2);
  const int nc = coarse.cells_per_dim();
  const bool has_coords = fine.sample_coords.size() == fine.values.size();
  CoefficientField out{coarse, std::vector<double>(coarse.cell_count()), {}};
  if (has_coords) out.sample_coords.resize(coarse.cell_count());
  for (int jc = 0; jc < nc; ++jc) {
    for (int ic = 0; ic < nc; ++ic) {
      const std::size_t src = fine.grid.index(2 * ic, 2 * jc);
      const std::size_t dst = coarse.index(ic, jc);
      out.values[dst] = fine.values[src];
      if (has_coords) out.sample_coords[dst] = fine.sample_coords[src];
    }
  }
  return out;
}

std::vector<Point2> injected_points(const GridSpec& grid) {
  auto pts = cell_centers(grid);
  const double shift = 0.25 * grid.cell_width();
  for (auto& p : pts) {
    p.x -= shift;
    p.y -= shift;
  }
  return pts;
}

namespace kl_cache {

namespace {

constexpr std::array<char, 8> kMagic{'M', 'L', 'Q', 'M', 'C', 'K', 'L', '\0'};

std::string hex_bits(double v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(std::bit_cast<std::uint64_t>(v)));
  return buf;
}

template <class T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
bool get(std::istream& is, T& v) {
  return static_cast<bool>(is.read(reinterpret_cast<char*>(&v), sizeof(T)));
}
template <class T>
void put_vec(std::ostream& os, const std::vector<T>& v) {
  os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(T)));
}
template <class T>
bool get_vec(std::istream& is, std::vector<T>& v, std::size_t n) {
  v.resize(n);
  return static_cast<bool>(
      is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T))));
}

}  // namespace

std::filesystem::path file_for(const std::filesystem::path& dir, const Key& key) {
  return dir / ("kl_v" + std::to_string(kFormatVersion) + "_L" + std::to_string(key.level) + "_" +
                hex_bits(key.params.nu) + "_" + hex_bits(key.params.corr_length) + "_" +
                hex_bits(key.params.variance) + "_" + hex_bits(key.energy_target) + ".bin");
}

void write(const std::filesystem::path& file, const Key& key, const KLBasis& basis) {
  std::filesystem::create_directories(file.parent_path());
  const auto tmp = file.string() + ".tmp" + std::to_string(::getpid());
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write KL cache file " + tmp);
    os.write(kMagic.data(), kMagic.size());
    put(os, kFormatVersion);
    put(os, static_cast<std::int32_t>(key.level));
    put(os, key.params.nu);
    put(os, key.params.corr_length);
    put(os, key.params.variance);
    put(os, key.energy_target);
    put(os, static_cast<std::uint64_t>(basis.point_count()));
    put(os, static_cast<std::uint64_t>(basis.n_terms));
    put(os, static_cast<std::uint64_t>(basis.eigenvalues.size()));
    put(os, static_cast<std::int32_t>(basis.grid ? basis.grid->cells_per_dim() : 0));
    put(os, static_cast<std::uint8_t>(basis.interpolated ? 1 : 0));
    put(os, basis.cell_area);
    put_vec(os, basis.points);
    put_vec(os, basis.eigenvalues);
    put_vec(os, basis.modes);
    if (!os) throw std::runtime_error("failed writing KL cache file " + tmp);
  }
  std::filesystem::rename(tmp, file);
}

std::optional<KLBasis> read(const std::filesystem::path& file, const Key& key) {
  std::ifstream is(file, std::ios::binary);
  if (!is) return std::nullopt;
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic) return std::nullopt;
  std::uint32_t version = 0;
  if (!get(is, version) || version != kFormatVersion) return std::nullopt;

  std::int32_t level = 0;
  Key stored;
  if (!get(is, level) || !get(is, stored.params.nu) || !get(is, stored.params.corr_length) ||
      !get(is, stored.params.variance) || !get(is, stored.energy_target)) {
    return std::nullopt;
  }
  stored.level = level;
  if (!(stored == key)) return std::nullopt;

  std::uint64_t n_points = 0, n_terms = 0, n_eigen = 0;
  std::int32_t cells = 0;
  std::uint8_t interpolated = 0;
  KLBasis basis;
  if (!get(is, n_points) || !get(is, n_terms) || !get(is, n_eigen) || !get(is, cells) ||
      !get(is, interpolated) || !get(is, basis.cell_area)) {
    return std::nullopt;
  }
  if (n_terms > n_eigen || n_points == 0 || n_points > (1u << 26)) return std::nullopt;
  if (!get_vec(is, basis.points, n_points) || !get_vec(is, basis.eigenvalues, n_eigen) ||
      !get_vec(is, basis.modes, n_points * n_terms)) {
    return std::nullopt;
  }
  if (cells > 0) basis.grid = GridSpec::with_cells(cells);
  basis.params = key.params;
  basis.energy_target = key.energy_target;
  basis.n_terms = n_terms;
  basis.interpolated = interpolated != 0;
  return basis;
}

}  // namespace kl_cache

LevelBasisProvider::LevelBasisProvider(MaternParams params, LevelBasisOptions options)
    : params_(params), options_(std::move(options)) {
  params_.validate();
  check_energy_target(options_.energy_target);
}

std::shared_ptr<const KLBasis> LevelBasisProvider::basis(int level) const {
  if (level < 0) throw ArgumentError("basis level must be >= 0");
  std::lock_guard lock(mutex_);
  if (auto it = bases_.find(level); it != bases_.end()) return it->second;
  auto built = build(level);
  bases_.emplace(level, built);
  return built;
}

std::shared_ptr<const KLBasis> LevelBasisProvider::build(int level) const {
  const kl_cache::Key key{level, params_, options_.energy_target};
  std::filesystem::path file;
  if (!options_.cache_dir.empty()) {
    file = kl_cache::file_for(options_.cache_dir, key);
    if (auto cached = kl_cache::read(file, key)) {
      return std::make_shared<const KLBasis>(std::move(*cached));
    }
  }

  const GridSpec grid = grid_for_level(level);
  const auto points = injected_points(grid);
  KLBasis basis;
  if (grid.cell_count() <= options_.max_dense_points) {
    basis = kl_basis_at_points(points, params_, options_.energy_target, grid);
  } else {
    int reference_level = level - 1;
    while (reference_level > 0 && grid_for_level(reference_level).cell_count() > options_.max_dense_points) {
      --reference_level;
    }
    basis = extend_kl_basis(*this->basis(reference_level), points, grid);
  }
  if (!file.empty()) kl_cache::write(file, key, basis);
  return std::make_shared<const KLBasis>(std::move(basis));
}

}  // namespace mlqmc
