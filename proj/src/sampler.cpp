#include "mlqmc/sampler.hpp"

#include <bit>
#include <boost/math/special_functions/erf.hpp>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <numbers>
#include <sstream>
#include <string>

#include "mlqmc/errors.hpp"

namespace mlqmc {

namespace {

constexpr std::uint64_t kTagNormal = 0x4e4f524d414c5321ULL;
constexpr std::uint64_t kTagLattice = 0x4c41545449434521ULL;
constexpr std::uint64_t kTagSobol = 0x534f424f4c5f5321ULL;

constexpr double kZeroClamp = 0x1.0p-64;

std::uint32_t bit_reverse(std::uint32_t v) {
  v = ((v >> 1) & 0x55555555u) | ((v & 0x55555555u) << 1);
  v = ((v >> 2) & 0x33333333u) | ((v & 0x33333333u) << 2);
  v = ((v >> 4) & 0x0f0f0f0fu) | ((v & 0x0f0f0f0fu) << 4);
  v = ((v >> 8) & 0x00ff00ffu) | ((v & 0x00ff00ffu) << 8);
  return (v >> 16) | (v << 16);
}

using Directions = std::array<std::uint32_t, SobolDirections::kBits>;

// Left-multiplies each direction number (a column of the generating matrix,
// most significant digit first) by a random unit lower-triangular matrix.
Directions scramble_directions(const Directions& v, std::uint64_t scramble_seed, std::size_t dim) {
  std::array<std::uint32_t, 32> rows{};
  for (int p = 0; p < 32; ++p) {
    const std::uint32_t diagonal = 1u << (31 - p);
    const std::uint32_t above = p == 0 ? 0u : ~((diagonal << 1) - 1u);
    const auto bits = static_cast<std::uint32_t>(hash_words({scramble_seed, kTagSobol, dim,
                                                             static_cast<std::uint64_t>(p)}) >> 32);
    rows[p] = (bits & above) | diagonal;
  }
  Directions out{};
  for (int b = 0; b < 32; ++b) {
    std::uint32_t w = 0;
    for (int p = 0; p < 32; ++p) {
      if (std::popcount(rows[p] & v[b]) & 1) w |= 1u << (31 - p);
    }
    out[b] = w;
  }
  return out;
}

std::uint64_t sobol_digital_shift(std::uint64_t scramble_seed, std::size_t dim) {
  return hash_words({scramble_seed, kTagSobol, dim, 0xd1b54a32d192ed03ULL});
}

std::uint32_t sobol_word(const Directions& v, std::uint64_t index) {
  std::uint64_t gray = index ^ (index >> 1);
  std::uint32_t x = 0;
  for (int b = 0; gray != 0; ++b, gray >>= 1)
    if (gray & 1u) x ^= v[b];
  return x;
}

double sobol_coordinate(std::uint32_t word, std::uint64_t shift) {
  const std::uint64_t full = (static_cast<std::uint64_t>(word) << 32) ^ shift;
  return static_cast<double>(full >> 11) * 0x1.0p-53;
}

void check_sobol_dimension(std::size_t d) {
  const auto& table = default_sobol_directions();
  if (d > table.max_dimension()) {
    throw UnsupportedError("Sobol' dimension " + std::to_string(d) + " exceeds the table size " +
                           std::to_string(table.max_dimension()));
  }
}

std::vector<std::string> data_lines(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw std::runtime_error("cannot open data file " + file.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    lines.push_back(line);
  }
  return lines;
}

}  // namespace

double inverse_normal_cdf(double p) {
  if (!(p > 0.0 && p < 1.0)) throw ArgumentError("normal quantile needs p in (0, 1)");
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

std::vector<double> pseudo_random_normals(const SampleStream& stream, std::uint64_t index) {
  if (stream.kind != StreamKind::PseudoRandom) {
    throw ArgumentError("pseudo_random_normals needs a PseudoRandom stream");
  }
  std::vector<double> out(stream.dimension);
  NormalStream(stream).normals(index, out);
  return out;
}

QmcPointSet lattice_points(std::size_t n, std::size_t d, std::span<const std::uint32_t> z,
                           std::span<const double> shift) {
  if (n < 1) throw ArgumentError("lattice needs at least one point");
  if (n > (std::uint64_t{1} << 32)) throw ArgumentError("lattice limited to 2^32 points");
  if (z.size() < d) throw ArgumentError("generating vector shorter than the dimension");
  if (shift.size() < d) throw ArgumentError("shift shorter than the dimension");
  QmcPointSet set{n, d, std::vector<double>(n * d), {z.begin(), z.begin() + static_cast<long>(d)}};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) {
      // i < n <= 2^32 and z mod n < 2^32, so the product fits in 64 bits.
      const std::uint64_t numerator = (static_cast<std::uint64_t>(i) * (z[k] % n)) % n;
      double x = static_cast<double>(numerator) / static_cast<double>(n) + shift[k];
      x -= std::floor(x);
      if (x >= 1.0) x = 0.0;
      set.points[i * d + k] = x;
    }
  }
  return set;
}

QmcPointSet sobol_points(std::size_t n, std::size_t d, std::optional<std::uint64_t> scramble_seed) {
  if (n > (std::uint64_t{1} << 32)) throw ArgumentError("Sobol' sequence limited to 2^32 points");
  check_sobol_dimension(d);
  const auto& table = default_sobol_directions();
  QmcPointSet set{n, d, std::vector<double>(n * d), {}};
  for (std::size_t k = 0; k < d; ++k) {
    Directions v = table.directions(k);
    std::uint64_t shift = 0;
    if (scramble_seed) {
      v = scramble_directions(v, *scramble_seed, k);
      shift = sobol_digital_shift(*scramble_seed, k);
    }
    for (std::size_t i = 0; i < n; ++i) set.points[i * d + k] = sobol_coordinate(sobol_word(v, i), shift);
  }
  return set;
}

std::vector<double> to_normals(const QmcPointSet& points) {
  std::vector<double> out(points.points.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double p = points.points[i];
    out[i] = inverse_normal_cdf(p <= 0.0 ? kZeroClamp : p);
  }
  return out;
}

RandomizedMean randomized_qmc_mean(std::span<const double> randomization_means) {
  const std::size_t r = randomization_means.size();
  if (r < 2) throw InsufficientDataError("randomized QMC needs at least two randomizations");
  double mean = 0.0;
  for (double v : randomization_means) mean += v;
  mean /= static_cast<double>(r);
  double ss = 0.0;
  for (double v : randomization_means) ss += (v - mean) * (v - mean);
  return {mean, ss / static_cast<double>(r - 1) / static_cast<double>(r)};
}

SobolDirections SobolDirections::load(const std::filesystem::path& file) {
  SobolDirections table;
  for (const auto& line : data_lines(file)) {
    std::istringstream ls(line);
    unsigned s = 0, a = 0;
    if (!(ls >> s >> a)) throw std::runtime_error("malformed Sobol' table line: " + line);
    Directions v{};
    if (s == 0) {
      for (int b = 0; b < kBits; ++b) v[b] = 1u << (31 - b);
    } else {
      if (s > static_cast<unsigned>(kBits)) throw std::runtime_error("Sobol' degree too large");
      std::array<std::uint32_t, kBits> m{};
      for (unsigned i = 0; i < s; ++i)
        if (!(ls >> m[i])) throw std::runtime_error("malformed Sobol' table line: " + line);
      for (unsigned i = 0; i < s; ++i) v[i] = m[i] << (31 - i);
      for (unsigned i = s; i < static_cast<unsigned>(kBits); ++i) {
        std::uint32_t w = v[i - s] ^ (v[i - s] >> s);
        for (unsigned k = 1; k < s; ++k)
          if ((a >> (s - 1 - k)) & 1u) w ^= v[i - k];
        v[i] = w;
      }
    }
    table.directions_.push_back(v);
  }
  return table;
}

const std::array<std::uint32_t, SobolDirections::kBits>& SobolDirections::directions(
    std::size_t k) const {
  if (k >= directions_.size()) throw UnsupportedError("Sobol' dimension out of table range");
  return directions_[k];
}

std::vector<std::uint32_t> load_lattice_vector(const std::filesystem::path& file) {
  std::vector<std::uint32_t> z;
  for (const auto& line : data_lines(file)) z.push_back(static_cast<std::uint32_t>(std::stoul(line)));
  return z;
}

std::filesystem::path data_directory() {
  if (const char* env = std::getenv("MLQMC_DATA_DIR"); env && *env) return env;
  return MLQMC_DEFAULT_DATA_DIR;
}

const SobolDirections& default_sobol_directions() {
  static const SobolDirections table = SobolDirections::load(data_directory() / "sobol_directions.txt");
  return table;
}

const std::vector<std::uint32_t>& default_lattice_vector() {
  static const std::vector<std::uint32_t> z = load_lattice_vector(data_directory() / "lattice_vector.txt");
  return z;
}

NormalStream::NormalStream(const SampleStream& stream) : stream_(stream) {
  const std::size_t d = stream.dimension;
  switch (stream.kind) {
    case StreamKind::PseudoRandom:
      break;
    case StreamKind::LatticeShifted: {
      const auto& z = default_lattice_vector();
      if (d > z.size()) {
        throw UnsupportedError("lattice dimension " + std::to_string(d) +
                               " exceeds the generating vector length " + std::to_string(z.size()));
      }
      z_.assign(z.begin(), z.begin() + static_cast<long>(d));
      shift_.resize(d);
      for (std::size_t k = 0; k < d; ++k)
        shift_[k] = open_unit_interval(
            hash_words({stream.seed, stream.randomization_index, kTagLattice, k}));
      break;
    }
    case StreamKind::SobolScrambled: {
      check_sobol_dimension(d);
      const std::uint64_t scramble_seed = hash_words({stream.seed, stream.randomization_index, kTagSobol});
      const auto& table = default_sobol_directions();
      directions_.resize(d);
      digital_shift_.resize(d);
      for (std::size_t k = 0; k < d; ++k) {
        directions_[k] = scramble_directions(table.directions(k), scramble_seed, k);
        digital_shift_[k] = sobol_digital_shift(scramble_seed, k);
      }
      break;
    }
  }
}

void NormalStream::uniforms(std::uint64_t index, std::span<double> out) const {
  const std::size_t d = stream_.dimension;
  if (out.size() != d) throw ArgumentError("output span does not match the stream dimension");
  switch (stream_.kind) {
    case StreamKind::PseudoRandom:
      for (std::size_t k = 0; k < d; ++k)
        out[k] = open_unit_interval(
            hash_words({stream_.seed, stream_.randomization_index, kTagNormal, index, k}));
      break;
    case StreamKind::LatticeShifted: {
      if (index >= (std::uint64_t{1} << 32)) throw ArgumentError("lattice index beyond 2^32");
      const std::uint32_t radical = bit_reverse(static_cast<std::uint32_t>(index));
      for (std::size_t k = 0; k < d; ++k) {
        const std::uint32_t frac = z_[k] * radical;  // wraps mod 2^32
        double x = static_cast<double>(frac) * 0x1.0p-32 + shift_[k];
        if (x >= 1.0) x -= 1.0;
        out[k] = x;
      }
      break;
    }
    case StreamKind::SobolScrambled:
      if (index >= (std::uint64_t{1} << 32)) throw ArgumentError("Sobol' index beyond 2^32");
      for (std::size_t k = 0; k < d; ++k)
        out[k] = sobol_coordinate(sobol_word(directions_[k], index), digital_shift_[k]);
      break;
  }
}

void NormalStream::normals(std::uint64_t index, std::span<double> out) const {
  uniforms(index, out);
  for (double& v : out) v = inverse_normal_cdf(v <= 0.0 ? kZeroClamp : v);
}

}  // namespace mlqmc
