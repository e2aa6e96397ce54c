#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <optional>
#include <span>
#include <vector>

namespace mlqmc {

enum class StreamKind { PseudoRandom, LatticeShifted, SobolScrambled };

/// Identifies one stream of stochastic inputs. Every point of the stream is a
/// pure function of these fields and the point index.
struct SampleStream {
  StreamKind kind = StreamKind::PseudoRandom;
  std::size_t dimension = 1;
  std::uint64_t seed = 0;
  std::uint32_t randomization_index = 0;
};

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Counter-based hash of a tuple of words.
constexpr std::uint64_t hash_words(std::initializer_list<std::uint64_t> words) noexcept {
  std::uint64_t h = 0x6a09e667f3bcc909ULL;
  for (std::uint64_t w : words) h = mix64(h ^ w);
  return h;
}

/// Maps a 64-bit word to a double in the open interval (0, 1).
constexpr double open_unit_interval(std::uint64_t bits) noexcept {
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

/// Standard normal quantile.
double inverse_normal_cdf(double p);
/// Standard normal distribution function.
double normal_cdf(double x);

/// d independent standard normals for point `index` of a PseudoRandom stream.
std::vector<double> pseudo_random_normals(const SampleStream& stream, std::uint64_t index);

/// Points of a QMC rule, row-major N x d, every coordinate in [0, 1).
struct QmcPointSet {
  std::size_t count = 0;
  std::size_t dimension = 0;
  std::vector<double> points;
  /// Lattice generating vector (empty for Sobol').
  std::vector<std::uint32_t> generating_vector;

  double at(std::size_t i, std::size_t k) const { return points[i * dimension + k]; }
};

/// Shifted rank-1 lattice: point i = frac(i z / N + shift), i = 0..N-1.
QmcPointSet lattice_points(std::size_t n, std::size_t d, std::span<const std::uint32_t> z,
                           std::span<const double> shift);

/// First n points of the Sobol' sequence in Gray-code order. With a scramble
/// seed the points get a random linear matrix scramble plus a digital shift.
QmcPointSet sobol_points(std::size_t n, std::size_t d, std::optional<std::uint64_t> scramble_seed);

/// Coordinate-wise inverse normal CDF; zero coordinates are clamped to 2^-64.
std::vector<double> to_normals(const QmcPointSet& points);

struct RandomizedMean {
  double mean = 0.0;
  double variance_of_mean = 0.0;
};

/// Mean over independent randomizations and the sample variance of that mean.
RandomizedMean randomized_qmc_mean(std::span<const double> randomization_means);

/// Joe-Kuo Sobol' direction numbers.
class SobolDirections {
 public:
  static constexpr int kBits = 32;

  /// Plain-text table: one line per dimension "s a m_1 ... m_s", '#' comments.
  static SobolDirections load(const std::filesystem::path& file);

  std::size_t max_dimension() const noexcept { return directions_.size(); }
  /// Direction numbers v_1..v_32 of dimension k (0-based), MSB-aligned.
  const std::array<std::uint32_t, kBits>& directions(std::size_t k) const;

 private:
  std::vector<std::array<std::uint32_t, kBits>> directions_;
};

/// Plain-text generating vector, one component per line, '#' comments.
std::vector<std::uint32_t> load_lattice_vector(const std::filesystem::path& file);

/// Data directory: $MLQMC_DATA_DIR, falling back to the build-time default.
std::filesystem::path data_directory();
const SobolDirections& default_sobol_directions();
const std::vector<std::uint32_t>& default_lattice_vector();

/// Random-access generator of standard-normal vectors for one stream.
///
/// Lattice streams enumerate points in radical-inverse order and Sobol'
/// streams in Gray-code order, so for N = 2^m the first N points are the full
/// N-point rule and doubling N keeps the earlier points.
class NormalStream {
 public:
  explicit NormalStream(const SampleStream& stream);

  const SampleStream& stream() const noexcept { return stream_; }
  std::size_t dimension() const noexcept { return stream_.dimension; }
  /// Uniform point in [0,1)^d.
  void uniforms(std::uint64_t index, std::span<double> out) const;
  /// Standard-normal point.
  void normals(std::uint64_t index, std::span<double> out) const;

 private:
  SampleStream stream_;
  std::vector<double> shift_;                                  // lattice
  std::vector<std::uint32_t> z_;                               // lattice
  std::vector<std::array<std::uint32_t, 32>> directions_;      // sobol (scrambled)
  std::vector<std::uint64_t> digital_shift_;                   // sobol
};

}  // namespace mlqmc
