#pragma once

#include "mlmcvi/core.hpp"

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace mlmcvi {

enum class NoiseKind { MC, RQMC };

struct StreamId {
  std::uint64_t seed = 0;
  std::uint64_t iteration = 0;

  bool operator==(const StreamId&) const = default;
};

/// n x d standard-normal draws; row i is epsilon_i.
struct NoiseBatch {
  RowMatrix values;
  NoiseKind kind = NoiseKind::MC;
  StreamId stream;

  Index n() const { return values.rows(); }
  Index d() const { return values.cols(); }
  Vector row(Index i) const { return values.row(i).transpose(); }
};

/// Mixes a run seed with a purpose tag so separate consumers (update batches,
/// probes, metrics) draw from disjoint streams.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag);

/// Counter-based uniform in (0, 1): a pure function of (seed, iteration, index).
double counter_uniform(std::uint64_t seed, std::uint64_t iteration, std::uint64_t index);

/// Phi^{-1}(u) by Wichura's AS241 (PPND16). Throws std::domain_error outside (0, 1).
double inverse_normal_cdf(double u);

NoiseBatch mc_normal_batch(std::uint64_t seed, std::uint64_t iteration, Index n, Index d);

/**
 * Joe-Kuo style direction-number table.
 *
 * Layout: a header line, then one row per dimension starting at 2:
 * `d s a m_1 ... m_s`. Dimension 1 is the van der Corput sequence and has
 * no row.
 */
class SobolTable {
 public:
  static constexpr int kBits = 32;

  static SobolTable parse(std::istream& in);
  static SobolTable load(const std::string& path);
  /// Table compiled into the library (1111 dimensions).
  static const SobolTable& bundled();

  Index max_dimension() const { return static_cast<Index>(directions_.size()); }
  /// Direction integers v_1..v_32 of dimension `dim` (0-based), scaled by 2^32.
  std::span<const std::uint32_t> directions(Index dim) const { return directions_[dim]; }

 private:
  std::vector<std::vector<std::uint32_t>> directions_;
};

class UnsupportedDimensionError : public std::out_of_range {
 public:
  UnsupportedDimensionError(Index requested, Index supported);
};

/// Points 1..n of the Gray-code Sobol sequence, shifted by `shift` mod 1.
RowMatrix sobol_uniform(Index n, Index d, std::span<const double> shift,
                        const SobolTable& table = SobolTable::bundled());

NoiseBatch rqmc_normal_batch(std::uint64_t seed, std::uint64_t iteration, Index n, Index d);

NoiseBatch normal_batch(NoiseKind kind, std::uint64_t seed, std::uint64_t iteration, Index n,
                        Index d);

}  // namespace mlmcvi
