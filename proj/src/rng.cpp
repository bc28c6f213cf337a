#include "mlmcvi/rng.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mlmcvi {

// Generated at configure time from data/sobol_direction_numbers.txt.
extern const char* const kBundledSobolTable;

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t stream_key(std::uint64_t seed, std::uint64_t iteration) {
  return mix64(mix64(seed + kGolden) ^ (iteration * 0xD1B54A32D192ED03ULL + 0x8CB92BA72F3D8DD7ULL));
}

double to_open_unit(std::uint64_t bits) {
  // 53 random bits mapped to the midpoints of a 2^-53 grid: never 0 or 1.
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

double evaluate(const std::array<double, 8>& c, double r) {
  double acc = c[7];
  for (int i = 6; i >= 0; --i) acc = acc * r + c[i];
  return acc;
}

// AS241 coefficients, lowest order first.
constexpr std::array<double, 8> kCentralNum = {
    3.3871328727963666080e0, 1.3314166789178437745e2, 1.9715909503065514427e3,
    1.3731693765509461125e4, 4.5921953931549871457e4, 6.7265770927008700853e4,
    3.3430575583588128105e4, 2.5090809287301226727e3};
constexpr std::array<double, 8> kCentralDen = {
    1.0, 4.2313330701600911252e1, 6.8718700749205790830e2, 5.3941960214247511077e3,
    2.1213794301586595867e4, 3.9307895800092710610e4, 2.8729085735721942674e4,
    5.2264952788528545610e3};
constexpr std::array<double, 8> kIntermediateNum = {
    1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0,
    3.64784832476320460504e0, 1.27045825245236838258e0, 2.41780725177450611770e-1,
    2.27238449892691845833e-2, 7.74545014278341407640e-4};
constexpr std::array<double, 8> kIntermediateDen = {
    1.0, 2.05319162663775882187e0, 1.67638483018380384940e0, 6.89767334985100004550e-1,
    1.48103976427480074590e-1, 1.51986665636164571966e-2, 5.47593808499534494600e-4,
    1.05075007164441684324e-9};
constexpr std::array<double, 8> kTailNum = {
    6.65790464350110377720e0, 5.46378491116411436990e0, 1.78482653991729133580e0,
    2.96560571828504891230e-1, 2.65321895265761230930e-2, 1.24266094738807843860e-3,
    2.71155556874348757815e-5, 2.01033439929228813265e-7};
constexpr std::array<double, 8> kTailDen = {
    1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1, 1.48753612908506148525e-2,
    7.86869131145613259100e-4, 1.84631831751005468180e-5, 1.42151175831644588870e-7,
    2.04426310338993978564e-15};

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  return mix64(seed ^ mix64(tag * kGolden + 0x2545F4914F6CDD1DULL));
}

double counter_uniform(std::uint64_t seed, std::uint64_t iteration, std::uint64_t index) {
  return to_open_unit(mix64(stream_key(seed, iteration) + (index + 1) * kGolden));
}

double inverse_normal_cdf(double u) {
  if (!(u > 0.0 && u < 1.0)) {
    throw std::domain_error("inverse_normal_cdf: argument " + std::to_string(u) +
                            " is outside (0, 1)");
  }
  const double q = u - 0.5;
  if (std::abs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    return q * evaluate(kCentralNum, r) / evaluate(kCentralDen, r);
  }
  double r = std::sqrt(-std::log(q < 0.0 ? u : 1.0 - u));
  double x;
  if (r <= 5.0) {
    r -= 1.6;
    x = evaluate(kIntermediateNum, r) / evaluate(kIntermediateDen, r);
  } else {
    r -= 5.0;
    x = evaluate(kTailNum, r) / evaluate(kTailDen, r);
  }
  return q < 0.0 ? -x : x;
}

NoiseBatch mc_normal_batch(std::uint64_t seed, std::uint64_t iteration, Index n, Index d) {
  NoiseBatch batch{RowMatrix(n, d), NoiseKind::MC, {seed, iteration}};
  const std::uint64_t key = stream_key(seed, iteration);
  std::uint64_t counter = 0;
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < d; ++j) {
      const double u = to_open_unit(mix64(key + (++counter) * kGolden));
      batch.values(i, j) = inverse_normal_cdf(u);
    }
  }
  return batch;
}

UnsupportedDimensionError::UnsupportedDimensionError(Index requested, Index supported)
    : std::out_of_range("Sobol dimension " + std::to_string(requested) +
                        " exceeds the direction-number table (" + std::to_string(supported) +
                        " dimensions)") {}

SobolTable SobolTable::parse(std::istream& in) {
  SobolTable table;
  std::vector<std::uint32_t> first(kBits);
  for (int k = 0; k < kBits; ++k) first[k] = 1u << (kBits - 1 - k);
  table.directions_.push_back(std::move(first));

  std::string line;
  std::getline(in, line);  // header
  long expected_dim = 2;
  while (std::getline(in, line)) {
    std::istringstream row(line);
    long dim = 0;
    int s = 0;
    std::uint32_t a = 0;
    if (!(row >> dim)) continue;
    if (!(row >> s >> a) || s < 1 || s > kBits) {
      throw std::runtime_error("Sobol table: malformed row for dimension " + std::to_string(dim));
    }
    if (dim != expected_dim) {
      throw std::runtime_error("Sobol table: expected dimension " + std::to_string(expected_dim) +
                               ", found " + std::to_string(dim));
    }
    ++expected_dim;
    std::vector<std::uint32_t> m(kBits);
    for (int k = 0; k < s; ++k) {
      if (!(row >> m[k])) {
        throw std::runtime_error("Sobol table: missing m_" + std::to_string(k + 1) +
                                 " for dimension " + std::to_string(dim));
      }
    }
    // Bratley-Fox recurrence on the m_k, then v_k = m_k * 2^(32-k).
    for (int k = s; k < kBits; ++k) {
      std::uint32_t value = m[k - s] ^ (m[k - s] << s);
      for (int j = 1; j < s; ++j) {
        if ((a >> (s - 1 - j)) & 1u) value ^= m[k - j] << j;
      }
      m[k] = value;
    }
    std::vector<std::uint32_t> v(kBits);
    for (int k = 0; k < kBits; ++k) v[k] = m[k] << (kBits - 1 - k);
    table.directions_.push_back(std::move(v));
  }
  return table;
}

SobolTable SobolTable::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open Sobol direction-number file '" + path + "'");
  return parse(in);
}

const SobolTable& SobolTable::bundled() {
  static const SobolTable table = [] {
    std::istringstream in(kBundledSobolTable);
    return parse(in);
  }();
  return table;
}

RowMatrix sobol_uniform(Index n, Index d, std::span<const double> shift, const SobolTable& table) {
  if (d > table.max_dimension()) throw UnsupportedDimensionError(d, table.max_dimension());
  if (static_cast<Index>(shift.size()) != d) {
    throw std::invalid_argument("sobol_uniform: shift length does not match dimension");
  }
  if (n >= (Index{1} << SobolTable::kBits)) {
    throw std::invalid_argument("sobol_uniform: too many points");
  }
  RowMatrix out(n, d);
  std::vector<std::uint32_t> state(d, 0u);
  for (Index i = 1; i <= n; ++i) {
    // Gray-code step from point i-1 to i flips the direction of the lowest zero bit of i-1.
    int c = 0;
    for (auto value = static_cast<std::uint64_t>(i - 1); value & 1u; value >>= 1) ++c;
    for (Index j = 0; j < d; ++j) {
      state[j] ^= table.directions(j)[c];
      double x = static_cast<double>(state[j]) * 0x1.0p-32 + shift[j];
      if (x >= 1.0) x -= 1.0;
      out(i - 1, j) = x;
    }
  }
  return out;
}

NoiseBatch rqmc_normal_batch(std::uint64_t seed, std::uint64_t iteration, Index n, Index d) {
  std::vector<double> shift(d);
  for (Index j = 0; j < d; ++j) {
    shift[j] = counter_uniform(derive_seed(seed, 0x5348494654ULL), iteration, j);
  }
  NoiseBatch batch{sobol_uniform(n, d, shift), NoiseKind::RQMC, {seed, iteration}};
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < d; ++j) {
      double& u = batch.values(i, j);
      // A shifted point can land exactly on 0; nudge it inside the open interval.
      if (u <= 0.0) u = 0x1.0p-34;
      u = inverse_normal_cdf(u);
    }
  }
  return batch;
}

NoiseBatch normal_batch(NoiseKind kind, std::uint64_t seed, std::uint64_t iteration, Index n,
                        Index d) {
  return kind == NoiseKind::MC ? mc_normal_batch(seed, iteration, n, d)
                               : rqmc_normal_batch(seed, iteration, n, d);
}

}  // namespace mlmcvi
