#pragma once

// Independent reference computations shared by the unit and acceptance tests.

#include "mlmcvi/core.hpp"
#include "mlmcvi/gradient.hpp"
#include "mlmcvi/models.hpp"

#include <boost/math/special_functions/erf.hpp>
#include <boost/multiprecision/cpp_bin_float.hpp>

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <memory>
#include <random>
#include <string>

namespace mlmcvi::testing {

using HighPrecision = boost::multiprecision::cpp_bin_float_50;

inline std::string data_path(const std::string& name) {
  return std::string(MLMCVI_DATA_DIR) + "/" + name;
}

inline std::string breast_cancer_path() { return data_path("breast_cancer_wisconsin.csv"); }

/// Phi^{-1}(u) = -sqrt(2) erfc^{-1}(2u), evaluated with 50 decimal digits.
inline double oracle_inverse_normal(double u) {
  const HighPrecision two = 2;
  const HighPrecision x = -boost::multiprecision::sqrt(two) *
                          boost::math::erfc_inv(two * HighPrecision(u));
  return static_cast<double>(x);
}

inline Index oracle_clamped_ceil(const HighPrecision& x, Index n_initial) {
  HighPrecision c = boost::multiprecision::ceil(x);
  if (c < 1) return 1;
  if (c > n_initial) return n_initial;
  return static_cast<Index>(c);
}

inline Index oracle_variance_ratio(long t, double v_t, double v_prev, double v_zero, Index n_prev,
                                   Index n_initial) {
  using boost::multiprecision::sqrt;
  if (t == 1) {
    return oracle_clamped_ceil(
        sqrt(HighPrecision(v_t) / (2 * HighPrecision(v_zero))) * HighPrecision(n_initial),
        n_initial);
  }
  if (v_prev == 0.0) return 1;
  return oracle_clamped_ceil(sqrt(HighPrecision(v_t) / HighPrecision(v_prev)) * HighPrecision(n_prev),
                             n_initial);
}

inline Index oracle_schedule_ratio(long t, double eta_prev, double eta_prev2, double v_zero,
                                   Index n_prev, Index n_initial) {
  using boost::multiprecision::sqrt;
  if (t == 1) {
    return oracle_clamped_ceil(HighPrecision(n_initial) / sqrt(2 * HighPrecision(v_zero)),
                               n_initial);
  }
  return oracle_clamped_ceil(HighPrecision(eta_prev) / HighPrecision(eta_prev2) *
                                 HighPrecision(n_prev),
                             n_initial);
}

/// Central differences of the single-sample ELBO integrand in the flat [mean | log_scale] vector.
/// A step that straddles a ReLU kink disagrees with a quarter-size step; such coordinates are
/// retried with smaller steps until two consecutive estimates agree.
inline Vector finite_difference_gradient(const Model& model, const VariationalParams& params,
                                         const Vector& eps, const GradientOptions& options = {}) {
  const Vector base = params.flat();
  auto central = [&](Index j, double h) {
    Vector up = base, down = base;
    up(j) += h;
    down(j) -= h;
    const double f_up = elbo_integrand(model, VariationalParams::from_flat(up), eps, options);
    const double f_down = elbo_integrand(model, VariationalParams::from_flat(down), eps, options);
    return (f_up - f_down) / (2.0 * h);
  };
  Vector out(base.size());
  for (Index j = 0; j < base.size(); ++j) {
    double h = 1e-5 * (1.0 + std::abs(base(j)));
    double coarse = central(j, h);
    for (int attempt = 0; attempt < 4; ++attempt) {
      const double fine = central(j, h / 4.0);
      if (std::abs(fine - coarse) <= 1e-6 * std::max(1.0, std::abs(coarse))) break;
      h /= 10.0;
      coarse = central(j, h);
    }
    out(j) = coarse;
  }
  return out;
}

inline double relative_error(const Vector& got, const Vector& want) {
  return (got - want).norm() / std::max(want.norm(), 1.0);
}

/// log p(x, z) = 0 everywhere.
class FlatModel final : public Model {
 public:
  explicit FlatModel(Index dim) : dim_(dim) {}
  std::string name() const override { return "Flat"; }
  Index latent_dim() const override { return dim_; }
  double log_joint(const Vector&) const override { return 0.0; }
  double log_joint_grad(const Vector& z, Vector& grad) const override {
    grad = Vector::Zero(z.size());
    return 0.0;
  }
  Vector pointwise_log_likelihood(const Vector&) const override { return Vector(); }
  Index data_size() const override { return 0; }

 private:
  Index dim_;
};

/// log p = -0.5 z' A z + b' z: quadratic with a known gradient.
class QuadraticModel final : public Model {
 public:
  QuadraticModel(Vector diag, Vector b) : diag_(std::move(diag)), b_(std::move(b)) {}
  std::string name() const override { return "Quadratic"; }
  Index latent_dim() const override { return diag_.size(); }
  double log_joint(const Vector& z) const override {
    return -0.5 * z.dot(diag_.cwiseProduct(z)) + b_.dot(z);
  }
  double log_joint_grad(const Vector& z, Vector& grad) const override {
    grad = b_ - diag_.cwiseProduct(z);
    return log_joint(z);
  }
  Vector pointwise_log_likelihood(const Vector& z) const override {
    return Vector::Constant(1, log_joint(z));
  }
  Index data_size() const override { return 1; }

 private:
  Vector diag_;
  Vector b_;
};

inline Vector random_vector(std::mt19937_64& rng, Index n, double scale) {
  std::normal_distribution<double> normal(0.0, scale);
  Vector v(n);
  for (Index i = 0; i < n; ++i) v(i) = normal(rng);
  return v;
}

/// Synthetic regression table with 11 features, written to `path`, for BNN tests.
inline void write_regression_csv(const std::string& path, int rows, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::ofstream out(path);
  for (int c = 0; c < 11; ++c) out << "f" << c << ',';
  out << "quality\n";
  for (int r = 0; r < rows; ++r) {
    double y = 5.0;
    for (int c = 0; c < 11; ++c) {
      const double x = normal(rng) * (1.0 + c);
      y += 0.1 * x / (1.0 + c) * ((c % 3) - 1);
      out << x << ',';
    }
    out << y + 0.3 * normal(rng) << '\n';
  }
}

}  // namespace mlmcvi::testing
