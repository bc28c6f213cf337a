#pragma once

#include "mlmcvi/core.hpp"
#include "mlmcvi/models.hpp"
#include "mlmcvi/rng.hpp"

#include <optional>

namespace mlmcvi {

struct GradientOptions {
  /// When set, T(eps; lambda) is projected onto this L2 ball before the model sees it.
  std::optional<double> prox_radius;
};

inline EstimatorKind kind_of_noise(NoiseKind kind) {
  return kind == NoiseKind::MC ? EstimatorKind::MC : EstimatorKind::RQMC;
}

struct PerSampleGradient {
  Vector d_mean;
  Vector d_log_scale;
  Index eps_index = 0;

  Vector flat() const;
};

/// z = m + exp(s) * eps, elementwise.
Vector transform(const Vector& eps, const VariationalParams& params);

/**
 * Reparameterized gradient of the single-sample ELBO integrand
 * log p(x, T(eps)) - log q(T(eps) | lambda) with respect to (m, s).
 *
 * With g = grad_z log p at z = T(eps):
 *   d_mean      = g
 *   d_log_scale = g * exp(s) * eps + 1
 * The +1 is the total derivative of -log q(T(eps)|lambda) = sum(s) + const.
 */
PerSampleGradient per_sample_gradient(const Model& model, const VariationalParams& params,
                                      const Vector& eps, const GradientOptions& options = {},
                                      Index eps_index = 0);

/// Mean of per-sample gradients over the batch, reduced pairwise in row order.
GradientEstimate batch_gradient(const Model& model, const VariationalParams& params,
                                const NoiseBatch& batch, const GradientOptions& options = {},
                                long iteration = 0);

/// log p(x, T(eps)) - log q(T(eps) | lambda), log q evaluated in closed form.
double elbo_integrand(const Model& model, const VariationalParams& params, const Vector& eps,
                      const GradientOptions& options = {});

struct ScalarEstimate {
  double mean = 0.0;
  double standard_error = 0.0;
};

ScalarEstimate elbo_estimate_with_error(const Model& model, const VariationalParams& params,
                                        const NoiseBatch& batch,
                                        const GradientOptions& options = {});

double elbo_estimate(const Model& model, const VariationalParams& params, const NoiseBatch& batch,
                     const GradientOptions& options = {});

/// Pairwise (cascade) sum of vectors produced by `term(i)` for i in [begin, end).
template <typename Term>
Vector pairwise_sum(Index begin, Index end, Index dim, const Term& term) {
  if (end <= begin) return Vector::Zero(dim);
  if (end - begin <= 8) {
    Vector acc = term(begin);
    for (Index i = begin + 1; i < end; ++i) acc += term(i);
    return acc;
  }
  const Index mid = begin + (end - begin) / 2;
  Vector left = pairwise_sum(begin, mid, dim, term);
  left += pairwise_sum(mid, end, dim, term);
  return left;
}

}  // namespace mlmcvi
