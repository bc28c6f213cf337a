#pragma once

#include "mlmcvi/core.hpp"
#include "mlmcvi/gradient.hpp"
#include "mlmcvi/models.hpp"

#include <cstdint>
#include <optional>

namespace mlmcvi {

struct MetricRow {
  long iteration = 0;
  double elapsed_s = 0.0;
  std::optional<double> train_elbo;
  std::optional<double> test_elbo;
  std::optional<double> test_ll;
  Index n_samples = 1;
  std::optional<double> grad_var;
  std::optional<double> snr;
  double eta = 1.0;
  EstimatorKind estimator = EstimatorKind::MC;

  bool operator==(const MetricRow&) const = default;
};

struct VarianceEstimate {
  Vector mean;
  double trace = 0.0;  // trace of the unbiased sample covariance
  long repeats = 0;
};

/// Mean and covariance trace over the rows of `draws` (one draw per row).
VarianceEstimate variance_of_draws(const RowMatrix& draws);

/**
 * Resamples the estimator `repeats` times at fixed parameters.
 *
 * MC/RQMC: batch_gradient at `params` with n samples (fresh MC draws or a
 * fresh random shift per repeat). MRG: the effective gradient
 * last_effective_gradient + coupled_difference(curr, prev) of `mrg`, i.e. the
 * MRG parameter increment divided by alpha_t; `params` is ignored.
 */
VarianceEstimate empirical_gradient_variance(const Model& model, const VariationalParams& params,
                                             EstimatorKind kind, Index n, long repeats,
                                             std::uint64_t seed,
                                             const GradientOptions& options = {},
                                             const MrgState* mrg = nullptr);

/// ||mean||^2 / sqrt(variance_trace). Throws std::domain_error unless variance_trace > 0.
double empirical_snr(const Vector& mean_grad, double variance_trace);

/// grad_norm_sq / sqrt(kappa) times sqrt(n) (MC), n (RQMC) or sqrt(n) / eta_prev (MRG).
double snr_lower_bound(double grad_norm_sq, double kappa, double n, double eta_prev,
                       EstimatorKind method);

struct LogLikelihood {
  double sum = 0.0;
  double mean = 0.0;
};

/// Posterior-predictive log-likelihood of the model's bound split,
/// sum_i log (1/S) sum_s p(y_i | x_i, z_s), z_s ~ q. Absent for an empty split.
std::optional<LogLikelihood> test_log_likelihood(const Model& model,
                                                 const VariationalParams& params,
                                                 Index mc_samples, std::uint64_t seed);

struct ElboMetrics {
  double train_elbo = 0.0;
  std::optional<double> test_elbo;
};

/// ELBO on each split with the same mc_samples draws (common random numbers).
ElboMetrics elbo_metrics(const Model& train_model, const Model* test_model,
                         const VariationalParams& params, Index mc_samples, std::uint64_t seed,
                         const GradientOptions& options = {});

}  // namespace mlmcvi
