#pragma once

#include "mlmcvi/core.hpp"
#include "mlmcvi/gradient.hpp"
#include "mlmcvi/models.hpp"
#include "mlmcvi/prox.hpp"
#include "mlmcvi/rng.hpp"

#include <optional>
#include <vector>

namespace mlmcvi {

struct LevelProbe {
  double v_t = 0.0;  // ||g_curr(eps) - g_prev(eps)||^2 over both blocks
  StreamId eps_used;
  Index eps_index = 0;
};

/// Mean over the batch of g_curr(eps_n) - g_prev(eps_n), same eps_n on both levels.
/// Kind MRG; gradients are ELBO (ascent) gradients.
GradientEstimate coupled_difference(const Model& model, const VariationalParams& params_curr,
                                    const VariationalParams& params_prev, const NoiseBatch& batch,
                                    const GradientOptions& options = {}, long iteration = 0);

/// Same difference with independent noise per level. Only useful as a comparison.
GradientEstimate uncoupled_difference(const Model& model, const VariationalParams& params_curr,
                                      const VariationalParams& params_prev,
                                      const NoiseBatch& batch_curr, const NoiseBatch& batch_prev,
                                      const GradientOptions& options = {});

/// One-sample probe using row 0 of `probe_eps`.
LevelProbe probe_one_sample_variance(const Model& model, const VariationalParams& params_curr,
                                     const VariationalParams& params_prev,
                                     const NoiseBatch& probe_eps,
                                     const GradientOptions& options = {});

/// The t = 0 level: the plain batch gradient and V_0, the trace of the unbiased
/// sample covariance of its per-sample gradients.
struct InitialLevel {
  GradientEstimate estimate;
  double v_zero = 0.0;
};

InitialLevel initial_level(const Model& model, const VariationalParams& params,
                           const NoiseBatch& batch, const GradientOptions& options = {});

/// t = 1: ceil(sqrt(V_1 / (2 V_0)) N_0); t >= 2: ceil(sqrt(V_t / V_{t-1}) N_{t-1}).
/// Clamped to [1, n_initial]; v_prev = 0 gives 1.
Index estimate_n_variance_ratio(long t, double v_t, double v_prev, double v_zero, Index n_prev,
                                Index n_initial);

/// t = 1: ceil(N_0 / sqrt(2 V_0)); t >= 2: ceil((eta_{t-1} / eta_{t-2}) N_{t-1}).
/// Clamped to [1, n_initial].
Index estimate_n_schedule_ratio(long t, double eta_prev, double eta_prev2, double v_zero,
                                Index n_prev, Index n_initial);

/// State after the plain t = 0 step lambda_1 = lambda_0 + alpha_0 g_0.
MrgState mrg_initial_state(const VariationalParams& params0, const VariationalParams& params1,
                           const InitialLevel& level0);

/// Chooses N_t for the iteration state.t and stores it in the state. Under
/// VarianceRatio `probe_v` must hold V_t; it is cached as the next V_{t-1}.
Index plan_sample_size(MrgState& state, SampleSizeRule rule, std::optional<double> probe_v);

/// lambda_curr + ratio (lambda_curr - lambda_prev) - alpha * loss_diff, on flat vectors.
Vector mrg_update(const Vector& curr, const Vector& prev, double eta_ratio, double alpha,
                  const Vector& loss_diff);

struct MrgStepResult {
  VariationalParams params;
  MrgState state;
  /// Effective ascent gradient (lambda_{t+1} - lambda_t) / alpha_t.
  GradientEstimate estimate;
  /// The coupled level difference that drove the step.
  GradientEstimate correction;
};

/// One multi-level update at iteration state.t using `batch` (size N_t).
/// Throws DivergenceError on a non-finite result.
MrgStepResult mrg_step(const MrgState& state, const Model& model, const ScheduleConfig& schedule,
                       const NoiseBatch& batch, const GradientOptions& options = {});

/// initial + sum of corrections: the explicit telescoping form of the estimator.
GradientEstimate mrg_telescoped_estimate(const std::vector<GradientEstimate>& corrections,
                                         const GradientEstimate& initial);

}  // namespace mlmcvi
