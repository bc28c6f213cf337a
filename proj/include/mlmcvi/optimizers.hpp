#pragma once

#include "mlmcvi/core.hpp"

namespace mlmcvi {

/// Learning-rate decay eta_t; the step size at iteration t is alpha0 * eta_t.
///   TimeBased:   1 / (1 + beta t)
///   StepBased:   beta^ceil(t / r)  (or floor, per rounding)
///   Exponential: exp(-beta t)
double eta(const ScheduleConfig& schedule, long t);

inline double step_size(const ScheduleConfig& schedule, long t) {
  return schedule.alpha0 * eta(schedule, t);
}

/// Descent step lambda - alpha * grad on the flat [mean | log_scale] vector.
/// Throws DivergenceError if the result is not finite.
VariationalParams sgd_step(const VariationalParams& params, const Vector& grad, double alpha,
                           long iteration = 0);

struct AdamState {
  Vector first_moment;
  Vector second_moment;
  long step_count = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState zeros(Index flat_dim);
};

struct AdamResult {
  VariationalParams params;
  AdamState state;
};

/// Bias-corrected Adam descent step with base rate alpha.
AdamResult adam_step(const AdamState& state, const VariationalParams& params, const Vector& grad,
                     double alpha, long iteration = 0);

}  // namespace mlmcvi
