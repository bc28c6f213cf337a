#include "mlmcvi/estimators.hpp"

#include "mlmcvi/optimizers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mlmcvi {

namespace {

void check_pair(const VariationalParams& a, const VariationalParams& b) {
  if (a.dim() != b.dim()) throw std::invalid_argument("level parameters differ in dimension");
}

// Ceiling that ignores floating-point fuzz around integers, then clamps.
Index clamped_ceil(double x, Index n_initial) {
  if (!std::isfinite(x)) return x > 0 ? n_initial : 1;
  const double nearest = std::round(x);
  if (std::abs(x - nearest) <= 1e-12 * std::max(1.0, std::abs(x))) x = nearest;
  const double c = std::ceil(x);
  if (c < 1.0) return 1;
  if (c > static_cast<double>(n_initial)) return n_initial;
  return static_cast<Index>(c);
}

}  // namespace

GradientEstimate coupled_difference(const Model& model, const VariationalParams& params_curr,
                                    const VariationalParams& params_prev, const NoiseBatch& batch,
                                    const GradientOptions& options, long iteration) {
  check_pair(params_curr, params_prev);
  if (batch.n() < 1) throw std::invalid_argument("coupled_difference: empty batch");
  const Vector sum = pairwise_sum(Index{0}, batch.n(), 2 * params_curr.dim(), [&](Index i) {
    const Vector eps = batch.row(i);
    Vector diff = per_sample_gradient(model, params_curr, eps, options, i).flat();
    diff -= per_sample_gradient(model, params_prev, eps, options, i).flat();
    return diff;
  });
  return GradientEstimate::from_flat(sum / static_cast<double>(batch.n()), batch.n(),
                                     EstimatorKind::MRG, iteration);
}

GradientEstimate uncoupled_difference(const Model& model, const VariationalParams& params_curr,
                                      const VariationalParams& params_prev,
                                      const NoiseBatch& batch_curr, const NoiseBatch& batch_prev,
                                      const GradientOptions& options) {
  check_pair(params_curr, params_prev);
  const Vector diff = batch_gradient(model, params_curr, batch_curr, options).flat() -
                      batch_gradient(model, params_prev, batch_prev, options).flat();
  return GradientEstimate::from_flat(diff, batch_curr.n(), EstimatorKind::MRG, 0);
}

LevelProbe probe_one_sample_variance(const Model& model, const VariationalParams& params_curr,
                                     const VariationalParams& params_prev,
                                     const NoiseBatch& probe_eps, const GradientOptions& options) {
  check_pair(params_curr, params_prev);
  if (probe_eps.n() < 1) throw std::invalid_argument("probe: empty noise batch");
  const Vector eps = probe_eps.row(0);
  const Vector diff = per_sample_gradient(model, params_curr, eps, options).flat() -
                      per_sample_gradient(model, params_prev, eps, options).flat();
  return {diff.squaredNorm(), probe_eps.stream, 0};
}

InitialLevel initial_level(const Model& model, const VariationalParams& params,
                           const NoiseBatch& batch, const GradientOptions& options) {
  const Index n = batch.n();
  if (n < 1) throw std::invalid_argument("initial_level: empty batch");
  RowMatrix samples(n, 2 * params.dim());
  for (Index i = 0; i < n; ++i) {
    samples.row(i) = per_sample_gradient(model, params, batch.row(i), options, i).flat().transpose();
  }
  const Vector sum = pairwise_sum(Index{0}, n, samples.cols(),
                                  [&](Index i) -> Vector { return samples.row(i).transpose(); });
  const Vector mean = sum / static_cast<double>(n);
  double v_zero = 0.0;
  if (n > 1) {
    v_zero = (samples.rowwise() - mean.transpose()).squaredNorm() / static_cast<double>(n - 1);
  } else {
    v_zero = mean.squaredNorm();
  }
  InitialLevel out;
  out.estimate = GradientEstimate::from_flat(mean, n, kind_of_noise(batch.kind), 0);
  out.v_zero = v_zero;
  return out;
}

Index estimate_n_variance_ratio(long t, double v_t, double v_prev, double v_zero, Index n_prev,
                                Index n_initial) {
  if (t < 1) throw std::invalid_argument("estimate_n_variance_ratio: t must be >= 1");
  if (t == 1) {
    if (!(v_zero > 0.0)) return 1;
    return clamped_ceil(std::sqrt(v_t / (2.0 * v_zero)) * static_cast<double>(n_initial),
                        n_initial);
  }
  if (!(v_prev > 0.0)) return 1;
  return clamped_ceil(std::sqrt(v_t / v_prev) * static_cast<double>(n_prev), n_initial);
}

Index estimate_n_schedule_ratio(long t, double eta_prev, double eta_prev2, double v_zero,
                                Index n_prev, Index n_initial) {
  if (t < 1) throw std::invalid_argument("estimate_n_schedule_ratio: t must be >= 1");
  if (t == 1) {
    return clamped_ceil(static_cast<double>(n_initial) / std::sqrt(2.0 * v_zero), n_initial);
  }
  return clamped_ceil(eta_prev / eta_prev2 * static_cast<double>(n_prev), n_initial);
}

MrgState mrg_initial_state(const VariationalParams& params0, const VariationalParams& params1,
                           const InitialLevel& level0) {
  const Index n0 = level0.estimate.n_samples;
  return MrgState{params0, params1, 1.0, 1.0, 0.0, level0.v_zero, n0, n0, 1,
                  level0.estimate.flat()};
}

Index plan_sample_size(MrgState& state, SampleSizeRule rule, std::optional<double> probe_v) {
  Index n = 1;
  if (rule == SampleSizeRule::VarianceRatio) {
    if (!probe_v) throw std::invalid_argument("VarianceRatio needs a probe value");
    n = estimate_n_variance_ratio(state.t, *probe_v, state.v_prev, state.v_zero, state.n_curr,
                                  state.n_initial);
    state.v_prev = *probe_v;
  } else {
    n = estimate_n_schedule_ratio(state.t, state.eta_prev, state.eta_prev2, state.v_zero,
                                  state.n_curr, state.n_initial);
    if (probe_v) state.v_prev = *probe_v;
  }
  state.n_curr = n;
  return n;
}

Vector mrg_update(const Vector& curr, const Vector& prev, double eta_ratio, double alpha,
                  const Vector& loss_diff) {
  return curr + eta_ratio * (curr - prev) - alpha * loss_diff;
}

MrgStepResult mrg_step(const MrgState& state, const Model& model, const ScheduleConfig& schedule,
                       const NoiseBatch& batch, const GradientOptions& options) {
  const long t = state.t;
  const double eta_t = eta(schedule, t);
  const double alpha_t = schedule.alpha0 * eta_t;
  const double ratio = eta_t / state.eta_prev;

  GradientEstimate diff =
      coupled_difference(model, state.params_curr, state.params_prev, batch, options, t);
  const Vector curr = state.params_curr.flat();
  const Vector next = mrg_update(curr, state.params_prev.flat(), ratio, alpha_t, -diff.flat());
  if (!next.allFinite()) {
    throw DivergenceError("non-finite parameters at iteration " + std::to_string(t) +
                              " (|lambda_t| = " + std::to_string(curr.norm()) +
                              ", |correction| = " + std::to_string(diff.flat().norm()) + ")",
                          t);
  }

  MrgStepResult out{VariationalParams::from_flat(next), state, {}, diff};
  const Vector effective = (next - curr) / alpha_t;
  out.estimate = GradientEstimate::from_flat(effective, batch.n(), EstimatorKind::MRG, t);
  MrgState& s = out.state;
  s.params_prev = state.params_curr;
  s.params_curr = out.params;
  s.eta_prev2 = state.eta_prev;
  s.eta_prev = eta_t;
  s.n_curr = batch.n();
  s.t = t + 1;
  s.last_effective_gradient = effective;
  return out;
}

GradientEstimate mrg_telescoped_estimate(const std::vector<GradientEstimate>& corrections,
                                         const GradientEstimate& initial) {
  Vector sum = initial.flat();
  long iteration = initial.iteration;
  for (const auto& c : corrections) {
    if (c.dim() != initial.dim()) {
      throw std::invalid_argument("mrg_telescoped_estimate: correction dimension mismatch");
    }
    sum += c.flat();
    iteration = c.iteration;
  }
  return GradientEstimate::from_flat(sum, initial.n_samples, EstimatorKind::MRG, iteration);
}

}  // namespace mlmcvi
