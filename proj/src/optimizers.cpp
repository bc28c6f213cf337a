#include "mlmcvi/optimizers.hpp"

#include <cmath>
#include <stdexcept>

namespace mlmcvi {

namespace {

VariationalParams finite_params(const Vector& flat, long iteration) {
  if (!flat.allFinite()) {
    throw DivergenceError("non-finite parameters at iteration " + std::to_string(iteration) +
                              " (|lambda| = " + std::to_string(flat.norm()) + ")",
                          iteration);
  }
  return VariationalParams::from_flat(flat);
}

}  // namespace

double eta(const ScheduleConfig& schedule, long t) {
  if (t < 0) throw std::invalid_argument("eta: iteration must be >= 0");
  const double td = static_cast<double>(t);
  switch (schedule.kind) {
    case ScheduleKind::TimeBased:
      return 1.0 / (1.0 + schedule.beta * td);
    case ScheduleKind::StepBased: {
      const long r = schedule.drop_rate;
      const long exponent = schedule.rounding == StepRounding::Ceil ? (t + r - 1) / r : t / r;
      return std::pow(schedule.beta, static_cast<double>(exponent));
    }
    case ScheduleKind::Exponential:
      return std::exp(-schedule.beta * td);
  }
  return 1.0;
}

VariationalParams sgd_step(const VariationalParams& params, const Vector& grad, double alpha,
                           long iteration) {
  const Vector flat = params.flat();
  if (grad.size() != flat.size()) throw std::invalid_argument("sgd_step: gradient length mismatch");
  return finite_params(flat - alpha * grad, iteration);
}

AdamState AdamState::zeros(Index flat_dim) {
  AdamState s;
  s.first_moment = Vector::Zero(flat_dim);
  s.second_moment = Vector::Zero(flat_dim);
  return s;
}

AdamResult adam_step(const AdamState& state, const VariationalParams& params, const Vector& grad,
                     double alpha, long iteration) {
  const Vector flat = params.flat();
  if (grad.size() != flat.size()) throw std::invalid_argument("adam_step: gradient length mismatch");
  AdamState next = state;
  next.step_count += 1;
  next.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * grad;
  next.second_moment =
      state.beta2 * state.second_moment + (1.0 - state.beta2) * grad.cwiseAbs2();
  const double k = static_cast<double>(next.step_count);
  const double c1 = 1.0 - std::pow(state.beta1, k);
  const double c2 = 1.0 - std::pow(state.beta2, k);
  const Vector m_hat = next.first_moment / c1;
  const Vector v_hat = next.second_moment / c2;
  const Vector step = (m_hat.array() / (v_hat.array().sqrt() + state.epsilon)).matrix();
  return {finite_params(flat - alpha * step, iteration), std::move(next)};
}

}  // namespace mlmcvi
