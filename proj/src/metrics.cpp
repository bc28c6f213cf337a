#include "mlmcvi/metrics.hpp"

#include "mlmcvi/estimators.hpp"
#include "mlmcvi/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace mlmcvi {

VarianceEstimate variance_of_draws(const RowMatrix& draws) {
  const Index r = draws.rows();
  if (r < 2) throw std::invalid_argument("variance needs at least 2 draws");
  const Vector mean = pairwise_sum(Index{0}, r, draws.cols(),
                                   [&](Index i) -> Vector { return draws.row(i).transpose(); }) /
                      static_cast<double>(r);
  const double trace =
      (draws.rowwise() - mean.transpose()).squaredNorm() / static_cast<double>(r - 1);
  return {mean, trace, static_cast<long>(r)};
}

VarianceEstimate empirical_gradient_variance(const Model& model, const VariationalParams& params,
                                             EstimatorKind kind, Index n, long repeats,
                                             std::uint64_t seed, const GradientOptions& options,
                                             const MrgState* mrg) {
  if (repeats < 2) throw std::invalid_argument("empirical_gradient_variance: repeats must be >= 2");
  if (n < 1) throw std::invalid_argument("empirical_gradient_variance: n must be >= 1");
  if (kind == EstimatorKind::MRG && mrg == nullptr) {
    throw std::invalid_argument("empirical_gradient_variance: MRG needs the recycled state");
  }
  const Index d = kind == EstimatorKind::MRG ? mrg->params_curr.dim() : params.dim();
  RowMatrix draws(repeats, 2 * d);
  for (long r = 0; r < repeats; ++r) {
    const auto rep = static_cast<std::uint64_t>(r);
    if (kind == EstimatorKind::MRG) {
      const NoiseBatch batch = mc_normal_batch(seed, rep, n, d);
      Vector g = coupled_difference(model, mrg->params_curr, mrg->params_prev, batch, options).flat();
      if (mrg->last_effective_gradient.size() == g.size()) g += mrg->last_effective_gradient;
      draws.row(r) = g.transpose();
    } else {
      const NoiseKind noise = kind == EstimatorKind::MC ? NoiseKind::MC : NoiseKind::RQMC;
      const NoiseBatch batch = normal_batch(noise, seed, rep, n, d);
      draws.row(r) = batch_gradient(model, params, batch, options).flat().transpose();
    }
  }
  return variance_of_draws(draws);
}

double empirical_snr(const Vector& mean_grad, double variance_trace) {
  if (!(variance_trace > 0.0)) {
    throw std::domain_error("SNR is undefined for zero gradient variance");
  }
  return mean_grad.squaredNorm() / std::sqrt(variance_trace);
}

double snr_lower_bound(double grad_norm_sq, double kappa, double n, double eta_prev,
                       EstimatorKind method) {
  if (!(kappa > 0.0)) throw std::invalid_argument("snr_lower_bound: kappa must be > 0");
  const double base = grad_norm_sq / std::sqrt(kappa);
  switch (method) {
    case EstimatorKind::MC:
      return base * std::sqrt(n);
    case EstimatorKind::RQMC:
      return base * n;
    case EstimatorKind::MRG:
      return base * std::sqrt(n) / eta_prev;
  }
  return base;
}

std::optional<LogLikelihood> test_log_likelihood(const Model& model,
                                                 const VariationalParams& params,
                                                 Index mc_samples, std::uint64_t seed) {
  const Index rows = model.data_size();
  if (rows == 0) return std::nullopt;
  if (mc_samples < 1) throw std::invalid_argument("test_log_likelihood: mc_samples must be >= 1");
  const NoiseBatch batch = mc_normal_batch(seed, 0, mc_samples, params.dim());
  RowMatrix ll(mc_samples, rows);
  for (Index s = 0; s < mc_samples; ++s) {
    ll.row(s) = model.pointwise_log_likelihood(transform(batch.row(s), params)).transpose();
  }
  const double log_s = std::log(static_cast<double>(mc_samples));
  double sum = 0.0;
  for (Index i = 0; i < rows; ++i) {
    const double peak = ll.col(i).maxCoeff();
    const double lse = peak + std::log((ll.col(i).array() - peak).exp().sum());
    sum += lse - log_s;
  }
  return LogLikelihood{sum, sum / static_cast<double>(rows)};
}

ElboMetrics elbo_metrics(const Model& train_model, const Model* test_model,
                         const VariationalParams& params, Index mc_samples, std::uint64_t seed,
                         const GradientOptions& options) {
  const NoiseBatch batch = mc_normal_batch(seed, 0, mc_samples, params.dim());
  ElboMetrics out;
  out.train_elbo = elbo_estimate(train_model, params, batch, options);
  if (test_model != nullptr && test_model->data_size() > 0) {
    out.test_elbo = elbo_estimate(*test_model, params, batch, options);
  }
  return out;
}

}  // namespace mlmcvi
