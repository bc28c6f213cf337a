#include "mlmcvi/gradient.hpp"

#include "mlmcvi/prox.hpp"

#include <cmath>
#include <stdexcept>

namespace mlmcvi {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

void check_dims(const Model& model, const VariationalParams& params, Index eps_dim) {
  if (params.dim() != model.latent_dim() || eps_dim != model.latent_dim()) {
    throw std::invalid_argument(model.name() + ": dimension mismatch (model " +
                                std::to_string(model.latent_dim()) + ", params " +
                                std::to_string(params.dim()) + ", noise " +
                                std::to_string(eps_dim) + ")");
  }
}

}  // namespace

Vector PerSampleGradient::flat() const {
  Vector out(2 * d_mean.size());
  out << d_mean, d_log_scale;
  return out;
}

Vector transform(const Vector& eps, const VariationalParams& params) {
  if (eps.size() != params.dim()) throw std::invalid_argument("transform: dimension mismatch");
  return params.mean() + (params.log_scale().array().exp() * eps.array()).matrix();
}

Vector proximal_truncate(const Vector& z, double radius) {
  if (!(radius > 0.0)) throw std::invalid_argument("proximal_truncate: radius must be > 0");
  const double norm = z.norm();
  if (norm <= radius) return z;
  return z * (radius / norm);
}

Vector proximal_truncate_vjp(const Vector& z, double radius, const Vector& g) {
  const double norm = z.norm();
  if (norm <= radius) return g;
  const Vector u = z / norm;
  return (radius / norm) * (g - u * u.dot(g));
}

PerSampleGradient per_sample_gradient(const Model& model, const VariationalParams& params,
                                      const Vector& eps, const GradientOptions& options,
                                      Index eps_index) {
  check_dims(model, params, eps.size());
  const Vector z = transform(eps, params);
  Vector g;
  if (options.prox_radius) {
    model.log_joint_grad(proximal_truncate(z, *options.prox_radius), g);
    g = proximal_truncate_vjp(z, *options.prox_radius, g);
  } else {
    model.log_joint_grad(z, g);
  }
  for (Index j = 0; j < g.size(); ++j) {
    if (!std::isfinite(g(j))) {
      throw DivergenceError(
          model.name() + ": non-finite log-joint gradient at latent index " + std::to_string(j), -1);
    }
  }
  PerSampleGradient out;
  out.d_log_scale = (g.array() * params.log_scale().array().exp() * eps.array() + 1.0).matrix();
  out.d_mean = std::move(g);
  out.eps_index = eps_index;
  return out;
}

GradientEstimate batch_gradient(const Model& model, const VariationalParams& params,
                                const NoiseBatch& batch, const GradientOptions& options,
                                long iteration) {
  check_dims(model, params, batch.d());
  if (batch.n() < 1) throw std::invalid_argument("batch_gradient: empty batch");
  const Vector sum = pairwise_sum(Index{0}, batch.n(), 2 * params.dim(), [&](Index i) {
    return per_sample_gradient(model, params, batch.row(i), options, i).flat();
  });
  return GradientEstimate::from_flat(sum / static_cast<double>(batch.n()), batch.n(),
                                     kind_of_noise(batch.kind), iteration);
}

double elbo_integrand(const Model& model, const VariationalParams& params, const Vector& eps,
                      const GradientOptions& options) {
  check_dims(model, params, eps.size());
  Vector z = transform(eps, params);
  if (options.prox_radius) z = proximal_truncate(z, *options.prox_radius);
  const double d = static_cast<double>(params.dim());
  const double log_q = -params.log_scale().sum() - 0.5 * eps.squaredNorm() - 0.5 * d * kLog2Pi;
  return model.log_joint(z) - log_q;
}

ScalarEstimate elbo_estimate_with_error(const Model& model, const VariationalParams& params,
                                        const NoiseBatch& batch, const GradientOptions& options) {
  check_dims(model, params, batch.d());
  if (batch.n() < 1) throw std::invalid_argument("elbo_estimate: empty batch");
  Vector values(batch.n());
  for (Index i = 0; i < batch.n(); ++i) values(i) = elbo_integrand(model, params, batch.row(i), options);
  const Vector sum = pairwise_sum(Index{0}, batch.n(), 1,
                                  [&](Index i) { return Vector::Constant(1, values(i)); });
  const double n = static_cast<double>(batch.n());
  const double mean = sum(0) / n;
  double se = 0.0;
  if (batch.n() > 1) se = std::sqrt((values.array() - mean).square().sum() / (n - 1.0) / n);
  return {mean, se};
}

double elbo_estimate(const Model& model, const VariationalParams& params, const NoiseBatch& batch,
                     const GradientOptions& options) {
  return elbo_estimate_with_error(model, params, batch, options).mean;
}

}  // namespace mlmcvi
