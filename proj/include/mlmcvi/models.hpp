#pragma once

#include "mlmcvi/core.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace mlmcvi {

/// Feature matrix, targets, and a disjoint train/test row partition.
struct Dataset {
  RowMatrix features;
  Vector targets;
  std::vector<Index> train;
  std::vector<Index> test;
  std::vector<std::string> feature_names;

  Index rows() const { return features.rows(); }
  Index cols() const { return features.cols(); }
};

enum class Split { Train, Test };

/**
 * A Bayesian model over an unconstrained latent vector z.
 *
 * Positive latents are represented by their logarithm; their log-prior
 * already includes the log-Jacobian of exp. A model instance is bound to
 * one data split: log_joint sums the likelihood over that split's rows.
 */
class Model {
 public:
  virtual ~Model() = default;

  virtual std::string name() const = 0;
  virtual Index latent_dim() const = 0;
  virtual double log_joint(const Vector& z) const = 0;
  /// Writes grad_z log_joint into `grad` (resized as needed) and returns log_joint.
  virtual double log_joint_grad(const Vector& z, Vector& grad) const = 0;
  /// log p(y_i | x_i, z) for each row of the bound split.
  virtual Vector pointwise_log_likelihood(const Vector& z) const = 0;
  /// Number of likelihood terms (rows of the bound split).
  virtual Index data_size() const = 0;
  virtual std::vector<bool> positive_mask() const;

  Vector grad_log_joint(const Vector& z) const {
    Vector g;
    log_joint_grad(z, g);
    return g;
  }
};

struct HlrData {
  Dataset data;
  /// Latents in model order [b_1..b_I | mu' | log sigma' | log noise].
  Vector true_latents;
  double sigma_w = 0.0;  // sampled weight variance sigma'
  double noise = 0.0;    // sampled observation variance
};

/// Draws one observation per group from the hierarchical linear-regression
/// generative process. Deterministic per seed.
HlrData generate_hlr_data(Index groups, Index features, std::uint64_t seed,
                          double train_fraction = 0.8);

struct CsvOptions {
  std::string target_column;  // header name or 0-based index; empty = last column
  std::optional<std::string> positive_label;
  bool require_binary = false;
  bool append_bias = true;
  double train_fraction = 0.8;
  std::uint64_t seed = 1;
  /// Keep only this many rows (seeded subsample) before splitting.
  std::optional<Index> max_rows;
};

/// Numeric CSV ingestion: seeded shuffle split, z-scoring with training-split
/// statistics, optional bias column. Throws std::runtime_error on parse problems.
Dataset load_uci_csv(const std::string& path, const CsvOptions& options);

/// Seeded shuffle split of rows into train/test.
void assign_split(Dataset& data, double train_fraction, std::uint64_t seed);

std::unique_ptr<Model> hlr_model(std::shared_ptr<const Dataset> data, Split split);
std::unique_ptr<Model> blr_model(std::shared_ptr<const Dataset> data, Split split);
std::unique_ptr<Model> bnn_model(std::shared_ptr<const Dataset> data, Split split,
                                 Index hidden = 50);
/// z ~ N(0, 1), x | z ~ N(z, 1), observed x = x_obs.
std::unique_ptr<Model> conjugate_gaussian_model(double x_obs);

/// log N(x; mean, variance)
double log_normal_density(double x, double mean, double variance);

/// Bernoulli saturation-safe log(1 + exp(x)).
double softplus(double x);

}  // namespace mlmcvi
