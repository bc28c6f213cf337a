#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mlmcvi {

using Vector = Eigen::VectorXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

enum class ModelKind { HLR, BLR, BNN, ConjugateGaussian };
enum class Estimator { MC, RQMC, MLMC };
enum class EstimatorKind { MC, RQMC, MRG };
enum class OptimizerKind { SGD, Adam };
enum class ScheduleKind { TimeBased, StepBased, Exponential };
enum class StepRounding { Ceil, Floor };
enum class SampleSizeRule { VarianceRatio, ScheduleRatio };

std::string to_string(ModelKind kind);
std::string to_string(Estimator kind);
std::string to_string(EstimatorKind kind);
std::string to_string(OptimizerKind kind);
std::string to_string(ScheduleKind kind);
std::string to_string(StepRounding kind);
std::string to_string(SampleSizeRule kind);

/// Gradient-estimate kind produced by a configured estimator.
EstimatorKind estimate_kind(Estimator estimator);

/// Raised for any config or input-shape problem; carries every violated
/// constraint, not just the first.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> violations);
  explicit ConfigError(const std::string& violation)
      : ConfigError(std::vector<std::string>{violation}) {}

  const std::vector<std::string>& violations() const { return violations_; }

 private:
  std::vector<std::string> violations_;
};

/// Non-finite parameters or gradients during optimization.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, long iteration)
      : std::runtime_error(what), iteration_(iteration) {}

  long iteration() const { return iteration_; }

 private:
  long iteration_;
};

/**
 * Diagonal-Gaussian variational parameters (mean, log-scale).
 *
 * The scale is stored as s = log v so that SGD moves in an unconstrained
 * space. The flat layout seen by optimizers is [mean | log_scale].
 */
class VariationalParams {
 public:
  VariationalParams(Vector mean, Vector log_scale);

  static VariationalParams constant(Index dim, double mean, double log_scale);
  static VariationalParams from_flat(const Vector& flat);

  Index dim() const { return mean_.size(); }
  const Vector& mean() const { return mean_; }
  const Vector& log_scale() const { return log_scale_; }
  Vector scale() const { return log_scale_.array().exp().matrix(); }
  Vector flat() const;

  bool operator==(const VariationalParams& other) const {
    return mean_ == other.mean_ && log_scale_ == other.log_scale_;
  }

 private:
  Vector mean_;
  Vector log_scale_;
};

struct GradientEstimate {
  Vector d_mean;
  Vector d_log_scale;
  Index n_samples = 1;
  EstimatorKind kind = EstimatorKind::MC;
  long iteration = 0;

  Index dim() const { return d_mean.size(); }
  Vector flat() const;
  static GradientEstimate from_flat(const Vector& flat, Index n_samples, EstimatorKind kind,
                                    long iteration);
};

/// Recycled state of the multi-level update between iterations.
struct MrgState {
  VariationalParams params_prev;  // lambda_{t-1}
  VariationalParams params_curr;  // lambda_t
  double eta_prev = 1.0;          // eta_{t-1}
  double eta_prev2 = 1.0;         // eta_{t-2}; 1 for t <= 1
  double v_prev = 0.0;            // one-sample variance proxy of the previous level
  double v_zero = 1.0;            // V_0
  Index n_curr = 1;               // N_t
  Index n_initial = 1;            // N_0
  long t = 1;
  // Effective (ascent) gradient of the previous update, (lambda_t - lambda_{t-1}) / alpha_{t-1}.
  Vector last_effective_gradient;
};

struct ScheduleConfig {
  ScheduleKind kind = ScheduleKind::StepBased;
  double beta = 0.5;
  long drop_rate = 100;
  double alpha0 = 0.001;
  StepRounding rounding = StepRounding::Ceil;

  bool operator==(const ScheduleConfig&) const = default;
};

struct ExperimentConfig {
  ModelKind model = ModelKind::BLR;
  Estimator estimator = Estimator::MLMC;
  OptimizerKind optimizer = OptimizerKind::SGD;
  ScheduleConfig schedule;
  long n0 = 100;
  long iterations = 1500;
  std::uint64_t seed = 1;
  std::optional<std::string> dataset_path;
  double train_fraction = 0.8;
  SampleSizeRule sample_size_rule = SampleSizeRule::ScheduleRatio;
  long metric_every = 10;
  long variance_repeats = 1000;
  long test_mc_samples = 2000;
  std::optional<double> prox_radius;

  // Data and model shape.
  std::string target_column;  // empty selects the last column
  std::optional<std::string> positive_label;
  long bnn_hidden = 50;
  long bnn_subsample = 100;
  long hlr_groups = 100;
  long hlr_features = 10;
  double conjugate_x = 1.0;

  // Initial variational parameters: mean 0, log-scale init_log_scale.
  double init_log_scale = 0.0;
  // Record a diagnostic one-sample level probe every MLMC iteration even when
  // the sample-size rule does not need it. Not counted as optimization cost.
  bool record_probes = true;
  // Gradient-variance and SNR metrics are skipped when false.
  bool variance_metrics = true;

  bool operator==(const ExperimentConfig&) const = default;
};

/// Returns cfg unchanged when every constraint holds, else throws ConfigError
/// listing all violations.
ExperimentConfig validate_config(const ExperimentConfig& cfg);

/// Parses the flat `key = value` format (`#` starts a comment).
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::string& path);
std::string to_config_text(const ExperimentConfig& cfg);

/// Applies a single `key = value` assignment; throws ConfigError on unknown
/// keys or unparsable values.
void apply_config_value(ExperimentConfig& cfg, std::string_view key, std::string_view value);

}  // namespace mlmcvi
