#include "mlmcvi/models.hpp"

#include "mlmcvi/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace mlmcvi {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// log Gamma(shape, rate) density of theta = exp(u), plus the log-Jacobian u.
double log_gamma_prior_unconstrained(double u, double shape, double rate) {
  return shape * std::log(rate) - std::lgamma(shape) + shape * u - rate * std::exp(u);
}

double d_log_gamma_prior_unconstrained(double u, double shape, double rate) {
  return shape - rate * std::exp(u);
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

RowMatrix gather_rows(const RowMatrix& m, const std::vector<Index>& rows) {
  RowMatrix out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(rows[i]);
  return out;
}

Vector gather(const Vector& v, const std::vector<Index>& rows) {
  Vector out(static_cast<Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) out(static_cast<Index>(i)) = v(rows[i]);
  return out;
}

const std::vector<Index>& split_rows(const Dataset& data, Split split) {
  return split == Split::Train ? data.train : data.test;
}

void check_finite_input(const Vector& z, Index dim, const std::string& model) {
  if (z.size() != dim) {
    throw std::invalid_argument(model + ": latent vector has length " + std::to_string(z.size()) +
                                ", expected " + std::to_string(dim));
  }
}

// Gaussian draws for data generation, from the same counter stream as MC noise.
class NormalStream {
 public:
  explicit NormalStream(std::uint64_t seed) : seed_(seed) {}
  double next() { return inverse_normal_cdf(counter_uniform(seed_, 0, counter_++)); }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

// Hierarchical linear regression, one observation per group.
// Latents: [b_1..b_I (I*k) | mu' (k) | log sigma' | log noise].
class HlrModel final : public Model {
 public:
  HlrModel(std::shared_ptr<const Dataset> data, Split split)
      : data_(std::move(data)),
        groups_(data_->rows()),
        features_(data_->cols()),
        rows_(split_rows(*data_, split)) {}

  std::string name() const override { return "HLR"; }
  Index latent_dim() const override { return groups_ * features_ + features_ + 2; }
  Index data_size() const override { return static_cast<Index>(rows_.size()); }

  std::vector<bool> positive_mask() const override {
    std::vector<bool> mask(latent_dim(), false);
    mask[latent_dim() - 2] = true;
    mask[latent_dim() - 1] = true;
    return mask;
  }

  double log_joint(const Vector& z) const override { return evaluate(z, nullptr); }

  double log_joint_grad(const Vector& z, Vector& grad) const override {
    grad.setZero(latent_dim());
    return evaluate(z, &grad);
  }

  Vector pointwise_log_likelihood(const Vector& z) const override {
    check_finite_input(z, latent_dim(), name());
    const double noise = std::exp(z(latent_dim() - 1));
    Vector out(data_size());
    for (std::size_t r = 0; r < rows_.size(); ++r) {
      const Index i = rows_[r];
      const double pred = data_->features.row(i).dot(z.segment(i * features_, features_));
      out(static_cast<Index>(r)) = log_normal_density(data_->targets(i), pred, noise);
    }
    return out;
  }

 private:
  static constexpr double kMuPriorVariance = 100.0;
  static constexpr double kLogScalePriorVariance = 0.25;  // LogNormal(0, 0.5)

  double evaluate(const Vector& z, Vector* grad) const {
    check_finite_input(z, latent_dim(), name());
    const Index k = features_;
    const Index mu_at = groups_ * k;
    const Index ls_at = mu_at + k;
    const Index le_at = ls_at + 1;
    const auto mu = z.segment(mu_at, k);
    const double ls = z(ls_at);
    const double le = z(le_at);
    const double sigma_w = std::exp(ls);
    const double noise = std::exp(le);

    double lp = 0.0;
    for (Index j = 0; j < k; ++j) lp += log_normal_density(mu(j), 0.0, kMuPriorVariance);
    lp += log_normal_density(ls, 0.0, kLogScalePriorVariance);
    lp += log_normal_density(le, 0.0, kLogScalePriorVariance);
    if (grad) {
      grad->segment(mu_at, k) = -mu / kMuPriorVariance;
      (*grad)(ls_at) = -ls / kLogScalePriorVariance;
      (*grad)(le_at) = -le / kLogScalePriorVariance;
    }

    double weight_sq = 0.0;
    for (Index i = 0; i < groups_; ++i) {
      const auto dev = (z.segment(i * k, k) - mu).eval();
      weight_sq += dev.squaredNorm();
      if (grad) {
        grad->segment(i * k, k) = -dev / sigma_w;
        grad->segment(mu_at, k) += dev / sigma_w;
      }
    }
    const double n_weights = static_cast<double>(groups_ * k);
    lp += -0.5 * n_weights * (kLog2Pi + ls) - 0.5 * weight_sq / sigma_w;
    if (grad) (*grad)(ls_at) += -0.5 * n_weights + 0.5 * weight_sq / sigma_w;

    double resid_sq = 0.0;
    for (const Index i : rows_) {
      const auto x = data_->features.row(i);
      const double resid = data_->targets(i) - x.dot(z.segment(i * k, k));
      resid_sq += resid * resid;
      if (grad) grad->segment(i * k, k) += (resid / noise) * x.transpose();
    }
    const double n_obs = static_cast<double>(rows_.size());
    lp += -0.5 * n_obs * (kLog2Pi + le) - 0.5 * resid_sq / noise;
    if (grad) (*grad)(le_at) += -0.5 * n_obs + 0.5 * resid_sq / noise;
    return lp;
  }

  std::shared_ptr<const Dataset> data_;
  Index groups_;
  Index features_;
  std::vector<Index> rows_;
};

// Bayesian logistic regression with a shared Gaussian weight prior.
// Latents: [w (k) | mu' | log precision].
class BlrModel final : public Model {
 public:
  BlrModel(std::shared_ptr<const Dataset> data, Split split)
      : x_(gather_rows(data->features, split_rows(*data, split))),
        y_(gather(data->targets, split_rows(*data, split))),
        k_(data->cols()) {
    for (Index i = 0; i < y_.size(); ++i) {
      if (y_(i) != 0.0 && y_(i) != 1.0) {
        throw std::invalid_argument("BLR: target values must be 0 or 1");
      }
    }
  }

  std::string name() const override { return "BLR"; }
  Index latent_dim() const override { return k_ + 2; }
  Index data_size() const override { return y_.size(); }

  std::vector<bool> positive_mask() const override {
    std::vector<bool> mask(latent_dim(), false);
    mask.back() = true;
    return mask;
  }

  double log_joint(const Vector& z) const override { return evaluate(z, nullptr); }

  double log_joint_grad(const Vector& z, Vector& grad) const override {
    grad.setZero(latent_dim());
    return evaluate(z, &grad);
  }

  Vector pointwise_log_likelihood(const Vector& z) const override {
    check_finite_input(z, latent_dim(), name());
    const Vector eta = x_ * z.head(k_);
    Vector out(eta.size());
    for (Index i = 0; i < eta.size(); ++i) out(i) = y_(i) * eta(i) - softplus(eta(i));
    return out;
  }

 private:
  static constexpr double kPrecisionShape = 0.5;
  static constexpr double kPrecisionRate = 0.5;

  double evaluate(const Vector& z, Vector* grad) const {
    check_finite_input(z, latent_dim(), name());
    const auto w = z.head(k_);
    const double mu = z(k_);
    const double lp_prec = z(k_ + 1);
    const double precision = std::exp(lp_prec);

    double lp = log_gamma_prior_unconstrained(lp_prec, kPrecisionShape, kPrecisionRate);
    lp += log_normal_density(mu, 0.0, 1.0);
    const Vector dev = w.array() - mu;
    const double dev_sq = dev.squaredNorm();
    const double kk = static_cast<double>(k_);
    lp += 0.5 * kk * (lp_prec - kLog2Pi) - 0.5 * precision * dev_sq;

    const Vector eta = x_ * w;
    Vector resid(eta.size());
    for (Index i = 0; i < eta.size(); ++i) {
      lp += y_(i) * eta(i) - softplus(eta(i));
      resid(i) = y_(i) - sigmoid(eta(i));
    }
    if (grad) {
      grad->head(k_) = -precision * dev + x_.transpose() * resid;
      (*grad)(k_) = -mu + precision * dev.sum();
      (*grad)(k_ + 1) = d_log_gamma_prior_unconstrained(lp_prec, kPrecisionShape, kPrecisionRate) +
                        0.5 * kk - 0.5 * precision * dev_sq;
    }
    return lp;
  }

  RowMatrix x_;
  Vector y_;
  Index k_;
};

// One-hidden-layer ReLU regression network.
// Latents: [W1 (hidden x k, unit-major) | b1 (hidden) | W2 (hidden) | b2 | log alpha | log tau].
class BnnModel final : public Model {
 public:
  BnnModel(std::shared_ptr<const Dataset> data, Split split, Index hidden)
      : x_(gather_rows(data->features, split_rows(*data, split))),
        y_(gather(data->targets, split_rows(*data, split))),
        k_(data->cols()),
        hidden_(hidden) {
    if (hidden_ < 1) throw std::invalid_argument("BNN: hidden units must be >= 1");
  }

  std::string name() const override { return "BNN"; }
  Index latent_dim() const override { return n_weights() + 2; }
  Index data_size() const override { return y_.size(); }

  std::vector<bool> positive_mask() const override {
    std::vector<bool> mask(latent_dim(), false);
    mask[latent_dim() - 2] = true;
    mask[latent_dim() - 1] = true;
    return mask;
  }

  double log_joint(const Vector& z) const override { return evaluate(z, nullptr); }

  double log_joint_grad(const Vector& z, Vector& grad) const override {
    grad.setZero(latent_dim());
    return evaluate(z, &grad);
  }

  Vector pointwise_log_likelihood(const Vector& z) const override {
    check_finite_input(z, latent_dim(), name());
    const double tau = std::exp(z(latent_dim() - 1));
    const Vector f = forward(z, nullptr);
    Vector out(f.size());
    for (Index i = 0; i < f.size(); ++i) out(i) = log_normal_density(y_(i), f(i), 1.0 / tau);
    return out;
  }

  /// Network output for every row of the bound split.
  Vector predict(const Vector& z) const { return forward(z, nullptr); }

 private:
  static constexpr double kShape = 1.0;
  static constexpr double kRate = 0.1;

  Index n_weights() const { return hidden_ * k_ + hidden_ + hidden_ + 1; }

  using WeightMap = Eigen::Map<const RowMatrix>;

  Vector forward(const Vector& z, RowMatrix* activations) const {
    const WeightMap w1(z.data(), hidden_, k_);
    const auto b1 = z.segment(hidden_ * k_, hidden_);
    const auto w2 = z.segment(hidden_ * k_ + hidden_, hidden_);
    const double b2 = z(hidden_ * k_ + 2 * hidden_);
    RowMatrix pre = x_ * w1.transpose();
    pre.rowwise() += b1.transpose();
    if (activations) *activations = pre;
    const RowMatrix act = pre.cwiseMax(0.0);
    return (act * w2).array() + b2;
  }

  double evaluate(const Vector& z, Vector* grad) const {
    check_finite_input(z, latent_dim(), name());
    const Index nw = n_weights();
    const double log_alpha = z(nw);
    const double log_tau = z(nw + 1);
    const double alpha = std::exp(log_alpha);
    const double tau = std::exp(log_tau);

    double lp = log_gamma_prior_unconstrained(log_alpha, kShape, kRate) +
                log_gamma_prior_unconstrained(log_tau, kShape, kRate);
    const double w_sq = z.head(nw).squaredNorm();
    const double nwd = static_cast<double>(nw);
    lp += 0.5 * nwd * (log_alpha - kLog2Pi) - 0.5 * alpha * w_sq;

    RowMatrix pre;
    const Vector f = forward(z, grad ? &pre : nullptr);
    const Vector resid = y_ - f;
    const double resid_sq = resid.squaredNorm();
    const double n = static_cast<double>(y_.size());
    lp += 0.5 * n * (log_tau - kLog2Pi) - 0.5 * tau * resid_sq;

    if (grad) {
      grad->head(nw) = -alpha * z.head(nw);
      const Vector df = tau * resid;  // d lp / d f
      const auto w2 = z.segment(hidden_ * k_ + hidden_, hidden_);
      const RowMatrix act = pre.cwiseMax(0.0);
      // d lp / d pre = df * w2^T masked by the ReLU derivative.
      RowMatrix dpre = df * w2.transpose();
      dpre = (pre.array() > 0.0).select(dpre, 0.0);
      Eigen::Map<RowMatrix> gw1(grad->data(), hidden_, k_);
      gw1 += dpre.transpose() * x_;
      grad->segment(hidden_ * k_, hidden_) += dpre.colwise().sum().transpose();
      grad->segment(hidden_ * k_ + hidden_, hidden_) += act.transpose() * df;
      (*grad)(hidden_ * k_ + 2 * hidden_) += df.sum();
      (*grad)(nw) = d_log_gamma_prior_unconstrained(log_alpha, kShape, kRate) + 0.5 * nwd -
                    0.5 * alpha * w_sq;
      (*grad)(nw + 1) =
          d_log_gamma_prior_unconstrained(log_tau, kShape, kRate) + 0.5 * n - 0.5 * tau * resid_sq;
    }
    return lp;
  }

  RowMatrix x_;
  Vector y_;
  Index k_;
  Index hidden_;
};

class ConjugateGaussianModel final : public Model {
 public:
  explicit ConjugateGaussianModel(double x_obs) : x_obs_(x_obs) {
    if (!std::isfinite(x_obs_)) throw std::invalid_argument("conjugate model: x_obs must be finite");
  }

  std::string name() const override { return "ConjugateGaussian"; }
  Index latent_dim() const override { return 1; }
  Index data_size() const override { return 1; }

  double log_joint(const Vector& z) const override {
    check_finite_input(z, 1, name());
    return log_normal_density(z(0), 0.0, 1.0) + log_normal_density(x_obs_, z(0), 1.0);
  }

  double log_joint_grad(const Vector& z, Vector& grad) const override {
    grad.resize(1);
    grad(0) = -z(0) + (x_obs_ - z(0));
    return log_joint(z);
  }

  Vector pointwise_log_likelihood(const Vector& z) const override {
    check_finite_input(z, 1, name());
    return Vector::Constant(1, log_normal_density(x_obs_, z(0), 1.0));
  }

 private:
  double x_obs_;
};

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    const auto first = cell.find_first_not_of(" \t\r\"");
    const auto last = cell.find_last_not_of(" \t\r\"");
    cells.push_back(first == std::string::npos ? "" : cell.substr(first, last - first + 1));
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::optional<double> parse_number(const std::string& cell) {
  if (cell.empty()) return std::nullopt;
  char* end = nullptr;
  const double value = std::strtod(cell.c_str(), &end);
  if (end != cell.c_str() + cell.size() || !std::isfinite(value)) return std::nullopt;
  return value;
}

std::vector<Index> seeded_permutation(Index n, std::uint64_t seed) {
  std::vector<Index> perm(n);
  std::iota(perm.begin(), perm.end(), Index{0});
  // Fisher-Yates on the counter stream, so splits do not depend on the C++ library.
  for (Index i = n - 1; i > 0; --i) {
    const double u = counter_uniform(seed, 0, static_cast<std::uint64_t>(i));
    const auto j = static_cast<Index>(u * static_cast<double>(i + 1));
    std::swap(perm[i], perm[std::min(j, i)]);
  }
  return perm;
}

}  // namespace

std::vector<bool> Model::positive_mask() const { return std::vector<bool>(latent_dim(), false); }

double log_normal_density(double x, double mean, double variance) {
  const double d = x - mean;
  return -0.5 * (kLog2Pi + std::log(variance)) - 0.5 * d * d / variance;
}

double softplus(double x) {
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

void assign_split(Dataset& data, double train_fraction, std::uint64_t seed) {
  const Index n = data.rows();
  const auto perm = seeded_permutation(n, derive_seed(seed, 0x53504C4954ULL));
  auto n_train = static_cast<Index>(std::llround(train_fraction * static_cast<double>(n)));
  n_train = std::clamp<Index>(n_train, std::min<Index>(1, n), n);
  data.train.assign(perm.begin(), perm.begin() + n_train);
  data.test.assign(perm.begin() + n_train, perm.end());
  std::sort(data.train.begin(), data.train.end());
  std::sort(data.test.begin(), data.test.end());
}

HlrData generate_hlr_data(Index groups, Index features, std::uint64_t seed, double train_fraction) {
  if (groups < 1 || features < 1) {
    throw std::invalid_argument("generate_hlr_data: groups and features must be >= 1");
  }
  NormalStream normal(derive_seed(seed, 0x484C52ULL));
  HlrData out;
  const Index k = features;
  out.true_latents.resize(groups * k + k + 2);
  Vector mu(k);
  for (Index j = 0; j < k; ++j) mu(j) = 10.0 * normal.next();
  const double log_sigma = 0.5 * normal.next();
  const double log_noise = 0.5 * normal.next();
  out.sigma_w = std::exp(log_sigma);
  out.noise = std::exp(log_noise);

  out.data.features.resize(groups, k);
  out.data.targets.resize(groups);
  for (Index i = 0; i < groups; ++i) {
    for (Index j = 0; j < k; ++j) {
      out.true_latents(i * k + j) = mu(j) + std::sqrt(out.sigma_w) * normal.next();
    }
    for (Index j = 0; j < k; ++j) out.data.features(i, j) = normal.next();
    const double mean = out.data.features.row(i).dot(out.true_latents.segment(i * k, k));
    out.data.targets(i) = mean + std::sqrt(out.noise) * normal.next();
  }
  out.true_latents.segment(groups * k, k) = mu;
  out.true_latents(groups * k + k) = log_sigma;
  out.true_latents(groups * k + k + 1) = log_noise;
  for (Index j = 0; j < k; ++j) out.data.feature_names.push_back("x" + std::to_string(j));
  assign_split(out.data, train_fraction, seed);
  return out;
}

Dataset load_uci_csv(const std::string& path, const CsvOptions& options) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open data file '" + path + "'");

  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    rows.push_back(split_csv_line(line));
  }
  if (rows.empty()) throw std::runtime_error(path + ": no data rows");

  std::vector<std::string> header;
  const bool has_header = std::any_of(rows.front().begin(), rows.front().end(),
                                      [](const auto& c) { return !parse_number(c).has_value(); });
  if (has_header) {
    header = rows.front();
    rows.erase(rows.begin());
  }
  if (rows.empty()) throw std::runtime_error(path + ": no data rows");
  const std::size_t n_cols = rows.front().size();
  if (n_cols < 2) throw std::runtime_error(path + ": need at least one feature and a target");

  std::size_t target = n_cols - 1;
  if (!options.target_column.empty()) {
    const auto by_name = std::find(header.begin(), header.end(), options.target_column);
    if (by_name != header.end()) {
      target = static_cast<std::size_t>(by_name - header.begin());
    } else if (auto idx = parse_number(options.target_column);
               idx && *idx >= 0 && *idx < static_cast<double>(n_cols) && *idx == std::floor(*idx)) {
      target = static_cast<std::size_t>(*idx);
    } else {
      throw std::runtime_error(path + ": target column '" + options.target_column + "' not found");
    }
  }

  const auto first_data_line = static_cast<std::size_t>(has_header ? 2 : 1);
  Dataset data;
  const auto n = static_cast<Index>(rows.size());
  data.features.resize(n, static_cast<Index>(n_cols - 1));
  data.targets.resize(n);
  for (Index i = 0; i < n; ++i) {
    const auto& row = rows[i];
    const auto line_no = std::to_string(static_cast<std::size_t>(i) + first_data_line);
    if (row.size() != n_cols) {
      throw std::runtime_error(path + ": row " + line_no + " has " + std::to_string(row.size()) +
                               " columns, expected " + std::to_string(n_cols));
    }
    Index f = 0;
    for (std::size_t c = 0; c < n_cols; ++c) {
      if (c == target) continue;
      const auto value = parse_number(row[c]);
      if (!value) {
        throw std::runtime_error(path + ": row " + line_no + ", column " + std::to_string(c + 1) +
                                 ": non-numeric value '" + row[c] + "'");
      }
      data.features(i, f++) = *value;
    }
    const auto& cell = row[target];
    if (options.positive_label) {
      data.targets(i) = cell == *options.positive_label ? 1.0 : 0.0;
    } else if (auto value = parse_number(cell)) {
      data.targets(i) = *value;
    } else {
      throw std::runtime_error(path + ": row " + line_no + ", column " +
                               std::to_string(target + 1) + ": non-numeric target '" + cell +
                               "' (set positive_label to map class labels)");
    }
    if (options.require_binary && data.targets(i) != 0.0 && data.targets(i) != 1.0) {
      throw std::runtime_error(path + ": row " + line_no + ": non-binary label '" + cell + "'");
    }
  }
  for (std::size_t c = 0; c < n_cols; ++c) {
    if (c == target) continue;
    data.feature_names.push_back(has_header ? header[c] : "col" + std::to_string(c));
  }

  if (options.max_rows && *options.max_rows < n) {
    auto keep = seeded_permutation(n, derive_seed(options.seed, 0x53554253ULL));
    keep.resize(static_cast<std::size_t>(*options.max_rows));
    std::sort(keep.begin(), keep.end());
    data.features = gather_rows(data.features, keep);
    data.targets = gather(data.targets, keep);
  }

  assign_split(data, options.train_fraction, options.seed);

  // z-score with training-split statistics only.
  for (Index c = 0; c < data.cols(); ++c) {
    double mean = 0.0;
    for (Index i : data.train) mean += data.features(i, c);
    mean /= static_cast<double>(data.train.size());
    double var = 0.0;
    for (Index i : data.train) var += (data.features(i, c) - mean) * (data.features(i, c) - mean);
    var /= static_cast<double>(data.train.size());
    const double sd = var > 0.0 ? std::sqrt(var) : 1.0;
    data.features.col(c) = (data.features.col(c).array() - mean) / sd;
  }

  if (options.append_bias) {
    RowMatrix with_bias(data.rows(), data.cols() + 1);
    with_bias << data.features, Vector::Ones(data.rows());
    data.features = std::move(with_bias);
    data.feature_names.emplace_back("bias");
  }
  return data;
}

std::unique_ptr<Model> hlr_model(std::shared_ptr<const Dataset> data, Split split) {
  return std::make_unique<HlrModel>(std::move(data), split);
}

std::unique_ptr<Model> blr_model(std::shared_ptr<const Dataset> data, Split split) {
  return std::make_unique<BlrModel>(std::move(data), split);
}

std::unique_ptr<Model> bnn_model(std::shared_ptr<const Dataset> data, Split split, Index hidden) {
  return std::make_unique<BnnModel>(std::move(data), split, hidden);
}

std::unique_ptr<Model> conjugate_gaussian_model(double x_obs) {
  return std::make_unique<ConjugateGaussianModel>(x_obs);
}

}  // namespace mlmcvi
