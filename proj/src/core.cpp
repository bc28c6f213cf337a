#include "mlmcvi/core.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace mlmcvi {

namespace {

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i > 0) out += sep;
    out += parts[i];
  }
  return out;
}

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::string format_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

long parse_long(std::string_view key, std::string_view value) {
  long out = 0;
  const auto* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc{} || ptr != end) {
    throw ConfigError("'" + std::string(key) + "' expects an integer, got '" + std::string(value) +
                      "'");
  }
  return out;
}

std::uint64_t parse_u64(std::string_view key, std::string_view value) {
  std::uint64_t out = 0;
  const auto* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc{} || ptr != end) {
    throw ConfigError("'" + std::string(key) + "' expects an unsigned integer, got '" +
                      std::string(value) + "'");
  }
  return out;
}

double parse_double(std::string_view key, std::string_view value) {
  const std::string s(value);
  char* end = nullptr;
  const double out = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) {
    throw ConfigError("'" + std::string(key) + "' expects a real number, got '" + s + "'");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError("'" + std::string(key) + "' expects true/false, got '" + std::string(value) +
                    "'");
}

template <typename Enum, std::size_t N>
Enum parse_enum(std::string_view key, std::string_view value, const Enum (&options)[N]) {
  std::vector<std::string> names;
  for (Enum e : options) {
    const auto name = to_string(e);
    names.push_back(name);
    if (value.size() == name.size() &&
        std::equal(value.begin(), value.end(), name.begin(), [](char a, char b) {
          return std::tolower(static_cast<unsigned char>(a)) ==
                 std::tolower(static_cast<unsigned char>(b));
        })) {
      return e;
    }
  }
  throw ConfigError("'" + std::string(key) + "' must be one of {" + join(names, ", ") +
                    "}, got '" + std::string(value) + "'");
}

constexpr ModelKind kModels[] = {ModelKind::HLR, ModelKind::BLR, ModelKind::BNN,
                                 ModelKind::ConjugateGaussian};
constexpr Estimator kEstimators[] = {Estimator::MC, Estimator::RQMC, Estimator::MLMC};
constexpr OptimizerKind kOptimizers[] = {OptimizerKind::SGD, OptimizerKind::Adam};
constexpr ScheduleKind kSchedules[] = {ScheduleKind::TimeBased, ScheduleKind::StepBased,
                                       ScheduleKind::Exponential};
constexpr StepRounding kRoundings[] = {StepRounding::Ceil, StepRounding::Floor};
constexpr SampleSizeRule kRules[] = {SampleSizeRule::VarianceRatio,
                                     SampleSizeRule::ScheduleRatio};

}  // namespace

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::HLR: return "HLR";
    case ModelKind::BLR: return "BLR";
    case ModelKind::BNN: return "BNN";
    case ModelKind::ConjugateGaussian: return "ConjugateGaussian";
  }
  return "?";
}

std::string to_string(Estimator kind) {
  switch (kind) {
    case Estimator::MC: return "MC";
    case Estimator::RQMC: return "RQMC";
    case Estimator::MLMC: return "MLMC";
  }
  return "?";
}

std::string to_string(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::MC: return "MC";
    case EstimatorKind::RQMC: return "RQMC";
    case EstimatorKind::MRG: return "MRG";
  }
  return "?";
}

std::string to_string(OptimizerKind kind) {
  return kind == OptimizerKind::SGD ? "SGD" : "Adam";
}

std::string to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::TimeBased: return "TimeBased";
    case ScheduleKind::StepBased: return "StepBased";
    case ScheduleKind::Exponential: return "Exponential";
  }
  return "?";
}

std::string to_string(StepRounding kind) { return kind == StepRounding::Ceil ? "Ceil" : "Floor"; }

std::string to_string(SampleSizeRule kind) {
  return kind == SampleSizeRule::VarianceRatio ? "VarianceRatio" : "ScheduleRatio";
}

EstimatorKind estimate_kind(Estimator estimator) {
  switch (estimator) {
    case Estimator::MC: return EstimatorKind::MC;
    case Estimator::RQMC: return EstimatorKind::RQMC;
    case Estimator::MLMC: return EstimatorKind::MRG;
  }
  return EstimatorKind::MC;
}

ConfigError::ConfigError(std::vector<std::string> violations)
    : std::runtime_error(join(violations, "; ")), violations_(std::move(violations)) {}

VariationalParams::VariationalParams(Vector mean, Vector log_scale)
    : mean_(std::move(mean)), log_scale_(std::move(log_scale)) {
  if (mean_.size() != log_scale_.size()) {
    throw std::invalid_argument("VariationalParams: mean has length " +
                                std::to_string(mean_.size()) + " but log_scale has length " +
                                std::to_string(log_scale_.size()));
  }
  if (mean_.size() < 1) throw std::invalid_argument("VariationalParams: dimension must be >= 1");
  if (!mean_.allFinite() || !log_scale_.allFinite()) {
    throw std::invalid_argument("VariationalParams: non-finite entry");
  }
}

VariationalParams VariationalParams::constant(Index dim, double mean, double log_scale) {
  return {Vector::Constant(dim, mean), Vector::Constant(dim, log_scale)};
}

VariationalParams VariationalParams::from_flat(const Vector& flat) {
  if (flat.size() % 2 != 0) {
    throw std::invalid_argument("VariationalParams::from_flat: odd length " +
                                std::to_string(flat.size()));
  }
  const Index d = flat.size() / 2;
  return {flat.head(d), flat.tail(d)};
}

Vector VariationalParams::flat() const {
  Vector out(2 * dim());
  out << mean_, log_scale_;
  return out;
}

Vector GradientEstimate::flat() const {
  Vector out(2 * dim());
  out << d_mean, d_log_scale;
  return out;
}

GradientEstimate GradientEstimate::from_flat(const Vector& flat, Index n_samples,
                                             EstimatorKind kind, long iteration) {
  const Index d = flat.size() / 2;
  return {flat.head(d), flat.tail(d), n_samples, kind, iteration};
}

ExperimentConfig validate_config(const ExperimentConfig& cfg) {
  std::vector<std::string> errors;
  if (cfg.estimator == Estimator::MLMC && cfg.optimizer != OptimizerKind::SGD) {
    errors.emplace_back("MLMC requires SGD");
  }
  if (cfg.n0 < 1) errors.emplace_back("n0 must be >= 1");
  if (cfg.iterations < 0) errors.emplace_back("iterations must be >= 0");
  if ((cfg.model == ModelKind::BLR || cfg.model == ModelKind::BNN) && !cfg.dataset_path) {
    errors.emplace_back("dataset_path is required for " + to_string(cfg.model));
  }
  if (!(cfg.train_fraction > 0.0 && cfg.train_fraction <= 1.0)) {
    errors.emplace_back("train_fraction must lie in (0, 1]");
  }
  if (cfg.metric_every < 1) errors.emplace_back("metric_every must be >= 1");
  if (cfg.variance_repeats < 1) errors.emplace_back("variance_repeats must be >= 1");
  if (cfg.test_mc_samples < 1) errors.emplace_back("test_mc_samples must be >= 1");
  if (cfg.prox_radius && !(*cfg.prox_radius > 0.0)) {
    errors.emplace_back("prox_radius must be > 0");
  }
  const auto& s = cfg.schedule;
  if (!(s.beta > 0.0) || !std::isfinite(s.beta)) errors.emplace_back("beta must be > 0");
  if (s.kind == ScheduleKind::StepBased) {
    if (!(s.beta > 0.0 && s.beta < 1.0)) errors.emplace_back("StepBased requires beta in (0, 1)");
    if (s.drop_rate < 1) errors.emplace_back("drop_rate must be >= 1");
  }
  if (!(s.alpha0 > 0.0) || !std::isfinite(s.alpha0)) errors.emplace_back("alpha0 must be > 0");
  if (cfg.bnn_hidden < 1) errors.emplace_back("bnn_hidden must be >= 1");
  if (cfg.bnn_subsample < 1) errors.emplace_back("bnn_subsample must be >= 1");
  if (cfg.hlr_groups < 1) errors.emplace_back("hlr_groups must be >= 1");
  if (cfg.hlr_features < 1) errors.emplace_back("hlr_features must be >= 1");
  if (!std::isfinite(cfg.conjugate_x)) errors.emplace_back("conjugate_x must be finite");
  if (!std::isfinite(cfg.init_log_scale)) errors.emplace_back("init_log_scale must be finite");
  if (!errors.empty()) throw ConfigError(std::move(errors));
  return cfg;
}

void apply_config_value(ExperimentConfig& cfg, std::string_view key, std::string_view value) {
  auto& s = cfg.schedule;
  if (key == "model") {
    cfg.model = parse_enum(key, value, kModels);
  } else if (key == "estimator") {
    cfg.estimator = parse_enum(key, value, kEstimators);
  } else if (key == "optimizer") {
    cfg.optimizer = parse_enum(key, value, kOptimizers);
  } else if (key == "scheduler") {
    s.kind = parse_enum(key, value, kSchedules);
  } else if (key == "beta") {
    s.beta = parse_double(key, value);
  } else if (key == "drop_rate") {
    s.drop_rate = parse_long(key, value);
  } else if (key == "alpha0") {
    s.alpha0 = parse_double(key, value);
  } else if (key == "step_decay_rounding") {
    s.rounding = parse_enum(key, value, kRoundings);
  } else if (key == "n0") {
    cfg.n0 = parse_long(key, value);
  } else if (key == "iterations") {
    cfg.iterations = parse_long(key, value);
  } else if (key == "seed") {
    cfg.seed = parse_u64(key, value);
  } else if (key == "dataset_path") {
    if (value.empty()) {
      cfg.dataset_path.reset();
    } else {
      cfg.dataset_path = std::string(value);
    }
  } else if (key == "train_fraction") {
    cfg.train_fraction = parse_double(key, value);
  } else if (key == "sample_size_rule") {
    cfg.sample_size_rule = parse_enum(key, value, kRules);
  } else if (key == "metric_every") {
    cfg.metric_every = parse_long(key, value);
  } else if (key == "variance_repeats") {
    cfg.variance_repeats = parse_long(key, value);
  } else if (key == "test_mc_samples") {
    cfg.test_mc_samples = parse_long(key, value);
  } else if (key == "prox_radius") {
    if (value.empty() || value == "none") {
      cfg.prox_radius.reset();
    } else {
      cfg.prox_radius = parse_double(key, value);
    }
  } else if (key == "target_column") {
    cfg.target_column = std::string(value);
  } else if (key == "positive_label") {
    if (value.empty()) {
      cfg.positive_label.reset();
    } else {
      cfg.positive_label = std::string(value);
    }
  } else if (key == "bnn_hidden") {
    cfg.bnn_hidden = parse_long(key, value);
  } else if (key == "bnn_subsample") {
    cfg.bnn_subsample = parse_long(key, value);
  } else if (key == "hlr_groups") {
    cfg.hlr_groups = parse_long(key, value);
  } else if (key == "hlr_features") {
    cfg.hlr_features = parse_long(key, value);
  } else if (key == "conjugate_x") {
    cfg.conjugate_x = parse_double(key, value);
  } else if (key == "init_log_scale") {
    cfg.init_log_scale = parse_double(key, value);
  } else if (key == "record_probes") {
    cfg.record_probes = parse_bool(key, value);
  } else if (key == "variance_metrics") {
    cfg.variance_metrics = parse_bool(key, value);
  } else {
    throw ConfigError("unknown config key '" + std::string(key) + "'");
  }
}

ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig cfg;
  std::vector<std::string> errors;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      errors.push_back("line " + std::to_string(line_no) + ": expected 'key = value'");
      continue;
    }
    try {
      apply_config_value(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      for (const auto& v : e.violations()) errors.push_back("line " + std::to_string(line_no) + ": " + v);
    }
  }
  if (!errors.empty()) throw ConfigError(std::move(errors));
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_config_text(const ExperimentConfig& cfg) {
  std::ostringstream out;
  const auto& s = cfg.schedule;
  out << "model = " << to_string(cfg.model) << '\n'
      << "estimator = " << to_string(cfg.estimator) << '\n'
      << "optimizer = " << to_string(cfg.optimizer) << '\n'
      << "scheduler = " << to_string(s.kind) << '\n'
      << "beta = " << format_double(s.beta) << '\n'
      << "drop_rate = " << s.drop_rate << '\n'
      << "alpha0 = " << format_double(s.alpha0) << '\n'
      << "step_decay_rounding = " << to_string(s.rounding) << '\n'
      << "n0 = " << cfg.n0 << '\n'
      << "iterations = " << cfg.iterations << '\n'
      << "seed = " << cfg.seed << '\n'
      << "dataset_path = " << cfg.dataset_path.value_or("") << '\n'
      << "train_fraction = " << format_double(cfg.train_fraction) << '\n'
      << "sample_size_rule = " << to_string(cfg.sample_size_rule) << '\n'
      << "metric_every = " << cfg.metric_every << '\n'
      << "variance_repeats = " << cfg.variance_repeats << '\n'
      << "test_mc_samples = " << cfg.test_mc_samples << '\n'
      << "prox_radius = " << (cfg.prox_radius ? format_double(*cfg.prox_radius) : "none") << '\n'
      << "target_column = " << cfg.target_column << '\n'
      << "positive_label = " << cfg.positive_label.value_or("") << '\n'
      << "bnn_hidden = " << cfg.bnn_hidden << '\n'
      << "bnn_subsample = " << cfg.bnn_subsample << '\n'
      << "hlr_groups = " << cfg.hlr_groups << '\n'
      << "hlr_features = " << cfg.hlr_features << '\n'
      << "conjugate_x = " << format_double(cfg.conjugate_x) << '\n'
      << "init_log_scale = " << format_double(cfg.init_log_scale) << '\n'
      << "record_probes = " << (cfg.record_probes ? "true" : "false") << '\n'
      << "variance_metrics = " << (cfg.variance_metrics ? "true" : "false") << '\n';
  return out.str();
}

}  // namespace mlmcvi
