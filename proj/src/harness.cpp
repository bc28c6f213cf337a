#include "mlmcvi/harness.hpp"

#include "mlmcvi/estimators.hpp"
#include "mlmcvi/gradient.hpp"
#include "mlmcvi/optimizers.hpp"
#include "mlmcvi/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace mlmcvi {

namespace {

constexpr std::uint64_t kTagData = 0x44415441;
constexpr std::uint64_t kTagUpdate = 0x55504454;
constexpr std::uint64_t kTagProbe = 0x50524f42;
constexpr std::uint64_t kTagMetric = 0x4d455452;
constexpr std::uint64_t kTagVariance = 0x56415249;

constexpr double kConvergedStep = 1e-8;
constexpr long kConvergedWindow = 50;

// Counts calls to log_joint_grad, i.e. per-sample gradient evaluations.
class CountingModel final : public Model {
 public:
  explicit CountingModel(const Model& inner) : inner_(inner) {}

  std::string name() const override { return inner_.name(); }
  Index latent_dim() const override { return inner_.latent_dim(); }
  double log_joint(const Vector& z) const override { return inner_.log_joint(z); }
  double log_joint_grad(const Vector& z, Vector& grad) const override {
    ++count_;
    return inner_.log_joint_grad(z, grad);
  }
  Vector pointwise_log_likelihood(const Vector& z) const override {
    return inner_.pointwise_log_likelihood(z);
  }
  Index data_size() const override { return inner_.data_size(); }
  std::vector<bool> positive_mask() const override { return inner_.positive_mask(); }

  long long count() const { return count_; }

 private:
  const Model& inner_;
  mutable long long count_ = 0;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string format_optional(const std::optional<double>& v) {
  return v ? format_number(*v) : std::string();
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string& s, std::size_t line, const std::string& column) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) {
    throw std::runtime_error("trace line " + std::to_string(line) + ": bad value '" + s +
                             "' in column " + column);
  }
  return v;
}

std::optional<double> parse_optional(const std::string& s, std::size_t line,
                                     const std::string& column) {
  if (s.empty()) return std::nullopt;
  return parse_number(s, line, column);
}

EstimatorKind parse_kind(const std::string& s, std::size_t line) {
  for (EstimatorKind k : {EstimatorKind::MC, EstimatorKind::RQMC, EstimatorKind::MRG}) {
    if (to_string(k) == s) return k;
  }
  throw std::runtime_error("trace line " + std::to_string(line) + ": unknown estimator '" + s +
                           "'");
}

std::optional<double> column_value(const MetricRow& row, const std::string& column) {
  if (column == "iter") return static_cast<double>(row.iteration);
  if (column == "elapsed_s") return row.elapsed_s;
  if (column == "train_elbo") return row.train_elbo;
  if (column == "test_elbo") return row.test_elbo;
  if (column == "test_ll") return row.test_ll;
  if (column == "n_samples") return static_cast<double>(row.n_samples);
  if (column == "grad_var") return row.grad_var;
  if (column == "snr") return row.snr;
  if (column == "eta") return row.eta;
  return std::nullopt;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string to_string(Termination reason) {
  switch (reason) {
    case Termination::IterationsExhausted: return "iterations-exhausted";
    case Termination::Converged: return "converged";
    case Termination::Diverged: return "diverged";
  }
  return "?";
}

ExperimentContext build_context(const ExperimentConfig& cfg) {
  ExperimentContext ctx;
  const std::uint64_t data_seed = derive_seed(cfg.seed, kTagData);
  switch (cfg.model) {
    case ModelKind::ConjugateGaussian:
      ctx.train_model = conjugate_gaussian_model(cfg.conjugate_x);
      return ctx;
    case ModelKind::HLR: {
      auto generated = generate_hlr_data(cfg.hlr_groups, cfg.hlr_features, data_seed,
                                         cfg.train_fraction);
      auto data = std::make_shared<const Dataset>(std::move(generated.data));
      ctx.data = data;
      ctx.train_model = hlr_model(data, Split::Train);
      if (!data->test.empty()) ctx.test_model = hlr_model(data, Split::Test);
      return ctx;
    }
    case ModelKind::BLR:
    case ModelKind::BNN: {
      if (!cfg.dataset_path) throw ConfigError("dataset_path is required for BLR/BNN");
      CsvOptions options;
      options.target_column = cfg.target_column;
      options.positive_label = cfg.positive_label;
      options.train_fraction = cfg.train_fraction;
      options.seed = data_seed;
      if (cfg.model == ModelKind::BLR) {
        options.require_binary = true;
        options.append_bias = true;
      } else {
        options.append_bias = false;
        options.max_rows = cfg.bnn_subsample;
      }
      auto data = std::make_shared<const Dataset>(load_uci_csv(*cfg.dataset_path, options));
      ctx.data = data;
      if (cfg.model == ModelKind::BLR) {
        ctx.train_model = blr_model(data, Split::Train);
        if (!data->test.empty()) ctx.test_model = blr_model(data, Split::Test);
      } else {
        ctx.train_model = bnn_model(data, Split::Train, cfg.bnn_hidden);
        if (!data->test.empty()) ctx.test_model = bnn_model(data, Split::Test, cfg.bnn_hidden);
      }
      return ctx;
    }
  }
  return ctx;
}

std::vector<long> metric_iterations(long iterations, long metric_every) {
  std::vector<long> out;
  if (iterations <= 0) return {0};
  for (long t = 0; t < iterations; t += metric_every) out.push_back(t);
  if (out.back() != iterations - 1) out.push_back(iterations - 1);
  return out;
}

long long expected_gradient_evaluations(const RunTrace& trace) {
  const auto& cfg = trace.config;
  const auto steps = static_cast<long long>(trace.n_samples.size());
  if (cfg.estimator != Estimator::MLMC) return steps * cfg.n0;
  long long total = 0;
  for (std::size_t t = 0; t < trace.n_samples.size(); ++t) {
    total += (t == 0 ? 1 : 2) * static_cast<long long>(trace.n_samples[t]);
  }
  if (cfg.sample_size_rule == SampleSizeRule::VarianceRatio && steps > 1) total += steps - 1;
  return total;
}

RunTrace run_experiment(const ExperimentConfig& cfg) {
  validate_config(cfg);
  return run_experiment(cfg, build_context(cfg));
}

RunTrace run_experiment(const ExperimentConfig& cfg, const ExperimentContext& context) {
  validate_config(cfg);
  if (!context.train_model) throw std::invalid_argument("run_experiment: context has no model");

  RunTrace trace;
  trace.config = cfg;
  const Model& model = *context.train_model;
  const Model* test_model = context.test_model.get();
  CountingModel counted(model);
  const Index d = model.latent_dim();
  const GradientOptions options{cfg.prox_radius};
  const bool mlmc = cfg.estimator == Estimator::MLMC;
  const NoiseKind noise = cfg.estimator == Estimator::RQMC ? NoiseKind::RQMC : NoiseKind::MC;
  const EstimatorKind row_kind = estimate_kind(cfg.estimator);

  const std::uint64_t update_seed = derive_seed(cfg.seed, kTagUpdate);
  const std::uint64_t probe_seed = derive_seed(cfg.seed, kTagProbe);
  const std::uint64_t metric_seed = derive_seed(cfg.seed, kTagMetric);
  const std::uint64_t variance_seed = derive_seed(cfg.seed, kTagVariance);

  VariationalParams params = VariationalParams::constant(d, 0.0, cfg.init_log_scale);
  AdamState adam = AdamState::zeros(2 * d);
  std::optional<MrgState> mrg;
  long long probes_counted = 0;
  double elapsed = 0.0;

  auto record = [&](long t, Index n, double eta_t) {
    MetricRow row;
    row.iteration = t;
    row.elapsed_s = elapsed;
    row.n_samples = n;
    row.eta = eta_t;
    row.estimator = row_kind;
    const Index samples = cfg.test_mc_samples;
    const ElboMetrics elbo = elbo_metrics(model, test_model, params, samples, metric_seed, options);
    row.train_elbo = elbo.train_elbo;
    row.test_elbo = elbo.test_elbo;
    if (test_model != nullptr) {
      if (auto ll = test_log_likelihood(*test_model, params, samples, metric_seed)) {
        row.test_ll = ll->mean;
      }
    }
    if (cfg.variance_metrics) {
      const std::uint64_t seed = derive_seed(variance_seed, static_cast<std::uint64_t>(t));
      VarianceEstimate v;
      if (mlmc && mrg) {
        v = empirical_gradient_variance(model, params, EstimatorKind::MRG, n,
                                        cfg.variance_repeats, seed, options, &*mrg);
      } else {
        const EstimatorKind kind = mlmc ? EstimatorKind::MC : row_kind;
        v = empirical_gradient_variance(model, params, kind, n, cfg.variance_repeats, seed,
                                        options);
      }
      row.grad_var = v.trace;
      if (v.trace > 0.0) row.snr = empirical_snr(v.mean, v.trace);
    }
    trace.rows.push_back(row);
  };

  const long iterations = cfg.iterations;
  const std::vector<long> checkpoints = metric_iterations(iterations, cfg.metric_every);
  if (iterations == 0) {
    record(0, cfg.n0, eta(cfg.schedule, 0));
    trace.final_params = params;
    return trace;
  }

  std::size_t next_checkpoint = 0;
  long stable = 0;
  long t = 0;
  try {
    for (; t < iterations; ++t) {
      auto start = Clock::now();
      Index n_t = cfg.n0;
      double probe = std::numeric_limits<double>::quiet_NaN();
      if (mlmc && t >= 1) {
        std::optional<double> v_t;
        const bool counted_probe = cfg.sample_size_rule == SampleSizeRule::VarianceRatio;
        if (counted_probe || cfg.record_probes) {
          const NoiseBatch probe_eps =
              mc_normal_batch(probe_seed, static_cast<std::uint64_t>(t), 1, d);
          v_t = probe_one_sample_variance(model, mrg->params_curr, mrg->params_prev, probe_eps,
                                          options)
                    .v_t;
          probe = *v_t;
          if (counted_probe) ++probes_counted;
        }
        n_t = plan_sample_size(*mrg, cfg.sample_size_rule, v_t);
      }
      const double eta_t = eta(cfg.schedule, t);
      elapsed += seconds_since(start);

      if (next_checkpoint < checkpoints.size() && checkpoints[next_checkpoint] == t) {
        record(t, n_t, eta_t);
        ++next_checkpoint;
      }

      start = Clock::now();
      trace.n_samples.push_back(n_t);
      trace.eta.push_back(eta_t);
      trace.probes.push_back(probe);
      const Vector before = params.flat();
      const NoiseBatch batch = normal_batch(noise, update_seed, static_cast<std::uint64_t>(t), n_t, d);
      const double alpha_t = cfg.schedule.alpha0 * eta_t;
      if (mlmc) {
        if (t == 0) {
          const InitialLevel level0 = initial_level(counted, params, batch, options);
          VariationalParams next = sgd_step(params, -level0.estimate.flat(), alpha_t, t);
          mrg = mrg_initial_state(params, next, level0);
          trace.v_zero = level0.v_zero;
          params = std::move(next);
        } else {
          MrgStepResult step = mrg_step(*mrg, counted, cfg.schedule, batch, options);
          params = std::move(step.params);
          mrg = std::move(step.state);
        }
      } else {
        const GradientEstimate g = batch_gradient(counted, params, batch, options, t);
        if (cfg.optimizer == OptimizerKind::Adam) {
          AdamResult step = adam_step(adam, params, -g.flat(), alpha_t, t);
          params = std::move(step.params);
          adam = std::move(step.state);
        } else {
          params = sgd_step(params, -g.flat(), alpha_t, t);
        }
      }
      elapsed += seconds_since(start);

      stable = (params.flat() - before).norm() < kConvergedStep ? stable + 1 : 0;
      if (stable >= kConvergedWindow) {
        trace.termination = Termination::Converged;
        ++t;
        break;
      }
    }
  } catch (const DivergenceError& e) {
    trace.termination = Termination::Diverged;
    trace.message = "iteration " + std::to_string(t) + ": " + e.what();
  }

  if (trace.termination == Termination::Converged && t < iterations) {
    record(t, trace.n_samples.back(), eta(cfg.schedule, t));
  }
  trace.final_params = params;
  trace.gradient_evaluations = counted.count() + probes_counted;
  return trace;
}

const std::vector<std::string> kTraceColumns = {
    "iter", "elapsed_s", "train_elbo", "test_elbo", "test_ll",
    "n_samples", "grad_var", "snr", "eta", "estimator"};

void write_trace_csv(const std::vector<MetricRow>& rows, std::ostream& out) {
  for (std::size_t i = 0; i < kTraceColumns.size(); ++i) {
    out << (i ? "," : "") << kTraceColumns[i];
  }
  out << '\n';
  for (const MetricRow& r : rows) {
    out << r.iteration << ',' << format_number(r.elapsed_s) << ',' << format_optional(r.train_elbo)
        << ',' << format_optional(r.test_elbo) << ',' << format_optional(r.test_ll) << ','
        << r.n_samples << ',' << format_optional(r.grad_var) << ',' << format_optional(r.snr)
        << ',' << format_number(r.eta) << ',' << to_string(r.estimator) << '\n';
  }
}

void write_trace_csv(const RunTrace& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write trace file '" + path + "'");
  write_trace_csv(trace.rows, out);
  if (!out) throw std::runtime_error("write failed for trace file '" + path + "'");
}

std::vector<MetricRow> read_trace_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("trace file is empty");
  if (split_csv_line(line) != kTraceColumns) {
    throw std::runtime_error("unexpected trace header '" + line + "'");
  }
  std::vector<MetricRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != kTraceColumns.size()) {
      throw std::runtime_error("trace line " + std::to_string(line_no) + ": expected " +
                               std::to_string(kTraceColumns.size()) + " fields, found " +
                               std::to_string(cells.size()));
    }
    MetricRow r;
    r.iteration = static_cast<long>(parse_number(cells[0], line_no, "iter"));
    r.elapsed_s = parse_number(cells[1], line_no, "elapsed_s");
    r.train_elbo = parse_optional(cells[2], line_no, "train_elbo");
    r.test_elbo = parse_optional(cells[3], line_no, "test_elbo");
    r.test_ll = parse_optional(cells[4], line_no, "test_ll");
    r.n_samples = static_cast<Index>(parse_number(cells[5], line_no, "n_samples"));
    r.grad_var = parse_optional(cells[6], line_no, "grad_var");
    r.snr = parse_optional(cells[7], line_no, "snr");
    r.eta = parse_number(cells[8], line_no, "eta");
    r.estimator = parse_kind(cells[9], line_no);
    rows.push_back(r);
  }
  return rows;
}

std::vector<MetricRow> read_trace_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trace file '" + path + "'");
  return read_trace_csv(in);
}

void emit_summary_plot(const std::vector<PlotSeries>& series, const std::string& metric,
                       const std::string& path) {
  const bool known = metric != "estimator" && std::find(kTraceColumns.begin(), kTraceColumns.end(),
                                                        metric) != kTraceColumns.end();
  if (!known) {
    std::string valid;
    for (const auto& c : kTraceColumns) {
      if (c == "estimator") continue;
      valid += (valid.empty() ? "" : ", ") + c;
    }
    throw std::invalid_argument("unknown metric '" + metric + "'; valid columns: " + valid);
  }

  std::vector<std::vector<std::pair<double, double>>> points(series.size());
  double x_min = std::numeric_limits<double>::infinity(), x_max = -x_min;
  double y_min = x_min, y_max = -x_min;
  for (std::size_t s = 0; s < series.size(); ++s) {
    for (const MetricRow& r : series[s].rows) {
      const auto y = column_value(r, metric);
      if (!y || !std::isfinite(*y)) continue;
      const double x = static_cast<double>(r.iteration);
      points[s].emplace_back(x, *y);
      x_min = std::min(x_min, x);
      x_max = std::max(x_max, x);
      y_min = std::min(y_min, *y);
      y_max = std::max(y_max, *y);
    }
  }
  if (!std::isfinite(x_min)) x_min = 0, x_max = 1, y_min = 0, y_max = 1;
  if (x_max == x_min) x_max = x_min + 1;
  if (y_max == y_min) y_max = y_min + 1;

  const double width = 800, height = 500, left = 80, right = 180, top = 30, bottom = 50;
  const double pw = width - left - right, ph = height - top - bottom;
  auto sx = [&](double x) { return left + (x - x_min) / (x_max - x_min) * pw; };
  auto sy = [&](double y) { return top + (1.0 - (y - y_min) / (y_max - y_min)) * ph; };
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write plot file '" + path + "'");
  char buf[256];
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof buf,
                "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n"
                "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n",
                left, top + ph, left + pw, top + ph, left, top, left, top + ph);
  out << buf;
  std::snprintf(buf, sizeof buf,
                "<text x=\"%g\" y=\"%g\" font-size=\"12\">%.6g</text>\n"
                "<text x=\"%g\" y=\"%g\" font-size=\"12\">%.6g</text>\n"
                "<text x=\"%g\" y=\"%g\" font-size=\"12\">%.6g</text>\n"
                "<text x=\"%g\" y=\"%g\" font-size=\"12\" text-anchor=\"end\">%.6g</text>\n",
                4.0, top + ph, y_min, 4.0, top + 10, y_max, left, top + ph + 18, x_min, left + pw,
                top + ph + 18, x_max);
  out << buf;
  out << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 10
      << "\" font-size=\"13\" text-anchor=\"middle\">iteration</text>\n";
  out << "<text x=\"" << left + pw / 2 << "\" y=\"18\" font-size=\"14\" text-anchor=\"middle\">"
      << xml_escape(metric) << "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kColors[s % std::size(kColors)];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < points[s].size(); ++i) {
      std::snprintf(buf, sizeof buf, "%s%.2f,%.2f", i ? " " : "", sx(points[s][i].first),
                    sy(points[s][i].second));
      out << buf;
    }
    out << "\"/>\n";
    const double ly = top + 20.0 + 20.0 * static_cast<double>(s);
    std::snprintf(buf, sizeof buf,
                  "<g class=\"legend\"><line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"%s\" "
                  "stroke-width=\"2\"/><text x=\"%g\" y=\"%g\" font-size=\"12\">",
                  left + pw + 15, ly, left + pw + 40, ly, color, left + pw + 46, ly + 4);
    out << buf << xml_escape(series[s].label) << "</text></g>\n";
  }
  out << "</svg>\n";
  if (!out) throw std::runtime_error("write failed for plot file '" + path + "'");
}

void emit_summary_plot(const std::vector<RunTrace>& traces, const std::string& metric,
                       const std::string& path) {
  std::vector<PlotSeries> series;
  for (const RunTrace& t : traces) series.push_back({to_string(t.config.estimator), t.rows});
  emit_summary_plot(series, metric, path);
}

}  // namespace mlmcvi
