#pragma once

#include "mlmcvi/core.hpp"
#include "mlmcvi/metrics.hpp"
#include "mlmcvi/models.hpp"

#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

namespace mlmcvi {

enum class Termination { IterationsExhausted, Converged, Diverged };

std::string to_string(Termination reason);

/// Data and model instances for one config. Runs built from the same context
/// (as in a sweep) see identical train/test splits.
struct ExperimentContext {
  std::shared_ptr<const Dataset> data;  // null for the conjugate model
  std::shared_ptr<const Model> train_model;
  std::shared_ptr<const Model> test_model;  // null when there is no test split
};

ExperimentContext build_context(const ExperimentConfig& cfg);

struct RunTrace {
  ExperimentConfig config;
  std::vector<MetricRow> rows;
  VariationalParams final_params = VariationalParams::constant(1, 0.0, 0.0);
  Termination termination = Termination::IterationsExhausted;
  std::string message;  // divergence detail

  // Per optimization step t = 0, 1, ...
  std::vector<Index> n_samples;
  std::vector<double> eta;
  // One-sample level probe ||g_t(eps) - g_{t-1}(eps)||^2 per MLMC step; NaN at t = 0
  // and when probes are not recorded.
  std::vector<double> probes;
  // V_0 from the initial MLMC level; NaN for baselines.
  double v_zero = std::numeric_limits<double>::quiet_NaN();

  /// Per-sample gradient evaluations spent on optimization (metrics excluded).
  long long gradient_evaluations = 0;
};

RunTrace run_experiment(const ExperimentConfig& cfg);
RunTrace run_experiment(const ExperimentConfig& cfg, const ExperimentContext& context);

/// Checkpoint iterations for `iterations` steps: 0, k, 2k, ... below iterations, plus iterations - 1.
std::vector<long> metric_iterations(long iterations, long metric_every);

/// Closed-form optimization cost of a finished trace (N_0 per baseline step;
/// N_0 + sum_{t>=1} 2 N_t for MLMC, plus one per probe under VarianceRatio).
long long expected_gradient_evaluations(const RunTrace& trace);

extern const std::vector<std::string> kTraceColumns;

void write_trace_csv(const RunTrace& trace, const std::string& path);
void write_trace_csv(const std::vector<MetricRow>& rows, std::ostream& out);
std::vector<MetricRow> read_trace_csv(const std::string& path);
std::vector<MetricRow> read_trace_csv(std::istream& in);

struct PlotSeries {
  std::string label;
  std::vector<MetricRow> rows;
};

/// SVG line chart of `metric` (a CSV column name) with one polyline per series.
/// Throws std::invalid_argument naming the valid columns for an unknown metric.
void emit_summary_plot(const std::vector<PlotSeries>& series, const std::string& metric,
                       const std::string& path);
void emit_summary_plot(const std::vector<RunTrace>& traces, const std::string& metric,
                       const std::string& path);

/// Command-line entry point: run, sweep, check, plot. `check` calls
/// `check_suite` and returns its exit code.
int cli_main(int argc, const char* const* argv, const std::function<int()>& check_suite = {});

}  // namespace mlmcvi
