#include "mlmcvi/harness.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace mlmcvi {

namespace {

namespace fs = std::filesystem;

constexpr int kExitConfig = 1;
constexpr int kExitDiverged = 2;

ExperimentConfig load_with_overrides(const std::string& path,
                                     const std::vector<std::string>& overrides) {
  ExperimentConfig cfg = load_config(path);
  for (const std::string& item : overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + item + "'");
    std::string key = item.substr(0, eq), value = item.substr(eq + 1);
    auto trim = [](std::string& s) {
      s.erase(0, s.find_first_not_of(" \t"));
      s.erase(s.find_last_not_of(" \t") + 1);
    };
    trim(key);
    trim(value);
    apply_config_value(cfg, key, value);
  }
  return cfg;
}

void write_snapshot(const ExperimentConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config snapshot '" + path + "'");
  out << to_config_text(cfg);
}

void report(const RunTrace& trace, const std::string& csv) {
  std::cout << to_string(trace.config.estimator) << ": " << trace.rows.size() << " rows -> " << csv
            << " (" << to_string(trace.termination) << ", " << trace.gradient_evaluations
            << " gradient evaluations)";
  if (!trace.rows.empty() && trace.rows.back().train_elbo) {
    std::cout << ", final train ELBO " << *trace.rows.back().train_elbo;
  }
  std::cout << '\n';
  if (trace.termination == Termination::Diverged) std::cerr << "diverged: " << trace.message << '\n';
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

int cli_main(int argc, const char* const* argv, const std::function<int()>& check_suite) {
  CLI::App app{"Multi-level Monte Carlo variational inference experiments"};
  app.require_subcommand(1);

  std::string config_path, out_path = "trace.csv", out_dir = ".", estimators = "mc,rqmc,mlmc";
  std::string plot_metric = "train_elbo", plot_out = "plot.svg", run_plot;
  std::vector<std::string> overrides, csv_files;

  auto* run = app.add_subcommand("run", "Run one experiment and write its trace");
  run->add_option("config", config_path, "Config file")->required();
  run->add_option("-o,--out", out_path, "Trace CSV path");
  run->add_option("--set", overrides, "Override a config value (key=value)");
  run->add_option("--plot", run_plot, "Also plot this metric next to the CSV");

  auto* sweep = app.add_subcommand("sweep", "Run several estimators on shared data");
  sweep->add_option("config", config_path, "Config file")->required();
  sweep->add_option("--estimators", estimators, "Comma-separated list of mc, rqmc, mlmc");
  sweep->add_option("-d,--out-dir", out_dir, "Output directory");
  sweep->add_option("--set", overrides, "Override a config value (key=value)");
  sweep->add_option("--metric", plot_metric, "Metric for the summary plot");

  auto* check = app.add_subcommand("check", "Run the acceptance property suite");

  auto* plot = app.add_subcommand("plot", "Plot trace CSV files");
  plot->add_option("csv", csv_files, "Trace files")->required();
  plot->add_option("-m,--metric", plot_metric, "Column to plot");
  plot->add_option("-o,--out", plot_out, "SVG path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*run) {
      const ExperimentConfig cfg = validate_config(load_with_overrides(config_path, overrides));
      const RunTrace trace = run_experiment(cfg);
      write_trace_csv(trace, out_path);
      write_snapshot(cfg, out_path + ".cfg");
      if (!run_plot.empty()) {
        emit_summary_plot(std::vector<RunTrace>{trace}, run_plot,
                          fs::path(out_path).replace_extension(".svg").string());
      }
      report(trace, out_path);
      return trace.termination == Termination::Diverged ? kExitDiverged : 0;
    }

    if (*sweep) {
      const ExperimentConfig base = validate_config(load_with_overrides(config_path, overrides));
      std::vector<ExperimentConfig> configs;
      for (const std::string& name : split_list(estimators)) {
        ExperimentConfig cfg = base;
        apply_config_value(cfg, "estimator", name);
        // The multi-level update is defined for SGD only.
        if (cfg.estimator == Estimator::MLMC) cfg.optimizer = OptimizerKind::SGD;
        configs.push_back(validate_config(cfg));
      }
      if (configs.empty()) throw ConfigError("--estimators selected nothing");
      fs::create_directories(out_dir);
      const ExperimentContext context = build_context(base);
      std::vector<RunTrace> traces;
      bool diverged = false;
      for (const ExperimentConfig& cfg : configs) {
        std::string stem = to_string(cfg.estimator);
        for (char& c : stem) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        const std::string csv = (fs::path(out_dir) / ("trace_" + stem + ".csv")).string();
        traces.push_back(run_experiment(cfg, context));
        write_trace_csv(traces.back(), csv);
        write_snapshot(cfg, csv + ".cfg");
        report(traces.back(), csv);
        diverged = diverged || traces.back().termination == Termination::Diverged;
      }
      emit_summary_plot(traces, plot_metric, (fs::path(out_dir) / "summary.svg").string());
      return diverged ? kExitDiverged : 0;
    }

    if (*check) {
      if (!check_suite) {
        std::cerr << "check: no suite linked into this binary\n";
        return kExitConfig;
      }
      return check_suite();
    }

    if (*plot) {
      std::vector<PlotSeries> series;
      for (const std::string& file : csv_files) {
        series.push_back({fs::path(file).stem().string(), read_trace_csv(file)});
      }
      emit_summary_plot(series, plot_metric, plot_out);
      std::cout << "wrote " << plot_out << '\n';
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error:\n";
    for (const auto& v : e.violations()) std::cerr << "  " << v << '\n';
    return kExitConfig;
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return kExitDiverged;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  }
  return 0;
}

}  // namespace mlmcvi
