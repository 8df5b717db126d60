// Command-line entry point: generate synthetic datasets, run coverage
// experiments from a JSON config, and summarize emitted result files.
//
// Exit codes: 0 success, 1 validation error, 2 runtime error.

#include "cpmda/evaluation.hpp"
#include "cpmda/gaussian_oracle.hpp"
#include "cpmda/io.hpp"
#include "cpmda/missingness.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace {

struct CommonArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<double> alpha;
  std::string methods;
};

cpmda::RunConfig load_config(const CommonArgs& args) {
  cpmda::RunConfig cfg = cpmda::parse_config_file(args.config_path);
  if (args.seed) cfg.experiment.base_seed = *args.seed;
  if (args.alpha) {
    if (!(*args.alpha > 0.0 && *args.alpha < 1.0)) {
      throw std::invalid_argument("--alpha must lie in (0,1)");
    }
    cfg.experiment.alpha = *args.alpha;
  }
  if (!args.methods.empty()) {
    cfg.experiment.methods.clear();
    std::string name;
    std::stringstream ss(args.methods);
    while (std::getline(ss, name, ',')) {
      if (!name.empty()) cfg.experiment.methods.push_back(cpmda::method_from_name(name));
    }
    if (cfg.experiment.methods.empty()) {
      throw std::invalid_argument("--methods produced an empty list");
    }
  }
  return cfg;
}

int cmd_synth_gen(const CommonArgs& args, const std::string& out_path) {
  const cpmda::RunConfig cfg = load_config(args);
  if (!cfg.has_generator) {
    throw std::invalid_argument("synth-gen requires a generator config");
  }
  const int n = cfg.experiment.sizes.train + cfg.experiment.sizes.cal;
  const cpmda::McarSpec mcar{cfg.experiment.mcar_rate, std::nullopt};
  // Matches the stream layout of `run` repetition 0 so that running on this
  // file reproduces the inline-generator run.
  const cpmda::MaskedDataset data = cpmda::generate_glm_dataset(
      cfg.experiment.generator, n, mcar, cfg.experiment.base_seed);
  cpmda::save_synth_dataset(out_path, data);
  std::cout << "wrote " << n << " rows (d=" << cfg.experiment.generator.d << ") to " << out_path
            << "\n";
  return 0;
}

int cmd_run(const CommonArgs& args, const std::string& out_dir) {
  const cpmda::RunConfig cfg = load_config(args);

  std::vector<cpmda::RepetitionResult> results;
  if (cfg.has_generator) {
    results = cpmda::run_experiment(cfg.experiment);
  } else {
    const cpmda::LoadedDataset loaded = cpmda::load_csv_dataset(
        cfg.dataset->path, cfg.dataset->target, cpmda::CsvOptions{cfg.dataset->na_tokens});
    std::vector<int> columns = cfg.dataset->inject_columns;
    if (columns.empty()) {
      for (int j = 0; j < loaded.data.dimension(); ++j) columns.push_back(j);
    }
    cpmda::ExperimentConfig experiment = cfg.experiment;
    experiment.mcar_rate = cfg.dataset->inject_rate;
    results = cpmda::run_dataset_experiment(experiment, loaded.data, columns);
  }

  std::filesystem::create_directories(out_dir);
  const std::string results_path = (std::filesystem::path(out_dir) / "results.csv").string();
  cpmda::emit_results(cpmda::rows_from_results(results), results_path);
  std::cout << "wrote " << results_path << "\n";

  const auto aggregates = cpmda::aggregate_results(results);
  std::printf("%-28s %-12s %10s %10s %10s\n", "method", "group", "coverage", "mcse", "length");
  for (const auto& rec : aggregates) {
    if (rec.group.rfind("mask:", 0) == 0) continue;  // keep the console table short
    std::printf("%-28s %-12s %10.4f %10.4f %10.4f\n", rec.method.c_str(), rec.group.c_str(),
                rec.mean_coverage, rec.coverage_mcse, rec.mean_length);
  }
  return 0;
}

int cmd_report(const std::string& in_path, bool show_masks) {
  const std::vector<cpmda::ResultsRow> rows = cpmda::load_results(in_path);

  struct Cell {
    std::vector<double> coverage;
    std::vector<double> length;
    std::vector<double> infinite;
  };
  std::map<std::pair<std::string, std::string>, Cell> cells;
  for (const auto& row : rows) {
    Cell& cell = cells[{row.method, row.group}];
    cell.coverage.push_back(row.coverage);
    if (std::isfinite(row.mean_length)) cell.length.push_back(row.mean_length);
    cell.infinite.push_back(row.infinite_fraction);
  }

  const auto mean = [](const std::vector<double>& v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    double s = 0.0;
    for (double x : v) s += x;
    return s / v.size();
  };

  std::printf("%-28s %-14s %6s %10s %10s %10s %10s\n", "method", "group", "reps", "coverage",
              "mcse", "length", "inf_frac");
  for (const auto& [key, cell] : cells) {
    if (!show_masks && key.second.rfind("mask:", 0) == 0) continue;
    const double m = mean(cell.coverage);
    double ss = 0.0;
    for (double c : cell.coverage) ss += (c - m) * (c - m);
    const double mcse = cell.coverage.size() > 1
                            ? std::sqrt(ss / (cell.coverage.size() - 1)) /
                                  std::sqrt(static_cast<double>(cell.coverage.size()))
                            : 0.0;
    std::printf("%-28s %-14s %6zu %10.4f %10.4f %10.4f %10.4f\n", key.first.c_str(),
                key.second.c_str(), cell.coverage.size(), m, mcse, mean(cell.length),
                mean(cell.infinite));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conformal prediction under missing covariates"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string out = "out";
  std::string synth_out = "synth.csv";
  std::string report_in;
  bool show_masks = false;

  CLI::App* synth = app.add_subcommand("synth-gen", "Generate a synthetic dataset CSV");
  synth->add_option("--config", args.config_path, "JSON config path")->required();
  synth->add_option("--seed", args.seed, "Override the base seed");
  synth->add_option("--out", synth_out, "Output CSV path");

  CLI::App* run = app.add_subcommand("run", "Run a coverage experiment");
  run->add_option("--config", args.config_path, "JSON config path")->required();
  run->add_option("--seed", args.seed, "Override the base seed");
  run->add_option("--alpha", args.alpha, "Override the miscoverage level");
  run->add_option("--methods", args.methods, "Comma-separated method list override");
  run->add_option("--out", out, "Output directory");

  CLI::App* report = app.add_subcommand("report", "Summarize an emitted results CSV");
  report->add_option("--in", report_in, "results.csv path")->required();
  report->add_flag("--masks", show_masks, "Include per-mask groups in the table");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth_gen(args, synth_out);
    if (run->parsed()) return cmd_run(args, out);
    if (report->parsed()) return cmd_report(report_in, show_masks);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
