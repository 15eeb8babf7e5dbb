// besn: command-line front end for the forecasting pipeline.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "besn/besn.hpp"

namespace {

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::string stage;
  std::string out;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "JSON config file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "root seed (overrides config)");
  cmd->add_option("--workers", o.workers, "parallel workers (overrides config)")->check(CLI::PositiveNumber);
  cmd->add_option("--stage", o.stage, "last stage to run: data, tune, reservoir, fit, weight, forecast, score, render");
  cmd->add_option("--out", o.out, "output directory (overrides config and BESN_OUTPUT_ROOT)");
}

/// Precedence: command line, then config file, then built-in defaults.
besn::PipelineConfig resolve(const CommonOptions& o) {
  besn::PipelineConfig c = o.config.empty() ? besn::PipelineConfig{} : besn::load_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (o.workers) c.workers = *o.workers;
  if (!o.out.empty()) c.output_dir = o.out;
  return c;
}

std::pair<int, int> parse_range(const std::string& s) {
  const auto dots = s.find("..");
  if (dots == std::string::npos) throw besn::ConfigError("holdout must look like t0..t1");
  try {
    return {std::stoi(s.substr(0, dots)), std::stoi(s.substr(dots + 2))};
  } catch (const std::exception&) {
    throw besn::ConfigError("holdout must look like t0..t1");
  }
}

int execute(besn::PipelineConfig cfg, const std::string& until) {
  const besn::fs::path out = besn::resolve_output_dir(cfg.output_dir);
  const besn::RunReport r = besn::run_pipeline(cfg, out, until, &std::cout);
  std::cout << "stages run: " << r.ran.size() << ", skipped: " << r.skipped.size() << "\n";
  std::cout << "manifest: " << (out / "manifest.json").string() << "\n";
  const besn::fs::path table = out / "score/brier_table.csv";
  if ((until == "score" || until == "render") && besn::fs::exists(table)) std::cout << besn::read_file(table);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reservoir-augmented Bayesian cellular automata forecasting"};
  app.require_subcommand(1);

  CommonOptions common;
  auto stage_cmd = [&](const std::string& name, const std::string& help) {
    CLI::App* c = app.add_subcommand(name, help);
    add_common(c, common);
    return c;
  };

  CLI::App* simulate = stage_cmd("simulate", "simulate the quadrant spread process");
  CLI::App* ingest = stage_cmd("ingest", "load an observed binary series");
  std::string input;
  std::optional<double> threshold;
  ingest->add_option("--input", input, "wide CSV (cell_0..cell_{n-1}) or NDJSON {t, cell, value}")
      ->required()
      ->check(CLI::ExistingFile);
  ingest->add_option("--threshold", threshold, "binarise continuous CSV values: 1 where value > threshold");
  CLI::App* tune = stage_cmd("tune", "grid search over reservoir hyperparameters");
  CLI::App* fit = stage_cmd("fit", "draw posterior samples for every ensemble member");
  std::string export_csv;
  fit->add_option("--export-csv", export_csv, "also write the draws of every fit as CSV into this directory");
  CLI::App* weight = stage_cmd("weight", "fit ensemble weights");
  std::string holdout;
  weight->add_option("--holdout", holdout, "restrict the weight fit to fields t0..t1");
  CLI::App* forecast = stage_cmd("forecast", "weighted one-step forecast with HPD intervals");
  CLI::App* score = stage_cmd("score", "Brier scores and interval coverage");
  CLI::App* render = stage_cmd("render", "write PNG figures");
  CLI::App* run = stage_cmd("run", "full pipeline");

  CLI11_PARSE(app, argc, argv);

  try {
    besn::PipelineConfig cfg = resolve(common);
    std::string until;
    if (simulate->parsed()) {
      cfg.data.source = "simulate";
      until = "data";
    } else if (ingest->parsed()) {
      const besn::fs::path out = besn::resolve_output_dir(cfg.output_dir);
      cfg.data.source = "file";
      cfg.data.path = input;
      if (threshold) {
        const besn::GridSpec grid = cfg.data.grid();
        const Eigen::MatrixXd values = besn::parse_values_csv(besn::read_file(input), grid);
        const besn::fs::path bin = out / "input/thresholded.csv";
        besn::save_binary_series(besn::threshold_series(values, grid, *threshold), bin);
        cfg.data.path = bin;
      }
      until = "data";
    } else if (tune->parsed()) {
      until = "tune";
    } else if (fit->parsed()) {
      until = "fit";
    } else if (weight->parsed()) {
      if (!holdout.empty()) cfg.weight_holdout = parse_range(holdout);
      until = "weight";
    } else if (forecast->parsed()) {
      until = "forecast";
    } else if (score->parsed()) {
      until = "score";
    } else if (render->parsed()) {
      until = "render";
    } else if (run->parsed()) {
      until = "render";
    }
    if (!common.stage.empty()) until = common.stage;
    const int rc = execute(cfg, until);
    if (fit->parsed() && !export_csv.empty()) {
      const besn::fs::path out = besn::resolve_output_dir(cfg.output_dir);
      for (const auto& entry : besn::fs::directory_iterator(out / "fits")) {
        if (entry.path().extension() != ".col") continue;
        const besn::PosteriorDraws d = besn::draws_from_columnar(besn::read_columnar(entry.path()));
        besn::write_file(besn::fs::path(export_csv) / (entry.path().stem().string() + ".csv"), besn::draws_to_csv(d));
      }
    }
    return rc;
  } catch (const besn::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
