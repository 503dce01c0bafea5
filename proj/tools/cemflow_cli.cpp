#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "cemflow/config.hpp"
#include "cemflow/error.hpp"
#include "cemflow/experiment.hpp"

using namespace cemflow;

namespace {

enum Exit { ok = 0, other = 1, config_error = 2, numerical_error = 3 };

int fail(Exit code, const char* kind, const std::string& what) {
  std::string line = what;
  for (char& c : line)
    if (c == '\n' || c == '\r') c = ' ';
  std::fprintf(stderr, "error code=%d kind=%s: %s\n", code, kind, line.c_str());
  return code;
}

struct Common {
  std::string config;
  std::string out;
  int workers = 0;
  long long seed = -1;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "experiment TOML file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", c.out, "output directory (overrides output.dir)");
  cmd->add_option("--workers", c.workers, "worker threads, 0 for all cores")->check(CLI::NonNegativeNumber);
  cmd->add_option("--seed", c.seed, "RNG seed (overrides seed)")->check(CLI::NonNegativeNumber);
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = load_config(c.config);
  if (!c.out.empty()) cfg.output_dir = c.out;
  if (c.seed >= 0) cfg.seed = static_cast<std::uint64_t>(c.seed);
  validate(cfg);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multiscale mixed Darcy solver with online adaptive enrichment"};
  app.require_subcommand(1);

  Common run_opts, fine_opts, gen_opts;
  auto* run = app.add_subcommand("run", "offline space, online enrichment, history and table");
  add_common(run, run_opts);
  auto* fine = app.add_subcommand("fine-solve", "reference fine-scale solve");
  add_common(fine, fine_opts);
  auto* gen = app.add_subcommand("gen-field", "write the configured permeability raster");
  add_common(gen, gen_opts);
  std::vector<std::string> dirs;
  std::string report_out;
  auto* rep = app.add_subcommand("report", "markdown table and decay data from run directories");
  rep->add_option("dirs", dirs, "run directories holding history.csv")->required();
  rep->add_option("--out", report_out, "where report.md and decay.dat go (default: first directory)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(config_error, "usage", e.what());
  }

  try {
    if (*run) {
      const ExperimentConfig cfg = resolve(run_opts);
      run_experiment(cfg, {run_opts.workers, true});
      std::ifstream table(std::filesystem::path(cfg.output_dir) / "table.txt");
      std::cout << table.rdbuf();
    } else if (*fine) {
      const ExperimentConfig cfg = resolve(fine_opts);
      const FineReport r = fine_solve(cfg, {fine_opts.workers, true});
      std::ifstream text(std::filesystem::path(cfg.output_dir) / "fine_report.txt");
      std::cout << text.rdbuf();
      if (!r.conservation_ok) return fail(numerical_error, "numerical", "fine solve violates cell mass balance");
    } else if (*gen) {
      const ExperimentConfig cfg = resolve(gen_opts);
      const TwoLevelMesh mesh(cfg.coarse, cfg.fine);
      const PermeabilityField k = make_permeability(cfg.field, cfg.seed, mesh);
      std::filesystem::create_directories(cfg.output_dir);
      const std::string path = (std::filesystem::path(cfg.output_dir) / "kappa.txt").string();
      write_raster(path, cell_raster(mesh, k.values()));
      std::cout << path << ": " << mesh.fine_per_side() << "x" << mesh.fine_per_side() << ", min " << k.min()
                << ", max " << k.max() << "\n";
    } else if (*rep) {
      std::cout << report(dirs, report_out.empty() ? dirs.front() : report_out);
    }
  } catch (const ParseError& e) {
    return fail(config_error, "parse", e.what());
  } catch (const InvalidArgument& e) {
    return fail(config_error, "config", e.what());
  } catch (const NumericalError& e) {
    return fail(numerical_error, "numerical", e.what());
  } catch (const std::exception& e) {
    return fail(other, "internal", e.what());
  }
  return ok;
}
