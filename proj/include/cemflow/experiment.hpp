#pragma once

#include <Eigen/Core>
#include <memory>
#include <string>
#include <vector>

#include "cemflow/config.hpp"
#include "cemflow/fine_fem.hpp"
#include "cemflow/online.hpp"
#include "cemflow/pou.hpp"

namespace cemflow {

/// Mesh, fields and fine operators of one configuration. Not copyable:
/// coarse systems built on it keep references into it.
struct Problem {
  Problem(const ExperimentConfig& config);
  Problem(const Problem&) = delete;
  Problem& operator=(const Problem&) = delete;

  ExperimentConfig config;
  TwoLevelMesh mesh;
  PermeabilityField kappa;
  PartitionOfUnity weight_pou;
  PartitionOfUnity indicator_pou;
  FineSystem sys;
  Eigen::VectorXd source;  // cell integrals of f
};

PermeabilityField make_permeability(const FieldSpec& spec, std::uint64_t seed, const TwoLevelMesh& mesh);

struct RunResult {
  std::vector<HistoryRow> history;
  std::vector<std::vector<int>> marked;
  std::vector<Eigen::VectorXd> indicators;
  double reference_seconds = 0.0;
  double offline_seconds = 0.0;
  double spectral_gap = 0.0;
  double reference_a_norm = 0.0;
};

struct RunOptions {
  int workers = 0;
  bool write_outputs = true;  // into config.output_dir
};

/// Reference solve, offline space, online iteration. With write_outputs the
/// output directory receives the config echo, history.csv, table.txt and,
/// when enabled, the kappa and solution rasters.
RunResult run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

struct FineReport {
  double a_norm = 0.0;
  double max_cell_imbalance = 0.0;  // max_c |(B u)_c - f_c| / max_c |f_c|
  bool conservation_ok = false;     // imbalance <= 1e-10
  // Manufactured mode only: velocity errors at n and 2n and their ratio.
  double error_coarse = 0.0, error_fine = 0.0, ratio = 0.0;
};

/// Reference solve alone. Writes rasters and fine_report.txt when
/// write_outputs is set.
FineReport fine_solve(const ExperimentConfig& config, const RunOptions& options = {});

/// Manufactured pressure cos(pi x) cos(pi y) with kappa = 1 on a T x T
/// coarse grid refined n times; returns the velocity error in the energy norm.
double manufactured_error(int coarse, int fine);

void write_history_csv(const std::string& path, const std::vector<HistoryRow>& rows);
/// Throws ParseError naming the path (and line) on missing, empty or corrupt files.
std::vector<HistoryRow> read_history_csv(const std::string& path);

/// Markdown table of one or more run directories (side by side) and a
/// gnuplot decay file of (m, e_u) columns, written into out_dir.
/// Returns the markdown text.
std::string report(const std::vector<std::string>& run_dirs, const std::string& out_dir);

/// "6.57590%" style percent with five decimals.
std::string percent(double fraction);

}  // namespace cemflow
