#include "cemflow/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "cemflow/aux_space.hpp"
#include "cemflow/coarse_system.hpp"
#include "cemflow/error.hpp"
#include "cemflow/offline_basis.hpp"

namespace cemflow {

namespace fs = std::filesystem;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
  if (!out) throw InvalidArgument("cannot write " + path.string());
}

void write_solution_rasters(const fs::path& dir, const std::string& prefix, const TwoLevelMesh& mesh,
                            const Eigen::VectorXd& u, const Eigen::VectorXd& p) {
  const auto uc = cell_velocity(mesh, u);
  write_raster((dir / (prefix + "_ux.txt")).string(), cell_raster(mesh, uc[0]));
  write_raster((dir / (prefix + "_uy.txt")).string(), cell_raster(mesh, uc[1]));
  write_raster((dir / (prefix + "_p.txt")).string(), cell_raster(mesh, p));
}

std::string table_text(const ExperimentConfig& c, const RunResult& r) {
  std::ostringstream o;
  o << "# " << c.name << ": T=" << c.coarse << " n=" << c.fine << " J=" << c.modes << " l=" << c.offline_layers
    << " l~=" << c.online_layers << " theta=" << c.theta << "\n";
  o << "offline construction: " << fmt("%.4f", r.offline_seconds) << " s\n";
  o << "reference solve: " << fmt("%.4f", r.reference_seconds) << " s\n";
  o << "spectral gap Lambda: " << fmt("%.6g", r.spectral_gap) << "\n\n";
  char line[160];
  std::snprintf(line, sizeof line, "%4s %4s %6s %14s %16s\n", "J", "m", "DOF", "e_u", "CPU time (sec)");
  o << line;
  for (const HistoryRow& h : r.history) {
    const std::string cpu = h.m == 0 ? "-" : fmt("%.4f", h.wall_seconds);
    std::snprintf(line, sizeof line, "%4d %4d %6d %14s %16s\n", c.modes, h.m, h.dof, percent(h.e_u).c_str(),
                  cpu.c_str());
    o << line;
  }
  return o.str();
}

}  // namespace

PermeabilityField make_permeability(const FieldSpec& spec, std::uint64_t seed, const TwoLevelMesh& mesh) {
  switch (spec.source) {
    case FieldSpec::Source::generator: return gen_field(spec.kind, spec.contrast, seed, mesh);
    case FieldSpec::Source::raster: return load_permeability(spec.path, spec.rows, spec.cols, mesh);
    case FieldSpec::Source::spe10: return load_spe10(spec.path, spec.layer, mesh);
  }
  throw InvalidArgument("unknown field source");
}

Problem::Problem(const ExperimentConfig& c)
    : config(c),
      mesh(c.coarse, c.fine),
      kappa(make_permeability(c.field, c.seed, mesh)),
      weight_pou(mesh, c.weight_pou),
      indicator_pou(mesh, c.indicator_pou),
      sys(assemble(mesh, kappa, compute_kappa_tilde(kappa, weight_pou), c.mass)),
      source(box_source(mesh, c.boxes).integrals(mesh)) {}

RunResult run_experiment(const ExperimentConfig& config, const RunOptions& options) {
  validate(config);
  const Problem pb(config);
  RunResult r;

  auto t0 = std::chrono::steady_clock::now();
  const FineSolution ref = solve_fine(pb.sys, pb.source);
  r.reference_seconds = seconds_since(t0);
  r.reference_a_norm = a_norm(pb.sys, ref.velocity);
  const Eigen::VectorXd* u_ref = r.reference_a_norm > 0.0 ? &ref.velocity : nullptr;

  t0 = std::chrono::steady_clock::now();
  const AuxBasis aux = build_aux(pb.sys, config.modes, options.workers);
  CoarseSystem coarse(pb.sys, aux, pb.source);
  const ElementCondensation cond(pb.sys, aux, options.workers);
  coarse.append(build_offline_space(pb.sys, aux, config.offline_layers, options.workers, &cond), options.workers);
  r.offline_seconds = seconds_since(t0);
  r.spectral_gap = aux.spectral_gap();

  OnlineOptions online;
  online.theta = config.theta;
  online.layers = config.online_layers;
  online.tol = config.tol;
  online.max_iterations = config.max_iterations;
  online.max_dof = config.max_dof;
  online.workers = options.workers;
  online.enrich_pressure = config.enrich_pressure;
  online.recover_pressure = config.recover_pressure;
  online.pressure_accept = config.pressure_accept;
  online.condensation = &cond;
  OnlineResult res = iterate(coarse, pb.sys, aux, pb.indicator_pou, online, u_ref);
  r.history = res.history;
  r.marked = res.marked;
  r.indicators = res.indicators;

  if (options.write_outputs) {
    const fs::path dir(config.output_dir);
    fs::create_directories(dir);
    write_text(dir / "config.toml", to_toml(config));
    write_history_csv((dir / "history.csv").string(), r.history);
    write_text(dir / "table.txt", table_text(config, r));
    write_spectrum_csv((dir / "spectrum.csv").string(), aux);
    if (config.write_rasters) {
      write_raster((dir / "kappa.txt").string(), cell_raster(pb.mesh, pb.kappa.values()));
      write_solution_rasters(dir, "ref", pb.mesh, ref.velocity, ref.pressure);
      write_solution_rasters(dir, "ms", pb.mesh, res.solution.velocity, res.solution.pressure);
    }
  }
  return r;
}

double manufactured_error(int coarse, int fine) {
  const TwoLevelMesh mesh(coarse, fine);
  const PermeabilityField kappa(Eigen::VectorXd::Ones(mesh.num_cells()), mesh.fine_per_side());
  const PartitionOfUnity pou(mesh, PouMode::all_nodes);
  const FineSystem sys = assemble(mesh, kappa, compute_kappa_tilde(kappa, pou));
  constexpr double pi = std::numbers::pi;
  Eigen::VectorXd f = cell_integrals(mesh, [](double x, double y) {
    return 2.0 * pi * pi * std::cos(pi * x) * std::cos(pi * y);
  });
  f.array() -= f.mean();
  const FineSolution sol = solve_fine(sys, f);
  return velocity_error(sys, sol.velocity, [](double x, double y) {
    return std::array<double, 2>{pi * std::sin(pi * x) * std::cos(pi * y), pi * std::cos(pi * x) * std::sin(pi * y)};
  });
}

FineReport fine_solve(const ExperimentConfig& config, const RunOptions& options) {
  validate(config);
  FineReport rep;
  std::ostringstream text;
  if (config.manufactured) {
    rep.error_coarse = manufactured_error(config.coarse, config.fine);
    rep.error_fine = manufactured_error(config.coarse, 2 * config.fine);
    rep.ratio = rep.error_coarse / rep.error_fine;
    text << "manufactured p = cos(pi x) cos(pi y), kappa = 1\n"
         << "h = 1/" << config.coarse * config.fine << ": |u - u_h|_a = " << fmt("%.6e", rep.error_coarse) << "\n"
         << "h = 1/" << 2 * config.coarse * config.fine << ": |u - u_h|_a = " << fmt("%.6e", rep.error_fine) << "\n"
         << "observed ratio: " << fmt("%.4f", rep.ratio) << "\n";
  }

  const Problem pb(config);
  const FineSolution ref = solve_fine(pb.sys, pb.source);
  rep.a_norm = a_norm(pb.sys, ref.velocity);
  const Eigen::VectorXd imbalance = pb.sys.b * ref.velocity - pb.source;
  const double scale = pb.source.cwiseAbs().maxCoeff();
  rep.max_cell_imbalance = imbalance.cwiseAbs().maxCoeff() / (scale > 0.0 ? scale : 1.0);
  rep.conservation_ok = rep.max_cell_imbalance <= 1e-10;
  text << "reference |u|_a = " << fmt("%.12e", rep.a_norm) << "\n"
       << "max cell imbalance = " << fmt("%.3e", rep.max_cell_imbalance) << " ("
       << (rep.conservation_ok ? "pass" : "FAIL") << ")\n";

  if (options.write_outputs) {
    const fs::path dir(config.output_dir);
    fs::create_directories(dir);
    write_text(dir / "config.toml", to_toml(config));
    write_text(dir / "fine_report.txt", text.str());
    write_raster((dir / "kappa.txt").string(), cell_raster(pb.mesh, pb.kappa.values()));
    write_solution_rasters(dir, "ref", pb.mesh, ref.velocity, ref.pressure);
  }
  return rep;
}

static const char* kHistoryHeader = "m,dof,e_u_percent,eta_sq_sum,marked_count,wall_seconds";

void write_history_csv(const std::string& path, const std::vector<HistoryRow>& rows) {
  std::ofstream out(path);
  out << kHistoryHeader << "\n";
  char line[256];
  for (const HistoryRow& h : rows) {
    std::snprintf(line, sizeof line, "%d,%d,%.17g,%.17g,%d,%.6f\n", h.m, h.dof, 100.0 * h.e_u, h.eta_sq_sum,
                  h.marked_count, h.wall_seconds);
    out << line;
  }
  if (!out) throw InvalidArgument("cannot write " + path);
}

std::vector<HistoryRow> read_history_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path, 0, "cannot open history");
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path, 1, "empty history");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kHistoryHeader) throw ParseError(path, 1, "unexpected header '" + line + "'");
  std::vector<HistoryRow> rows;
  for (int no = 2; std::getline(in, line); ++no) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 6) throw ParseError(path, no, "expected 6 fields, got " + std::to_string(f.size()));
    HistoryRow h;
    try {
      std::size_t used = 0;
      auto num = [&](const std::string& s) {
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
      };
      auto integer = [&](const std::string& s) {
        const int v = std::stoi(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
      };
      h.m = integer(f[0]);
      h.dof = integer(f[1]);
      h.e_u = num(f[2]) / 100.0;
      h.eta_sq_sum = num(f[3]);
      h.marked_count = integer(f[4]);
      h.wall_seconds = num(f[5]);
    } catch (const std::exception&) {
      throw ParseError(path, no, "malformed row '" + line + "'");
    }
    rows.push_back(h);
  }
  if (rows.empty()) throw ParseError(path, 0, "empty history");
  return rows;
}

std::string percent(double fraction) {
  if (std::isnan(fraction)) return "n/a";
  const double p = 100.0 * fraction;
  if (p != 0.0 && std::abs(p) < 1e-4) return fmt("%.2e%%", p);
  return fmt("%.5f%%", p);
}

std::string report(const std::vector<std::string>& run_dirs, const std::string& out_dir) {
  if (run_dirs.empty()) throw InvalidArgument("report: no run directory given");
  std::vector<std::vector<HistoryRow>> runs;
  std::vector<std::string> names;
  for (const std::string& d : run_dirs) {
    runs.push_back(read_history_csv((fs::path(d) / "history.csv").string()));
    std::string name = fs::path(d).lexically_normal().filename().string();
    if (name.empty()) name = fs::path(d).lexically_normal().parent_path().filename().string();
    names.push_back(name);
  }
  std::size_t rows = 0;
  for (const auto& r : runs) rows = std::max(rows, r.size());

  std::ostringstream md, decay;
  if (runs.size() == 1) {
    md << "| m | DOF | e_u | sum eta^2 | marked | CPU time (sec) |\n|---|---|---|---|---|---|\n";
    for (const HistoryRow& h : runs[0])
      md << "| " << h.m << " | " << h.dof << " | " << percent(h.e_u) << " | " << fmt("%.4e", h.eta_sq_sum) << " | "
         << h.marked_count << " | " << (h.m == 0 ? "-" : fmt("%.4f", h.wall_seconds)) << " |\n";
  } else {
    md << "| m |";
    for (const auto& n : names) md << " DOF (" << n << ") | e_u (" << n << ") |";
    md << "\n|---|";
    for (std::size_t k = 0; k < runs.size(); ++k) md << "---|---|";
    md << "\n";
    for (std::size_t i = 0; i < rows; ++i) {
      md << "| " << i << " |";
      for (const auto& r : runs) {
        if (i < r.size())
          md << " " << r[i].dof << " | " << percent(r[i].e_u) << " |";
        else
          md << " | |";
      }
      md << "\n";
    }
  }
  decay << "# m";
  for (const auto& n : names) decay << " e_u_percent(" << n << ")";
  decay << "\n";
  for (std::size_t i = 0; i < rows; ++i) {
    decay << i;
    for (const auto& r : runs) decay << " " << (i < r.size() ? fmt("%.10e", 100.0 * r[i].e_u) : std::string("NaN"));
    decay << "\n";
  }
  const fs::path dir(out_dir);
  fs::create_directories(dir);
  write_text(dir / "report.md", md.str());
  write_text(dir / "decay.dat", decay.str());
  return md.str();
}

}  // namespace cemflow
