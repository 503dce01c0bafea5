#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cemflow/config.hpp"
#include "cemflow/error.hpp"
#include "cemflow/experiment.hpp"

using namespace cemflow;
namespace fs = std::filesystem;

namespace {
fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cemflow_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

ExperimentConfig tiny(const fs::path& out) {
  ExperimentConfig c;
  c.coarse = 3;
  c.fine = 3;
  c.modes = 2;
  c.offline_layers = 1;
  c.online_layers = 1;
  c.max_iterations = 1;
  c.boxes = {{0.0, 0.0, 1.0 / 3.0, 1.0 / 3.0, 1.0}, {2.0 / 3.0, 2.0 / 3.0, 1.0, 1.0, -1.0}};
  c.output_dir = out.string();
  return c;
}
}  // namespace

TEST_SUITE("config") {
  TEST_CASE("defaults and partial files") {
    const ExperimentConfig c = parse_config("name = \"x\"\n[mesh]\ncoarse = 4\n");
    CHECK(c.name == "x");
    CHECK(c.coarse == 4);
    CHECK(c.fine == ExperimentConfig{}.fine);
    CHECK(c.theta == 1.0);
  }

  TEST_CASE("canonical form round-trips") {
    ExperimentConfig c;
    c.name = "round";
    c.seed = 123456789;
    c.field.kind = FieldKind::layered;
    c.field.contrast = 1234.5;
    c.theta = 0.15;
    c.tol = 1e-9;
    c.pressure_accept = 0.25;
    c.boxes = {{0.1, 0.2, 0.3, 0.4, 2.5}, {0.6, 0.6, 0.9, 0.8, -2.5}};
    c.indicator_pou = PouMode::all_nodes;
    c.write_rasters = false;
    CHECK(parse_config(to_toml(c)) == c);
    CHECK(parse_config(to_toml(ExperimentConfig{})) == ExperimentConfig{});
  }

  TEST_CASE("shipped configurations parse") {
    for (const char* name : {"example1", "example1_theta0.1", "example1_online4", "example2", "example2_theta0.15",
                             "example3"}) {
      const fs::path p = fs::path(CEMFLOW_CONFIG_DIR) / (std::string(name) + ".toml");
      CAPTURE(p.string());
      CHECK_NOTHROW(load_config(p.string()));
    }
  }

  TEST_CASE("errors name the problem") {
    CHECK_THROWS_WITH_AS(parse_config("[mesh]\ncoarse = 4\ncorse = 3\n"), doctest::Contains("mesh.corse"), InvalidArgument);
    CHECK_THROWS_WITH_AS(parse_config("[online]\ntheta = 0.0\n"), doctest::Contains("online.theta"), InvalidArgument);
    CHECK_THROWS_WITH_AS(parse_config("[offline]\nmodes = 200\n"), doctest::Contains("offline.modes"), InvalidArgument);
    CHECK_THROWS_AS(parse_config("[mesh]\ncoarse = \"eight\"\n"), InvalidArgument);
    CHECK_THROWS_AS(parse_config("[field]\nkind = \"marble\"\n"), InvalidArgument);
    CHECK_THROWS_AS(parse_config("[source]\nboxes = [[0.0, 0.0, 2.0, 0.5, 1.0]]\n"), InvalidArgument);
    try {
      parse_config("name = \"a\"\n[mesh\ncoarse = 1\n", "bad.toml");
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.path() == "bad.toml");
      CHECK(e.line() == 2);
    }
    CHECK_THROWS_AS(load_config("/nonexistent/config.toml"), ParseError);
  }
}

TEST_SUITE("experiment") {
  TEST_CASE("history csv round trip") {
    const fs::path dir = scratch("csv");
    std::vector<HistoryRow> rows(3);
    for (int m = 0; m < 3; ++m) {
      rows[m].m = m;
      rows[m].dof = 192 + 49 * m;
      rows[m].e_u = 0.0847188 / std::pow(10.0, m) + 1e-17;
      rows[m].eta_sq_sum = 1.0 / 3.0 * (m + 1);
      rows[m].marked_count = m == 0 ? 0 : 49;
      rows[m].wall_seconds = 0.5 * m;
    }
    write_history_csv((dir / "h.csv").string(), rows);
    const auto back = read_history_csv((dir / "h.csv").string());
    REQUIRE(back.size() == 3);
    for (int m = 0; m < 3; ++m) {
      CHECK(back[m].m == rows[m].m);
      CHECK(back[m].dof == rows[m].dof);
      CHECK(back[m].e_u == rows[m].e_u);
      CHECK(back[m].eta_sq_sum == rows[m].eta_sq_sum);
      CHECK(back[m].marked_count == rows[m].marked_count);
    }
  }

  TEST_CASE("history csv errors") {
    const fs::path dir = scratch("csv_bad");
    CHECK_THROWS_AS(read_history_csv((dir / "missing.csv").string()), ParseError);
    spit(dir / "empty.csv", "m,dof,e_u_percent,eta_sq_sum,marked_count,wall_seconds\n");
    CHECK_THROWS_AS(read_history_csv((dir / "empty.csv").string()), ParseError);
    spit(dir / "header.csv", "a,b\n0,1\n");
    CHECK_THROWS_AS(read_history_csv((dir / "header.csv").string()), ParseError);
    spit(dir / "row.csv", "m,dof,e_u_percent,eta_sq_sum,marked_count,wall_seconds\n0,192,x,1,0,0\n");
    try {
      read_history_csv((dir / "row.csv").string());
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.line() == 2);
    }
  }

  TEST_CASE("percent formatting") {
    CHECK(percent(0.0657590) == "6.57590%");
    CHECK(percent(std::nan("")) == "n/a");
  }

  TEST_CASE("run writes its outputs and report rows") {
    const fs::path dir = scratch("run");
    const ExperimentConfig c = tiny(dir / "a");
    const RunResult r = run_experiment(c);
    REQUIRE(r.history.size() == 2);
    CHECK(r.history[0].dof == 18);
    CHECK(r.history[1].dof == 18 + 4);
    for (const char* f : {"config.toml", "history.csv", "table.txt", "spectrum.csv", "kappa.txt", "ref_p.txt", "ms_ux.txt"})
      CHECK(fs::exists(dir / "a" / f));
    CHECK(parse_config(slurp(dir / "a" / "config.toml")) == c);
    const auto hist = read_history_csv((dir / "a" / "history.csv").string());
    CHECK(hist.size() == 2);

    ExperimentConfig c2 = c;
    c2.output_dir = (dir / "b").string();
    c2.max_iterations = 0;
    run_experiment(c2);
    const std::string md = report({(dir / "a").string(), (dir / "b").string()}, (dir / "rep").string());
    std::size_t lines = 0;
    for (char ch : md) lines += ch == '\n';
    CHECK(lines == 2 + 2);  // header, rule, one row per iteration of the longer run
    CHECK(fs::exists(dir / "rep" / "decay.dat"));
    CHECK_THROWS_AS(report({(dir / "nothing").string()}, (dir / "rep").string()), ParseError);
  }

  TEST_CASE("fine solve report") {
    const fs::path dir = scratch("fine");
    ExperimentConfig c = tiny(dir);
    c.manufactured = true;
    const FineReport rep = fine_solve(c);
    CHECK(rep.conservation_ok);
    CHECK(rep.ratio > 1.5);
    CHECK(fs::exists(dir / "fine_report.txt"));
  }
}
