#include <doctest.h>

#include <Eigen/Dense>
#include <random>

#include "cemflow/error.hpp"
#include "cemflow/online.hpp"
#include "oracles.hpp"

using namespace cemflow;

namespace {
struct Setup {
  TwoLevelMesh mesh;
  PermeabilityField kappa;
  PartitionOfUnity weight;
  FineSystem sys;
  AuxBasis aux;
  Eigen::VectorXd source;
  Setup(int T, int n, int J, PouMode weight_mode = PouMode::all_nodes, std::uint64_t seed = 3)
      : mesh(T, n),
        kappa(gen_field(FieldKind::channels, 1e4, seed, mesh)),
        weight(mesh, weight_mode),
        sys(assemble(mesh, kappa, compute_kappa_tilde(kappa, weight))),
        aux(build_aux(sys, J)),
        source(box_source(mesh, {{0.0, 0.0, 1.0 / T, 1.0 / T, 1.0}, {1.0 - 1.0 / T, 1.0 - 1.0 / T, 1.0, 1.0, -1.0}})
                   .integrals(mesh)) {}
};

Eigen::VectorXd gaussian(Eigen::Index n, std::mt19937& rng) {
  std::normal_distribution<double> g;
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = g(rng);
  return v;
}

std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

OnlineResult run(const Setup& s, const PartitionOfUnity& pou, OnlineOptions opt, const Eigen::VectorXd& u_ref,
                 int offline_layers = 1) {
  CoarseSystem cs(s.sys, s.aux, s.source);
  cs.append(build_offline_space(s.sys, s.aux, offline_layers));
  return iterate(cs, s.sys, s.aux, pou, opt, &u_ref);
}
}  // namespace

TEST_SUITE("online") {
  TEST_CASE("marking rejects bad input") {
    CHECK_THROWS_AS(mark({1.0, 2.0}, 0.0), InvalidArgument);
    CHECK_THROWS_AS(mark({1.0, 2.0}, 1.5), InvalidArgument);
    CHECK_THROWS_AS(mark({1.0, -2.0}, 0.5), InvalidArgument);
    CHECK(mark({0.0, 0.0, 0.0}, 0.5).empty());
    CHECK(mark({}, 0.5).empty());
  }

  TEST_CASE("marking ties break by ascending index") {
    CHECK(mark({1.0, 2.0, 2.0, 1.0}, 0.5) == std::vector<int>{1, 2});
    CHECK(mark({1.0, 2.0, 2.0, 1.0}, 0.3) == std::vector<int>{1});
  }

  TEST_CASE("marking agrees with the prefix-sum oracle") {
    std::mt19937 rng(17);
    std::lognormal_distribution<double> ln(0.0, 3.0);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<double> v(49);
      for (double& x : v) x = ln(rng);
      for (double theta : {0.05, 0.1, 0.15, 0.5, 0.9, 0.999, 1.0})
        CHECK(mark(v, theta).size() == oracle::bulk_count(v, theta));
    }
  }

  TEST_CASE("zero residual gives a zero online field") {
    const Setup s(4, 3, 2);
    const PartitionOfUnity pou(s.mesh, PouMode::interior_folded);
    NodeResidual r;
    r.region = pou.support(4);
    r.velocity = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(r.region->interior_edges().size()));
    r.pressure = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(r.region->cells().size()));
    const BasisField f = online_basis(s.sys, s.aux, pou, r, 4, 1);
    CHECK(f.velocity.norm() == 0.0);
    CHECK(f.origin == BasisField::Origin::online);
  }

  TEST_CASE("online fields decay with the layer count") {
    const Setup s(6, 3, 2);
    const PartitionOfUnity pou(s.mesh, PouMode::all_nodes);
    CoarseSystem cs(s.sys, s.aux, s.source);
    cs.append(build_offline_space(s.sys, s.aux, 0));
    const MsSolution sol = cs.solve();
    const ResidualData res = compute_residuals(s.sys, pou, sol.velocity, sol.pressure, s.source);
    const int node = s.mesh.node(3, 3);
    const Eigen::VectorXd ref = online_basis(s.sys, s.aux, pou, res.nodes[node], node, 6).global_velocity(s.mesh);
    double prev = std::numeric_limits<double>::infinity();
    for (int l = 0; l <= 2; ++l) {
      const Eigen::VectorXd g = online_basis(s.sys, s.aux, pou, res.nodes[node], node, l).global_velocity(s.mesh);
      const double err = a_norm(s.sys, g - ref) / a_norm(s.sys, ref);
      CHECK(err < prev);
      prev = err;
    }
  }

  TEST_CASE("online iteration grows the space and reduces the error") {
    const Setup s(4, 4, 2);
    const PartitionOfUnity pou(s.mesh, PouMode::interior_folded);
    const FineSolution ref = solve_fine(s.sys, s.source);
    OnlineOptions opt;
    opt.max_iterations = 2;
    const OnlineResult r = run(s, pou, opt, ref.velocity);
    REQUIRE(r.history.size() == 3);
    CHECK(r.history[0].dof == 32);
    for (std::size_t m = 1; m < r.history.size(); ++m) {
      CHECK(r.history[m].m == static_cast<int>(m));
      CHECK(r.history[m].dof == r.history[m - 1].dof + static_cast<int>(r.marked[m - 1].size()));
      CHECK(r.history[m].marked_count == static_cast<int>(r.marked[m - 1].size()));
      CHECK(r.history[m].e_u < r.history[m - 1].e_u);
    }
    CHECK(r.marked[0].size() == 9);  // theta = 1 marks every node with a nonzero indicator
    CHECK(r.indicators.size() == r.history.size());
  }
}

TEST_SUITE("invariants") {
  TEST_CASE("hand-computed marking cases") {
    CHECK(mark({4.0, 3.0, 2.0, 1.0}, 0.5) == std::vector<int>{0, 1});
    CHECK(mark({4.0, 3.0, 2.0, 1.0}, 0.4) == std::vector<int>{0});
    CHECK(mark({1.0, 2.0, 3.0, 4.0}, 0.5) == std::vector<int>{3, 2});
    CHECK(mark({4.0, 3.0, 2.0, 1.0}, 1.0) == std::vector<int>{0, 1, 2, 3});
    CHECK(mark({4.0, 0.0, 2.0, 0.0}, 1.0) == std::vector<int>{0, 2});
  }

  TEST_CASE("marking is deterministic") {
    std::mt19937 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> v(225);
    for (double& x : v) x = u(rng);
    const auto a = mark(v, 0.15);
    for (int i = 0; i < 5; ++i) CHECK(mark(v, 0.15) == a);
  }

  TEST_CASE("dual norms bound every test field and are attained") {
    const Setup s(4, 4, 2);
    const PartitionOfUnity pou(s.mesh, PouMode::interior_folded);
    CoarseSystem cs(s.sys, s.aux, s.source);
    cs.append(build_offline_space(s.sys, s.aux, 1));
    const MsSolution sol = cs.solve();
    const ResidualData res = compute_residuals(s.sys, pou, sol.velocity, sol.pressure, s.source);
    const DualNormSolver solver(s.sys, pou);
    const DualNorms dn = solver(res);
    std::mt19937 rng(99);
    for (int j = 0; j < pou.size(); ++j) {
      const NodeResidual& r = res.nodes[static_cast<std::size_t>(j)];
      const auto& edges = r.region->interior_edges();
      const auto& cells = r.region->cells();
      const Eigen::MatrixXd A(extract(s.sys.a, edges, edges));
      Eigen::VectorXd sc(static_cast<Eigen::Index>(cells.size()));
      for (std::size_t i = 0; i < cells.size(); ++i) sc[static_cast<Eigen::Index>(i)] = s.sys.s[cells[i]];
      for (int t = 0; t < 100; ++t) {
        const Eigen::VectorXd v = gaussian(A.rows(), rng);
        CHECK(std::abs(r.velocity.dot(v)) <= dn.velocity[j] * std::sqrt(v.dot(A * v)) * (1.0 + 1e-10));
        const Eigen::VectorXd q = gaussian(sc.size(), rng);
        CHECK(std::abs(r.pressure.dot(q)) <= dn.pressure[j] * std::sqrt(q.cwiseAbs2().dot(sc)) * (1.0 + 1e-10));
      }
      const Eigen::VectorXd w = solver.riesz(j, r.velocity);
      const double attained = std::abs(r.velocity.dot(w)) / std::sqrt(w.dot(A * w));
      CHECK(attained == doctest::Approx(dn.velocity[j]).epsilon(1e-8));
      const Eigen::VectorXd qw = r.pressure.cwiseQuotient(sc);
      CHECK(std::abs(r.pressure.dot(qw)) / std::sqrt(qw.cwiseAbs2().dot(sc)) == doctest::Approx(dn.pressure[j]).epsilon(1e-10));
      CHECK(dn.velocity[j] >= 0.0);
      CHECK(dn.pressure[j] >= 0.0);
    }
  }

  TEST_CASE("residuals vanish at the fine solution") {
    const Setup s(4, 4, 2);
    const PartitionOfUnity pou(s.mesh, PouMode::interior_folded);
    const FineSolution ref = solve_fine(s.sys, s.source);
    const ResidualData res = compute_residuals(s.sys, pou, ref.velocity, ref.pressure, s.source);
    const DualNorms dn = dual_norms(s.sys, pou, res);
    const double scale = s.source.cwiseAbs2().cwiseQuotient(s.sys.s).sum();
    CHECK(dn.eta_sq().sum() <= 1e-16 * scale);
  }

  TEST_CASE("mass residuals sum to zero under an all-nodes partition") {
    const Setup s(4, 3, 2);
    const PartitionOfUnity pou(s.mesh, PouMode::all_nodes);
    CoarseSystem cs(s.sys, s.aux, s.source);
    cs.append(build_offline_space(s.sys, s.aux, 1));
    const MsSolution sol = cs.solve();
    const ResidualData res = compute_residuals(s.sys, pou, sol.velocity, sol.pressure, s.source);
    double total = 0.0, mag = 0.0;
    for (const NodeResidual& r : res.nodes) {
      total += r.pressure.sum();
      mag += r.pressure.cwiseAbs().sum();
      CHECK(r.region->interior_edges().size() == static_cast<std::size_t>(r.velocity.size()));
    }
    CHECK(std::abs(total) <= 1e-12 * std::max(mag, s.source.cwiseAbs().sum()));
  }

  TEST_CASE("online iteration is deterministic") {
    const Setup s(4, 3, 2);
    const PartitionOfUnity pou(s.mesh, PouMode::interior_folded);
    const FineSolution ref = solve_fine(s.sys, s.source);
    OnlineOptions opt;
    opt.theta = 0.3;
    opt.max_iterations = 2;
    const OnlineResult a = run(s, pou, opt, ref.velocity);
    const OnlineResult b = run(s, pou, opt, ref.velocity);
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t m = 0; m < a.history.size(); ++m) {
      CHECK(a.history[m].dof == b.history[m].dof);
      CHECK(a.history[m].e_u == b.history[m].e_u);
      CHECK(a.history[m].eta_sq_sum == b.history[m].eta_sq_sum);
      CHECK(a.marked[m] == b.marked[m]);
      if (m + 1 < a.history.size()) CHECK(a.marked[m].size() == oracle::bulk_count(to_std(a.indicators[m]), 0.3));
    }
  }
}
