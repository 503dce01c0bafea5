#include <doctest.h>

#include <Eigen/Dense>
#include <filesystem>

#include "cemflow/error.hpp"
#include "cemflow/offline_basis.hpp"
#include "cemflow/parallel.hpp"
#include "cemflow/pou.hpp"
#include "oracles.hpp"

using namespace cemflow;

namespace {
struct Setup {
  TwoLevelMesh mesh;
  PermeabilityField kappa;
  FineSystem sys;
  AuxBasis aux;
  Setup(int T, int n, int J, std::uint64_t seed)
      : mesh(T, n),
        kappa(gen_field(FieldKind::channels, 1e4, seed, mesh)),
        sys(assemble(mesh, kappa, compute_kappa_tilde(kappa, PartitionOfUnity(mesh, PouMode::all_nodes)))),
        aux(build_aux(sys, J)) {}
};

// |op x - rhs| / |rhs| with the operator built densely from global matrices.
double dense_residual(const Setup& s, const BasisField& f, int element, int mode) {
  const std::set<int> elems(f.region->elements().begin(), f.region->elements().end());
  const auto dofs = oracle::region_dofs(s.mesh.coarse_per_side(), s.mesh.fine_per_block(), elems);
  const Eigen::MatrixXd Af(s.sys.a), Bf(s.sys.b);
  const auto nv = static_cast<Eigen::Index>(dofs.interior.size()), np = static_cast<Eigen::Index>(dofs.cells.size());
  Eigen::MatrixXd A(nv, nv), B(np, nv);
  for (Eigen::Index i = 0; i < nv; ++i) {
    for (Eigen::Index j = 0; j < nv; ++j) A(i, j) = Af(dofs.interior[i], dofs.interior[j]);
    for (Eigen::Index c = 0; c < np; ++c) B(c, i) = Bf(dofs.cells[c], dofs.interior[i]);
  }
  // P = (S Phi)(S Phi)^T over the modes of every element in the region.
  const Eigen::MatrixXd Phi_full = [&] {
    Eigen::MatrixXd m(s.mesh.num_cells(), s.aux.dimension());
    for (int r = 0; r < s.aux.dimension(); ++r) m.col(r) = s.aux.mode(r);
    return m;
  }();
  Eigen::MatrixXd W = Eigen::MatrixXd::Zero(np, 0);
  for (int k : elems)
    for (int j = 0; j < s.aux.modes_per_element(); ++j) {
      W.conservativeResize(np, W.cols() + 1);
      for (Eigen::Index c = 0; c < np; ++c)
        W(c, W.cols() - 1) = s.sys.s[dofs.cells[c]] * Phi_full(dofs.cells[c], k * s.aux.modes_per_element() + j);
    }
  Eigen::VectorXd g(np);
  const Eigen::VectorXd pm = s.aux.mode(element * s.aux.modes_per_element() + mode);
  for (Eigen::Index c = 0; c < np; ++c) g[c] = s.sys.s[dofs.cells[c]] * pm[dofs.cells[c]];
  const Eigen::VectorXd r1 = A * f.velocity - B.transpose() * f.pressure;
  const Eigen::VectorXd r2 = B * f.velocity + W * (W.transpose() * f.pressure) - g;
  return std::sqrt(r1.squaredNorm() + r2.squaredNorm()) / g.norm();
}
}  // namespace

TEST_SUITE("offline_basis") {
  TEST_CASE("offline space ordering and size") {
    const Setup s(4, 3, 2, 5);
    const auto fields = build_offline_space(s.sys, s.aux, 1);
    REQUIRE(fields.size() == 32);
    for (int r = 0; r < 32; ++r) {
      CHECK(fields[static_cast<std::size_t>(r)].anchor == r / 2);
      CHECK(fields[static_cast<std::size_t>(r)].mode == r % 2);
      CHECK(fields[static_cast<std::size_t>(r)].origin == BasisField::Origin::offline);
    }
    const BasisField single = solve_cem_basis(s.sys, s.aux, 9, 1, 1);
    CHECK(single.velocity == fields[19].velocity);
  }

  TEST_CASE("saturated layers reproduce the global map") {
    const Setup s(2, 3, 2, 3);
    const auto fields = build_offline_space(s.sys, s.aux, 1);
    for (int r = 0; r < s.aux.dimension(); ++r) {
      Eigen::VectorXd c = Eigen::VectorXd::Zero(s.aux.dimension());
      c[r] = 1.0;
      const auto g = global_map(s.sys, s.aux, c);
      const BasisField& f = fields[static_cast<std::size_t>(r)];
      CHECK((f.velocity - g.velocity).norm() <= 1e-10 * g.velocity.norm());
    }
  }

  TEST_CASE("basis dump round trip and header mismatch") {
    const Setup s(2, 2, 2, 3);
    const auto fields = build_offline_space(s.sys, s.aux, 1);
    const auto path = (std::filesystem::temp_directory_path() / "cemflow_basis.bin").string();
    const BasisHeader h{2, 2, 2, 1, field_checksum(s.sys)};
    save_basis(path, h, fields);
    const auto back = load_basis(path, s.mesh, h);
    REQUIRE(back.size() == fields.size());
    for (std::size_t i = 0; i < fields.size(); ++i) {
      CHECK(back[i].velocity == fields[i].velocity);
      CHECK(*back[i].region == *fields[i].region);
    }
    BasisHeader other = h;
    other.layers = 2;
    CHECK_THROWS_AS(load_basis(path, s.mesh, other), ParseError);
  }
  TEST_CASE("condensed region solves match the direct factorization") {
    const Setup s(5, 4, 3, 11);
    const ElementCondensation cond(s.sys, s.aux);
    std::mt19937 rng(5);
    std::normal_distribution<double> normal;
    const std::vector<std::shared_ptr<const Region>> regions = {
        s.mesh.make_region({12}), s.mesh.oversample_element(12, 1), s.mesh.oversample_element(0, 2),
        s.mesh.node_patch(2, 3, 1), s.mesh.whole_domain()};
    for (const auto& region : regions) {
      const RegionSolver direct(s.sys, s.aux, region);
      const RegionSolver condensed(cond, region);
      CHECK(condensed.condensed());
      CHECK_FALSE(direct.condensed());
      Eigen::VectorXd fu(static_cast<Eigen::Index>(region->interior_edges().size()));
      Eigen::VectorXd fq(static_cast<Eigen::Index>(region->cells().size()));
      for (auto& v : fu) v = normal(rng);
      for (auto& v : fq) v = normal(rng);
      const auto a = direct.solve(fu, fq);
      const auto b = condensed.solve(fu, fq);
      const double scale = std::sqrt(a.velocity.squaredNorm() + a.pressure.squaredNorm());
      const double diff = std::sqrt((a.velocity - b.velocity).squaredNorm() + (a.pressure - b.pressure).squaredNorm());
      CHECK(diff <= 1e-10 * scale);
      Eigen::VectorXd x(fu.size() + fq.size()), rhs(fu.size() + fq.size());
      x << b.velocity, b.pressure;
      rhs << fu, fq;
      CHECK((condensed.op().apply(x) - rhs).norm() <= 1e-11 * rhs.norm());
    }
  }

  TEST_CASE("condensation falls back with one fine cell per block") {
    const Setup s(4, 1, 1, 2);
    const ElementCondensation cond(s.sys, s.aux);
    const auto region = s.mesh.oversample_element(5, 1);
    const RegionSolver direct(s.sys, s.aux, region);
    const RegionSolver condensed(cond, region);
    CHECK_FALSE(condensed.condensed());
    const Eigen::VectorXd fq = Eigen::VectorXd::LinSpaced(static_cast<Eigen::Index>(region->cells().size()), -1.0, 1.0);
    const Eigen::VectorXd fu = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(region->interior_edges().size()));
    CHECK((direct.solve(fu, fq).pressure - condensed.solve(fu, fq).pressure).norm() == 0.0);
  }

  TEST_CASE("one condensation serves concurrent region solves") {
    const Setup s(5, 4, 2, 3);
    const ElementCondensation cond(s.sys, s.aux, 4);
    const int count = s.mesh.num_elements();
    std::vector<Eigen::VectorXd> serial(static_cast<std::size_t>(count)), threaded(serial.size());
    auto run = [&](std::vector<Eigen::VectorXd>& out, int workers) {
      parallel_for(count, workers, [&](int k) {
        const RegionSolver solver(cond, s.mesh.oversample_element(k, 1));
        const Eigen::VectorXd fq = mode_load(s.sys, s.aux, *solver.region(), k, 1);
        const Eigen::VectorXd fu = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(solver.region()->interior_edges().size()));
        out[static_cast<std::size_t>(k)] = solver.solve(fu, fq).velocity;
      });
    };
    run(serial, 1);
    run(threaded, 4);
    for (int k = 0; k < count; ++k) CHECK(serial[static_cast<std::size_t>(k)] == threaded[static_cast<std::size_t>(k)]);
  }

}

TEST_SUITE("invariants") {
  TEST_CASE("basis fields live in their oversampled regions") {
    const Setup s(5, 3, 2, 8);
    const auto fields = build_offline_space(s.sys, s.aux, 1);
    for (const BasisField& f : fields) {
      const auto expect = oracle::grow(5, {f.anchor}, 1);
      CHECK(std::set<int>(f.region->elements().begin(), f.region->elements().end()) == expect);
      const Eigen::VectorXd g = f.global_velocity(s.mesh);
      // Zero on every edge not interior to the region, including its boundary.
      const std::set<int> inside(f.region->interior_edges().begin(), f.region->interior_edges().end());
      for (int e = 0; e < s.mesh.num_edges(); ++e)
        if (!inside.count(e)) CHECK(g[e] == 0.0);
    }
  }

  TEST_CASE("basis fields satisfy the constrained local problem") {
    const Setup s(4, 4, 3, 2);
    const auto fields = build_offline_space(s.sys, s.aux, 1);
    for (std::size_t i = 0; i < fields.size(); i += 5) {
      const BasisField& f = fields[i];
      const Eigen::VectorXd rhs_q = mode_load(s.sys, s.aux, *f.region, f.anchor, f.mode);
      const double lib = constrained_residual(s.sys, s.aux, f, Eigen::VectorXd::Zero(f.velocity.size()), rhs_q);
      CHECK(lib <= 1e-9);
      CHECK(dense_residual(s, f, f.anchor, f.mode) <= 1e-9);
    }
  }

  TEST_CASE("localization error decays with the layer count") {
    const Setup s(6, 3, 2, 4);
    const int element = s.mesh.element(2, 3);
    Eigen::VectorXd c = Eigen::VectorXd::Zero(s.aux.dimension());
    c[element * 2] = 1.0;
    const Eigen::VectorXd ref = global_map(s.sys, s.aux, c).velocity;
    const auto domain = s.mesh.whole_domain();
    double prev = std::numeric_limits<double>::infinity();
    for (int l = 0; l <= 2; ++l) {
      const BasisField f = solve_cem_basis(s.sys, s.aux, element, 0, l);
      const Eigen::VectorXd g = f.global_velocity(s.mesh);
      Eigen::VectorXd ref_full = Eigen::VectorXd::Zero(s.mesh.num_edges());
      for (std::size_t i = 0; i < domain->interior_edges().size(); ++i)
        ref_full[domain->interior_edges()[i]] = ref[static_cast<Eigen::Index>(i)];
      const double err = a_norm(s.sys, g - ref_full) / a_norm(s.sys, ref_full);
      CHECK(err < prev);
      prev = err;
    }
    CHECK(prev < 0.5);
  }
}
