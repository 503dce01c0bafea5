#include "cemflow/online.hpp"

#include <Eigen/QR>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "cemflow/error.hpp"
#include "cemflow/parallel.hpp"

namespace cemflow {

ResidualData compute_residuals(const FineSystem& sys, const PartitionOfUnity& pou, const Eigen::VectorXd& u_ms,
                               const Eigen::VectorXd& p_ms, const Eigen::VectorXd& source) {
  const TwoLevelMesh& mesh = sys.mesh;
  if (u_ms.size() != mesh.num_edges() || p_ms.size() != mesh.num_cells() || source.size() != mesh.num_cells())
    throw InvalidArgument("compute_residuals: vector sizes do not match the mesh");
  const Eigen::VectorXd gv = sys.b.transpose() * p_ms - sys.a * u_ms;
  const Eigen::VectorXd gp = source - sys.b * u_ms;
  ResidualData out;
  out.nodes.resize(static_cast<std::size_t>(pou.size()));
  for (int j = 0; j < pou.size(); ++j) {
    NodeResidual& r = out.nodes[static_cast<std::size_t>(j)];
    r.region = pou.support(j);
    const auto& edges = r.region->interior_edges();
    const auto& cells = r.region->cells();
    r.velocity.resize(static_cast<Eigen::Index>(edges.size()));
    r.pressure.resize(static_cast<Eigen::Index>(cells.size()));
    for (std::size_t i = 0; i < edges.size(); ++i)
      r.velocity[static_cast<Eigen::Index>(i)] = pou.value_at_edge_midpoint(j, edges[i]) * gv[edges[i]];
    for (std::size_t i = 0; i < cells.size(); ++i)
      r.pressure[static_cast<Eigen::Index>(i)] = pou.value_at_cell_center(j, cells[i]) * gp[cells[i]];
  }
  return out;
}

DualNormSolver::DualNormSolver(const FineSystem& sys, const PartitionOfUnity& pou, int workers)
    : sys_(sys), pou_(pou), workers_(workers) {
  const int count = pou.size();
  regions_.resize(static_cast<std::size_t>(count));
  std::vector<std::unique_ptr<SpdFactorization>> factors(static_cast<std::size_t>(count));
  parallel_for(count, workers, [&](int j) {
    regions_[static_cast<std::size_t>(j)] = pou.support(j);
    const auto& edges = regions_[static_cast<std::size_t>(j)]->interior_edges();
    factors[static_cast<std::size_t>(j)] = std::make_unique<SpdFactorization>(extract(sys.a, edges, edges));
  });
  mass_.reserve(static_cast<std::size_t>(count));
  for (auto& f : factors) mass_.push_back(std::move(*f));
}

Eigen::VectorXd DualNormSolver::riesz(int node, const Eigen::VectorXd& rho) const {
  return mass_.at(static_cast<std::size_t>(node)).solve(rho);
}

struct DualNormSolver::Recovery {
  SparseMatrix coupling;  // D_chi B^T on (interior edges, cells) of omega_i
  std::unique_ptr<SaddleFactorization> factor;
};

void DualNormSolver::recover_pressure(ResidualData& residuals, const CoarseSystem& coarse) {
  const int count = static_cast<int>(residuals.nodes.size());
  if (count != static_cast<int>(regions_.size())) throw InvalidArgument("recover_pressure: residual count mismatch");
  const AuxBasis& aux = coarse.aux();
  const TwoLevelMesh& mesh = sys_.mesh;
  if (coarse.pressure_dimension() != recovery_pressure_dim_) {
    recovery_.assign(static_cast<std::size_t>(count), nullptr);
    parallel_for(count, workers_, [&](int j) {
      const Region& region = *regions_[static_cast<std::size_t>(j)];
      const auto& edges = region.interior_edges();
      const auto& cells = region.cells();
      const auto nc = static_cast<Eigen::Index>(cells.size());
      auto rec = std::make_shared<Recovery>();
      Eigen::VectorXd chi(static_cast<Eigen::Index>(edges.size()));
      for (std::size_t t = 0; t < edges.size(); ++t) chi[static_cast<Eigen::Index>(t)] = pou_.value_at_edge_midpoint(j, edges[t]);
      SaddleOperator op;
      op.a = extract(sys_.a, edges, edges);
      op.b = extract(sys_.b, cells, edges) * chi.asDiagonal();
      rec->coupling = op.b.transpose();

      // s-weighted coarse pressure fields on omega_i: whole-element aux
      // modes and the nonzero restrictions of the extra fields.
      const LocalIndex cell_at(cells, mesh.num_cells());
      const int modes = aux.modes_per_element();
      std::vector<Eigen::VectorXd> cols;
      for (int e : region.elements()) {
        const auto ecells = mesh.element_cells(e);
        const Eigen::MatrixXd& p = aux.element_modes(e);
        for (int m = 0; m < modes; ++m) {
          Eigen::VectorXd g = Eigen::VectorXd::Zero(nc);
          for (std::size_t i = 0; i < ecells.size(); ++i)
            g[cell_at[ecells[i]]] = sys_.s[ecells[i]] * p(static_cast<Eigen::Index>(i), m);
          cols.push_back(std::move(g));
        }
      }
      for (const Eigen::VectorXd& q : coarse.extra_pressure()) {
        Eigen::VectorXd g(nc);
        for (Eigen::Index i = 0; i < nc; ++i) g[i] = sys_.s[cells[static_cast<std::size_t>(i)]] * q[cells[static_cast<std::size_t>(i)]];
        if (g.cwiseAbs().maxCoeff() > 0.0) cols.push_back(std::move(g));
      }
      Eigen::MatrixXd g(nc, static_cast<Eigen::Index>(cols.size()));
      for (std::size_t c = 0; c < cols.size(); ++c) g.col(static_cast<Eigen::Index>(c)) = cols[c];
      Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(g);
      qr.setThreshold(1e-10);
      const Eigen::Index rank = qr.rank();
      const Eigen::MatrixXd basis = qr.householderQ() * Eigen::MatrixXd::Identity(nc, rank);

      // Constraint rows scaled like the pressure rows of the local Schur
      // complement so the sparse LU sees comparable magnitudes.
      double schur = 0.0;
      for (int k = 0; k < op.b.outerSize(); ++k)
        for (SparseMatrix::InnerIterator it(op.b, k); it; ++it)
          schur += it.value() * it.value() / op.a.coeff(it.col(), it.col());
      const double w = schur > 0.0 ? std::sqrt(schur / static_cast<double>(nc)) : 1.0;
      std::vector<Eigen::Triplet<double>> tw;
      for (Eigen::Index c = 0; c < rank; ++c)
        for (Eigen::Index i = 0; i < nc; ++i)
          if (basis(i, c) != 0.0) tw.emplace_back(static_cast<int>(i), static_cast<int>(c), w * basis(i, c));
      op.p_factor.resize(nc, rank);
      op.p_factor.setFromTriplets(tw.begin(), tw.end());
      op.constrained = true;
      rec->factor = std::make_unique<SaddleFactorization>(op);
      recovery_[static_cast<std::size_t>(j)] = std::move(rec);
    });
    recovery_pressure_dim_ = coarse.pressure_dimension();
  }
  parallel_for(count, workers_, [&](int j) {
    NodeResidual& r = residuals.nodes[static_cast<std::size_t>(j)];
    if (r.velocity.size() == 0 || r.velocity.cwiseAbs().maxCoeff() == 0.0) return;
    const Recovery& rec = *recovery_[static_cast<std::size_t>(j)];
    const auto x = rec.factor->solve(r.velocity, Eigen::VectorXd::Zero(rec.coupling.cols()));
    r.velocity += rec.coupling * x.pressure;
  });
}

DualNorms DualNormSolver::operator()(const ResidualData& residuals) const {
  const int count = static_cast<int>(residuals.nodes.size());
  if (count != static_cast<int>(regions_.size())) throw InvalidArgument("dual norms: residual count mismatch");
  DualNorms out;
  out.velocity.resize(count);
  out.pressure.resize(count);
  parallel_for(count, workers_, [&](int j) {
    const NodeResidual& r = residuals.nodes[static_cast<std::size_t>(j)];
    const double rv = r.velocity.size() > 0 ? r.velocity.dot(riesz(j, r.velocity)) : 0.0;
    out.velocity[j] = std::sqrt(std::max(rv, 0.0));
    const auto& cells = r.region->cells();
    double rp = 0.0;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const double v = r.pressure[static_cast<Eigen::Index>(i)];
      rp += v * v / sys_.s[cells[i]];
    }
    out.pressure[j] = std::sqrt(rp);
  });
  return out;
}

DualNorms dual_norms(const FineSystem& sys, const PartitionOfUnity& pou, const ResidualData& residuals, int workers) {
  return DualNormSolver(sys, pou, workers)(residuals);
}

std::vector<int> mark(const std::vector<double>& eta_sq, double theta) {
  if (!(theta > 0.0 && theta <= 1.0)) throw InvalidArgument("mark: theta must lie in (0, 1]");
  for (double v : eta_sq)
    if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidArgument("mark: indicators must be finite and nonnegative");
  std::vector<int> order(eta_sq.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return eta_sq[a] > eta_sq[b]; });
  // tail[k] = sum of the values after the k largest, accumulated from the
  // small end so that theta = 1 selects exactly the nonzero indicators.
  const std::size_t n = order.size();
  std::vector<long double> tail(n + 1, 0.0L);
  for (std::size_t k = n; k-- > 0;) tail[k] = tail[k + 1] + eta_sq[static_cast<std::size_t>(order[k])];
  const long double total = tail[0];
  if (total == 0.0L) return {};
  // A few ulps of slack so that a bulk met with equality in decimal inputs
  // (4 of 10 at theta = 0.4) is not lost to the rounding of theta. None at
  // theta = 1, where every nonzero indicator must be marked.
  const long double slack = theta < 1.0 ? 8.0L * std::numeric_limits<double>::epsilon() * total : 0.0L;
  const long double allowed = (1.0L - static_cast<long double>(theta)) * total + slack;
  std::size_t k = 1;
  while (k < n && tail[k] > allowed) ++k;
  order.resize(k);
  return order;
}

BasisField online_basis(const FineSystem& sys, const AuxBasis& aux, const PartitionOfUnity& pou,
                        const NodeResidual& residual, int node, int layers, const ElementCondensation* cond) {
  if (layers < 0) throw InvalidArgument("online_basis: negative layer count");
  const TwoLevelMesh& mesh = sys.mesh;
  const auto [a, b] = pou.node(node);
  auto region = mesh.node_patch(a, b, layers);
  const LocalIndex edge_at(region->interior_edges(), mesh.num_edges());
  const LocalIndex cell_at(region->cells(), mesh.num_cells());
  Eigen::VectorXd rhs_u = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(region->interior_edges().size()));
  Eigen::VectorXd rhs_q = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(region->cells().size()));
  const auto& edges = residual.region->interior_edges();
  const auto& cells = residual.region->cells();
  for (std::size_t i = 0; i < edges.size(); ++i) rhs_u[edge_at[edges[i]]] = residual.velocity[static_cast<Eigen::Index>(i)];
  for (std::size_t i = 0; i < cells.size(); ++i) rhs_q[cell_at[cells[i]]] = residual.pressure[static_cast<Eigen::Index>(i)];

  BasisField f;
  f.origin = BasisField::Origin::online;
  f.anchor = node;
  f.layers = layers;
  f.region = region;
  if (rhs_u.cwiseAbs().maxCoeff() == 0.0 && rhs_q.cwiseAbs().maxCoeff() == 0.0) {
    f.velocity = rhs_u;
    f.pressure = rhs_q;
    return f;
  }
  std::unique_ptr<RegionSolver> solver;
  try {
    solver = cond ? std::make_unique<RegionSolver>(*cond, region) : std::make_unique<RegionSolver>(sys, aux, region);
  } catch (const SingularSystemError& e) {
    throw SingularSystemError("online region of node " + std::to_string(node) + ": " + e.what(), e.witness(),
                              e.nullity());
  }
  auto x = solver->solve(rhs_u, rhs_q);
  f.velocity = std::move(x.velocity);
  f.pressure = std::move(x.pressure);
  return f;
}

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

OnlineResult iterate(CoarseSystem& coarse, const FineSystem& sys, const AuxBasis& aux, const PartitionOfUnity& pou,
                     const OnlineOptions& options, const Eigen::VectorXd* u_ref,
                     const std::function<void(const HistoryRow&)>& on_row) {
  if (!(options.theta > 0.0 && options.theta <= 1.0)) throw InvalidArgument("iterate: theta must lie in (0, 1]");
  if (options.layers < 0) throw InvalidArgument("iterate: negative online layer count");
  if (options.max_iterations < 0) throw InvalidArgument("iterate: negative iteration count");
  if (coarse.velocity_dimension() == 0) throw InvalidArgument("iterate: empty offline space");

  OnlineResult out;
  auto t0 = std::chrono::steady_clock::now();
  DualNormSolver norms(sys, pou, options.workers);
  std::unique_ptr<ElementCondensation> own;
  const ElementCondensation* cond = options.condensation;
  if (!cond) {
    own = std::make_unique<ElementCondensation>(sys, aux, options.workers);
    cond = own.get();
  }
  int marked_before = 0;
  // Sum of eta^2 for u_ms = 0 under the all-nodes partition: |F|^2_{s*}.
  const Eigen::VectorXd& src = coarse.source();
  const double eta_sq_scale = src.cwiseAbs2().cwiseQuotient(sys.s).sum();
  for (int m = 0;; ++m) {
    out.solution = coarse.solve(m);
    ResidualData residuals = compute_residuals(sys, pou, out.solution.velocity, out.solution.pressure, coarse.source());
    if (options.recover_pressure) norms.recover_pressure(residuals, coarse);
    out.norms = norms(residuals);
    const Eigen::VectorXd eta_sq = out.norms.eta_sq();

    HistoryRow row;
    row.m = m;
    row.dof = coarse.velocity_dimension();
    row.pressure_dof = coarse.pressure_dimension();
    row.e_u = u_ref ? energy_error(sys, out.solution.velocity, *u_ref) : std::nan("");
    row.eta_sq_sum = eta_sq.sum();
    row.marked_count = marked_before;
    if ((u_ref && !std::isfinite(row.e_u)) || !std::isfinite(row.eta_sq_sum))
      throw NumericalError("non-finite iterate at m=" + std::to_string(m) + " dof=" + std::to_string(row.dof) +
                           " e_u=" + std::to_string(row.e_u) + " eta_sq_sum=" + std::to_string(row.eta_sq_sum));

    row.wall_seconds = seconds_since(t0);
    out.history.push_back(row);
    if (on_row) on_row(row);
    t0 = std::chrono::steady_clock::now();

    out.indicators.push_back(eta_sq);
    const bool last = m >= options.max_iterations || row.eta_sq_sum <= options.tol * eta_sq_scale ||
                      (options.max_dof > 0 && row.dof >= options.max_dof);
    std::vector<int> marked;
    if (!last) {
      marked = mark(std::vector<double>(eta_sq.data(), eta_sq.data() + eta_sq.size()), options.theta);
      if (options.max_dof > 0 && row.dof + static_cast<int>(marked.size()) > options.max_dof)
        marked.resize(static_cast<std::size_t>(options.max_dof - row.dof));
    }
    out.marked.push_back(marked);

    if (!marked.empty()) {
      std::vector<BasisField> fresh(marked.size());
      parallel_for(static_cast<int>(marked.size()), options.workers, [&](int t) {
        const int node = marked[static_cast<std::size_t>(t)];
        fresh[static_cast<std::size_t>(t)] =
            online_basis(sys, aux, pou, residuals.nodes[static_cast<std::size_t>(node)], node, options.layers, cond);
      });
      std::vector<BasisField> accepted;
      for (auto& f : fresh) {
        const Eigen::VectorXd g = f.global_velocity(sys.mesh);
        const double energy = std::sqrt(g.dot(sys.a * g));
        if (!(energy > 0.0)) continue;
        f.velocity /= energy;
        f.pressure /= energy;
        accepted.push_back(std::move(f));
      }
      if (accepted.empty()) marked.clear();
      std::vector<Eigen::VectorXd> candidates;
      if (options.enrich_pressure)
        for (const BasisField& f : accepted)
          candidates.push_back((sys.b * f.global_velocity(sys.mesh)).cwiseQuotient(sys.s));
      coarse.append(std::move(accepted), options.workers);
      if (!candidates.empty()) coarse.extend_pressure(candidates, options.pressure_accept);
    }

    if (marked.empty()) break;
    marked_before = static_cast<int>(marked.size());
  }
  return out;
}

}  // namespace cemflow
