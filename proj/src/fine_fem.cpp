#include "cemflow/fine_fem.hpp"

#include <cmath>
#include <vector>

#include "cemflow/error.hpp"

namespace cemflow {

MassMode parse_mass_mode(const std::string& name) {
  if (name == "exact") return MassMode::exact;
  if (name == "lumped") return MassMode::lumped;
  throw InvalidArgument("unknown mass mode '" + name + "' (expected exact or lumped)");
}

const char* to_string(MassMode mode) { return mode == MassMode::exact ? "exact" : "lumped"; }

FineSystem assemble(const TwoLevelMesh& mesh, const PermeabilityField& kappa,
                    const WeightField& kappa_tilde, MassMode mass) {
  if (kappa.side() != mesh.fine_per_side() || kappa_tilde.values().size() != mesh.num_cells())
    throw InvalidArgument("assemble: field sizes do not match the mesh");
  FineSystem sys{mesh, mass, {}, {}, {}, {}, {}, 0.0, 0.0};
  const double h = mesh.fine_size();
  sys.cell_area = h * h;
  sys.edge_length = h;
  sys.kappa_inverse = kappa.values().cwiseInverse();
  sys.kappa_tilde = kappa_tilde.values();
  sys.s = kappa_tilde.values() * sys.cell_area;

  const int ne = mesh.num_edges(), nc = mesh.num_cells();
  std::vector<Eigen::Triplet<double>> ta, tb;
  ta.reserve(static_cast<std::size_t>(nc) * 8);
  tb.reserve(static_cast<std::size_t>(nc) * 4);
  const double diag = mass == MassMode::exact ? 1.0 / 3.0 : 0.5;
  const double off = mass == MassMode::exact ? 1.0 / 6.0 : 0.0;
  for (int c = 0; c < nc; ++c) {
    const CellEdges e = mesh.cell_edges(c);
    const double w = sys.kappa_inverse[c] * sys.cell_area;
    for (auto [lo, hi] : {std::pair{e.left, e.right}, std::pair{e.bottom, e.top}}) {
      ta.emplace_back(lo, lo, w * diag);
      ta.emplace_back(hi, hi, w * diag);
      if (off != 0.0) {
        ta.emplace_back(lo, hi, w * off);
        ta.emplace_back(hi, lo, w * off);
      }
    }
    // Outward normal flux through each edge times the edge length.
    tb.emplace_back(c, e.left, -h);
    tb.emplace_back(c, e.right, h);
    tb.emplace_back(c, e.bottom, -h);
    tb.emplace_back(c, e.top, h);
  }
  sys.a.resize(ne, ne);
  sys.a.setFromTriplets(ta.begin(), ta.end());
  sys.a.makeCompressed();
  sys.b.resize(nc, ne);
  sys.b.setFromTriplets(tb.begin(), tb.end());
  sys.b.makeCompressed();
  return sys;
}

double FineSystem::cell_energy(int c, const Eigen::VectorXd& v) const {
  const CellEdges e = mesh.cell_edges(c);
  const double l = v[e.left], r = v[e.right], bo = v[e.bottom], t = v[e.top];
  const double w = kappa_inverse[c] * cell_area;
  if (mass == MassMode::exact) return w * (l * l + r * r + l * r + bo * bo + t * t + bo * t) / 3.0;
  return w * 0.5 * (l * l + r * r + bo * bo + t * t);
}

FineSolution solve_fine(const FineSystem& sys, const Eigen::VectorXd& source, int pinned_cell) {
  const TwoLevelMesh& mesh = sys.mesh;
  const int nc = mesh.num_cells();
  if (source.size() != nc) throw InvalidArgument("solve_fine: source size mismatch");
  if (pinned_cell < 0 || pinned_cell >= nc) throw InvalidArgument("solve_fine: pinned cell out of range");
  const double total = source.sum();
  if (std::abs(total) > 1e-12 * std::max(source.cwiseAbs().sum(), 1e-300))
    throw InvalidArgument("solve_fine: incompatible source (integral " + std::to_string(total) + ")");

  const auto domain = mesh.whole_domain();
  const std::vector<int>& edges = domain->interior_edges();
  std::vector<int> cells;
  cells.reserve(static_cast<std::size_t>(nc - 1));
  for (int c = 0; c < nc; ++c)
    if (c != pinned_cell) cells.push_back(c);

  FineSolution sol;
  sol.velocity = Eigen::VectorXd::Zero(mesh.num_edges());
  sol.pressure = Eigen::VectorXd::Zero(nc);
  if (source.cwiseAbs().maxCoeff() == 0.0) return sol;

  SaddleOperator op;
  op.a = extract(sys.a, edges, edges);
  op.b = extract(sys.b, cells, edges);
  Eigen::VectorXd rhs_q(static_cast<Eigen::Index>(cells.size()));
  for (std::size_t i = 0; i < cells.size(); ++i) rhs_q[static_cast<Eigen::Index>(i)] = source[cells[i]];

  SaddleFactorization lu(op);
  const auto x = lu.solve(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(edges.size())), rhs_q);
  for (std::size_t i = 0; i < edges.size(); ++i) sol.velocity[edges[i]] = x.velocity[static_cast<Eigen::Index>(i)];
  for (std::size_t i = 0; i < cells.size(); ++i) sol.pressure[cells[i]] = x.pressure[static_cast<Eigen::Index>(i)];
  sol.pressure.array() -= sol.pressure.mean();

  const double div_res = (sys.b * sol.velocity - source).norm() / source.norm();
  if (!(div_res <= 1e-10))
    throw NumericalError("solve_fine: divergence residual " + std::to_string(div_res) + " exceeds 1e-10");
  return sol;
}

double a_norm(const FineSystem& sys, const Eigen::VectorXd& v) { return std::sqrt(std::max(0.0, v.dot(sys.a * v))); }

double s_norm(const FineSystem& sys, const Eigen::VectorXd& q) {
  return std::sqrt(q.cwiseProduct(q).dot(sys.s));
}

double v_norm(const FineSystem& sys, const Eigen::VectorXd& v) {
  const Eigen::VectorXd d = sys.b * v;
  return std::sqrt(std::max(0.0, v.dot(sys.a * v)) + d.cwiseProduct(d).cwiseQuotient(sys.s).sum());
}

double a_norm(const FineSystem& sys, const Eigen::VectorXd& v, const Region& region) {
  double e = 0.0;
  for (int c : region.cells()) e += sys.cell_energy(c, v);
  return std::sqrt(e);
}

double s_norm(const FineSystem& sys, const Eigen::VectorXd& q, const Region& region) {
  double e = 0.0;
  for (int c : region.cells()) e += sys.s[c] * q[c] * q[c];
  return std::sqrt(e);
}

double v_norm(const FineSystem& sys, const Eigen::VectorXd& v, const Region& region) {
  double e = 0.0;
  for (int c : region.cells()) {
    const CellEdges ce = sys.mesh.cell_edges(c);
    const double d = sys.edge_length * (v[ce.right] - v[ce.left] + v[ce.top] - v[ce.bottom]);
    e += sys.cell_energy(c, v) + d * d / sys.s[c];
  }
  return std::sqrt(e);
}

std::array<Eigen::VectorXd, 2> cell_velocity(const TwoLevelMesh& mesh, const Eigen::VectorXd& v) {
  std::array<Eigen::VectorXd, 2> out{Eigen::VectorXd(mesh.num_cells()), Eigen::VectorXd(mesh.num_cells())};
  for (int c = 0; c < mesh.num_cells(); ++c) {
    const CellEdges e = mesh.cell_edges(c);
    out[0][c] = 0.5 * (v[e.left] + v[e.right]);
    out[1][c] = 0.5 * (v[e.bottom] + v[e.top]);
  }
  return out;
}

namespace {
constexpr double kGaussPoint[3] = {0.5 - 0.5 * 0.7745966692414834, 0.5, 0.5 + 0.5 * 0.7745966692414834};
constexpr double kGaussWeight[3] = {5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0};
}  // namespace

Eigen::VectorXd cell_integrals(const TwoLevelMesh& mesh, const ScalarFunction& f) {
  const double h = mesh.fine_size();
  Eigen::VectorXd out(mesh.num_cells());
  for (int c = 0; c < mesh.num_cells(); ++c) {
    const auto [ix, iy] = mesh.cell_coords(c);
    double s = 0.0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        s += kGaussWeight[i] * kGaussWeight[j] * f((ix + kGaussPoint[i]) * h, (iy + kGaussPoint[j]) * h);
    out[c] = s * h * h;
  }
  return out;
}

double velocity_error(const FineSystem& sys, const Eigen::VectorXd& v, const VectorFunction& u) {
  const TwoLevelMesh& mesh = sys.mesh;
  const double h = mesh.fine_size();
  double err = 0.0;
  for (int c = 0; c < mesh.num_cells(); ++c) {
    const auto [ix, iy] = mesh.cell_coords(c);
    const CellEdges e = mesh.cell_edges(c);
    double s = 0.0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        const double sx = kGaussPoint[i], sy = kGaussPoint[j];
        const double uhx = v[e.left] + (v[e.right] - v[e.left]) * sx;
        const double uhy = v[e.bottom] + (v[e.top] - v[e.bottom]) * sy;
        const auto ue = u((ix + sx) * h, (iy + sy) * h);
        s += kGaussWeight[i] * kGaussWeight[j] * ((ue[0] - uhx) * (ue[0] - uhx) + (ue[1] - uhy) * (ue[1] - uhy));
      }
    err += sys.kappa_inverse[c] * s * h * h;
  }
  return std::sqrt(err);
}

}  // namespace cemflow
