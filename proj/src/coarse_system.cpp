#include "cemflow/coarse_system.hpp"

#include <Eigen/LU>
#include <Eigen/QR>
#include <cmath>

#include "cemflow/error.hpp"
#include "cemflow/parallel.hpp"

namespace cemflow {

namespace {

// Dot product of a region-local velocity with a global vector.
double dot_local(const BasisField& f, const Eigen::VectorXd& global) {
  const auto& edges = f.region->interior_edges();
  double sum = 0.0;
  for (std::size_t i = 0; i < edges.size(); ++i) sum += f.velocity[static_cast<Eigen::Index>(i)] * global[edges[i]];
  return sum;
}

// Minimum-norm solve of a scaled coarse system whose LU is unreliable.
// Accepted only when the system is consistent and every null direction has
// negligible velocity energy and pressure part, so the fine fields are
// determined even though the coefficients are not.
Eigen::VectorXd rank_revealing_solve(const Eigen::MatrixXd& k, const Eigen::VectorXd& rhs, int nv, int np,
                                     double rcond) {
  const auto fail = [&](const std::string& why) {
    return NumericalError("coarse system is rank deficient (rcond " + std::to_string(rcond) + ", dimension " +
                          std::to_string(k.rows()) + "): " + why);
  };
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(k);
  cod.setThreshold(1e-12);
  const Eigen::VectorXd x = cod.solve(rhs);
  const double res = (k * x - rhs).norm() / std::max(rhs.norm(), 1e-300);
  if (!(res <= 1e-8)) throw fail("inconsistent right-hand side (residual " + std::to_string(res) + ")");
  Eigen::FullPivLU<Eigen::MatrixXd> full(k);
  full.setThreshold(1e-12);
  const Eigen::MatrixXd ker = full.kernel();
  if (full.rank() < k.rows())
    for (Eigen::Index j = 0; j < ker.cols(); ++j) {
      const Eigen::VectorXd z = ker.col(j).normalized();
      const Eigen::VectorXd alpha = z.head(nv);
      const double energy = std::sqrt(std::max(0.0, alpha.dot(k.topLeftCorner(nv, nv) * alpha)));
      const double pressure = z.segment(nv, np).norm();
      if (energy > 1e-6 || pressure > 1e-6)
        throw fail("a null direction changes the solution (velocity energy " + std::to_string(energy) +
                   ", pressure part " + std::to_string(pressure) + ")");
    }
  return x;
}

}  // namespace

CoarseSystem::CoarseSystem(const FineSystem& sys, const AuxBasis& aux, Eigen::VectorXd source)
    : sys_(sys), aux_(aux), source_(std::move(source)) {
  if (source_.size() != sys.mesh.num_cells()) throw InvalidArgument("CoarseSystem: source size does not match the mesh");
  const int np = aux.dimension();
  f_.resize(np);
  mean_.resize(np);
  for (int r = 0; r < np; ++r) {
    const Eigen::VectorXd p = aux.mode(r);
    f_[r] = p.dot(source_);
    mean_[r] = p.sum();  // int p_r up to the constant cell area
  }
  a_.resize(0, 0);
  b_.resize(np, 0);
}

void CoarseSystem::append(std::vector<BasisField> fields, int workers) {
  const int old_n = velocity_dimension();
  const int add = static_cast<int>(fields.size());
  if (add == 0) return;
  for (auto& f : fields) basis_.push_back(std::move(f));
  const int n = old_n + add;
  a_.conservativeResize(n, n);
  b_.conservativeResize(pressure_dimension(), n);
  const TwoLevelMesh& mesh = sys_.mesh;
  const int modes = aux_.modes_per_element();

  parallel_for(add, workers, [&](int t) {
    const int k = old_n + t;
    const BasisField& fk = basis_[static_cast<std::size_t>(k)];
    const Eigen::VectorXd gk = fk.global_velocity(mesh);
    const Eigen::VectorXd agk = sys_.a * gk;
    // Column k of A_c against every earlier field and itself; the
    // transposed entry is mirrored so A_c stays exactly symmetric.
    for (int l = 0; l <= k; ++l) {
      const BasisField& fl = basis_[static_cast<std::size_t>(l)];
      const double v = fl.region->bounds().intersects(fk.region->bounds()) ? dot_local(fl, agk) : 0.0;
      a_(l, k) = v;
      if (l < old_n) a_(k, l) = v;
    }
    // B_c column: b(psi_k, p_r) for modes of elements inside the region.
    b_.col(k).setZero();
    const Eigen::VectorXd div = sys_.b * gk;
    for (int e : fk.region->elements()) {
      const auto cells = mesh.element_cells(e);
      const Eigen::MatrixXd& p = aux_.element_modes(e);
      for (int j = 0; j < modes; ++j) {
        double sum = 0.0;
        for (std::size_t i = 0; i < cells.size(); ++i) sum += p(static_cast<Eigen::Index>(i), j) * div[cells[i]];
        b_(e * modes + j, k) = sum;
      }
    }
    for (std::size_t x = 0; x < extra_.size(); ++x)
      b_(aux_.dimension() + static_cast<Eigen::Index>(x), k) = extra_[x].dot(div);
  });
  // Lower triangle of the new block from the upper one.
  for (int k = old_n; k < n; ++k)
    for (int l = old_n; l < k; ++l) a_(k, l) = a_(l, k);
}

int CoarseSystem::extend_pressure(const std::vector<Eigen::VectorXd>& candidates, double accept) {
  const TwoLevelMesh& mesh = sys_.mesh;
  const int old_np = pressure_dimension();
  for (const Eigen::VectorXd& c : candidates) {
    if (c.size() != mesh.num_cells()) throw InvalidArgument("extend_pressure: candidate size does not match the mesh");
    const double original = s_norm(sys_, c);
    if (!(original > 0.0)) continue;
    Eigen::VectorXd q = c;
    for (int pass = 0; pass < 2; ++pass) {
      q -= project_pi(aux_, sys_, q);
      for (const Eigen::VectorXd& e : extra_) q -= e * e.dot(sys_.s.cwiseProduct(q));
    }
    const double rest = s_norm(sys_, q);
    if (!(rest > accept * original)) continue;
    extra_.push_back(q / rest);
  }
  const int np = pressure_dimension();
  if (np == old_np) return 0;
  const int nv = velocity_dimension();
  b_.conservativeResize(np, nv);
  f_.conservativeResize(np);
  mean_.conservativeResize(np);
  for (int r = old_np; r < np; ++r) {
    const Eigen::VectorXd& p = extra_[static_cast<std::size_t>(r - aux_.dimension())];
    f_[r] = p.dot(source_);
    mean_[r] = p.sum();
  }
  parallel_for(nv, 0, [&](int k) {
    const BasisField& fk = basis_[static_cast<std::size_t>(k)];
    // Divergence of a region-local field, evaluated only on the region cells.
    const auto& edges = fk.region->interior_edges();
    Eigen::VectorXd g = Eigen::VectorXd::Zero(mesh.num_edges());
    for (std::size_t i = 0; i < edges.size(); ++i) g[edges[i]] = fk.velocity[static_cast<Eigen::Index>(i)];
    const Eigen::VectorXd div = sys_.b * g;
    for (int r = old_np; r < np; ++r) {
      double sum = 0.0;
      for (int c : fk.region->cells()) sum += extra_[static_cast<std::size_t>(r - aux_.dimension())][c] * div[c];
      b_(r, k) = sum;
    }
  });
  return np - old_np;
}

MsSolution CoarseSystem::solve(int iteration) const {
  const int nv = velocity_dimension();
  const int np = pressure_dimension();
  if (nv == 0) throw InvalidArgument("CoarseSystem::solve: empty velocity basis");
  const int n = nv + np + 1;
  MsSolution out;
  out.iteration = iteration;
  if (f_.cwiseAbs().maxCoeff() == 0.0) {
    out.velocity_coefficients = Eigen::VectorXd::Zero(nv);
    out.pressure_coefficients = Eigen::VectorXd::Zero(np);
    out.velocity = Eigen::VectorXd::Zero(sys_.mesh.num_edges());
    out.pressure = Eigen::VectorXd::Zero(sys_.mesh.num_cells());
    return out;
  }

  // Symmetric diagonal scaling: velocity by A_c's diagonal, pressure by
  // the diagonal of B_c D^2 B_c^T, the multiplier by |g|.
  Eigen::VectorXd d(n);
  for (int k = 0; k < nv; ++k) d[k] = a_(k, k) > 0 ? 1.0 / std::sqrt(a_(k, k)) : 1.0;
  for (int r = 0; r < np; ++r) {
    const double schur = (b_.row(r).transpose().cwiseProduct(d.head(nv))).squaredNorm();
    d[nv + r] = schur > 0 ? 1.0 / std::sqrt(schur) : 1.0;
  }
  const double gscale = (mean_.cwiseProduct(d.segment(nv, np))).norm();
  d[n - 1] = gscale > 0 ? 1.0 / gscale : 1.0;

  Eigen::MatrixXd k = Eigen::MatrixXd::Zero(n, n);
  k.topLeftCorner(nv, nv) = a_;
  k.block(0, nv, nv, np) = -b_.transpose();
  k.block(nv, 0, np, nv) = b_;
  k.block(nv, n - 1, np, 1) = mean_;
  k.block(n - 1, nv, 1, np) = mean_.transpose();
  k = d.asDiagonal() * k * d.asDiagonal();
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
  rhs.segment(nv, np) = f_;
  rhs = d.cwiseProduct(rhs);

  Eigen::PartialPivLU<Eigen::MatrixXd> lu(k);
  const double rcond = lu.rcond();
  Eigen::VectorXd x;
  if (rcond > 1e-14) {
    x = lu.solve(rhs);
    x += lu.solve(rhs - k * x);
  } else {
    x = rank_revealing_solve(k, rhs, nv, np, rcond);
  }
  x = d.cwiseProduct(x);

  out.velocity_coefficients = x.head(nv);
  out.pressure_coefficients = x.segment(nv, np);
  out.velocity = expand_velocity(out.velocity_coefficients);
  out.pressure = expand_pressure(out.pressure_coefficients);
  return out;
}

Eigen::VectorXd CoarseSystem::expand_pressure(const Eigen::VectorXd& coefficients) const {
  if (coefficients.size() != pressure_dimension()) throw InvalidArgument("expand_pressure: coefficient size mismatch");
  Eigen::VectorXd p = aux_.expand(coefficients.head(aux_.dimension()));
  for (std::size_t x = 0; x < extra_.size(); ++x)
    p += coefficients[aux_.dimension() + static_cast<Eigen::Index>(x)] * extra_[x];
  return p;
}

Eigen::VectorXd CoarseSystem::expand_velocity(const Eigen::VectorXd& coefficients) const {
  if (coefficients.size() != velocity_dimension()) throw InvalidArgument("expand_velocity: coefficient size mismatch");
  Eigen::VectorXd v = Eigen::VectorXd::Zero(sys_.mesh.num_edges());
  for (int k = 0; k < velocity_dimension(); ++k) {
    const BasisField& f = basis_[static_cast<std::size_t>(k)];
    const auto& edges = f.region->interior_edges();
    for (std::size_t i = 0; i < edges.size(); ++i)
      v[edges[i]] += coefficients[k] * f.velocity[static_cast<Eigen::Index>(i)];
  }
  return v;
}

double energy_error(const FineSystem& sys, const Eigen::VectorXd& u_ms, const Eigen::VectorXd& u_ref) {
  const double ref = a_norm(sys, u_ref);
  if (!(ref > 0.0)) throw InvalidArgument("energy_error: reference velocity has zero energy");
  return a_norm(sys, u_ref - u_ms) / ref;
}

}  // namespace cemflow
