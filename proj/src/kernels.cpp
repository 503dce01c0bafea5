#include "cemflow/kernels.hpp"

#include <Eigen/Dense>
#include <Eigen/SparseCholesky>
#include <cmath>
#include <sstream>
#include <vector>

#include <Eigen/KLUSupport>
#include <Eigen/OrderingMethods>
#include <Eigen/SparseLU>

#include "cemflow/mesh.hpp"

namespace cemflow {

namespace {

using SparseLu = Eigen::SparseLU<SparseMatrix, Eigen::COLAMDOrdering<int>>;

SparseMatrix augmented_matrix(const SaddleOperator& op) {
  const Eigen::Index nv = op.velocity_size(), np = op.pressure_size();
  const Eigen::Index k = op.p_factor.cols();
  if (op.a.cols() != nv || op.b.cols() != nv)
    throw InvalidArgument("saddle operator: A and B have inconsistent velocity sizes");
  if (op.p_sparse.size() > 0 && (op.p_sparse.rows() != np || op.p_sparse.cols() != np))
    throw InvalidArgument("saddle operator: P block has the wrong shape");
  if (k > 0 && op.p_factor.rows() != np)
    throw InvalidArgument("saddle operator: low-rank factor has the wrong row count");

  std::vector<Eigen::Triplet<double>> t;
  t.reserve(static_cast<std::size_t>(op.a.nonZeros() + 2 * op.b.nonZeros() + op.p_sparse.nonZeros() +
                                     2 * op.p_factor.nonZeros() + k));
  for (int j = 0; j < op.a.outerSize(); ++j)
    for (SparseMatrix::InnerIterator it(op.a, j); it; ++it) t.emplace_back(it.row(), j, it.value());
  for (int j = 0; j < op.b.outerSize(); ++j)
    for (SparseMatrix::InnerIterator it(op.b, j); it; ++it) {
      t.emplace_back(nv + it.row(), j, it.value());
      t.emplace_back(j, nv + it.row(), -it.value());
    }
  for (int j = 0; j < op.p_sparse.outerSize(); ++j)
    for (SparseMatrix::InnerIterator it(op.p_sparse, j); it; ++it)
      t.emplace_back(nv + it.row(), nv + j, it.value());
  for (int j = 0; j < op.p_factor.outerSize(); ++j)
    for (SparseMatrix::InnerIterator it(op.p_factor, j); it; ++it) {
      t.emplace_back(nv + it.row(), nv + np + j, it.value());
      t.emplace_back(nv + np + j, nv + it.row(), it.value());
    }
  if (!op.constrained)
    for (Eigen::Index j = 0; j < k; ++j) t.emplace_back(nv + np + j, nv + np + j, -1.0);
  SparseMatrix m(nv + np + k, nv + np + k);
  m.setFromTriplets(t.begin(), t.end());
  m.makeCompressed();
  return m;
}

double max_abs(const SparseMatrix& m) {
  double v = 0.0;
  for (int j = 0; j < m.outerSize(); ++j)
    for (SparseMatrix::InnerIterator it(m, j); it; ++it) v = std::max(v, std::abs(it.value()));
  return v;
}

// Null-direction witness and nullity for a matrix whose LU broke down.
std::pair<Eigen::VectorXd, int> null_witness(const SparseMatrix& m) {
  const Eigen::Index n = m.rows();
  if (n <= 2500) {
    const Eigen::MatrixXd dense(m);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(dense);
    lu.setThreshold(1e-12);
    const Eigen::MatrixXd ker = lu.kernel();
    Eigen::VectorXd w = ker.col(0);
    if (w.norm() > 0) w.normalize();
    const int nullity = static_cast<int>(n - lu.rank());
    return {w, nullity};
  }
  // Shifted inverse iteration converges to the direction of the eigenvalue
  // closest to zero.
  const double shift = 1e-8 * std::max(1.0, max_abs(m));
  SparseMatrix shifted = m;
  for (Eigen::Index i = 0; i < n; ++i) shifted.coeffRef(i, i) += shift;
  SparseLu lu;
  lu.compute(shifted);
  Eigen::VectorXd w = Eigen::VectorXd::Ones(n) / std::sqrt(static_cast<double>(n));
  if (lu.info() == Eigen::Success) {
    for (int it = 0; it < 4; ++it) {
      Eigen::VectorXd next = lu.solve(w);
      if (!next.allFinite() || next.norm() == 0) break;
      w = next.normalized();
    }
  }
  return {w, -1};
}

}  // namespace

Eigen::VectorXd SaddleOperator::apply(const Eigen::VectorXd& x) const {
  const Eigen::Index nv = velocity_size(), np = pressure_size();
  const Eigen::VectorXd u = x.head(nv), q = x.tail(np);
  Eigen::VectorXd y(nv + np);
  y.head(nv) = a * u - b.transpose() * q;
  Eigen::VectorXd yq = b * u;
  if (p_sparse.size() > 0) yq += p_sparse * q;
  if (p_factor.cols() > 0 && !constrained) yq += p_factor * (p_factor.transpose() * q);
  y.tail(np) = yq;
  return y;
}

// KLU with its default partial-pivoting threshold; the looser pivots are
// made up for by the refinement steps in solve().
struct SaddleFactorization::Impl {
  SparseMatrix matrix;
  Eigen::KLU<SparseMatrix> lu;
  Eigen::Index nv = 0, np = 0, k = 0;
};

SaddleFactorization::SaddleFactorization(const SaddleOperator& op) : impl_(std::make_unique<Impl>()) {
  impl_->nv = op.velocity_size();
  impl_->np = op.pressure_size();
  impl_->k = op.p_factor.cols();
  impl_->matrix = augmented_matrix(op);
  impl_->lu.compute(impl_->matrix);
  if (impl_->lu.info() != Eigen::Success) {
    auto [witness, nullity] = null_witness(impl_->matrix);
    // Report the witness in (u, q) coordinates.
    Eigen::VectorXd uq = witness.head(impl_->nv + impl_->np);
    std::ostringstream msg;
    msg << "singular saddle system of size " << impl_->matrix.rows();
    if (nullity >= 0) msg << " (nullity " << nullity << ")";
    Eigen::Index pivot = 0;
    uq.cwiseAbs().maxCoeff(&pivot);
    msg << "; null direction concentrated at "
        << (pivot < impl_->nv ? "velocity dof " + std::to_string(pivot)
                              : "pressure dof " + std::to_string(pivot - impl_->nv));
    throw SingularSystemError(msg.str(), std::move(uq), nullity);
  }
}

SaddleFactorization::~SaddleFactorization() = default;
SaddleFactorization::SaddleFactorization(SaddleFactorization&&) noexcept = default;
SaddleFactorization& SaddleFactorization::operator=(SaddleFactorization&&) noexcept = default;

SaddleFactorization::Solution SaddleFactorization::solve(const Eigen::VectorXd& rhs_velocity,
                                                         const Eigen::VectorXd& rhs_pressure) const {
  const Eigen::Index nv = impl_->nv, np = impl_->np, k = impl_->k;
  if (rhs_velocity.size() != nv || rhs_pressure.size() != np)
    throw InvalidArgument("saddle solve: right-hand side has the wrong size");
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(nv + np + k);
  rhs.head(nv) = rhs_velocity;
  rhs.segment(nv, np) = rhs_pressure;
  const double rhs_norm = rhs.norm();
  if (rhs_norm == 0.0) {
    last_residual_ = 0.0;
    return {Eigen::VectorXd::Zero(nv), Eigen::VectorXd::Zero(np)};
  }
  Eigen::VectorXd x = impl_->lu.solve(rhs);
  double res = (rhs - impl_->matrix * x).norm() / rhs_norm;
  for (int step = 0; step < 5 && res > 1e-13; ++step) {
    const Eigen::VectorXd r = rhs - impl_->matrix * x;
    const Eigen::VectorXd d = impl_->lu.solve(r);
    const Eigen::VectorXd x_new = x + d;
    const double res_new = (rhs - impl_->matrix * x_new).norm() / rhs_norm;
    if (!(res_new < res)) break;
    x = x_new;
    res = res_new;
  }
  if (!x.allFinite()) throw NumericalError("saddle solve produced non-finite values");
  last_residual_ = res;
  return {x.head(nv), x.segment(nv, np)};
}

struct SpdFactorization::Impl {
  Eigen::SimplicialLLT<SparseMatrix> llt;
  Eigen::Index n = 0;
};

SpdFactorization::SpdFactorization(const SparseMatrix& a) : impl_(std::make_unique<Impl>()) {
  impl_->n = a.rows();
  impl_->llt.compute(a);
  if (impl_->llt.info() != Eigen::Success)
    throw NumericalError("Cholesky factorization failed: matrix is not positive definite");
}

SpdFactorization::~SpdFactorization() = default;
SpdFactorization::SpdFactorization(SpdFactorization&&) noexcept = default;
SpdFactorization& SpdFactorization::operator=(SpdFactorization&&) noexcept = default;

Eigen::VectorXd SpdFactorization::solve(const Eigen::VectorXd& rhs) const {
  return impl_->llt.solve(rhs);
}

Eigen::Index SpdFactorization::size() const { return impl_->n; }

double relative_asymmetry(const Eigen::MatrixXd& m) {
  const double scale = m.cwiseAbs().maxCoeff();
  if (scale == 0.0) return 0.0;
  return (m - m.transpose()).cwiseAbs().maxCoeff() / scale;
}

double relative_asymmetry(const SparseMatrix& m) {
  const double scale = max_abs(m);
  if (scale == 0.0) return 0.0;
  const SparseMatrix d = m - SparseMatrix(m.transpose());
  return max_abs(d) / scale;
}

EigenPairs gen_eig_sym(const Eigen::MatrixXd& m, const Eigen::VectorXd& s, Eigen::Index count) {
  const Eigen::Index n = m.rows();
  if (m.cols() != n || s.size() != n) throw InvalidArgument("gen_eig_sym: shape mismatch");
  if (count < 0 || count > n) throw InvalidArgument("gen_eig_sym: requested more pairs than the dimension");
  const double asym = relative_asymmetry(m);
  if (asym > 1e-12) {
    std::ostringstream msg;
    msg << "gen_eig_sym: matrix is not symmetric (relative asymmetry " << asym << ")";
    throw InvalidArgument(msg.str());
  }
  if (n > 0 && !(s.minCoeff() > 0.0)) throw InvalidArgument("gen_eig_sym: weight entries must be positive");

  const Eigen::VectorXd isq = s.cwiseSqrt().cwiseInverse();
  const Eigen::MatrixXd c = isq.asDiagonal() * m * isq.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(c);
  if (solver.info() != Eigen::Success) throw NumericalError("gen_eig_sym: eigensolver did not converge");
  EigenPairs out;
  out.values = solver.eigenvalues().head(count);
  out.vectors = isq.asDiagonal() * solver.eigenvectors().leftCols(count);
  return out;
}

SparseMatrix extract(const SparseMatrix& m, std::span<const int> rows, std::span<const int> cols) {
  const LocalIndex row_map(rows, static_cast<int>(m.rows()));
  std::vector<Eigen::Triplet<double>> t;
  for (std::size_t jj = 0; jj < cols.size(); ++jj)
    for (SparseMatrix::InnerIterator it(m, cols[jj]); it; ++it) {
      const int r = row_map[static_cast<int>(it.row())];
      if (r >= 0) t.emplace_back(r, static_cast<int>(jj), it.value());
    }
  SparseMatrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  out.setFromTriplets(t.begin(), t.end());
  out.makeCompressed();
  return out;
}

}  // namespace cemflow
